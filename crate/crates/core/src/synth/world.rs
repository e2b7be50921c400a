//! Materialized synthetic world: per-country surface vocabularies, paraphrase
//! tables, cue and context words, applicability variants, image prototypes.
//!
//! Every generated word is a string of consonant-vowel syllables. Country
//! vocabularies draw from pairwise disjoint syllable sets over the vowels
//! `a e i o`; value words use the vowel `u` only. A value word can therefore
//! never occur inside a country word, which is what keeps paraphrased, cued,
//! and defaulted values invisible to substring extraction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::PacScope;
use crate::error::{Error, Result};
use crate::seeds;
use crate::text::normalize_value;

use super::spec::WorldSpec;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const COUNTRY_VOWELS: &[u8] = b"aeio";
pub(crate) const VALUE_VOWEL: char = 'u';

pub const FILLERS_PER_COUNTRY: usize = 40;
pub const PARAPHRASES_PER_VALUE: usize = 2;

/// Deterministic three-syllable value word.
pub fn value_word(seed: u64, stream: u64, k: u64) -> String {
    let mut rng = seeds::stream(seed, "value-word", stream.wrapping_mul(1_000_003).wrapping_add(k));
    let mut w = String::with_capacity(6);
    for _ in 0..3 {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VALUE_VOWEL);
    }
    w
}

fn country_syllables(country_idx: usize, n_countries: usize) -> Vec<String> {
    let mut all = Vec::new();
    for &c in CONSONANTS {
        for &v in COUNTRY_VOWELS {
            all.push(format!("{}{}", c as char, v as char));
        }
    }
    all.into_iter()
        .enumerate()
        .filter(|(j, _)| j % n_countries == country_idx)
        .map(|(_, s)| s)
        .collect()
}

struct WordMint<'a> {
    syllables: Vec<String>,
    rng: ChaCha8Rng,
    used: &'a mut BTreeSet<String>,
}

impl WordMint<'_> {
    fn word(&mut self) -> String {
        loop {
            let n = self.rng.random_range(2..=4);
            let w: String = (0..n)
                .map(|_| self.syllables[self.rng.random_range(0..self.syllables.len())].as_str())
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, max_words: usize) -> String {
        let n = self.rng.random_range(1..=max_words);
        (0..n).map(|_| self.word()).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryLexicon {
    pub fillers: Vec<String>,
    /// attribute -> value -> paraphrases
    pub synonyms: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    /// attribute -> cue word implying the attribute's derivation value
    pub cues: BTreeMap<String, String>,
    /// attribute -> context word implying the attribute's default value
    pub default_contexts: BTreeMap<String, String>,
    /// product type -> variant word per applicability bitmask over that
    /// product type's attributes (bit set = attribute inapplicable)
    pub variants: BTreeMap<String, Vec<String>>,
}

impl CountryLexicon {
    pub fn surface_words(&self) -> impl Iterator<Item = &String> {
        self.fillers
            .iter()
            .chain(self.synonyms.values().flat_map(|m| m.values().flatten()))
            .chain(self.cues.values())
            .chain(self.default_contexts.values())
            .chain(self.variants.values().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub pacs: Vec<PacScope>,
    /// product type -> listed attributes, in spec order
    pub pt_attributes: BTreeMap<String, Vec<String>>,
    /// country -> lexicon
    pub lexicons: BTreeMap<String, CountryLexicon>,
    /// image-only attribute -> value -> signal prototype
    pub prototypes: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

impl World {
    pub fn attribute(&self, name: &str) -> Option<&super::AttributeSchema> {
        self.spec.attributes.iter().find(|a| a.name == name)
    }

    pub fn signal_dim(&self) -> usize {
        self.spec.embedding_dim / 2
    }

    pub fn has_image_attributes(&self) -> bool {
        self.spec.attributes.iter().any(|a| a.image_only)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Materializes vocabularies, paraphrase tables and the PAC list. Pure in
/// `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let seed = spec.seed;

    // which product types list each attribute
    let n_pt = spec.product_types.len();
    let mut pt_attributes: BTreeMap<String, Vec<String>> =
        spec.product_types.iter().map(|p| (p.clone(), Vec::new())).collect();
    for (ai, attr) in spec.attributes.iter().enumerate() {
        let k = ((attr.applicable_fraction * n_pt as f64).round() as usize).clamp(1, n_pt);
        let mut order: Vec<usize> = (0..n_pt).collect();
        order.shuffle(&mut seeds::stream(seed, "pt-mask", ai as u64));
        let chosen: BTreeSet<usize> = order.into_iter().take(k).collect();
        for (pi, pt) in spec.product_types.iter().enumerate() {
            if chosen.contains(&pi) {
                pt_attributes.get_mut(pt).unwrap().push(attr.name.clone());
            }
        }
    }

    let mut pacs = Vec::new();
    for pt in &spec.product_types {
        for attr in &pt_attributes[pt] {
            for country in &spec.countries {
                pacs.push(PacScope::new(pt.clone(), attr.clone(), country.clone()));
            }
        }
    }

    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut lexicons = BTreeMap::new();
    for (ci, country) in spec.countries.iter().enumerate() {
        let mut mint = WordMint {
            syllables: country_syllables(ci, spec.countries.len()),
            rng: seeds::stream(seed, "lexicon", ci as u64),
            used: &mut used,
        };
        let fillers = (0..FILLERS_PER_COUNTRY).map(|_| mint.word()).collect();
        let mut synonyms = BTreeMap::new();
        let mut cues = BTreeMap::new();
        let mut default_contexts = BTreeMap::new();
        for attr in &spec.attributes {
            let mut per_value = BTreeMap::new();
            for value in &attr.value_domain {
                let given = attr
                    .synonym_table
                    .get(value)
                    .and_then(|m| m.get(country))
                    .filter(|forms| !forms.is_empty());
                let forms: Vec<String> = match given {
                    Some(forms) => forms.iter().map(|f| normalize_value(f)).collect(),
                    None => (0..PARAPHRASES_PER_VALUE).map(|_| mint.phrase(2)).collect(),
                };
                per_value.insert(value.clone(), forms);
            }
            synonyms.insert(attr.name.clone(), per_value);
            if attr.derivation_cue.is_some() {
                cues.insert(attr.name.clone(), mint.word());
            }
            if attr.default_value.is_some() {
                default_contexts.insert(attr.name.clone(), mint.word());
            }
        }
        let mut variants = BTreeMap::new();
        for pt in &spec.product_types {
            let n_masks = 1usize << pt_attributes[pt].len();
            variants.insert(pt.clone(), (0..n_masks).map(|_| mint.word()).collect());
        }
        lexicons.insert(
            country.clone(),
            CountryLexicon {
                fillers,
                synonyms,
                cues,
                default_contexts,
                variants,
            },
        );
    }

    let signal_dim = spec.embedding_dim / 2;
    let mut prototypes = BTreeMap::new();
    for (ai, attr) in spec.attributes.iter().enumerate().filter(|(_, a)| a.image_only) {
        let mut rng = seeds::stream(seed, "prototype", ai as u64);
        let per_value = attr
            .value_domain
            .iter()
            .map(|v| {
                let proto: Vec<f64> = (0..signal_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                (v.clone(), proto)
            })
            .collect();
        prototypes.insert(attr.name.clone(), per_value);
    }

    let world = World {
        spec: spec.clone(),
        pacs,
        pt_attributes,
        lexicons,
        prototypes,
    };
    check_value_visibility(&world)?;
    Ok(world)
}

/// No value string may occur inside any non-value surface word or inside
/// another attribute value.
fn check_value_visibility(world: &World) -> Result<()> {
    let all_values: Vec<(&str, &str)> = world
        .spec
        .attributes
        .iter()
        .flat_map(|a| a.value_domain.iter().map(move |v| (a.name.as_str(), v.as_str())))
        .collect();
    for (attr, value) in &all_values {
        for (country, lex) in &world.lexicons {
            if let Some(w) = lex.surface_words().find(|w| w.contains(value)) {
                return Err(Error::InvalidSpec {
                    field: format!("attributes.{attr}.value_domain"),
                    reason: format!("value `{value}` occurs inside surface word `{w}` ({country})"),
                });
            }
        }
        for (other_attr, other) in &all_values {
            if (attr, value) != (other_attr, other) && other.contains(value) {
                return Err(Error::InvalidSpec {
                    field: format!("attributes.{attr}.value_domain"),
                    reason: format!("value `{value}` occurs inside value `{other}` of `{other_attr}`"),
                });
            }
        }
    }
    Ok(())
}

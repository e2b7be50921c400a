use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::Phenomenon;
use crate::error::{Error, Result};
use crate::text::normalize_value;

use super::world::value_word;

/// Probability of each phenomenon for one attribute. Missing entries are 0.
pub type PhenomenonMix = BTreeMap<Phenomenon, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationCue {
    /// Identifier of the cue; each country gets its own surface token.
    pub cue: String,
    /// Value implied by the cue.
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub name: String,
    pub value_domain: Vec<String>,
    /// value -> country -> paraphrases. Gaps are filled with generated words.
    #[serde(default)]
    pub synonym_table: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    #[serde(default)]
    pub default_value: Option<String>,
    #[serde(default)]
    pub derivation_cue: Option<DerivationCue>,
    #[serde(default)]
    pub image_only: bool,
    /// Fraction of product types that list this attribute.
    #[serde(default = "one")]
    pub applicable_fraction: f64,
    #[serde(default)]
    pub multi_valued: bool,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub product_types: Vec<String>,
    pub countries: Vec<String>,
    pub attributes: Vec<AttributeSchema>,
    /// attribute name -> phenomenon probabilities
    pub phenomenon_mix: BTreeMap<String, PhenomenonMix>,
    pub weak_noise_rate: f64,
    pub multi_value_rate: f64,
    pub embedding_dim: usize,
}

const MIX_TOLERANCE: f64 = 1e-9;
pub const MAX_COUNTRIES: usize = 10;

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidSpec {
        field: field.into(),
        reason: reason.into(),
    }
}

impl WorldSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let spec: WorldSpec = serde_json::from_str(&body)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn mix_for(&self, attribute: &str) -> &PhenomenonMix {
        &self.phenomenon_mix[attribute]
    }

    pub fn probability(&self, attribute: &str, p: Phenomenon) -> f64 {
        self.phenomenon_mix
            .get(attribute)
            .and_then(|m| m.get(&p))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.product_types.is_empty() {
            return Err(invalid("product_types", "empty"));
        }
        if self.countries.is_empty() {
            return Err(invalid("countries", "empty"));
        }
        if self.countries.len() > MAX_COUNTRIES {
            return Err(invalid("countries", format!("at most {MAX_COUNTRIES} supported")));
        }
        if self.attributes.is_empty() {
            return Err(invalid("attributes", "empty"));
        }
        for (field, list) in [("product_types", &self.product_types), ("countries", &self.countries)] {
            let uniq: BTreeSet<_> = list.iter().collect();
            if uniq.len() != list.len() {
                return Err(invalid(field, "duplicate entries"));
            }
            if list.iter().any(|s| s.trim().is_empty()) {
                return Err(invalid(field, "blank entry"));
            }
        }
        for (field, rate) in [("weak_noise_rate", self.weak_noise_rate), ("multi_value_rate", self.multi_value_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(invalid(field, format!("{rate} not in [0, 1]")));
            }
        }
        if self.embedding_dim < 8 {
            return Err(invalid("embedding_dim", "must be at least 8"));
        }
        let mut names = BTreeSet::new();
        for attr in &self.attributes {
            let f = |suffix: &str| format!("attributes.{}.{suffix}", attr.name);
            if !names.insert(attr.name.as_str()) {
                return Err(invalid(format!("attributes.{}", attr.name), "duplicate attribute"));
            }
            if attr.value_domain.len() < 2 {
                return Err(invalid(f("value_domain"), "needs at least 2 values"));
            }
            for v in &attr.value_domain {
                if normalize_value(v) != *v || v.is_empty() {
                    return Err(invalid(f("value_domain"), format!("`{v}` is not normalized")));
                }
            }
            let domain: BTreeSet<_> = attr.value_domain.iter().collect();
            if domain.len() != attr.value_domain.len() {
                return Err(invalid(f("value_domain"), "duplicate values"));
            }
            if let Some(d) = &attr.default_value {
                if !domain.contains(d) {
                    return Err(invalid(f("default_value"), format!("`{d}` not in value_domain")));
                }
            }
            if let Some(cue) = &attr.derivation_cue {
                if !domain.contains(&cue.value) {
                    return Err(invalid(f("derivation_cue"), format!("`{}` not in value_domain", cue.value)));
                }
            }
            for (value, per_country) in &attr.synonym_table {
                if !domain.contains(value) {
                    return Err(invalid(f("synonym_table"), format!("`{value}` not in value_domain")));
                }
                for (country, forms) in per_country {
                    if !self.countries.contains(country) {
                        return Err(invalid(f("synonym_table"), format!("unknown country `{country}`")));
                    }
                    for form in forms {
                        if normalize_value(form).contains(value.as_str()) {
                            return Err(invalid(
                                f("synonym_table"),
                                format!("paraphrase `{form}` contains the value `{value}`"),
                            ));
                        }
                    }
                }
            }
            if !(0.0..=1.0).contains(&attr.applicable_fraction) || attr.applicable_fraction == 0.0 {
                return Err(invalid(f("applicable_fraction"), "must be in (0, 1]"));
            }
            let mix = self
                .phenomenon_mix
                .get(&attr.name)
                .ok_or_else(|| invalid(format!("phenomenon_mix.{}", attr.name), "missing row"))?;
            let mut total = 0.0;
            for (p, prob) in mix {
                if !(0.0..=1.0).contains(prob) {
                    return Err(invalid(format!("phenomenon_mix.{}.{p}", attr.name), "not a probability"));
                }
                total += prob;
                let textual = matches!(
                    p,
                    Phenomenon::Explicit | Phenomenon::Periphrastic | Phenomenon::ImplicitDefault | Phenomenon::Derivable
                );
                if *prob > 0.0 && attr.image_only && textual {
                    return Err(invalid(
                        format!("phenomenon_mix.{}.{p}", attr.name),
                        "image-only attributes cannot surface in text",
                    ));
                }
                if *prob > 0.0 && !attr.image_only && *p == Phenomenon::ImageOnly {
                    return Err(invalid(
                        format!("phenomenon_mix.{}.{p}", attr.name),
                        "only image-only attributes may use IMAGE_ONLY",
                    ));
                }
            }
            if (total - 1.0).abs() > MIX_TOLERANCE {
                return Err(invalid(format!("phenomenon_mix.{}", attr.name), format!("row sums to {total}, expected 1")));
            }
        }
        for key in self.phenomenon_mix.keys() {
            if !names.contains(key.as_str()) {
                return Err(invalid(format!("phenomenon_mix.{key}"), "unknown attribute"));
            }
        }
        Ok(())
    }
}

/// Knobs for the built-in synthetic suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteShape {
    pub seed: u64,
    pub n_product_types: usize,
    pub n_countries: usize,
    pub values_per_attribute: usize,
    pub with_image_attribute: bool,
    pub weak_noise_rate: f64,
}

const PT_NAMES: [&str; 8] = ["shirt", "bottle", "lamp", "chair", "backpack", "kettle", "blanket", "helmet"];
const COUNTRIES: [&str; 6] = ["us", "de", "fr", "jp", "es", "it"];

fn mix(entries: &[(Phenomenon, f64)]) -> PhenomenonMix {
    entries.iter().copied().collect()
}

impl WorldSpec {
    /// The default synthetic suite: four textual attributes with distinct
    /// phenomenon profiles (each at least 20% NA + NO) and optionally one
    /// image-only attribute.
    pub fn suite(shape: &SuiteShape) -> WorldSpec {
        use Phenomenon::*;
        let n_vals = shape.values_per_attribute.max(3);
        let mut used = BTreeSet::new();
        let mut next_values = |attr_idx: usize, n: usize, two_word_every: usize| -> Vec<String> {
            let mut out = Vec::new();
            let mut k = 0u64;
            while out.len() < n {
                let first = value_word(shape.seed, attr_idx as u64, k);
                k += 1;
                if !used.insert(first.clone()) {
                    continue;
                }
                if two_word_every > 0 && out.len() % two_word_every == two_word_every - 1 {
                    let second = value_word(shape.seed, attr_idx as u64 + 1000, k);
                    k += 1;
                    if !used.insert(second.clone()) {
                        continue;
                    }
                    out.push(format!("{first} {second}"));
                } else {
                    out.push(first);
                }
            }
            out
        };

        let color = next_values(0, n_vals, 0);
        let material = next_values(1, n_vals, 3);
        let pattern = next_values(2, n_vals, 0);
        let water = next_values(3, n_vals, 0);

        let mut attributes = vec![
            AttributeSchema {
                name: "color".into(),
                value_domain: color.clone(),
                synonym_table: BTreeMap::new(),
                default_value: Some(color[0].clone()),
                derivation_cue: Some(DerivationCue { cue: "dye".into(), value: color[1].clone() }),
                image_only: false,
                applicable_fraction: 1.0,
                multi_valued: true,
            },
            AttributeSchema {
                name: "material".into(),
                value_domain: material.clone(),
                synonym_table: BTreeMap::new(),
                default_value: Some(material[0].clone()),
                derivation_cue: Some(DerivationCue { cue: "grain".into(), value: material[2].clone() }),
                image_only: false,
                applicable_fraction: 1.0,
                multi_valued: false,
            },
            AttributeSchema {
                name: "pattern".into(),
                value_domain: pattern.clone(),
                synonym_table: BTreeMap::new(),
                default_value: Some(pattern[0].clone()),
                derivation_cue: Some(DerivationCue { cue: "motif".into(), value: pattern[1].clone() }),
                image_only: false,
                applicable_fraction: 1.0,
                multi_valued: true,
            },
            AttributeSchema {
                name: "water_resistance".into(),
                value_domain: water.clone(),
                synonym_table: BTreeMap::new(),
                default_value: Some(water[0].clone()),
                derivation_cue: Some(DerivationCue { cue: "seal".into(), value: water[1].clone() }),
                image_only: false,
                applicable_fraction: 1.0,
                multi_valued: false,
            },
        ];
        let mut phenomenon_mix = BTreeMap::new();
        // high-applicability attributes (NA 5%) and low-applicability ones (NA 25%)
        phenomenon_mix.insert(
            "color".into(),
            mix(&[(Explicit, 0.40), (Periphrastic, 0.20), (ImplicitDefault, 0.10), (Derivable, 0.10), (NonObtainable, 0.15), (Inapplicable, 0.05)]),
        );
        phenomenon_mix.insert(
            "material".into(),
            mix(&[(Explicit, 0.35), (Periphrastic, 0.20), (ImplicitDefault, 0.10), (Derivable, 0.10), (NonObtainable, 0.10), (Inapplicable, 0.15)]),
        );
        phenomenon_mix.insert(
            "pattern".into(),
            mix(&[(Explicit, 0.30), (Periphrastic, 0.20), (ImplicitDefault, 0.10), (Derivable, 0.10), (NonObtainable, 0.05), (Inapplicable, 0.25)]),
        );
        phenomenon_mix.insert(
            "water_resistance".into(),
            mix(&[(Explicit, 0.30), (Periphrastic, 0.25), (ImplicitDefault, 0.10), (Derivable, 0.10), (NonObtainable, 0.20), (Inapplicable, 0.05)]),
        );
        if shape.with_image_attribute {
            let shade = next_values(4, n_vals, 0);
            attributes.push(AttributeSchema {
                name: "shade".into(),
                value_domain: shade,
                synonym_table: BTreeMap::new(),
                default_value: None,
                derivation_cue: None,
                image_only: true,
                applicable_fraction: 1.0,
                multi_valued: false,
            });
            phenomenon_mix.insert("shade".into(), mix(&[(ImageOnly, 0.95), (Inapplicable, 0.05)]));
        }

        WorldSpec {
            seed: shape.seed,
            product_types: PT_NAMES.iter().take(shape.n_product_types.clamp(1, PT_NAMES.len())).map(|s| s.to_string()).collect(),
            countries: COUNTRIES.iter().take(shape.n_countries.clamp(1, COUNTRIES.len())).map(|s| s.to_string()).collect(),
            attributes,
            phenomenon_mix,
            weak_noise_rate: shape.weak_noise_rate,
            multi_value_rate: 0.15,
            embedding_dim: 16,
        }
    }

    /// Same suite with every attribute rendered verbatim (no negatives, no
    /// multi-values).
    pub fn all_explicit(shape: &SuiteShape) -> WorldSpec {
        let mut spec = Self::suite(&SuiteShape { with_image_attribute: false, ..shape.clone() });
        for row in spec.phenomenon_mix.values_mut() {
            *row = mix(&[(Phenomenon::Explicit, 1.0)]);
        }
        spec.multi_value_rate = 0.0;
        spec
    }
}

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{LabelRecord, PacScope, Phenomenon, Product};
use crate::error::{Error, Result};
use crate::seeds;
use crate::text::ValueSet;

use super::world::World;

const TITLE_FILLERS: usize = 2;
const BULLET_FILLERS: usize = 4;
const DESC_FILLERS: usize = 6;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub products: Vec<Product>,
    pub labels: Vec<LabelRecord>,
}

impl Dataset {
    pub fn product_index(&self) -> BTreeMap<&str, &Product> {
        self.products.iter().map(|p| (p.id.as_str(), p)).collect()
    }
}

fn draw_phenomenon(rng: &mut ChaCha8Rng, mix: &BTreeMap<Phenomenon, f64>) -> Phenomenon {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = Phenomenon::Explicit;
    for p in Phenomenon::ALL {
        let prob = mix.get(&p).copied().unwrap_or(0.0);
        if prob <= 0.0 {
            continue;
        }
        acc += prob;
        last = p;
        if u < acc {
            return p;
        }
    }
    last
}

fn check_feasible(world: &World) -> Result<()> {
    for attr in &world.spec.attributes {
        let mix = world.spec.mix_for(&attr.name);
        let positive = |p: Phenomenon| mix.get(&p).copied().unwrap_or(0.0) > 0.0;
        let fail = |p: Phenomenon, reason: &str| Error::Generation {
            attribute: attr.name.clone(),
            phenomenon: p.to_string(),
            reason: reason.into(),
        };
        if positive(Phenomenon::ImplicitDefault) && attr.default_value.is_none() {
            return Err(fail(Phenomenon::ImplicitDefault, "no default_value"));
        }
        if positive(Phenomenon::Derivable) && attr.derivation_cue.is_none() {
            return Err(fail(Phenomenon::Derivable, "no derivation_cue"));
        }
    }
    Ok(())
}

/// Samples `n_products` listings and one label record per listed attribute.
/// Product `i` uses its own random stream, so output is independent of any
/// evaluation order.
pub fn emit_dataset(world: &World, n_products: usize, strong_fraction: f64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&strong_fraction) {
        return Err(Error::InvalidArgument(format!("strong_fraction {strong_fraction} not in [0, 1]")));
    }
    if n_products == 0 {
        return Ok(Dataset::default());
    }
    check_feasible(world)?;
    let mut data = Dataset::default();
    for i in 0..n_products {
        let (product, labels) = emit_product(world, i, strong_fraction)?;
        data.products.push(product);
        data.labels.extend(labels);
    }
    Ok(data)
}

fn emit_product(world: &World, index: usize, strong_fraction: f64) -> Result<(Product, Vec<LabelRecord>)> {
    let spec = &world.spec;
    let mut rng = seeds::stream(spec.seed, "product", index as u64);
    let id = format!("p{index:06}");
    let pt = spec.product_types.choose(&mut rng).unwrap().clone();
    let country = spec.countries.choose(&mut rng).unwrap().clone();
    let strong = rng.random::<f64>() < strong_fraction;
    let lex = &world.lexicons[&country];

    let attrs = &world.pt_attributes[&pt];
    let mut fragments: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(attrs.len());
    let mut mask = 0usize;
    let mut latent: BTreeMap<String, ValueSet> = BTreeMap::new();

    for (bit, attr_name) in attrs.iter().enumerate() {
        let attr = world.attribute(attr_name).unwrap();
        let phenomenon = draw_phenomenon(&mut rng, spec.mix_for(attr_name));
        let domain = &attr.value_domain;
        let multi = attr.multi_valued
            && matches!(phenomenon, Phenomenon::Explicit | Phenomenon::Periphrastic)
            && rng.random::<f64>() < spec.multi_value_rate;
        let pick_values = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let n = if multi { 2 } else { 1 };
            domain.choose_multiple(rng, n).cloned().collect()
        };
        let gen_err = |reason: &str| Error::Generation {
            attribute: attr_name.clone(),
            phenomenon: phenomenon.to_string(),
            reason: reason.into(),
        };
        let gold = match phenomenon {
            Phenomenon::Explicit => {
                let vals = pick_values(&mut rng);
                fragments.extend(vals.iter().cloned());
                ValueSet::from_values(vals)?
            }
            Phenomenon::Periphrastic => {
                let vals = pick_values(&mut rng);
                for v in &vals {
                    let forms = &lex.synonyms[attr_name][v];
                    fragments.push(forms.choose(&mut rng).unwrap().clone());
                }
                ValueSet::from_values(vals)?
            }
            Phenomenon::ImplicitDefault => {
                let d = attr.default_value.as_ref().ok_or_else(|| gen_err("no default_value"))?;
                fragments.push(lex.default_contexts[attr_name].clone());
                ValueSet::single(d)?
            }
            Phenomenon::Derivable => {
                let cue = attr.derivation_cue.as_ref().ok_or_else(|| gen_err("no derivation_cue"))?;
                fragments.push(lex.cues[attr_name].clone());
                ValueSet::single(&cue.value)?
            }
            Phenomenon::ImageOnly => ValueSet::from_values(pick_values(&mut rng))?,
            Phenomenon::NonObtainable => ValueSet::NotObtainable,
            Phenomenon::Inapplicable => {
                mask |= 1 << bit;
                ValueSet::NotApplicable
            }
        };
        let weak = match &gold {
            ValueSet::Values(vals) if rng.random::<f64>() < spec.weak_noise_rate => {
                let wrong: Vec<&String> = domain.iter().filter(|v| !vals.contains(v)).collect();
                ValueSet::single(wrong.choose(&mut rng).unwrap())?
            }
            other => other.clone(),
        };
        if attr.image_only {
            latent.insert(attr_name.clone(), gold.clone());
        }
        labels.push(LabelRecord {
            product_id: id.clone(),
            pac: PacScope::new(pt.clone(), attr_name.clone(), country.clone()),
            gold: gold.clone(),
            weak_label: Some(weak),
            strong_label: strong.then(|| gold.clone()),
            phenomenon,
        });
    }

    let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| lex.fillers.choose(rng).unwrap().clone()).collect()
    };
    let mut fields = [
        {
            let mut t = vec![lex.variants[&pt][mask].clone()];
            t.extend(filler(&mut rng, TITLE_FILLERS));
            t
        },
        filler(&mut rng, BULLET_FILLERS),
        filler(&mut rng, DESC_FILLERS),
    ];
    fragments.shuffle(&mut rng);
    for frag in fragments {
        let field = &mut fields[rng.random_range(0..3)];
        let pos = rng.random_range(0..=field.len());
        field.insert(pos, frag);
    }
    let [title, bullets, description] = fields.map(|f| f.join(" "));
    let embedding = synth_embedding(world, &id, &latent);
    let product = Product {
        id,
        pt,
        country,
        title,
        bullets,
        description,
        embedding: Some(embedding),
    };
    Ok((product, labels))
}

/// Image stand-in: the first half of the coordinates is the sum of value
/// prototypes of the product's image-only attributes; the rest is standard
/// normal noise seeded by (world seed, product id).
pub fn synth_embedding(world: &World, product_id: &str, latent: &BTreeMap<String, ValueSet>) -> Vec<f64> {
    let dim = world.spec.embedding_dim;
    let signal_dim = world.signal_dim();
    let mut out = vec![0.0; dim];
    for (attr, protos) in &world.prototypes {
        if let Some(ValueSet::Values(vals)) = latent.get(attr) {
            for v in vals {
                if let Some(p) = protos.get(v) {
                    for (o, x) in out.iter_mut().zip(p) {
                        *o += x;
                    }
                }
            }
        }
    }
    let id_hash = product_id.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let mut rng = seeds::stream(world.spec.seed, "embedding-noise", id_hash);
    for o in out.iter_mut().skip(signal_dim) {
        *o = StandardNormal.sample(&mut rng);
    }
    out
}

/// Partitions the world's PACs; `subset_b` gets `round(holdout_fraction * n)`.
pub fn split_pacs(world: &World, holdout_fraction: f64, seed: u64) -> Result<(Vec<PacScope>, Vec<PacScope>)> {
    let n = world.pacs.len();
    if n < 2 {
        return Err(Error::TooFewPacs(n));
    }
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout_fraction {holdout_fraction} not in (0, 1)")));
    }
    let n_b = (holdout_fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::stream(seed, "pac-split", 0));
    let b: BTreeSet<usize> = idx.into_iter().take(n_b).collect();
    let (mut subset_a, mut subset_b) = (Vec::new(), Vec::new());
    for (i, pac) in world.pacs.iter().enumerate() {
        if b.contains(&i) {
            subset_b.push(pac.clone());
        } else {
            subset_a.push(pac.clone());
        }
    }
    Ok((subset_a, subset_b))
}

/// Product-level train / eval / test partition. Eval and test products are
/// drawn only from products that carry strong labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSplit {
    pub train: BTreeSet<String>,
    pub eval: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

pub fn split_products(data: &Dataset, eval_fraction: f64, test_fraction: f64, seed: u64) -> Result<ProductSplit> {
    if eval_fraction < 0.0 || test_fraction < 0.0 || eval_fraction + test_fraction >= 1.0 {
        return Err(Error::InvalidArgument("eval/test fractions must be non-negative and sum below 1".into()));
    }
    let strong_ids: BTreeSet<&str> = data
        .labels
        .iter()
        .filter(|l| l.strong_label.is_some())
        .map(|l| l.product_id.as_str())
        .collect();
    let mut strong: Vec<&str> = data.products.iter().map(|p| p.id.as_str()).filter(|id| strong_ids.contains(id)).collect();
    strong.shuffle(&mut seeds::stream(seed, "product-split", 0));
    let n = data.products.len() as f64;
    let n_test = ((test_fraction * n).round() as usize).min(strong.len());
    let n_eval = ((eval_fraction * n).round() as usize).min(strong.len() - n_test);
    let test: BTreeSet<String> = strong[..n_test].iter().map(|s| s.to_string()).collect();
    let eval: BTreeSet<String> = strong[n_test..n_test + n_eval].iter().map(|s| s.to_string()).collect();
    let train = data
        .products
        .iter()
        .map(|p| p.id.clone())
        .filter(|id| !test.contains(id) && !eval.contains(id))
        .collect();
    Ok(ProductSplit { train, eval, test })
}

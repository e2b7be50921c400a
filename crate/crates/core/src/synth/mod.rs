//! Deterministic synthetic catalogs with a ground-truth oracle.
//!
//! A [`WorldSpec`] fixes product types, countries, attributes and how often
//! each phenomenon occurs; [`generate_world`] materializes the surface
//! vocabularies; [`emit_dataset`] samples listings with gold, weak and strong
//! labels.

mod emit;
mod spec;
mod world;

pub use emit::{emit_dataset, split_pacs, split_products, synth_embedding, Dataset, ProductSplit};
pub use spec::{AttributeSchema, DerivationCue, PhenomenonMix, SuiteShape, WorldSpec};
pub use world::{generate_world, value_word, CountryLexicon, World};

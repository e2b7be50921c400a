//! Shared catalog records: products, evaluation scopes, and label records,
//! plus line-delimited JSON readers and writers for them.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::text::ValueSet;

/// One catalog listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub pt: String,
    pub country: String,
    pub title: String,
    pub bullets: String,
    pub description: String,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

/// A (product type, attribute, country) evaluation scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PacScope {
    pub pt: String,
    pub attribute: String,
    pub country: String,
}

impl PacScope {
    pub fn new(pt: impl Into<String>, attribute: impl Into<String>, country: impl Into<String>) -> Self {
        Self {
            pt: pt.into(),
            attribute: attribute.into(),
            country: country.into(),
        }
    }
}

impl fmt::Display for PacScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.pt, self.attribute, self.country)
    }
}

/// How the gold value of a (product, attribute) pair surfaces in the listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phenomenon {
    /// Normalized value appears verbatim.
    Explicit,
    /// A country-specific paraphrase of the value appears.
    Periphrastic,
    /// Nothing is written; a context word implies the attribute default.
    ImplicitDefault,
    /// A cue token appears that implies the value.
    Derivable,
    /// Attribute applies but nothing in the input determines it.
    NonObtainable,
    /// Attribute does not apply to this product variant.
    Inapplicable,
    /// Value is carried only by the product embedding.
    ImageOnly,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 7] = [
        Phenomenon::Explicit,
        Phenomenon::Periphrastic,
        Phenomenon::ImplicitDefault,
        Phenomenon::Derivable,
        Phenomenon::NonObtainable,
        Phenomenon::Inapplicable,
        Phenomenon::ImageOnly,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|p| *p == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Phenomenon::Explicit => "EXPLICIT",
            Phenomenon::Periphrastic => "PERIPHRASTIC",
            Phenomenon::ImplicitDefault => "IMPLICIT_DEFAULT",
            Phenomenon::Derivable => "DERIVABLE",
            Phenomenon::NonObtainable => "NON_OBTAINABLE",
            Phenomenon::Inapplicable => "INAPPLICABLE",
            Phenomenon::ImageOnly => "IMAGE_ONLY",
        }
    }

    /// Whether the gold value for this phenomenon is a concrete value set.
    pub fn has_value(self) -> bool {
        !matches!(self, Phenomenon::NonObtainable | Phenomenon::Inapplicable)
    }
}

impl fmt::Display for Phenomenon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground truth and observed labels for one (product, attribute) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub product_id: String,
    #[serde(flatten)]
    pub pac: PacScope,
    pub gold: ValueSet,
    pub weak_label: Option<ValueSet>,
    pub strong_label: Option<ValueSet>,
    pub phenomenon: Phenomenon,
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}

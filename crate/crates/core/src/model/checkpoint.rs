//! Checkpoint layout: `<dir>/manifest.json` (config, step, seed, tensor
//! index) and `<dir>/weights.bin` (little-endian f64, index order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::network::Seq2Seq;
use super::params::Parameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(dir: &Path, model: &Seq2Seq, step: u64, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut bytes = Vec::with_capacity(model.params.num_params() * 8);
    let mut offset = 0;
    for (name, t) in model.params.tensors() {
        tensors.push(TensorEntry {
            name,
            shape: [t.nrows(), t.ncols()],
            offset,
        });
        offset += t.len();
        for x in t.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        config: model.config.clone(),
        step,
        seed,
        tensors,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join("weights.bin"), bytes)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<(Seq2Seq, Manifest)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let bytes = fs::read(dir.join("weights.bin"))?;
    let mut params = Parameters::zeros(&manifest.config);
    let n_tensors = params.tensors().len();
    if n_tensors != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "index lists {} tensors, config implies {n_tensors}",
            manifest.tensors.len()
        )));
    }
    let mut err = None;
    let mut i = 0;
    params.for_each_mut(|name, t| {
        let e = &manifest.tensors[i];
        i += 1;
        if err.is_some() {
            return;
        }
        if e.name != name || e.shape != [t.nrows(), t.ncols()] {
            err = Some(format!("tensor {i}: expected `{name}` {:?}, found `{}` {:?}", t.shape(), e.name, e.shape));
            return;
        }
        let start = e.offset * 8;
        let end = start + t.len() * 8;
        let Some(chunk) = bytes.get(start..end) else {
            err = Some(format!("weights file too short for `{name}`"));
            return;
        };
        for (x, b) in t.iter_mut().zip(chunk.chunks_exact(8)) {
            *x = f64::from_le_bytes(b.try_into().unwrap());
        }
    });
    if let Some(e) = err {
        return Err(Error::Checkpoint(e));
    }
    let model = Seq2Seq::from_parts(manifest.config.clone(), params)?;
    Ok((model, manifest))
}

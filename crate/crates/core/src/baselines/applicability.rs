//! Binary applicability classifiers: does the attribute apply to the product?

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, EncoderPass, Linear, ModelConfig, Seq2Seq, TensorSet};
use crate::seeds;
use crate::text::ValueSet;
use crate::train::Sample;

use super::{init_linear, mean_rows, train_encoder_head, EncoderHead, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Hidden width of the bag-of-words network.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ApplicabilityConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            hidden: 32,
            seed: 0,
        }
    }
}

fn applicable(s: &Sample) -> f64 {
    if s.label == ValueSet::NotApplicable {
        0.0
    } else {
        1.0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean binary cross-entropy on logits and its gradient.
fn bce(logits: ArrayView2<f64>, targets: &[f64]) -> (f64, Array2<f64>) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut d = Array2::zeros((targets.len(), 1));
    for (i, &y) in targets.iter().enumerate() {
        let z = logits[[i, 0]];
        // log(1 + e^z) - y z, computed stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        d[[i, 0]] = (sigmoid(z) - y) / n;
    }
    (loss / n, d)
}

#[derive(Debug, Clone)]
struct Mlp {
    hidden: Linear,
    out: Linear,
}

impl TensorSet for Mlp {
    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut v = self.hidden.named_tensors();
        v.extend(self.out.named_tensors());
        v
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.hidden.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// Token-presence features into a one-hidden-layer tanh network.
#[derive(Debug, Clone)]
pub struct BowClassifier {
    vocab_size: usize,
    net: Mlp,
}

impl BowClassifier {
    fn features(&self, inputs: &[&[u32]]) -> Array2<f64> {
        let mut x = Array2::zeros((inputs.len(), self.vocab_size));
        for (i, toks) in inputs.iter().enumerate() {
            for &t in *toks {
                if (t as usize) < self.vocab_size {
                    x[[i, t as usize]] = 1.0;
                }
            }
        }
        x
    }

    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let h = crate::model::layers::linear(&self.net.hidden, x).mapv(f64::tanh);
        let z = crate::model::layers::linear(&self.net.out, h.view());
        (h, z)
    }

    /// Probability that the attribute applies.
    pub fn probability(&self, input: &[u32]) -> f64 {
        let x = self.features(&[input]);
        sigmoid(self.forward(x.view()).1[[0, 0]])
    }
}

pub fn train_bow_classifier(vocab_size: usize, samples: &[Sample], cfg: &ApplicabilityConfig) -> Result<BowClassifier> {
    if samples.is_empty() {
        return Err(Error::EmptyData("no applicability training samples".into()));
    }
    let mut model = BowClassifier {
        vocab_size,
        net: Mlp {
            hidden: init_linear(vocab_size, cfg.hidden, seeds::derive(cfg.seed, "bow-hidden", 0)),
            out: init_linear(cfg.hidden, 1, seeds::derive(cfg.seed, "bow-out", 0)),
        },
    };
    let mut opt = Adam::new(cfg.optimizer, &model.net);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = seeds::stream(cfg.seed, "bow-epoch", epoch as u64);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let inputs: Vec<&[u32]> = batch.iter().map(|&i| samples[i].input.as_slice()).collect();
            let targets: Vec<f64> = batch.iter().map(|&i| applicable(&samples[i])).collect();
            let x = model.features(&inputs);
            let (h, z) = model.forward(x.view());
            let (_, dz) = bce(z.view(), &targets);
            let mut g = model.net.zeroed();
            let dh = crate::model::layers::linear_backward(&model.net.out, &mut g.out, h.view(), dz.view());
            let dpre = dh * h.mapv(|t| 1.0 - t * t);
            crate::model::layers::linear_backward(&model.net.hidden, &mut g.hidden, x.view(), dpre.view());
            opt.step(&mut model.net, &g)?;
        }
    }
    Ok(model)
}

/// The shared encoder stack, mean-pooled, under a single-logit head.
#[derive(Debug, Clone)]
pub struct EncoderClassifier {
    net: EncoderHead,
    pub losses: Vec<f64>,
}

impl EncoderClassifier {
    pub fn probability(&self, input: &[u32]) -> Result<f64> {
        let pass = self.net.model.encode_for_training(&[(input, None)], None)?;
        let pooled = pass.states.mean_axis(Axis(0)).expect("non-empty input").insert_axis(Axis(0));
        let z = crate::model::layers::linear(&self.net.head, pooled.view());
        Ok(sigmoid(z[[0, 0]]))
    }
}

pub fn train_encoder_classifier(
    model: ModelConfig,
    samples: &[Sample],
    cfg: &ApplicabilityConfig,
) -> Result<EncoderClassifier> {
    let model_cfg = ModelConfig {
        use_embedding_channel: false,
        ..model
    };
    let net = EncoderHead {
        model: Seq2Seq::new(model_cfg, seeds::derive(cfg.seed, "enc-clf-init", 0))?,
        head: init_linear(model_cfg.d_model, 1, seeds::derive(cfg.seed, "enc-clf-head", 0)),
    };
    let inputs: Vec<&[u32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    let targets: Vec<f64> = samples.iter().map(applicable).collect();
    let sched = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        seed: seeds::derive(cfg.seed, "enc-clf-train", 0),
    };
    let loss = |batch: &[usize], _: &EncoderPass, logits: ArrayView2<f64>| {
        let t: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
        bce(logits, &t)
    };
    let (net, losses) = train_encoder_head(net, &inputs, sched, &mean_rows, &loss)?;
    Ok(EncoderClassifier { net, losses })
}

//! Comparison systems: a BIO span tagger, per-PAC one-vs-rest classifiers
//! and two binary applicability classifiers.

mod applicability;
mod mlc;
mod tagger;

pub use applicability::{
    train_bow_classifier, train_encoder_classifier, ApplicabilityConfig, BowClassifier, EncoderClassifier,
};
pub use mlc::{train_mlc, MlcConfig, MlcModel};
pub use tagger::{bio_tags, decode_spans, train_tagger, Tag, TaggerConfig, TaggerModel};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, EncoderPass, Linear, Seq2Seq, TensorSet};
use crate::seeds;

/// An encoder stack with a linear head on top of its output rows.
#[derive(Debug, Clone)]
pub(crate) struct EncoderHead {
    pub model: Seq2Seq,
    pub head: Linear,
}

impl TensorSet for EncoderHead {
    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.model.params.tensors();
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.model.params.for_each_mut(&mut *f);
        f("head.w", &mut self.head.w);
        f("head.b", &mut self.head.b);
    }
}

pub(crate) fn init_linear(n_in: usize, n_out: usize, seed: u64) -> Linear {
    let mut rng = seeds::stream(seed, "head-init", 0);
    let normal = Normal::new(0.0, 1.0 / (n_in as f64).sqrt()).unwrap();
    Linear {
        w: Array2::from_shape_simple_fn((n_in, n_out), || normal.sample(&mut rng)),
        b: Array2::zeros((1, n_out)),
    }
}

/// Minibatch schedule shared by the encoder-head baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

/// Head loss for one packed batch: given the encoder pass and the head
/// logits, returns the batch loss and d(loss)/d(logits).
pub(crate) type HeadLoss<'a> = dyn Fn(&[usize], &EncoderPass, ArrayView2<f64>) -> (f64, Array2<f64>) + 'a;

/// Trains encoder and head jointly. `pool` returns the rows the head reads
/// together with the linear map from encoder rows to those rows (identity
/// for per-token heads, averaging for sequence heads).
pub(crate) fn train_encoder_head(
    mut net: EncoderHead,
    inputs: &[&[u32]],
    sched: Schedule,
    pool: &dyn Fn(&EncoderPass) -> (Array2<f64>, Array2<f64>),
    loss: &HeadLoss,
) -> Result<(EncoderHead, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyData("no training inputs".into()));
    }
    let mut opt = Adam::new(sched.optimizer, &net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = Vec::with_capacity(sched.epochs);
    for epoch in 0..sched.epochs {
        let mut rng = seeds::stream(sched.seed, "head-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(sched.batch_size.max(1)) {
            let items: Vec<(&[u32], Option<&[f64]>)> = batch.iter().map(|&i| (inputs[i], None)).collect();
            let pass = net.model.encode_for_training(&items, Some(&mut rng))?;
            let (h, pooling) = pool(&pass);
            let logits = crate::model::layers::linear(&net.head, h.view());
            let (l, dlogits) = loss(batch, &pass, logits.view());
            total += l * batch.len() as f64;
            let mut grads = net.zeroed();
            let dh = crate::model::layers::linear_backward(&net.head, &mut grads.head, h.view(), dlogits.view());
            let d_states = pooling.t().dot(&dh);
            net.model.encoder_backward_into(&pass, d_states.view(), &mut grads.model.params);
            opt.step(&mut net, &grads)?;
        }
        losses.push(total / inputs.len() as f64);
    }
    Ok((net, losses))
}

/// Identity pooling: the head reads every encoder row.
pub(crate) fn all_rows(pass: &EncoderPass) -> (Array2<f64>, Array2<f64>) {
    let n = pass.states.nrows();
    (pass.states.clone(), Array2::eye(n))
}

/// Mean pooling over each input's rows.
pub(crate) fn mean_rows(pass: &EncoderPass) -> (Array2<f64>, Array2<f64>) {
    let spans = pass.spans();
    let mut pooling = Array2::zeros((spans.len(), pass.states.nrows()));
    for (i, &(start, len)) in spans.iter().enumerate() {
        for r in start..start + len {
            pooling[[i, r]] = 1.0 / len as f64;
        }
    }
    (pooling.dot(&pass.states), pooling)
}

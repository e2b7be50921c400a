//! Pre-norm encoder-decoder transformer: forward passes, teacher-forced
//! cross-entropy with exact gradients, and cached incremental decoding.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{IMG, PAD};

use super::config::ModelConfig;
use super::layers::{self, AttnCache, FfCache, NormCache, Segment};
use super::params::Parameters;

/// Encoder states, one row per input position (plus the `[IMG]` slot when
/// present, at row 0).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub states: Array2<f64>,
}

impl EncoderOutput {
    pub fn shape(&self) -> (usize, usize) {
        self.states.dim()
    }
}

/// One training pair, unpadded.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<u32>,
    /// Full output sequence `[BOS] .. [EOS]`.
    pub target: Vec<u32>,
    pub embedding: Option<Vec<f64>>,
}

/// Padded batch. Decoder inputs are the targets shifted right; labels equal
/// to `[PAD]` carry no loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<u32>>,
    pub input_mask: Vec<Vec<bool>>,
    pub embeddings: Vec<Option<Vec<f64>>>,
    pub decoder_inputs: Vec<Vec<u32>>,
    pub labels: Vec<Vec<u32>>,
}

impl TrainBatch {
    pub fn from_examples(examples: &[Example]) -> Self {
        let in_len = examples.iter().map(|e| e.input.len()).max().unwrap_or(0);
        let out_len = examples.iter().map(|e| e.target.len().saturating_sub(1)).max().unwrap_or(0);
        let mut b = TrainBatch {
            inputs: Vec::with_capacity(examples.len()),
            input_mask: Vec::with_capacity(examples.len()),
            embeddings: Vec::with_capacity(examples.len()),
            decoder_inputs: Vec::with_capacity(examples.len()),
            labels: Vec::with_capacity(examples.len()),
        };
        for e in examples {
            let mut inp = e.input.clone();
            let mut mask = vec![true; inp.len()];
            inp.resize(in_len, PAD);
            mask.resize(in_len, false);
            let n = e.target.len().saturating_sub(1);
            let mut dec: Vec<u32> = e.target[..n].to_vec();
            let mut lab: Vec<u32> = e.target.get(1..).map(<[u32]>::to_vec).unwrap_or_default();
            dec.resize(out_len, PAD);
            lab.resize(out_len, PAD);
            b.inputs.push(inp);
            b.input_mask.push(mask);
            b.embeddings.push(e.embedding.clone());
            b.decoder_inputs.push(dec);
            b.labels.push(lab);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.labels.iter().flatten().filter(|&&l| l != PAD).count()
    }
}

struct EncLayerCache {
    ln_attn: NormCache,
    attn: AttnCache,
    drop_attn: Option<Array2<f64>>,
    ln_ff: NormCache,
    ff: FfCache,
    drop_ff: Option<Array2<f64>>,
}

/// One encoder input after mask filtering.
struct EncItem {
    tokens: Vec<u32>,
    positions: Vec<usize>,
    image: Option<Vec<f64>>,
}

impl EncItem {
    fn rows(&self) -> usize {
        self.tokens.len() + usize::from(self.image.is_some())
    }
}

/// Row offset and length of each item in a packed batch.
fn pack(lengths: impl IntoIterator<Item = usize>) -> Vec<(usize, usize)> {
    let mut at = 0;
    lengths
        .into_iter()
        .map(|n| {
            let r = (at, n);
            at += n;
            r
        })
        .collect()
}

struct EncCache {
    items: Vec<EncItem>,
    spans: Vec<(usize, usize)>,
    layers: Vec<EncLayerCache>,
    norm: NormCache,
}

struct DecLayerCache {
    ln_self: NormCache,
    self_attn: AttnCache,
    drop_self: Option<Array2<f64>>,
    ln_cross: NormCache,
    cross_attn: AttnCache,
    drop_cross: Option<Array2<f64>>,
    ln_ff: NormCache,
    ff: FfCache,
    drop_ff: Option<Array2<f64>>,
}

struct DecCache {
    prefixes: Vec<Vec<u32>>,
    layers: Vec<DecLayerCache>,
    norm: NormCache,
    normed: Array2<f64>,
}

/// Packed encoder activations kept for a later backward pass.
pub struct EncoderPass {
    pub states: Array2<f64>,
    cache: EncCache,
}

impl EncoderPass {
    /// `(first row, row count)` per input, including any `[IMG]` row.
    pub fn spans(&self) -> &[(usize, usize)] {
        &self.cache.spans
    }

    /// Whether input `i` starts with an `[IMG]` row.
    pub fn has_image(&self, i: usize) -> bool {
        self.cache.items[i].image.is_some()
    }
}

/// Cached per-layer keys and values for step-by-step decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    self_k: Vec<Array2<f64>>,
    self_v: Vec<Array2<f64>>,
    cross_k: Vec<Array2<f64>>,
    cross_v: Vec<Array2<f64>>,
    position: usize,
}

impl DecoderState {
    pub fn position(&self) -> usize {
        self.position
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = Parameters::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let expected = Parameters::zeros(&config);
        let shapes = |p: &Parameters| -> Vec<(String, Vec<usize>)> {
            p.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect()
        };
        if shapes(&expected) != shapes(&params) {
            return Err(Error::ShapeMismatch("parameters do not match config".into()));
        }
        Ok(Self { config, params })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if let Some(&id) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn uses_image(&self, embedding: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
        match (embedding, self.config.use_embedding_channel) {
            (Some(e), true) => {
                if e.len() != self.config.embedding_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "embedding has {} dims, model expects {}",
                        e.len(),
                        self.config.embedding_dim
                    )));
                }
                Ok(Some(e.to_vec()))
            }
            _ => Ok(None),
        }
    }

    /// Runs the bidirectional encoder. Masked-out positions are dropped;
    /// kept positions retain their original position index.
    pub fn encode(&self, tokens: &[u32], mask: Option<&[bool]>, embedding: Option<&[f64]>) -> Result<EncoderOutput> {
        let (tokens, positions) = self.select_positions(tokens, mask)?;
        let image = self.uses_image(embedding)?;
        let item = EncItem { tokens, positions, image };
        let (states, _) = self.encoder_forward(vec![item], None);
        Ok(EncoderOutput { states })
    }

    fn select_positions(&self, tokens: &[u32], mask: Option<&[bool]>) -> Result<(Vec<u32>, Vec<usize>)> {
        if tokens.len() > self.config.max_input_len {
            return Err(Error::InputTooLong {
                len: tokens.len(),
                max: self.config.max_input_len,
            });
        }
        self.check_tokens(tokens)?;
        if let Some(m) = mask {
            if m.len() != tokens.len() {
                return Err(Error::ShapeMismatch("mask length differs from input length".into()));
            }
        }
        let mut kept = Vec::with_capacity(tokens.len());
        let mut positions = Vec::with_capacity(tokens.len());
        for (i, &t) in tokens.iter().enumerate() {
            if mask.map_or(true, |m| m[i]) {
                kept.push(t);
                positions.push(i);
            }
        }
        Ok((kept, positions))
    }

    fn encoder_forward(&self, items: Vec<EncItem>, mut rng: Option<&mut ChaCha8Rng>) -> (Array2<f64>, EncCache) {
        let p = &self.params;
        let cfg = &self.config;
        let spans = pack(items.iter().map(EncItem::rows));
        let n: usize = spans.last().map_or(0, |s| s.0 + s.1);
        let mut x = Array2::zeros((n, cfg.d_model));
        for (item, &(at, _)) in items.iter().zip(&spans) {
            let offset = usize::from(item.image.is_some());
            if let Some(e) = &item.image {
                let proj = p.image_proj.as_ref().expect("embedding channel enabled");
                let ev = ArrayView2::from_shape((1, e.len()), e).unwrap();
                let slot = layers::linear(proj, ev);
                let mut row = x.row_mut(at);
                row.assign(&p.token_embedding.row(IMG as usize));
                row += &slot.row(0);
            }
            for (i, (&t, &pos)) in item.tokens.iter().zip(&item.positions).enumerate() {
                let mut row = x.row_mut(at + offset + i);
                row.assign(&p.token_embedding.row(t as usize));
                row += &p.enc_position.row(pos);
            }
        }
        let segs: Vec<Segment> = spans.iter().map(|&(a, n)| Segment { q0: a, qn: n, k0: a, kn: n }).collect();
        let rate = cfg.dropout_rate;
        let mut caches = Vec::with_capacity(p.encoder.len());
        for layer in &p.encoder {
            let (h, ln_attn) = layers::layer_norm(&layer.ln_attn, x.view());
            let (a, attn) = layers::attention(&layer.attn, h.view(), h.view(), cfg.n_heads, false, &segs);
            let drop_attn = layers::dropout_mask(rng.as_deref_mut(), rate, a.dim());
            x += &layers::apply_mask(a, &drop_attn);
            let (h, ln_ff) = layers::layer_norm(&layer.ln_ff, x.view());
            let (f, ff) = layers::feed_forward(&layer.ff, h.view());
            let drop_ff = layers::dropout_mask(rng.as_deref_mut(), rate, f.dim());
            x += &layers::apply_mask(f, &drop_ff);
            caches.push(EncLayerCache {
                ln_attn,
                attn,
                drop_attn,
                ln_ff,
                ff,
                drop_ff,
            });
        }
        let (out, norm) = layers::layer_norm(&p.enc_norm, x.view());
        let cache = EncCache {
            items,
            spans,
            layers: caches,
            norm,
        };
        (out, cache)
    }

    fn encoder_backward(&self, cache: &EncCache, d_out: ArrayView2<f64>, g: &mut Parameters) {
        let p = &self.params;
        let mut dx = layers::layer_norm_backward(&p.enc_norm, &mut g.enc_norm, &cache.norm, d_out);
        for (li, layer) in p.encoder.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let gl = &mut g.encoder[li];
            let df = layers::apply_mask_grad(dx.view(), &c.drop_ff);
            let dh = layers::feed_forward_backward(&layer.ff, &mut gl.ff, &c.ff, df.view());
            dx += &layers::layer_norm_backward(&layer.ln_ff, &mut gl.ln_ff, &c.ln_ff, dh.view());
            let da = layers::apply_mask_grad(dx.view(), &c.drop_attn);
            let (dq, dkv) = layers::attention_backward(&layer.attn, &mut gl.attn, &c.attn, da.view());
            let dh = dq + dkv;
            dx += &layers::layer_norm_backward(&layer.ln_attn, &mut gl.ln_attn, &c.ln_attn, dh.view());
        }
        for (item, &(at, _)) in cache.items.iter().zip(&cache.spans) {
            let offset = usize::from(item.image.is_some());
            if let Some(e) = &item.image {
                let row = dx.slice(s![at..at + 1, ..]);
                let mut gt = g.token_embedding.row_mut(IMG as usize);
                gt += &row.row(0);
                let proj = p.image_proj.as_ref().unwrap();
                let gproj = g.image_proj.as_mut().unwrap();
                let ev = ArrayView2::from_shape((1, e.len()), e).unwrap();
                layers::linear_backward(proj, gproj, ev, row);
            }
            for (i, (&t, &pos)) in item.tokens.iter().zip(&item.positions).enumerate() {
                let drow = dx.row(at + offset + i);
                let mut gt = g.token_embedding.row_mut(t as usize);
                gt += &drow;
                let mut gp = g.enc_position.row_mut(pos);
                gp += &drow;
            }
        }
    }

    /// `enc_spans[i]` locates prefix `i`'s encoder rows inside `enc`.
    fn decoder_forward(
        &self,
        enc: ArrayView2<f64>,
        enc_spans: &[(usize, usize)],
        prefixes: Vec<Vec<u32>>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, DecCache) {
        let p = &self.params;
        let cfg = &self.config;
        let spans = pack(prefixes.iter().map(Vec::len));
        let n: usize = spans.last().map_or(0, |s| s.0 + s.1);
        let mut y = Array2::zeros((n, cfg.d_model));
        for (prefix, &(at, _)) in prefixes.iter().zip(&spans) {
            for (i, &t) in prefix.iter().enumerate() {
                let mut row = y.row_mut(at + i);
                row.assign(&p.token_embedding.row(t as usize));
                row += &p.dec_position.row(i);
            }
        }
        let self_segs: Vec<Segment> = spans.iter().map(|&(a, n)| Segment { q0: a, qn: n, k0: a, kn: n }).collect();
        let cross_segs: Vec<Segment> = spans
            .iter()
            .zip(enc_spans)
            .map(|(&(a, n), &(e0, en))| Segment { q0: a, qn: n, k0: e0, kn: en })
            .collect();
        let rate = cfg.dropout_rate;
        let mut caches = Vec::with_capacity(p.decoder.len());
        for layer in &p.decoder {
            let (h, ln_self) = layers::layer_norm(&layer.ln_self, y.view());
            let (a, self_attn) = layers::attention(&layer.self_attn, h.view(), h.view(), cfg.n_heads, true, &self_segs);
            let drop_self = layers::dropout_mask(rng.as_deref_mut(), rate, a.dim());
            y += &layers::apply_mask(a, &drop_self);
            let (h, ln_cross) = layers::layer_norm(&layer.ln_cross, y.view());
            let (c, cross_attn) = layers::attention(&layer.cross_attn, h.view(), enc, cfg.n_heads, false, &cross_segs);
            let drop_cross = layers::dropout_mask(rng.as_deref_mut(), rate, c.dim());
            y += &layers::apply_mask(c, &drop_cross);
            let (h, ln_ff) = layers::layer_norm(&layer.ln_ff, y.view());
            let (f, ff) = layers::feed_forward(&layer.ff, h.view());
            let drop_ff = layers::dropout_mask(rng.as_deref_mut(), rate, f.dim());
            y += &layers::apply_mask(f, &drop_ff);
            caches.push(DecLayerCache {
                ln_self,
                self_attn,
                drop_self,
                ln_cross,
                cross_attn,
                drop_cross,
                ln_ff,
                ff,
                drop_ff,
            });
        }
        let (normed, norm) = layers::layer_norm(&p.dec_norm, y.view());
        let logits = layers::linear(&p.output, normed.view());
        let cache = DecCache {
            prefixes,
            layers: caches,
            norm,
            normed,
        };
        (logits, cache)
    }

    /// Returns the gradient with respect to the encoder states.
    fn decoder_backward(&self, cache: &DecCache, dlogits: ArrayView2<f64>, enc_rows: usize, g: &mut Parameters) -> Array2<f64> {
        let p = &self.params;
        let dnormed = layers::linear_backward(&p.output, &mut g.output, cache.normed.view(), dlogits);
        let mut dy = layers::layer_norm_backward(&p.dec_norm, &mut g.dec_norm, &cache.norm, dnormed.view());
        let mut denc = Array2::zeros((enc_rows, self.config.d_model));
        for (li, layer) in p.decoder.iter().enumerate().rev() {
            let c = &cache.layers[li];
            let gl = &mut g.decoder[li];
            let df = layers::apply_mask_grad(dy.view(), &c.drop_ff);
            let dh = layers::feed_forward_backward(&layer.ff, &mut gl.ff, &c.ff, df.view());
            dy += &layers::layer_norm_backward(&layer.ln_ff, &mut gl.ln_ff, &c.ln_ff, dh.view());
            let dc = layers::apply_mask_grad(dy.view(), &c.drop_cross);
            let (dq, dkv) = layers::attention_backward(&layer.cross_attn, &mut gl.cross_attn, &c.cross_attn, dc.view());
            denc += &dkv;
            dy += &layers::layer_norm_backward(&layer.ln_cross, &mut gl.ln_cross, &c.ln_cross, dq.view());
            let ds = layers::apply_mask_grad(dy.view(), &c.drop_self);
            let (dq, dkv) = layers::attention_backward(&layer.self_attn, &mut gl.self_attn, &c.self_attn, ds.view());
            let dh = dq + dkv;
            dy += &layers::layer_norm_backward(&layer.ln_self, &mut gl.ln_self, &c.ln_self, dh.view());
        }
        let mut at = 0;
        for prefix in &cache.prefixes {
            for (i, &t) in prefix.iter().enumerate() {
                let drow = dy.row(at + i);
                let mut gt = g.token_embedding.row_mut(t as usize);
                gt += &drow;
                let mut gp = g.dec_position.row_mut(i);
                gp += &drow;
            }
            at += prefix.len();
        }
        denc
    }

    /// Teacher-forced logits for every prefix position; row `r` depends on
    /// `prefix[..=r]` only.
    pub fn decode_logits(&self, enc: &EncoderOutput, prefix: &[u32]) -> Result<Array2<f64>> {
        if prefix.len() > self.config.max_output_len {
            return Err(Error::PrefixTooLong {
                len: prefix.len(),
                max: self.config.max_output_len,
            });
        }
        self.check_tokens(prefix)?;
        let span = [(0, enc.states.nrows())];
        Ok(self.decoder_forward(enc.states.view(), &span, vec![prefix.to_vec()], None).0)
    }

    /// Mean token cross-entropy over non-pad labels, and its exact gradient.
    pub fn loss_and_grads(&self, batch: &TrainBatch) -> Result<(f64, Parameters)> {
        self.loss_and_grads_with(batch, None)
    }

    /// As [`Seq2Seq::loss_and_grads`], with dropout masks drawn from `rng`
    /// when one is given and `dropout_rate > 0`.
    pub fn loss_and_grads_with(&self, batch: &TrainBatch, rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Parameters)> {
        self.batch_pass(batch, rng, true).map(|(l, g)| (l, g.expect("gradients requested")))
    }

    /// Loss only (no gradient, no dropout).
    pub fn loss(&self, batch: &TrainBatch) -> Result<f64> {
        self.batch_pass(batch, None, false).map(|(l, _)| l)
    }

    fn batch_pass(
        &self,
        batch: &TrainBatch,
        mut rng: Option<&mut ChaCha8Rng>,
        with_grads: bool,
    ) -> Result<(f64, Option<Parameters>)> {
        let n_targets = batch.n_targets();
        if batch.is_empty() || n_targets == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut items = Vec::new();
        let mut prefixes = Vec::new();
        let mut labels = Vec::new();
        for row in 0..batch.len() {
            let row_labels = &batch.labels[row];
            // Rows without targets contribute nothing.
            let Some(last) = row_labels.iter().rposition(|&l| l != PAD) else {
                continue;
            };
            let (tokens, positions) = self.select_positions(&batch.inputs[row], Some(&batch.input_mask[row]))?;
            let image = self.uses_image(batch.embeddings[row].as_deref())?;
            let prefix = &batch.decoder_inputs[row][..=last];
            if prefix.len() > self.config.max_output_len {
                return Err(Error::PrefixTooLong {
                    len: prefix.len(),
                    max: self.config.max_output_len,
                });
            }
            self.check_tokens(prefix)?;
            self.check_tokens(&row_labels[..=last])?;
            items.push(EncItem { tokens, positions, image });
            prefixes.push(prefix.to_vec());
            labels.extend_from_slice(&row_labels[..=last]);
        }
        let (enc, enc_cache) = self.encoder_forward(items, rng.as_deref_mut());
        let (logits, dec_cache) = self.decoder_forward(enc.view(), &enc_cache.spans, prefixes, rng);
        let inv = 1.0 / n_targets as f64;
        let mut total = 0.0;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for (i, &label) in labels.iter().enumerate() {
            if label == PAD {
                continue;
            }
            let logp = layers::log_softmax_row(logits.row(i).as_slice().unwrap());
            total -= logp[label as usize];
            if with_grads {
                let mut drow = dlogits.row_mut(i);
                for (j, lp) in logp.iter().enumerate() {
                    drow[j] = lp.exp() * inv;
                }
                drow[label as usize] -= inv;
            }
        }
        if !with_grads {
            return Ok((total * inv, None));
        }
        let mut grads = self.params.zeros_like();
        let denc = self.decoder_backward(&dec_cache, dlogits.view(), enc.nrows(), &mut grads);
        self.encoder_backward(&enc_cache, denc.view(), &mut grads);
        Ok((total * inv, Some(grads)))
    }

    /// Encodes several inputs as one packed block for encoder-only heads.
    /// Row spans of each input are in [`EncoderPass::spans`].
    pub fn encode_for_training(
        &self,
        inputs: &[(&[u32], Option<&[f64]>)],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderPass> {
        let mut items = Vec::with_capacity(inputs.len());
        for (tokens, embedding) in inputs {
            let (tokens, positions) = self.select_positions(tokens, None)?;
            let image = self.uses_image(*embedding)?;
            items.push(EncItem { tokens, positions, image });
        }
        let (states, cache) = self.encoder_forward(items, rng);
        Ok(EncoderPass { states, cache })
    }

    /// Accumulates encoder parameter gradients for `d_states`.
    pub fn encoder_backward_into(&self, pass: &EncoderPass, d_states: ArrayView2<f64>, grads: &mut Parameters) {
        self.encoder_backward(&pass.cache, d_states, grads);
    }

    /// Prepares cached cross-attention keys/values for incremental decoding.
    pub fn start_decoding(&self, enc: &EncoderOutput) -> DecoderState {
        let p = &self.params;
        let d = self.config.d_model;
        let mut cross_k = Vec::with_capacity(p.decoder.len());
        let mut cross_v = Vec::with_capacity(p.decoder.len());
        for layer in &p.decoder {
            cross_k.push(layers::linear(&layer.cross_attn.k, enc.states.view()));
            cross_v.push(layers::linear(&layer.cross_attn.v, enc.states.view()));
        }
        DecoderState {
            self_k: vec![Array2::zeros((0, d)); p.decoder.len()],
            self_v: vec![Array2::zeros((0, d)); p.decoder.len()],
            cross_k,
            cross_v,
            position: 0,
        }
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&self, state: &mut DecoderState, token: u32) -> Result<Array1<f64>> {
        if state.position >= self.config.max_output_len {
            return Err(Error::PrefixTooLong {
                len: state.position + 1,
                max: self.config.max_output_len,
            });
        }
        self.check_tokens(&[token])?;
        let p = &self.params;
        let cfg = &self.config;
        let mut y = (&p.token_embedding.row(token as usize) + &p.dec_position.row(state.position)).insert_axis(Axis(0));
        for (li, layer) in p.decoder.iter().enumerate() {
            let (h, _) = layers::layer_norm(&layer.ln_self, y.view());
            let q = layers::linear(&layer.self_attn.q, h.view());
            let k = layers::linear(&layer.self_attn.k, h.view());
            let v = layers::linear(&layer.self_attn.v, h.view());
            state.self_k[li].push_row(k.row(0)).unwrap();
            state.self_v[li].push_row(v.row(0)).unwrap();
            let a = attend_one(&q, &state.self_k[li], &state.self_v[li], cfg.n_heads);
            y += &layers::linear(&layer.self_attn.o, a.view());
            let (h, _) = layers::layer_norm(&layer.ln_cross, y.view());
            let q = layers::linear(&layer.cross_attn.q, h.view());
            let c = attend_one(&q, &state.cross_k[li], &state.cross_v[li], cfg.n_heads);
            y += &layers::linear(&layer.cross_attn.o, c.view());
            let (h, _) = layers::layer_norm(&layer.ln_ff, y.view());
            let (f, _) = layers::feed_forward(&layer.ff, h.view());
            y += &f;
        }
        let (normed, _) = layers::layer_norm(&p.dec_norm, y.view());
        let logits = layers::linear(&p.output, normed.view());
        state.position += 1;
        Ok(logits.row(0).to_owned())
    }
}

fn attend_one(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, n_heads: usize) -> Array2<f64> {
    let d = q.ncols();
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Array2::zeros((1, d));
    for h in 0..n_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        layers::softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
    }
    out
}

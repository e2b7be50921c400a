use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seeds;

use super::config::ModelConfig;

/// Affine map `x W + b`; `w` is (in, out) and `b` is (1, out).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// All weights of the encoder-decoder. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub token_embedding: Array2<f64>,
    pub enc_position: Array2<f64>,
    pub dec_position: Array2<f64>,
    /// Projection of the external embedding into the `[IMG]` slot.
    pub image_proj: Option<Linear>,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub output: Linear,
}

struct Init<'a, R: Rng> {
    rng: &'a mut R,
    normal: Normal<f64>,
    zero: bool,
}

impl<R: Rng> Init<'_, R> {
    fn matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        if self.zero {
            return Array2::zeros((rows, cols));
        }
        Array2::from_shape_fn((rows, cols), |_| self.normal.sample(self.rng))
    }

    fn linear(&mut self, inp: usize, out: usize) -> Linear {
        Linear {
            w: self.matrix(inp, out),
            b: Array2::zeros((1, out)),
        }
    }

    fn norm(&mut self, d: usize) -> LayerNorm {
        LayerNorm {
            gain: if self.zero { Array2::zeros((1, d)) } else { Array2::ones((1, d)) },
            bias: Array2::zeros((1, d)),
        }
    }

    fn attention(&mut self, d: usize) -> Attention {
        Attention {
            q: self.linear(d, d),
            k: self.linear(d, d),
            v: self.linear(d, d),
            o: self.linear(d, d),
        }
    }

    fn ff(&mut self, d: usize, f: usize) -> FeedForward {
        FeedForward {
            up: self.linear(d, f),
            down: self.linear(f, d),
        }
    }

    fn build(&mut self, cfg: &ModelConfig) -> Parameters {
        let d = cfg.d_model;
        Parameters {
            token_embedding: self.matrix(cfg.vocab_size, d),
            enc_position: self.matrix(cfg.max_input_len, d),
            dec_position: self.matrix(cfg.max_output_len, d),
            image_proj: cfg.use_embedding_channel.then(|| self.linear(cfg.embedding_dim, d)),
            encoder: (0..cfg.n_enc_layers)
                .map(|_| EncoderLayer {
                    ln_attn: self.norm(d),
                    attn: self.attention(d),
                    ln_ff: self.norm(d),
                    ff: self.ff(d, cfg.d_ff),
                })
                .collect(),
            enc_norm: self.norm(d),
            decoder: (0..cfg.n_dec_layers)
                .map(|_| DecoderLayer {
                    ln_self: self.norm(d),
                    self_attn: self.attention(d),
                    ln_cross: self.norm(d),
                    cross_attn: self.attention(d),
                    ln_ff: self.norm(d),
                    ff: self.ff(d, cfg.d_ff),
                })
                .collect(),
            dec_norm: self.norm(d),
            output: self.linear(d, cfg.vocab_size),
        }
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, name: &str, l: &'a Linear) {
    out.push((format!("{name}.w"), &l.w));
    out.push((format!("{name}.b"), &l.b));
}

fn push_norm<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, name: &str, n: &'a LayerNorm) {
    out.push((format!("{name}.gain"), &n.gain));
    out.push((format!("{name}.bias"), &n.bias));
}

fn push_attn<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, name: &str, a: &'a Attention) {
    push_linear(out, &format!("{name}.q"), &a.q);
    push_linear(out, &format!("{name}.k"), &a.k);
    push_linear(out, &format!("{name}.v"), &a.v);
    push_linear(out, &format!("{name}.o"), &a.o);
}

fn push_ff<'a>(out: &mut Vec<(String, &'a Array2<f64>)>, name: &str, f: &'a FeedForward) {
    push_linear(out, &format!("{name}.up"), &f.up);
    push_linear(out, &format!("{name}.down"), &f.down);
}

impl Parameters {
    /// Weights ~ N(0, 1/d_model), norm gains 1, all biases 0.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeds::stream(seed, "init", 0);
        let normal = Normal::new(0.0, 1.0 / (cfg.d_model as f64).sqrt()).unwrap();
        Ok(Init { rng: &mut rng, normal, zero: false }.build(cfg))
    }

    /// All-zero tensors shaped for `cfg` (gradient accumulators).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut rng = seeds::stream(0, "zeros", 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Init { rng: &mut rng, normal, zero: true }.build(cfg)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.fill(0.0));
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        out.push(("token_embedding".to_string(), &self.token_embedding));
        out.push(("enc_position".to_string(), &self.enc_position));
        out.push(("dec_position".to_string(), &self.dec_position));
        if let Some(p) = &self.image_proj {
            push_linear(&mut out, "image_proj", p);
        }
        for (i, l) in self.encoder.iter().enumerate() {
            push_norm(&mut out, &format!("encoder.{i}.ln_attn"), &l.ln_attn);
            push_attn(&mut out, &format!("encoder.{i}.attn"), &l.attn);
            push_norm(&mut out, &format!("encoder.{i}.ln_ff"), &l.ln_ff);
            push_ff(&mut out, &format!("encoder.{i}.ff"), &l.ff);
        }
        push_norm(&mut out, "enc_norm", &self.enc_norm);
        for (i, l) in self.decoder.iter().enumerate() {
            push_norm(&mut out, &format!("decoder.{i}.ln_self"), &l.ln_self);
            push_attn(&mut out, &format!("decoder.{i}.self_attn"), &l.self_attn);
            push_norm(&mut out, &format!("decoder.{i}.ln_cross"), &l.ln_cross);
            push_attn(&mut out, &format!("decoder.{i}.cross_attn"), &l.cross_attn);
            push_norm(&mut out, &format!("decoder.{i}.ln_ff"), &l.ln_ff);
            push_ff(&mut out, &format!("decoder.{i}.ff"), &l.ff);
        }
        push_norm(&mut out, "dec_norm", &self.dec_norm);
        push_linear(&mut out, "output", &self.output);
        out
    }

    /// Visits every tensor mutably, in the order of [`Parameters::tensors`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<f64>)) {
        fn lin(f: &mut impl FnMut(&str, &mut Array2<f64>), name: &str, l: &mut Linear) {
            f(&format!("{name}.w"), &mut l.w);
            f(&format!("{name}.b"), &mut l.b);
        }
        fn norm(f: &mut impl FnMut(&str, &mut Array2<f64>), name: &str, n: &mut LayerNorm) {
            f(&format!("{name}.gain"), &mut n.gain);
            f(&format!("{name}.bias"), &mut n.bias);
        }
        fn attn(f: &mut impl FnMut(&str, &mut Array2<f64>), name: &str, a: &mut Attention) {
            lin(f, &format!("{name}.q"), &mut a.q);
            lin(f, &format!("{name}.k"), &mut a.k);
            lin(f, &format!("{name}.v"), &mut a.v);
            lin(f, &format!("{name}.o"), &mut a.o);
        }
        fn ff(f: &mut impl FnMut(&str, &mut Array2<f64>), name: &str, x: &mut FeedForward) {
            lin(f, &format!("{name}.up"), &mut x.up);
            lin(f, &format!("{name}.down"), &mut x.down);
        }
        f("token_embedding", &mut self.token_embedding);
        f("enc_position", &mut self.enc_position);
        f("dec_position", &mut self.dec_position);
        if let Some(p) = &mut self.image_proj {
            lin(&mut f, "image_proj", p);
        }
        for (i, l) in self.encoder.iter_mut().enumerate() {
            norm(&mut f, &format!("encoder.{i}.ln_attn"), &mut l.ln_attn);
            attn(&mut f, &format!("encoder.{i}.attn"), &mut l.attn);
            norm(&mut f, &format!("encoder.{i}.ln_ff"), &mut l.ln_ff);
            ff(&mut f, &format!("encoder.{i}.ff"), &mut l.ff);
        }
        norm(&mut f, "enc_norm", &mut self.enc_norm);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            norm(&mut f, &format!("decoder.{i}.ln_self"), &mut l.ln_self);
            attn(&mut f, &format!("decoder.{i}.self_attn"), &mut l.self_attn);
            norm(&mut f, &format!("decoder.{i}.ln_cross"), &mut l.ln_cross);
            attn(&mut f, &format!("decoder.{i}.cross_attn"), &mut l.cross_attn);
            norm(&mut f, &format!("decoder.{i}.ln_ff"), &mut l.ln_ff);
            ff(&mut f, &format!("decoder.{i}.ff"), &mut l.ff);
        }
        norm(&mut f, "dec_norm", &mut self.dec_norm);
        lin(&mut f, "output", &mut self.output);
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Concatenation of all tensors in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) -> Result<()> {
        let others: Vec<&Array2<f64>> = other.tensors().into_iter().map(|(_, t)| t).collect();
        let mut i = 0;
        let mut mismatch = None;
        self.for_each_mut(|name, t| {
            match others.get(i) {
                Some(o) if o.shape() == t.shape() => t.scaled_add(scale, *o),
                _ => {
                    mismatch.get_or_insert_with(|| name.to_string());
                }
            }
            i += 1;
        });
        match mismatch {
            Some(name) => Err(Error::ShapeMismatch(format!("tensor `{name}`"))),
            None if i != others.len() => Err(Error::ShapeMismatch("tensor count differs".into())),
            None => Ok(()),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>()).sum()
    }
}

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::catalog::Product;
use crate::decode::Prediction;
use crate::error::{Error, Result};
use crate::model::{AdamConfig, ModelConfig, Seq2Seq};
use crate::seeds;
use crate::text::{is_reserved, Codec, ValueSet, Vocabulary, UNK};
use crate::train::Sample;

use super::{all_rows, init_linear, train_encoder_head, EncoderHead, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    O,
    B,
    I,
}

impl Tag {
    fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Self {
        [Tag::O, Tag::B, Tag::I][i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Loss weight of O-tagged tokens relative to B/I.
    pub o_weight: f64,
    pub seed: u64,
}

impl TaggerConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            epochs: 8,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 3e-3,
                ..AdamConfig::default()
            },
            o_weight: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaggerModel {
    net: EncoderHead,
    codec: Codec,
    pub losses: Vec<f64>,
}

/// Tags every verbatim occurrence of each value's token sequence in `input`.
/// Values containing out-of-vocabulary tokens cannot match.
pub fn bio_tags(input: &[u32], label: &ValueSet, vocab: &Vocabulary) -> Vec<Tag> {
    let mut tags = vec![Tag::O; input.len()];
    for value in label.values() {
        let needle = vocab.encode_text(value);
        if needle.is_empty() || needle.contains(&UNK) {
            continue;
        }
        let mut i = 0;
        while i + needle.len() <= input.len() {
            let free = tags[i..i + needle.len()].iter().all(|&t| t == Tag::O);
            if free && input[i..i + needle.len()] == needle[..] {
                tags[i] = Tag::B;
                for t in &mut tags[i + 1..i + needle.len()] {
                    *t = Tag::I;
                }
                i += needle.len();
            } else {
                i += 1;
            }
        }
    }
    tags
}

/// Token ranges of the spans in a tag sequence. A stray `I` opens a span.
pub fn decode_spans(tags: &[Tag]) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            Tag::O => {
                if let Some(s) = open.take() {
                    spans.push(s..i);
                }
            }
            Tag::B => {
                if let Some(s) = open.replace(i) {
                    spans.push(s..i);
                }
            }
            Tag::I => {
                open.get_or_insert(i);
            }
        }
    }
    if let Some(s) = open {
        spans.push(s..tags.len());
    }
    spans
}

fn token_loss(tags: &[Vec<Tag>], batch: &[usize], logits: ArrayView2<f64>, o_weight: f64) -> (f64, Array2<f64>) {
    let mut probs = logits.to_owned();
    crate::model::layers::softmax_rows(&mut probs);
    let mut d = probs.clone();
    let mut total_w = 0.0;
    let mut loss = 0.0;
    let mut row = 0;
    let mut weights = Vec::with_capacity(probs.nrows());
    for &i in batch {
        for &t in &tags[i] {
            let w = if t == Tag::O { o_weight } else { 1.0 };
            loss -= w * probs[[row, t.index()]].max(1e-300).ln();
            d[[row, t.index()]] -= 1.0;
            weights.push(w);
            total_w += w;
            row += 1;
        }
    }
    for (mut r, w) in d.rows_mut().into_iter().zip(weights) {
        r *= w / total_w;
    }
    (loss / total_w, d)
}

/// Trains on verbatim-span supervision derived from each sample's label.
pub fn train_tagger(codec: &Codec, samples: &[Sample], cfg: &TaggerConfig) -> Result<TaggerModel> {
    let tags: Vec<Vec<Tag>> = samples.iter().map(|s| bio_tags(&s.input, &s.label, codec.vocab())).collect();
    if !tags.iter().flatten().any(|&t| t == Tag::B) {
        return Err(Error::EmptyData("no verbatim value span in any training record".into()));
    }
    let model_cfg = ModelConfig {
        use_embedding_channel: false,
        ..cfg.model
    };
    let net = EncoderHead {
        model: Seq2Seq::new(model_cfg, seeds::derive(cfg.seed, "tagger-init", 0))?,
        head: init_linear(model_cfg.d_model, 3, seeds::derive(cfg.seed, "tagger-head", 0)),
    };
    let inputs: Vec<&[u32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    let sched = Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        seed: seeds::derive(cfg.seed, "tagger-train", 0),
    };
    let o_weight = cfg.o_weight;
    let loss = move |batch: &[usize], _: &crate::model::EncoderPass, logits: ArrayView2<f64>| {
        token_loss(&tags, batch, logits, o_weight)
    };
    let (net, losses) = train_encoder_head(net, &inputs, sched, &all_rows, &loss)?;
    Ok(TaggerModel {
        net,
        codec: codec.clone(),
        losses,
    })
}

impl TaggerModel {
    /// Per-token tag distribution, one row per input token.
    pub fn tag_probs(&self, input: &[u32]) -> Result<Array2<f64>> {
        let pass = self.net.model.encode_for_training(&[(input, None)], None)?;
        let mut probs = crate::model::layers::linear(&self.net.head, pass.states.view());
        crate::model::layers::softmax_rows(&mut probs);
        Ok(probs)
    }

    /// Most likely tag per token; reserved tokens are always O.
    pub fn tags(&self, input: &[u32]) -> Result<(Vec<Tag>, Array2<f64>)> {
        let probs = self.tag_probs(input)?;
        let tags = probs
            .rows()
            .into_iter()
            .zip(input)
            .map(|(r, &tok)| {
                if is_reserved(tok) {
                    return Tag::O;
                }
                let best = (0..3).fold(0, |b, j| if r[j] > r[b] { j } else { b });
                Tag::from_index(best)
            })
            .collect();
        Ok((tags, probs))
    }

    /// Values named by the tagged spans. Confidence is the mean probability
    /// of the chosen tags within a span, minimum over spans; with no spans,
    /// the answer is NO with the mean O probability as confidence.
    pub fn extract_values(&self, attribute: &str, product: &Product) -> Result<Prediction> {
        let input = self.codec.serialize_input(attribute, product);
        let (tags, probs) = self.tags(&input)?;
        let spans = decode_spans(&tags);
        let vocab = self.codec.vocab();
        let mut values = Vec::new();
        let mut confidence = f64::INFINITY;
        for span in &spans {
            let words: Vec<&str> = input[span.clone()].iter().filter_map(|&t| vocab.token(t)).collect();
            values.push(words.join(" "));
            let mean = span.clone().map(|i| probs[[i, tags[i].index()]]).sum::<f64>() / span.len() as f64;
            confidence = confidence.min(mean);
        }
        if spans.is_empty() {
            let mean_o = probs.column(Tag::O.index()).mean().unwrap_or(1.0);
            return Ok(Prediction {
                value_set: ValueSet::NotObtainable,
                confidence: mean_o,
                raw_sequences: Vec::new(),
            });
        }
        let value_set = ValueSet::from_values(values).unwrap_or(ValueSet::NotObtainable);
        Ok(Prediction {
            value_set,
            confidence,
            raw_sequences: Vec::new(),
        })
    }
}

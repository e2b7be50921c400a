//! Beam search and greedy decoding, the top-K softmax confidence, and
//! end-to-end prediction from a product record.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::catalog::Product;
use crate::error::{Error, Result};
use crate::model::{DecoderState, EncoderOutput, Seq2Seq};
use crate::text::{self, Codec, ValueSet, ATTR, BOS, BULLETS, DESC, EOS, IMG, MP, PAD, PT, TITLE, UNK};

/// Beam width used by every pipeline unless overridden.
pub const DEFAULT_BEAM_WIDTH: usize = 2;

/// Supplies next-token log-probabilities one step at a time.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Feeds `token` and returns log-probabilities for the following token.
    /// Entries may be `-inf` for disallowed tokens.
    fn advance(&self, state: &mut Self::State, token: u32) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct Beam<S> {
    /// Starts with `[BOS]`.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
    state: S,
}

impl<S> Beam<S> {
    /// Generated tokens, counting `[EOS]` but not `[BOS]`.
    pub fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn score(&self) -> f64 {
        self.log_prob / self.generated().max(1) as f64
    }
}

/// A finished sequence (with leading `[BOS]`) and its length-normalized
/// log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub tokens: Vec<u32>,
    pub score: f64,
}

fn by_value_then_tokens(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Beam search keeping the `k` best partial hypotheses by cumulative
/// log-probability. Hypotheses emitting `[EOS]` leave the beam; those that
/// reach `max_len` generated tokens are finished as they stand. Returns up
/// to `k` finished sequences by descending score, ties broken by token ids.
pub fn beam_search<M: StepScorer>(scorer: &M, k: usize, max_len: usize) -> Result<Vec<ScoredSequence>> {
    if k == 0 {
        return Err(Error::InvalidArgument("beam width must be positive".into()));
    }
    let mut alive = vec![Beam {
        tokens: vec![BOS],
        log_prob: 0.0,
        finished: false,
        state: scorer.start(),
    }];
    let mut finished: Vec<Beam<M::State>> = Vec::new();
    for step in 0..max_len {
        let mut candidates: Vec<(usize, u32, f64, Vec<u32>)> = Vec::new();
        for (bi, beam) in alive.iter_mut().enumerate() {
            let last = *beam.tokens.last().unwrap();
            let logp = scorer.advance(&mut beam.state, last)?;
            for (t, &lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    let mut seq = beam.tokens.clone();
                    seq.push(t as u32);
                    candidates.push((bi, t as u32, beam.log_prob + lp, seq));
                }
            }
        }
        candidates.sort_by(|a, b| by_value_then_tokens((a.2, &a.3), (b.2, &b.3)));
        candidates.truncate(k);
        let mut next = Vec::with_capacity(k);
        for (bi, t, lp, seq) in candidates {
            let done = t == EOS || step + 1 == max_len;
            let beam = Beam {
                tokens: seq,
                log_prob: lp,
                finished: done,
                state: alive[bi].state.clone(),
            };
            if done {
                finished.push(beam);
            } else {
                next.push(beam);
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    finished.sort_by(|a, b| by_value_then_tokens((a.score(), &a.tokens), (b.score(), &b.tokens)));
    finished.truncate(k);
    Ok(finished
        .into_iter()
        .map(|b| ScoredSequence {
            score: b.score(),
            tokens: b.tokens,
        })
        .collect())
}

/// Arg-max decoding; ties go to the smallest token id.
pub fn greedy<M: StepScorer>(scorer: &M, max_len: usize) -> Result<ScoredSequence> {
    let mut state = scorer.start();
    let mut tokens = vec![BOS];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let logp = scorer.advance(&mut state, *tokens.last().unwrap())?;
        let (t, lp) = logp
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            })
            .ok_or_else(|| Error::InvalidArgument("no admissible token".into()))?;
        tokens.push(t as u32);
        log_prob += lp;
        if t as u32 == EOS {
            break;
        }
    }
    let n = (tokens.len() - 1).max(1) as f64;
    Ok(ScoredSequence { tokens, score: log_prob / n })
}

/// Softmax weight of the first score among all: `e^{p1} / sum_j e^{pj}`.
pub fn confidence(scores: &[f64]) -> Result<f64> {
    let first = *scores
        .first()
        .ok_or_else(|| Error::InvalidArgument("confidence of an empty score list".into()))?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    Ok((first - max).exp() / denom)
}

/// Tokens the decoder may never emit.
pub const BANNED_OUTPUT_TOKENS: [u32; 10] = [PAD, BOS, UNK, ATTR, PT, MP, TITLE, BULLETS, DESC, IMG];

/// Adapts a trained model and one encoded input to [`StepScorer`].
pub struct ModelScorer<'a> {
    model: &'a Seq2Seq,
    encoded: EncoderOutput,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Seq2Seq, encoded: EncoderOutput) -> Self {
        Self { model, encoded }
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> DecoderState {
        self.model.start_decoding(&self.encoded)
    }

    fn advance(&self, state: &mut DecoderState, token: u32) -> Result<Vec<f64>> {
        let mut logits = self.model.step(state, token)?;
        for &t in &BANNED_OUTPUT_TOKENS {
            logits[t as usize] = f64::NEG_INFINITY;
        }
        Ok(crate::model::layers::log_softmax_row(logits.as_slice().unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub value_set: ValueSet,
    pub confidence: f64,
    pub raw_sequences: Vec<ScoredSequence>,
}

/// A trained model bundled with its codec.
pub struct Predictor {
    pub model: Seq2Seq,
    pub codec: Codec,
    pub beam_width: usize,
}

impl Predictor {
    pub fn new(model: Seq2Seq, codec: Codec) -> Self {
        Self {
            model,
            codec,
            beam_width: DEFAULT_BEAM_WIDTH,
        }
    }

    pub fn with_beam_width(mut self, k: usize) -> Self {
        self.beam_width = k;
        self
    }

    pub fn encode(&self, attribute: &str, product: &Product) -> Result<EncoderOutput> {
        let input = self.codec.serialize_input(attribute, product);
        self.model.encode(&input, None, product.embedding.as_deref())
    }

    pub fn predict(&self, attribute: &str, product: &Product) -> Result<Prediction> {
        let scorer = ModelScorer::new(&self.model, self.encode(attribute, product)?);
        let raw = beam_search(&scorer, self.beam_width, self.model.config.max_output_len)?;
        let scores: Vec<f64> = raw.iter().map(|s| s.score).collect();
        let confidence = confidence(&scores)?;
        let value_set = text::parse_output(self.codec.vocab(), &raw[0].tokens);
        Ok(Prediction {
            value_set,
            confidence,
            raw_sequences: raw,
        })
    }

    pub fn predict_greedy(&self, attribute: &str, product: &Product) -> Result<ValueSet> {
        let scorer = ModelScorer::new(&self.model, self.encode(attribute, product)?);
        let seq = greedy(&scorer, self.model.config.max_output_len)?;
        Ok(text::parse_output(self.codec.vocab(), &seq.tokens))
    }

    /// Renders a prediction as one line of the batch output format.
    pub fn output_row(&self, product: &Product, attribute: &str, p: &Prediction) -> PredictionRow {
        let vocab = self.codec.vocab();
        PredictionRow {
            product_id: product.id.clone(),
            pt: product.pt.clone(),
            attribute: attribute.to_string(),
            country: product.country.clone(),
            prediction: p.value_set.clone(),
            confidence: p.confidence,
            top_k: p
                .raw_sequences
                .iter()
                .map(|s| RawSequence {
                    tokens: s.tokens.iter().map(|&t| vocab.token(t).unwrap_or("[UNK]").to_string()).collect(),
                    score: s.score,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSequence {
    pub tokens: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub product_id: String,
    pub pt: String,
    pub attribute: String,
    pub country: String,
    pub prediction: ValueSet,
    pub confidence: f64,
    pub top_k: Vec<RawSequence>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Next-token distribution depends on the last token and step only.
    #[derive(Clone)]
    pub(crate) struct TableScorer {
        pub logp: Vec<Vec<Vec<f64>>>, // [step][last token][next token]
    }

    impl StepScorer for TableScorer {
        type State = usize;
        fn start(&self) -> usize {
            0
        }
        fn advance(&self, step: &mut usize, token: u32) -> Result<Vec<f64>> {
            let row = self.logp[*step][token as usize].clone();
            *step += 1;
            Ok(row)
        }
    }

    fn table(seed: u64, vocab: usize, steps: usize, with_ties: bool) -> TableScorer {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logp = (0..steps)
            .map(|_| {
                (0..vocab)
                    .map(|_| {
                        let mut raw: Vec<f64> = (0..vocab)
                            .map(|_| if with_ties { rng.random_range(0..3) as f64 } else { rng.random_range(-3.0..3.0) })
                            .collect();
                        raw[BOS as usize] = f64::NEG_INFINITY;
                        raw[PAD as usize] = f64::NEG_INFINITY;
                        crate::model::layers::log_softmax_row(&raw)
                    })
                    .collect()
            })
            .collect();
        TableScorer { logp }
    }

    /// Every complete sequence with at most `max_len` generated tokens:
    /// either ending at the first `[EOS]` or cut at `max_len`.
    fn enumerate(s: &TableScorer, vocab: usize, max_len: usize) -> Vec<ScoredSequence> {
        let mut out = Vec::new();
        let mut stack = vec![(vec![BOS], 0.0)];
        while let Some((seq, lp)) = stack.pop() {
            let step = seq.len() - 1;
            let row = &s.logp[step][*seq.last().unwrap() as usize];
            for t in 0..vocab as u32 {
                let l = row[t as usize];
                if !l.is_finite() {
                    continue;
                }
                let mut next = seq.clone();
                next.push(t);
                if t == EOS || step + 1 == max_len {
                    let n = next.len() - 1;
                    out.push(ScoredSequence { tokens: next, score: (lp + l) / n as f64 });
                } else {
                    stack.push((next, lp + l));
                }
            }
        }
        out.sort_by(|a, b| by_value_then_tokens((a.score, &a.tokens), (b.score, &b.tokens)));
        out
    }

    #[test]
    fn confidence_examples() {
        assert!((confidence(&[-1.0, -3.0]).unwrap() - 0.880_797).abs() < 1e-6);
        assert_eq!(confidence(&[-0.7, -0.7]).unwrap(), 0.5);
        assert_eq!(confidence(&[-2.5]).unwrap(), 1.0);
        assert!((confidence(&[-1.0; 4]).unwrap() - 0.25).abs() < 1e-15);
        assert!(confidence(&[]).is_err());
    }

    #[test]
    fn beam_matches_enumeration_when_wide_enough() {
        for seed in 0..100 {
            let vocab = 3 + (seed as usize % 6);
            let max_len = 1 + (seed as usize % 4);
            let s = table(seed, vocab, max_len, seed % 3 == 0);
            let k = vocab.pow(max_len as u32);
            let got = beam_search(&s, k, max_len).unwrap();
            let want = enumerate(&s, vocab, max_len);
            assert_eq!(got.len(), want.len().min(k), "seed {seed}");
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.tokens, w.tokens, "seed {seed}");
                assert!((g.score - w.score).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..100 {
            let s = table(seed + 1000, 6, 4, seed % 2 == 0);
            let b = beam_search(&s, 1, 4).unwrap();
            let g = greedy(&s, 4).unwrap();
            assert_eq!(b[0].tokens, g.tokens);
            assert!((b[0].score - g.score).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_width_is_rejected() {
        assert!(beam_search(&table(0, 4, 2, false), 0, 2).is_err());
    }

    proptest! {
        #[test]
        fn scores_are_non_increasing(seed in 0u64..500, k in 1usize..6) {
            let s = table(seed, 5, 3, false);
            let r = beam_search(&s, k, 3).unwrap();
            prop_assert!(r.len() <= k);
            for w in r.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for seq in &r {
                prop_assert!(seq.score <= 0.0);
            }
        }

        #[test]
        fn confidence_in_unit_interval_and_shift_invariant(
            mut scores in proptest::collection::vec(-20.0f64..0.0, 1..6),
            shift in -50.0f64..50.0,
        ) {
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let c = confidence(&scores).unwrap();
            prop_assert!(c > 0.0 && c <= 1.0);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            prop_assert!((confidence(&shifted).unwrap() - c).abs() < 1e-12);
        }

        #[test]
        fn confidence_grows_with_gap(p1 in -5.0f64..0.0, g1 in 0.0f64..5.0, extra in 0.01f64..5.0) {
            let a = confidence(&[p1, p1 - g1]).unwrap();
            let b = confidence(&[p1, p1 - g1 - extra]).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn logit_shift_leaves_ranking_unchanged(seed in 0u64..200, shift in -10.0f64..10.0) {
            // Log-softmax of shifted logits equals the original, so the
            // search sees identical inputs.
            let s = table(seed, 5, 3, false);
            let mut shifted = s.clone();
            for step in &mut shifted.logp {
                for row in step.iter_mut() {
                    let raw: Vec<f64> = row.iter().map(|v| v + shift).collect();
                    *row = crate::model::layers::log_softmax_row(&raw);
                }
            }
            let a = beam_search(&s, 2, 3).unwrap();
            let b = beam_search(&shifted, 2, 3).unwrap();
            prop_assert_eq!(a.iter().map(|x| &x.tokens).collect::<Vec<_>>(), b.iter().map(|x| &x.tokens).collect::<Vec<_>>());
            let ca = confidence(&a.iter().map(|x| x.score).collect::<Vec<_>>()).unwrap();
            let cb = confidence(&b.iter().map(|x| x.score).collect::<Vec<_>>()).unwrap();
            prop_assert!((ca - cb).abs() < 1e-9);
        }
    }
}

//! Word-level tokenization, vocabulary, and the token layouts the model
//! consumes and produces.
//!
//! Input layout:
//!
//! ```text
//! [BOS] [ATTR] attr.. [PT] pt.. [MP] country.. [TITLE] title.. [BULLETS] bullets.. [DESC] desc.. [EOS]
//! ```
//!
//! Output layout is `[BOS] v1 [VSEP] v2 .. [EOS]` with values in sorted
//! order, or `[BOS] [NA] [EOS]` / `[BOS] [NO] [EOS]` for the two negative
//! answers.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::catalog::Product;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NA: u32 = 4;
pub const NO: u32 = 5;
pub const VSEP: u32 = 6;
pub const ATTR: u32 = 7;
pub const PT: u32 = 8;
pub const MP: u32 = 9;
pub const TITLE: u32 = 10;
pub const BULLETS: u32 = 11;
pub const DESC: u32 = 12;
pub const IMG: u32 = 13;

/// Reserved tokens in id order.
pub const RESERVED: [&str; 14] = [
    "[PAD]", "[BOS]", "[EOS]", "[UNK]", "[NA]", "[NO]", "[VSEP]", "[ATTR]", "[PT]", "[MP]",
    "[TITLE]", "[BULLETS]", "[DESC]", "[IMG]",
];

pub fn is_reserved(id: u32) -> bool {
    (id as usize) < RESERVED.len()
}

/// Lowercase, split on whitespace, and split ASCII punctuation (other than
/// `_`) into single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() && ch != '_' {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Canonical form of a value string: the tokenization joined by single spaces.
pub fn normalize_value(value: &str) -> String {
    tokenize(value).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary from raw texts. Tokens seen fewer than `min_count`
    /// times are left out and encode as `[UNK]`. Ids follow first appearance.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        for text in corpus {
            for tok in tokenize(text.as_ref()) {
                let c = counts.entry(tok.clone()).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
        let mut vocab = Self::reserved_only();
        for tok in order {
            if counts[&tok] >= min_count {
                vocab.push(tok);
            }
        }
        vocab
    }

    fn push(&mut self, tok: String) {
        if !self.index.contains_key(&tok) {
            self.index.insert(tok.clone(), self.tokens.len() as u32);
            self.tokens.push(tok);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let tokens: Vec<String> = body.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidArgument(
                "vocabulary file does not start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{t}` in vocabulary")));
            }
        }
        Ok(Self { tokens, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Values,
    NA,
    NO,
}

/// A predicted or gold answer: a non-empty set of normalized values, or one of
/// the negative atoms.
///
/// Canonical `Values` are normalized, deduplicated, and sorted. Build them with
/// [`ValueSet::from_values`]; the variant is public for pattern matching.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueSet {
    Values(Vec<String>),
    NotApplicable,
    NotObtainable,
}

impl ValueSet {
    /// Normalizes, deduplicates, and sorts. Empty input (after dropping blank
    /// values) is an error.
    pub fn from_values<I, S>(values: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vals: Vec<String> = values
            .into_iter()
            .map(|v| normalize_value(v.as_ref()))
            .filter(|v| !v.is_empty())
            .collect();
        vals.sort();
        vals.dedup();
        if vals.is_empty() {
            return Err(Error::InvalidValueSet("no non-empty values".into()));
        }
        Ok(ValueSet::Values(vals))
    }

    pub fn single(value: &str) -> Result<Self> {
        Self::from_values([value])
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            ValueSet::Values(_) => ValueKind::Values,
            ValueSet::NotApplicable => ValueKind::NA,
            ValueSet::NotObtainable => ValueKind::NO,
        }
    }

    pub fn values(&self) -> &[String] {
        match self {
            ValueSet::Values(v) => v,
            _ => &[],
        }
    }

    pub fn is_values(&self) -> bool {
        matches!(self, ValueSet::Values(_))
    }

    pub fn is_canonical(&self) -> bool {
        match self {
            ValueSet::Values(v) => {
                !v.is_empty()
                    && v.iter().all(|s| !s.is_empty() && normalize_value(s) == *s)
                    && v.windows(2).all(|w| w[0] < w[1])
            }
            _ => true,
        }
    }
}

impl fmt::Display for ValueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSet::Values(v) => write!(f, "{{{}}}", v.join(", ")),
            ValueSet::NotApplicable => f.write_str("NA"),
            ValueSet::NotObtainable => f.write_str("NO"),
        }
    }
}

// JSON form: a list of strings, or the bare strings "NA" / "NO".
impl Serialize for ValueSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ValueSet::Values(v) => {
                let mut seq = serializer.serialize_seq(Some(v.len()))?;
                for s in v {
                    seq.serialize_element(s)?;
                }
                seq.end()
            }
            ValueSet::NotApplicable => serializer.serialize_str("NA"),
            ValueSet::NotObtainable => serializer.serialize_str("NO"),
        }
    }
}

impl<'de> Deserialize<'de> for ValueSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ValueSetVisitor;

        impl<'de> Visitor<'de> for ValueSetVisitor {
            type Value = ValueSet;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of values, \"NA\", or \"NO\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ValueSet, E> {
                match v {
                    "NA" => Ok(ValueSet::NotApplicable),
                    "NO" => Ok(ValueSet::NotObtainable),
                    other => Err(E::custom(format!("unknown value-set atom `{other}`"))),
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<ValueSet, A::Error> {
                let mut vals: Vec<String> = Vec::new();
                while let Some(v) = seq.next_element::<String>()? {
                    vals.push(v);
                }
                ValueSet::from_values(vals).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_any(ValueSetVisitor)
    }
}

/// Converts (attribute, product) pairs and value sets to and from token ids.
#[derive(Debug, Clone)]
pub struct Codec {
    vocab: Vocabulary,
    max_input_len: usize,
}

impl Codec {
    pub fn new(vocab: Vocabulary, max_input_len: usize) -> Result<Self> {
        if max_input_len < 8 {
            return Err(Error::InvalidArgument(format!(
                "max_input_len {max_input_len} cannot hold the 8 field sentinels"
            )));
        }
        Ok(Self { vocab, max_input_len })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_input_len(&self) -> usize {
        self.max_input_len
    }

    pub fn serialize_input(&self, attribute: &str, product: &Product) -> Vec<u32> {
        let v = &self.vocab;
        let mut segments = [
            v.encode_text(attribute),
            v.encode_text(&product.pt),
            v.encode_text(&product.country),
            v.encode_text(&product.title),
            v.encode_text(&product.bullets),
            v.encode_text(&product.description),
        ];
        let total: usize = 8 + segments.iter().map(Vec::len).sum::<usize>();
        let mut excess = total.saturating_sub(self.max_input_len);
        // desc, bullets, title, then the header fields as a last resort
        for idx in [5, 4, 3, 2, 1, 0] {
            if excess == 0 {
                break;
            }
            let cut = excess.min(segments[idx].len());
            let keep = segments[idx].len() - cut;
            segments[idx].truncate(keep);
            excess -= cut;
        }
        let sentinels = [ATTR, PT, MP, TITLE, BULLETS, DESC];
        let mut out = Vec::with_capacity(total.min(self.max_input_len));
        out.push(BOS);
        for (sentinel, seg) in sentinels.iter().zip(segments.iter()) {
            out.push(*sentinel);
            out.extend_from_slice(seg);
        }
        out.push(EOS);
        out
    }

    pub fn serialize_output(&self, vs: &ValueSet) -> Result<Vec<u32>> {
        if !vs.is_canonical() {
            return Err(Error::InvalidValueSet(format!("{vs}")));
        }
        let mut out = vec![BOS];
        match vs {
            ValueSet::NotApplicable => out.push(NA),
            ValueSet::NotObtainable => out.push(NO),
            ValueSet::Values(vals) => {
                for (i, val) in vals.iter().enumerate() {
                    if i > 0 {
                        out.push(VSEP);
                    }
                    out.extend(self.vocab.encode_text(val));
                }
            }
        }
        out.push(EOS);
        Ok(out)
    }

    pub fn parse_output(&self, tokens: &[u32]) -> ValueSet {
        parse_output(&self.vocab, tokens)
    }
}

/// Total parse of a decoder output. Reading stops at the first `[EOS]`.
/// Reserved tokens other than `[VSEP]` inside value segments are dropped, as
/// are empty segments. With no surviving values the first negative atom wins;
/// with none at all the answer is NO.
pub fn parse_output(vocab: &Vocabulary, tokens: &[u32]) -> ValueSet {
    let mut segments: Vec<Vec<&str>> = vec![Vec::new()];
    let mut first_negative: Option<u32> = None;
    for &id in tokens.iter().skip_while(|&&t| t == BOS) {
        match id {
            EOS => break,
            VSEP => segments.push(Vec::new()),
            NA | NO => {
                first_negative.get_or_insert(id);
            }
            id if is_reserved(id) => {}
            id => {
                if let Some(tok) = vocab.token(id) {
                    segments.last_mut().unwrap().push(tok);
                }
            }
        }
    }
    let values: Vec<String> = segments
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.join(" "))
        .collect();
    match ValueSet::from_values(values) {
        Ok(vs) => vs,
        Err(_) => match first_negative {
            Some(NA) => ValueSet::NotApplicable,
            _ => ValueSet::NotObtainable,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn product(title: &str, bullets: &str, desc: &str) -> Product {
        Product {
            id: "p1".into(),
            pt: "shirt".into(),
            country: "us".into(),
            title: title.into(),
            bullets: bullets.into(),
            description: desc.into(),
            embedding: None,
        }
    }

    #[test]
    fn empty_corpus_gives_reserved_only() {
        let v = Vocabulary::build(Vec::<String>::new(), 0);
        assert_eq!(v.len(), RESERVED.len());
        for (i, t) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(t), i as u32);
        }
    }

    #[test]
    fn min_count_threshold() {
        let v = Vocabulary::build(["red red blue"], 2);
        assert!(v.contains("red"));
        assert!(!v.contains("blue"));
        assert_eq!(v.id("blue"), UNK);
    }

    #[test]
    fn vocab_is_deterministic() {
        let corpus = ["a b c", "c d", "e a"];
        assert_eq!(Vocabulary::build(corpus, 1), Vocabulary::build(corpus, 1));
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Water-Proof,  big_box!"), ["water", "-", "proof", ",", "big_box", "!"]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["x y z", "y"], 1);
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().nth(4), Some("[NA]"));
    }

    #[test]
    fn all_empty_product_is_eight_sentinels() {
        let codec = Codec::new(Vocabulary::reserved_only(), 64).unwrap();
        let mut p = product("", "", "");
        p.pt.clear();
        p.country.clear();
        let toks = codec.serialize_input("", &p);
        assert_eq!(toks, vec![BOS, ATTR, PT, MP, TITLE, BULLETS, DESC, EOS]);
    }

    #[test]
    fn input_field_order() {
        let vocab = Vocabulary::build(["color shirt us t1 b1 d1"], 1);
        let codec = Codec::new(vocab.clone(), 64).unwrap();
        let toks = codec.serialize_input("color", &product("t1", "b1", "d1"));
        let id = |s: &str| vocab.id(s);
        assert_eq!(
            toks,
            vec![BOS, ATTR, id("color"), PT, id("shirt"), MP, id("us"), TITLE, id("t1"), BULLETS, id("b1"), DESC, id("d1"), EOS]
        );
    }

    #[test]
    fn truncation_drops_description_first() {
        let vocab = Vocabulary::build(["color shirt us alpha beta gamma b1 b2 d1 d2 d3 d4 d5 d6"], 1);
        let codec = Codec::new(vocab.clone(), 18).unwrap();
        let p = product("alpha beta gamma", "b1 b2", "d1 d2 d3 d4 d5 d6");
        let toks = codec.serialize_input("color", &p);
        assert_eq!(toks.len(), 18);
        let desc_pos = toks.iter().position(|&t| t == DESC).unwrap();
        // 8 sentinels + 3 header + 3 title + 2 bullets = 16, leaving 2 desc tokens
        assert_eq!(&toks[desc_pos + 1..toks.len() - 1], &[vocab.id("d1"), vocab.id("d2")]);
        let title_pos = toks.iter().position(|&t| t == TITLE).unwrap();
        assert_eq!(&toks[title_pos + 1..title_pos + 4], &[vocab.id("alpha"), vocab.id("beta"), vocab.id("gamma")]);

        let tight = Codec::new(vocab.clone(), 13).unwrap();
        let toks = tight.serialize_input("color", &p);
        assert_eq!(toks.len(), 13);
        let bullets_pos = toks.iter().position(|&t| t == BULLETS).unwrap();
        assert_eq!(toks[bullets_pos + 1], DESC, "bullets go after the description");
        assert_eq!(toks[toks.len() - 1], EOS);
    }

    #[test]
    fn serialize_output_sorts_values() {
        let vocab = Vocabulary::build(["red blue"], 1);
        let codec = Codec::new(vocab.clone(), 16).unwrap();
        let vs = ValueSet::from_values(["red", "blue"]).unwrap();
        let toks = codec.serialize_output(&vs).unwrap();
        assert_eq!(toks, vec![BOS, vocab.id("blue"), VSEP, vocab.id("red"), EOS]);
    }

    #[test]
    fn negative_atoms_round_trip() {
        let codec = Codec::new(Vocabulary::reserved_only(), 16).unwrap();
        assert_eq!(codec.serialize_output(&ValueSet::NotApplicable).unwrap(), vec![BOS, NA, EOS]);
        assert_eq!(codec.parse_output(&[BOS, NA, EOS]), ValueSet::NotApplicable);
        assert_eq!(codec.serialize_output(&ValueSet::NotObtainable).unwrap(), vec![BOS, NO, EOS]);
        assert_eq!(codec.parse_output(&[BOS, NO, EOS]), ValueSet::NotObtainable);
    }

    #[test]
    fn parse_drops_empty_segments() {
        let vocab = Vocabulary::build(["red"], 1);
        let red = vocab.id("red");
        assert_eq!(parse_output(&vocab, &[BOS, VSEP, red, EOS]), ValueSet::single("red").unwrap());
        assert_eq!(parse_output(&vocab, &[BOS, TITLE, red, VSEP, VSEP, EOS, red]), ValueSet::single("red").unwrap());
        assert_eq!(parse_output(&vocab, &[]), ValueSet::NotObtainable);
        assert_eq!(parse_output(&vocab, &[BOS, VSEP, NA, NO, EOS]), ValueSet::NotApplicable);
    }

    #[test]
    fn serialize_rejects_non_canonical() {
        let codec = Codec::new(Vocabulary::reserved_only(), 16).unwrap();
        let bad = ValueSet::Values(vec!["b".into(), "a".into()]);
        assert!(codec.serialize_output(&bad).is_err());
        assert!(codec.serialize_output(&ValueSet::Values(vec![])).is_err());
    }

    #[test]
    fn value_set_json_forms() {
        let vs = ValueSet::from_values(["Red ", "blue"]).unwrap();
        assert_eq!(serde_json::to_string(&vs).unwrap(), r#"["blue","red"]"#);
        assert_eq!(serde_json::to_string(&ValueSet::NotApplicable).unwrap(), r#""NA""#);
        let back: ValueSet = serde_json::from_str(r#""NO""#).unwrap();
        assert_eq!(back, ValueSet::NotObtainable);
        assert!(serde_json::from_str::<ValueSet>("[]").is_err());
    }

    fn value_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-z][a-z0-9]{0,5}", 1..3).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn output_round_trip(values in prop::collection::vec(value_strategy(), 1..5), neg in 0u8..4) {
            let vs = match neg {
                0 => ValueSet::NotApplicable,
                1 => ValueSet::NotObtainable,
                _ => ValueSet::from_values(&values).unwrap(),
            };
            let vocab = Vocabulary::build(values.iter(), 1);
            let codec = Codec::new(vocab, 16).unwrap();
            let toks = codec.serialize_output(&vs).unwrap();
            prop_assert_eq!(codec.parse_output(&toks), vs);
        }

        #[test]
        fn input_serialization_is_injective(
            a in "[a-z]{1,4}", b in "[a-z]{1,4}",
            t1 in "[a-z ]{0,12}", t2 in "[a-z ]{0,12}",
            d1 in "[a-z ]{0,12}", d2 in "[a-z ]{0,12}",
        ) {
            let corpus = [a.as_str(), b.as_str(), &t1, &t2, &d1, &d2, "shirt us"];
            let codec = Codec::new(Vocabulary::build(corpus, 1), 256).unwrap();
            let p1 = product(&t1, "", &d1);
            let p2 = product(&t2, "", &d2);
            let same_input = tokenize(&a) == tokenize(&b)
                && tokenize(&t1) == tokenize(&t2)
                && tokenize(&d1) == tokenize(&d2);
            let s1 = codec.serialize_input(&a, &p1);
            let s2 = codec.serialize_input(&b, &p2);
            prop_assert_eq!(s1 == s2, same_input);
        }
    }
}

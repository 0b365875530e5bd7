//! Serialization of rendered examples into token ids and greedy packing into
//! fixed-capacity training rows with target-only, length-normalized loss
//! weights.
//!
//! Every packed example contributes exactly one unit of loss mass: input
//! positions get weight 0 and each token of a length-`T` target gets `1/T`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::template::RenderedExample;
use crate::tokenizer::{TokenId, Tokenizer, TokenizerError};

pub const DEFAULT_MAX_LEN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PackError {
    #[error("example has an empty {0} text")]
    EmptyText(&'static str),
    #[error("target of `{0}` encodes to zero tokens")]
    EmptyTarget(String),
    #[error("tokenizer does not split `input + \" \" + target` at the input boundary")]
    MisalignedBoundary,
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("maximum sequence length must be at least 2, got {0}")]
    MaxLenTooSmall(usize),
}

/// How the input and target token streams are joined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SeparatorPolicy {
    /// `encode(input + " " + target)`; the space belongs to the input side.
    Space,
    /// The tokenizer's end-of-sequence token closes the input.
    EosToken,
    /// A dedicated separator token closes the input.
    NewSpecial,
    /// Input and target stay disjoint, for encoder-decoder models.
    EncoderDecoder,
}

impl fmt::Display for SeparatorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeparatorPolicy::Space => "space",
            SeparatorPolicy::EosToken => "eos-token",
            SeparatorPolicy::NewSpecial => "new-special",
            SeparatorPolicy::EncoderDecoder => "encoder-decoder",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedPair {
    pub input_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
    pub separator_policy: SeparatorPolicy,
}

impl SerializedPair {
    pub fn len(&self) -> usize {
        self.input_ids.len() + self.target_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn serialize_pair(
    ex: &RenderedExample,
    tok: &dyn Tokenizer,
    policy: SeparatorPolicy,
) -> Result<SerializedPair, PackError> {
    if ex.input_text.is_empty() {
        return Err(PackError::EmptyText("input"));
    }
    if ex.target_text.is_empty() {
        return Err(PackError::EmptyText("target"));
    }
    let (input_ids, target_ids) = match policy {
        SeparatorPolicy::Space => {
            let prefix = format!("{} ", ex.input_text);
            let input_ids = tok.encode(&prefix)?;
            let mut full = tok.encode(&format!("{prefix}{}", ex.target_text))?;
            if !full.starts_with(&input_ids) {
                return Err(PackError::MisalignedBoundary);
            }
            let target_ids = full.split_off(input_ids.len());
            (input_ids, target_ids)
        }
        SeparatorPolicy::EosToken | SeparatorPolicy::NewSpecial => {
            let mut input_ids = tok.encode(&ex.input_text)?;
            input_ids.push(if policy == SeparatorPolicy::EosToken {
                tok.eos_id()
            } else {
                tok.sep_id()
            });
            (input_ids, tok.encode(&ex.target_text)?)
        }
        SeparatorPolicy::EncoderDecoder => {
            (tok.encode(&ex.input_text)?, tok.encode(&ex.target_text)?)
        }
    };
    if target_ids.is_empty() {
        return Err(PackError::EmptyTarget(ex.prompt_name.clone()));
    }
    Ok(SerializedPair {
        input_ids,
        target_ids,
        separator_policy: policy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttentionPolicy {
    Causal,
    /// Bidirectional attention over each segment's input, causal over its
    /// target.
    PrefixNoncausal,
}

impl AttentionPolicy {
    pub fn to_byte(self) -> u8 {
        match self {
            AttentionPolicy::Causal => 0,
            AttentionPolicy::PrefixNoncausal => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AttentionPolicy::Causal),
            1 => Some(AttentionPolicy::PrefixNoncausal),
            _ => None,
        }
    }
}

/// One training row. The three per-token vectors are parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSequence {
    pub token_ids: Vec<TokenId>,
    pub loss_weights: Vec<f64>,
    /// 1-based index of the packed example each token belongs to.
    pub segment_ids: Vec<u16>,
    pub attention_policy: AttentionPolicy,
    /// Input length of each segment, in segment order.
    pub prefix_lengths: Vec<u32>,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn num_segments(&self) -> usize {
        self.prefix_lengths.len()
    }

    /// Token count of every segment, derived from `segment_ids`.
    pub fn segment_lengths(&self) -> Vec<usize> {
        let mut lens = vec![0usize; self.num_segments()];
        for &s in &self.segment_ids {
            if let Some(slot) = (s as usize).checked_sub(1).and_then(|i| lens.get_mut(i)) {
                *slot += 1;
            }
        }
        lens
    }

    /// Token ranges `(input, target)` of each segment.
    pub fn segment_spans(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let mut start = 0;
        self.segment_lengths()
            .into_iter()
            .zip(&self.prefix_lengths)
            .map(|(len, &prefix)| {
                let end = start + len;
                let split = (start + prefix as usize).min(end);
                let spans = (start..split, split..end);
                start = end;
                spans
            })
            .collect()
    }

    /// Checks structural invariants: parallel lengths, contiguous 1-based
    /// segment ids, prefixes shorter than their segments, and the loss law.
    pub fn check(&self, max_len: usize) -> Result<(), String> {
        let n = self.token_ids.len();
        if self.loss_weights.len() != n || self.segment_ids.len() != n {
            return Err("parallel lists differ in length".into());
        }
        if n > max_len {
            return Err(format!("length {n} exceeds maximum {max_len}"));
        }
        let mut expected = 1u32;
        for (i, &s) in self.segment_ids.iter().enumerate() {
            if i > 0 && s == self.segment_ids[i - 1] {
                continue;
            }
            if u32::from(s) != expected {
                return Err(format!("segment ids not contiguous at position {i}"));
            }
            expected += 1;
        }
        if (expected - 1) as usize != self.num_segments() {
            return Err("segment count disagrees with prefix lengths".into());
        }
        for (input, target) in self.segment_spans() {
            if target.is_empty() {
                return Err(format!("segment starting at {} has no target", input.start));
            }
            if self.loss_weights[input].iter().any(|&w| w != 0.0) {
                return Err("nonzero weight on an input position".into());
            }
            let expected = target_weight(target.len());
            if self.loss_weights[target].iter().any(|&w| w != expected) {
                return Err("target weight differs from 1/T".into());
            }
        }
        Ok(())
    }
}

fn target_weight(target_len: usize) -> f64 {
    1.0 / target_len as f64
}

/// Recomputes `loss_weights` from the segment structure: 0 on inputs, `1/T`
/// on each token of a length-`T` target.
pub fn assign_loss_weights(mut seq: PackedSequence) -> PackedSequence {
    let spans = seq.segment_spans();
    seq.loss_weights = vec![0.0; seq.token_ids.len()];
    for (_, target) in spans {
        let w = target_weight(target.len());
        seq.loss_weights[target].fill(w);
    }
    seq
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PackStats {
    pub max_len: usize,
    pub pairs_seen: usize,
    pub pairs_packed: usize,
    pub skipped: usize,
    pub num_sequences: usize,
    pub total_tokens: usize,
}

impl PackStats {
    /// Tokens emitted over `num_sequences * max_len`.
    pub fn fill_ratio(&self) -> f64 {
        if self.num_sequences == 0 {
            0.0
        } else {
            self.total_tokens as f64 / (self.num_sequences * self.max_len) as f64
        }
    }

    /// Recomputes the emission-side statistics from packed rows.
    pub fn from_sequences(seqs: &[PackedSequence], max_len: usize) -> Self {
        let packed: usize = seqs.iter().map(PackedSequence::num_segments).sum();
        Self {
            max_len,
            pairs_seen: packed,
            pairs_packed: packed,
            skipped: 0,
            num_sequences: seqs.len(),
            total_tokens: seqs.iter().map(PackedSequence::len).sum(),
        }
    }
}

/// Streaming next-fit packer: a pair joins the open row if it fits, otherwise
/// the open row is emitted and a new one started. Pairs longer than the
/// maximum are skipped. Pairs are never split.
#[derive(Debug)]
pub struct Packer {
    max_len: usize,
    attention_policy: AttentionPolicy,
    open: Option<PackedSequence>,
    stats: PackStats,
}

impl Packer {
    pub fn new(max_len: usize, attention_policy: AttentionPolicy) -> Result<Self, PackError> {
        if max_len < 2 {
            return Err(PackError::MaxLenTooSmall(max_len));
        }
        Ok(Self {
            max_len,
            attention_policy,
            open: None,
            stats: PackStats {
                max_len,
                ..PackStats::default()
            },
        })
    }

    /// Adds a pair; returns a completed row when the pair did not fit into the
    /// open one.
    pub fn push(&mut self, pair: &SerializedPair) -> Option<PackedSequence> {
        self.stats.pairs_seen += 1;
        let len = pair.len();
        if len > self.max_len || pair.target_ids.is_empty() {
            self.stats.skipped += 1;
            return None;
        }
        let fits = self.open.as_ref().is_some_and(|open| {
            open.len() + len <= self.max_len && open.num_segments() < usize::from(u16::MAX)
        });
        let emitted = if fits { None } else { self.take_open() };
        let open = self.open.get_or_insert_with(|| PackedSequence {
            token_ids: Vec::new(),
            loss_weights: Vec::new(),
            segment_ids: Vec::new(),
            attention_policy: self.attention_policy,
            prefix_lengths: Vec::new(),
        });
        let segment = (open.num_segments() + 1) as u16;
        let w = target_weight(pair.target_ids.len());
        open.token_ids.extend_from_slice(&pair.input_ids);
        open.token_ids.extend_from_slice(&pair.target_ids);
        open.loss_weights
            .extend(std::iter::repeat_n(0.0, pair.input_ids.len()));
        open.loss_weights
            .extend(std::iter::repeat_n(w, pair.target_ids.len()));
        open.segment_ids.extend(std::iter::repeat_n(segment, len));
        open.prefix_lengths.push(pair.input_ids.len() as u32);
        self.stats.pairs_packed += 1;
        emitted
    }

    fn take_open(&mut self) -> Option<PackedSequence> {
        let seq = self.open.take()?;
        self.stats.num_sequences += 1;
        self.stats.total_tokens += seq.len();
        Some(seq)
    }

    /// Emits the trailing row, if any, and returns the final statistics.
    pub fn finish(mut self) -> (Option<PackedSequence>, PackStats) {
        let last = self.take_open();
        (last, self.stats)
    }
}

pub fn pack<'a, I>(
    pairs: I,
    max_len: usize,
    attention_policy: AttentionPolicy,
) -> Result<(Vec<PackedSequence>, PackStats), PackError>
where
    I: IntoIterator<Item = &'a SerializedPair>,
{
    let mut packer = Packer::new(max_len, attention_policy)?;
    let mut out: Vec<PackedSequence> = pairs.into_iter().filter_map(|p| packer.push(p)).collect();
    let (last, stats) = packer.finish();
    out.extend(last);
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{ByteTokenizer, WhitespaceTokenizer};
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn example(input: &str, target: &str) -> RenderedExample {
        RenderedExample {
            input_text: input.into(),
            target_text: target.into(),
            language: "fr".into(),
            dataset: "d".into(),
            prompt_name: "p".into(),
            answer_choices_rendered: None,
        }
    }

    fn pair(input: usize, target: usize) -> SerializedPair {
        SerializedPair {
            input_ids: vec![7; input],
            target_ids: vec![9; target],
            separator_policy: SeparatorPolicy::Space,
        }
    }

    #[test]
    fn space_serialization_of_translation_example() {
        let tok = WhitespaceTokenizer::new();
        let ex = example("Translate to English: Je t'aime.", "I love you.");
        let p = serialize_pair(&ex, &tok, SeparatorPolicy::Space).unwrap();
        let ids = |words: &[&str]| words.iter().map(|w| tok.id_of(w).unwrap()).collect::<Vec<_>>();
        assert_eq!(p.input_ids, ids(&["Translate", "to", "English:", "Je", "t'aime."]));
        assert_eq!(p.target_ids, ids(&["I", "love", "you."]));
    }

    #[test]
    fn space_goes_to_input_side_with_bytes() {
        let p = serialize_pair(&example("ab", "cd"), &ByteTokenizer, SeparatorPolicy::Space).unwrap();
        assert_eq!(p.input_ids, vec![b'a' as u32, b'b' as u32, b' ' as u32]);
        assert_eq!(p.target_ids, vec![b'c' as u32, b'd' as u32]);
        let full = ByteTokenizer.encode("ab cd").unwrap();
        assert_eq!([p.input_ids.clone(), p.target_ids.clone()].concat(), full);
    }

    #[test]
    fn empty_texts_rejected() {
        let tok = ByteTokenizer;
        assert_eq!(
            serialize_pair(&example("x", ""), &tok, SeparatorPolicy::Space),
            Err(PackError::EmptyText("target"))
        );
        assert_eq!(
            serialize_pair(&example("", "x"), &tok, SeparatorPolicy::Space),
            Err(PackError::EmptyText("input"))
        );
        let ws = WhitespaceTokenizer::new();
        assert!(matches!(
            serialize_pair(&example("x", "  "), &ws, SeparatorPolicy::EncoderDecoder),
            Err(PackError::EmptyTarget(_))
        ));
    }

    #[test]
    fn encoder_decoder_has_no_separator() {
        let tok = ByteTokenizer;
        let p = serialize_pair(&example("ab", "cd"), &tok, SeparatorPolicy::EncoderDecoder).unwrap();
        assert_eq!(p.input_ids, tok.encode("ab").unwrap());
        assert_eq!(p.target_ids, tok.encode("cd").unwrap());
        for id in p.input_ids.iter().chain(&p.target_ids) {
            assert!(*id != tok.eos_id() && *id != tok.sep_id() && *id != b' ' as u32);
        }
    }

    #[test]
    fn token_separators_close_the_input() {
        let tok = ByteTokenizer;
        let eos = serialize_pair(&example("a", "b"), &tok, SeparatorPolicy::EosToken).unwrap();
        assert_eq!(eos.input_ids, vec![b'a' as u32, ByteTokenizer::EOS]);
        let sep = serialize_pair(&example("a", "b"), &tok, SeparatorPolicy::NewSpecial).unwrap();
        assert_eq!(sep.input_ids, vec![b'a' as u32, ByteTokenizer::SEP]);
        assert_eq!(sep.target_ids, vec![b'b' as u32]);
    }

    /// Replays the next-fit rule on lengths alone.
    fn next_fit_oracle(lengths: &[usize], max_len: usize) -> (Vec<Vec<usize>>, usize) {
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut skipped = 0;
        let mut open: Option<Vec<usize>> = None;
        for &len in lengths {
            if len > max_len {
                skipped += 1;
                continue;
            }
            match open.as_mut() {
                Some(row) if row.iter().sum::<usize>() + len <= max_len => row.push(len),
                _ => {
                    rows.extend(open.take());
                    open = Some(vec![len]);
                }
            }
        }
        rows.extend(open);
        (rows, skipped)
    }

    #[test]
    fn packs_4_3_5_into_two_rows() {
        let pairs = [pair(2, 2), pair(1, 2), pair(3, 2)];
        let (seqs, stats) = pack(&pairs, 10, AttentionPolicy::Causal).unwrap();
        let lens: Vec<Vec<usize>> = seqs.iter().map(PackedSequence::segment_lengths).collect();
        assert_eq!(lens, vec![vec![4, 3], vec![5]]);
        assert_eq!(next_fit_oracle(&[4, 3, 5], 10), (lens, 0));
        assert_eq!(seqs.iter().map(PackedSequence::len).collect::<Vec<_>>(), vec![7, 5]);
        assert_eq!(stats.num_sequences, 2);
        assert_eq!(stats.total_tokens, 12);
        assert!((stats.fill_ratio() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_and_overflow() {
        let (seqs, stats) = pack(&[pair(6, 4)], 10, AttentionPolicy::Causal).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 10);
        assert_eq!(stats.skipped, 0);

        let (seqs, stats) = pack(&[pair(6, 5)], 10, AttentionPolicy::Causal).unwrap();
        assert!(seqs.is_empty());
        assert_eq!(stats.skipped, 1);

        let (_, stats) = pack(&[pair(2000, 49)], DEFAULT_MAX_LEN, AttentionPolicy::Causal).unwrap();
        assert_eq!(stats.skipped, 1);
    }

    #[test]
    fn rejects_tiny_max_len() {
        assert_eq!(
            Packer::new(1, AttentionPolicy::Causal).err(),
            Some(PackError::MaxLenTooSmall(1))
        );
    }

    #[test]
    fn single_target_weights() {
        let (seqs, _) = pack(&[pair(3, 4)], 16, AttentionPolicy::Causal).unwrap();
        assert_eq!(seqs[0].loss_weights, vec![0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn two_targets_carry_two_units() {
        let (seqs, _) = pack(&[pair(1, 2), pair(1, 5)], 16, AttentionPolicy::Causal).unwrap();
        let mass: f64 = seqs[0].loss_weights.iter().sum();
        assert!((mass - 2.0).abs() < 1e-12);
        assert_eq!(seqs[0].segment_ids, vec![1, 1, 1, 2, 2, 2, 2, 2, 2]);
        assert_eq!(seqs[0].prefix_lengths, vec![1, 1]);
    }

    #[test]
    fn assign_loss_weights_recomputes() {
        let (mut seqs, _) = pack(&[pair(2, 3), pair(4, 1)], 16, AttentionPolicy::PrefixNoncausal).unwrap();
        let original = seqs[0].clone();
        seqs[0].loss_weights.iter_mut().for_each(|w| *w = 9.0);
        assert_eq!(assign_loss_weights(seqs.remove(0)), original);
    }

    proptest! {
        #[test]
        fn packing_matches_oracle_and_loss_law(
            shapes in proptest::collection::vec((0usize..12, 1usize..12), 0..40),
            max_len in 2usize..30,
        ) {
            let pairs: Vec<_> = shapes.iter().map(|&(i, t)| pair(i, t)).collect();
            let lengths: Vec<usize> = pairs.iter().map(SerializedPair::len).collect();
            let (seqs, stats) = pack(&pairs, max_len, AttentionPolicy::Causal).unwrap();
            let (rows, skipped) = next_fit_oracle(&lengths, max_len);
            prop_assert_eq!(stats.skipped, skipped);
            prop_assert_eq!(
                seqs.iter().map(PackedSequence::segment_lengths).collect::<Vec<_>>(),
                rows
            );
            for seq in &seqs {
                prop_assert!(seq.check(max_len).is_ok());
                // Exact in rationals: one unit of mass per target.
                let mut mass = Ratio::from_integer(0i64);
                for (_, target) in seq.segment_spans() {
                    let t = target.len() as i64;
                    mass += Ratio::new(1, t) * t;
                }
                prop_assert_eq!(mass, Ratio::from_integer(seq.num_segments() as i64));
                let float_mass: f64 = seq.loss_weights.iter().sum();
                prop_assert!((float_mass - seq.num_segments() as f64).abs() < 1e-9);
            }
        }
    }
}

//! Partially labeled dialogues: ingestion, vocabulary, windowing and splits.
//!
//! A corpus file is JSON Lines, one dialogue per line:
//!
//! ```text
//! {"id": "d1", "segments": [{"text": "hello there", "label": "Greeting"}, {"text": "..."}]}
//! ```
//!
//! Segments without a `label` key are unlabeled. Label sets are plain text,
//! one name per line, with the line number as the class index.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Label names used when no label-set file is given.
pub const DEFAULT_NORMS: [&str; 8] = [
    "none",
    "Apology",
    "Criticism",
    "Greeting",
    "Request",
    "Persuasion",
    "Thanks",
    "Taking-leave",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormLabel {
    pub index: usize,
    pub name: String,
}

/// Ordered set of `K >= 2` distinct label names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::LabelSet(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() {
                return Err(Error::LabelSet("empty label name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::LabelSet(format!("duplicate label `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn default_norms() -> Self {
        Self {
            names: DEFAULT_NORMS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The first `k` default norm names, extended with `norm<i>` past eight.
    pub fn first_k(k: usize) -> Result<Self> {
        let names = (0..k)
            .map(|i| {
                DEFAULT_NORMS
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("norm{i}"))
            })
            .collect();
        Self::new(names)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(names)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.names.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn label(&self, index: usize) -> NormLabel {
        NormLabel {
            index,
            name: self.names[index].clone(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.names
    }
}

/// One turn of a dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub raw_text: String,
    pub label: Option<usize>,
    /// Filler appended to short windows; never scored.
    pub padding: bool,
}

impl Segment {
    pub fn new(raw_text: impl Into<String>, label: Option<usize>) -> Self {
        Self {
            raw_text: raw_text.into(),
            label,
            padding: false,
        }
    }

    pub fn pad() -> Self {
        Self {
            raw_text: String::new(),
            label: None,
            padding: true,
        }
    }

    /// Whitespace tokens, lowercased.
    pub fn tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.raw_text.split_whitespace().map(str::to_lowercase)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub labels: LabelSet,
    pub split: SplitTag,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl Corpus {
    pub fn new(dialogues: Vec<Dialogue>, labels: LabelSet, split: SplitTag) -> Self {
        Self {
            dialogues,
            labels,
            split,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.dialogues.iter().flat_map(|d| d.segments.iter())
    }

    pub fn segment_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.segments.len()).sum()
    }

    pub fn labeled_count(&self) -> usize {
        self.segments().filter(|s| s.label.is_some()).count()
    }

    pub fn labeled_fraction(&self) -> f64 {
        let n = self.segment_count();
        if n == 0 {
            0.0
        } else {
            self.labeled_count() as f64 / n as f64
        }
    }

    /// Labeled segments per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for l in self.segments().filter_map(|s| s.label) {
            counts[l] += 1;
        }
        counts
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            let record = DialogueRecord {
                id: d.id.clone(),
                segments: d
                    .segments
                    .iter()
                    .filter(|s| !s.padding)
                    .map(|s| SegmentRecord {
                        text: s.raw_text.clone(),
                        label: s.label.map(|l| self.labels.name(l).to_string()),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Same dialogues with every label removed.
    pub fn without_labels(&self) -> Corpus {
        let mut out = self.clone();
        for s in out.dialogues.iter_mut().flat_map(|d| d.segments.iter_mut()) {
            s.label = None;
        }
        out
    }
}

/// Parses a JSONL corpus file.
pub fn parse_jsonl(path: &Path, labels: &LabelSet) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl_str(&text, labels, &path.display().to_string())
}

/// Parses JSONL text; `origin` names the source in error messages.
pub fn parse_jsonl_str(text: &str, labels: &LabelSet, origin: &str) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let record: DialogueRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if record.segments.is_empty() {
            return Err(parse_err(format!("dialogue `{}` has no segments", record.id)));
        }
        let mut segments = Vec::with_capacity(record.segments.len());
        for seg in record.segments {
            if seg.text.split_whitespace().next().is_none() {
                return Err(parse_err(format!("empty segment in dialogue `{}`", record.id)));
            }
            let label = match seg.label {
                None => None,
                Some(name) => Some(labels.index_of(&name).ok_or_else(|| Error::UnknownLabel {
                    path: origin.to_string(),
                    line: line_no,
                    label: name.clone(),
                })?),
            };
            segments.push(Segment::new(seg.text, label));
        }
        dialogues.push(Dialogue {
            id: record.id,
            segments,
        });
    }
    Ok(Corpus::new(dialogues, labels.clone(), SplitTag::Full))
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const Z_TOK: usize = 4;
pub const C_TOK: usize = 5;
pub const NUM_SPECIAL: usize = 6;
const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<pad>", "<unk>", "<bos>", "<eos>", "<z>", "<c>"];

/// Token ↔ id map with six fixed special ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(Error::invalid("vocabulary must start with the special tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// The special tokens followed by `words` in order.
    pub fn with_specials(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words)
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// SHA-256 over the ordered token list, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Vocabulary of every token seen at least `min_count` times, ordered by
/// descending frequency and then lexicographically.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for seg in corpus.segments().filter(|s| !s.padding) {
        for tok in seg.tokens() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus("no tokens to build a vocabulary from".into()));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens)
}

/// `BOS + ids + EOS`, keeping at most `max_len - 2` content tokens.
pub fn encode_segment(segment: &Segment, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 3, "max_len must leave room for BOS, EOS and a token");
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(segment.tokens().take(max_len - 2).map(|t| vocab.id(&t)));
    ids.push(EOS);
    ids
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    pub pad_last: bool,
}

impl WindowConfig {
    /// Disjoint windows of the given length.
    pub fn disjoint(length: usize) -> Self {
        Self {
            length,
            stride: length,
            pad_last: false,
        }
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self::disjoint(5)
    }
}

/// A window of exactly `length` contiguous segments from one dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSequence {
    pub segments: Vec<Segment>,
    pub source_dialogue: String,
    pub start_index: usize,
}

impl SegmentSequence {
    pub fn scoring(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !s.padding)
    }
}

/// Cuts every dialogue into windows starting at `0, stride, 2·stride, …`.
pub fn window_dialogues(corpus: &Corpus, config: WindowConfig) -> Vec<SegmentSequence> {
    let WindowConfig {
        length,
        stride,
        pad_last,
    } = config;
    assert!(length >= 1 && stride >= 1, "window length and stride must be positive");
    let mut out = Vec::new();
    for d in &corpus.dialogues {
        let n = d.segments.len();
        let mut start = 0;
        let mut covered = 0;
        while start + length <= n {
            out.push(SegmentSequence {
                segments: d.segments[start..start + length].to_vec(),
                source_dialogue: d.id.clone(),
                start_index: start,
            });
            covered = start + length;
            start += stride;
        }
        if pad_last && covered < n && start < n {
            let mut segments = d.segments[start..].to_vec();
            segments.resize(length, Segment::pad());
            out.push(SegmentSequence {
                segments,
                source_dialogue: d.id.clone(),
                start_index: start,
            });
        }
    }
    out
}

/// Seeded split at dialogue granularity. Each split keeps source order.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let (rt, rd, rs) = ratios;
    if !(rt > 0.0 && rd > 0.0 && rs > 0.0) || ((rt + rd + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got ({rt}, {rd}, {rs})"
        )));
    }
    let n = corpus.dialogues.len();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 dialogues to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut n_train = ((rt * n as f64).round() as usize).clamp(1, n - 2);
    let n_dev = ((rd * n as f64).round() as usize).clamp(1, n - n_train - 1);
    if n_train + n_dev >= n {
        n_train = n - n_dev - 1;
    }

    let pick = |idx: &[usize], split: SplitTag| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Corpus::new(
            idx.into_iter().map(|i| corpus.dialogues[i].clone()).collect(),
            corpus.labels.clone(),
            split,
        )
    };
    Ok((
        pick(&order[..n_train], SplitTag::Train),
        pick(&order[n_train..n_train + n_dev], SplitTag::Dev),
        pick(&order[n_train + n_dev..], SplitTag::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::default_norms()
    }

    fn corpus_from(texts: &[&[&str]]) -> Corpus {
        let dialogues = texts
            .iter()
            .enumerate()
            .map(|(i, segs)| Dialogue {
                id: format!("d{i}"),
                segments: segs.iter().map(|t| Segment::new(*t, Some(0))).collect(),
            })
            .collect();
        Corpus::new(dialogues, labels(), SplitTag::Full)
    }

    fn dialogue_of(n: usize) -> Corpus {
        let segs: Vec<String> = (0..n).map(|i| format!("tok{i}")).collect();
        let refs: Vec<&str> = segs.iter().map(String::as_str).collect();
        corpus_from(&[&refs])
    }

    #[test]
    fn parse_labeled_and_unlabeled() {
        let text = r#"{"id": "a", "segments": [{"text": "ni hao", "label": "Greeting"}, {"text": "hello", "label": "Greeting"}]}"#;
        let c = parse_jsonl_str(text, &labels(), "mem").unwrap();
        assert_eq!(c.labeled_count(), 2);
        assert_eq!(c.segment_count() - c.labeled_count(), 0);

        let text = r#"{"id": "a", "segments": [{"text": "ni hao", "label": "Greeting"}, {"text": "hello"}]}"#;
        let c = parse_jsonl_str(text, &labels(), "mem").unwrap();
        assert_eq!(c.labeled_count(), 1);
        assert_eq!(c.segment_count(), 2);
        assert_eq!(c.dialogues[0].segments[0].label, Some(3));
    }

    #[test]
    fn unknown_label_names_the_offender() {
        let text = "{\"id\": \"a\", \"segments\": [{\"text\": \"x\"}]}\n{\"id\": \"b\", \"segments\": [{\"text\": \"x\", \"label\": \"Gratitude\"}]}";
        match parse_jsonl_str(text, &labels(), "mem") {
            Err(Error::UnknownLabel { line, label, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(label, "Gratitude");
            }
            other => panic!("expected labeling error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\": \"a\", \"segments\": [{\"text\": \"x\"}]}\n{not json";
        match parse_jsonl_str(text, &labels(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_set_rejects_bad_sets() {
        assert!(LabelSet::new(vec!["only".into()]).is_err());
        assert!(LabelSet::new(vec!["a".into(), "a".into()]).is_err());
        let parsed = LabelSet::parse("x\ny\n\nz\n").unwrap();
        assert_eq!(parsed.index_of("z"), Some(2));
    }

    #[test]
    fn vocab_min_count_filters() {
        let c = corpus_from(&[&["a a a b"]]);
        let v = build_vocab(&c, 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
        let v = build_vocab(&c, 1).unwrap();
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.id("a"), NUM_SPECIAL);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        for text in ["beta alpha", "alpha beta"] {
            let v = build_vocab(&corpus_from(&[&[text]]), 1).unwrap();
            assert!(v.id("alpha") < v.id("beta"), "order dependent on `{text}`");
        }
    }

    #[test]
    fn empty_corpus_has_no_vocab() {
        let c = Corpus::new(vec![], labels(), SplitTag::Full);
        assert!(matches!(build_vocab(&c, 1), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn encode_adds_markers_and_truncates() {
        let c = corpus_from(&[&["a b c"]]);
        let v = build_vocab(&c, 1).unwrap();
        let (a, b) = (v.id("a"), v.id("b"));
        assert_eq!(encode_segment(&Segment::new("a", None), &v, 64), vec![BOS, a, EOS]);
        assert_eq!(
            encode_segment(&Segment::new("a b c", None), &v, 4),
            vec![BOS, a, b, EOS]
        );
        assert_eq!(
            encode_segment(&Segment::new("a zzz", None), &v, 64),
            vec![BOS, a, UNK, EOS]
        );
    }

    #[test]
    fn windows_disjoint_and_strided() {
        assert_eq!(window_dialogues(&dialogue_of(10), WindowConfig::disjoint(5)).len(), 2);
        assert!(window_dialogues(&dialogue_of(3), WindowConfig::disjoint(5)).is_empty());
        let w = window_dialogues(
            &dialogue_of(7),
            WindowConfig {
                length: 5,
                stride: 1,
                pad_last: false,
            },
        );
        let starts: Vec<usize> = w.iter().map(|s| s.start_index).collect();
        assert_eq!(starts, vec![0, 1, 2]);
        assert_eq!(w[2].segments[0].raw_text, "tok2");
    }

    #[test]
    fn pad_last_emits_one_short_window() {
        let cfg = WindowConfig {
            length: 5,
            stride: 5,
            pad_last: true,
        };
        let w = window_dialogues(&dialogue_of(3), cfg);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].segments.len(), 5);
        assert_eq!(w[0].scoring().count(), 3);
        assert!(w[0].segments[4].padding);

        let w = window_dialogues(&dialogue_of(12), cfg);
        assert_eq!(w.len(), 3);
        assert_eq!(w[2].start_index, 10);
        assert_eq!(window_dialogues(&dialogue_of(10), cfg).len(), 2);
    }

    fn many_dialogues(n: usize) -> Corpus {
        let dialogues = (0..n)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                segments: vec![Segment::new(format!("t{i}"), None)],
            })
            .collect();
        Corpus::new(dialogues, labels(), SplitTag::Full)
    }

    fn ids(c: &Corpus) -> Vec<String> {
        c.dialogues.iter().map(|d| d.id.clone()).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = many_dialogues(10);
        let (tr, dv, te) = split_corpus(&c, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!((tr.dialogues.len(), dv.dialogues.len(), te.dialogues.len()), (6, 2, 2));
        let again = split_corpus(&c, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(ids(&tr), ids(&again.0));
        assert_eq!(ids(&te), ids(&again.2));
    }

    #[test]
    fn split_changes_with_seed() {
        let c = many_dialogues(100);
        let a = split_corpus(&c, (0.6, 0.2, 0.2), 7).unwrap();
        let b = split_corpus(&c, (0.6, 0.2, 0.2), 8).unwrap();
        assert_ne!(ids(&a.0), ids(&b.0));
    }

    #[test]
    fn split_rejects_tiny_or_bad_input() {
        assert!(split_corpus(&many_dialogues(2), (0.6, 0.2, 0.2), 1).is_err());
        assert!(split_corpus(&many_dialogues(10), (0.6, 0.2, 0.3), 1).is_err());
        assert!(split_corpus(&many_dialogues(10), (0.8, 0.2, 0.0), 1).is_err());
    }
}

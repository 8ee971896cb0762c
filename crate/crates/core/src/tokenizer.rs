//! Vocabulary construction and word/char/BPE tokenization.
//!
//! Class labels (intents, emotions, dialogue acts, entity labels) are
//! injected as atomic vocabulary tokens regardless of the text scheme, so
//! a class can always be decoded as one word. BPE is trained from scratch
//! with greedy highest-frequency pair merging inside whitespace words.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
pub const FILL: usize = 3;

pub const BLANK_TOKEN: &str = "<blank>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SEP_TOKEN: &str = "<sep>";
pub const FILL_TOKEN: &str = "<fill>";
pub const SOS_EOS_TOKEN: &str = "<sos/eos>";

/// Word-boundary marker used by the char and BPE schemes.
pub const BOUNDARY: char = '\u{2581}'; // ▁

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Word,
    Char,
    Bpe,
}

/// How class labels are rendered into target tokens (Table-3-style ablation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelGranularity {
    /// The label is one atomic token.
    Full,
    /// The label string is spelled out character by character.
    Char,
    /// The label is split on '_' into its constituent slot words.
    Slot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub transcript_scheme: Scheme,
    pub label_granularity: LabelGranularity,
    pub bpe_merges: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            transcript_scheme: Scheme::Word,
            label_granularity: LabelGranularity::Full,
            bpe_merges: 200,
        }
    }
}

/// Token list with reserved ids at fixed positions: blank 0, unk 1,
/// sep 2, fill 3, and sos/eos as the last id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 5 {
            return Err(Error::Tokenizer("vocabulary too small".into()));
        }
        let fixed = [
            (BLANK, BLANK_TOKEN),
            (UNK, UNK_TOKEN),
            (SEP, SEP_TOKEN),
            (FILL, FILL_TOKEN),
            (tokens.len() - 1, SOS_EOS_TOKEN),
        ];
        for (pos, tok) in fixed {
            if tokens[pos] != tok {
                return Err(Error::Tokenizer(format!(
                    "reserved token '{tok}' missing at index {pos}"
                )));
            }
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Tokenizer(format!("duplicate token '{t}'")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sos_eos(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Tokenizer(format!("token id {id} out of range")))
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id == BLANK || id == UNK || id == SEP || id == FILL || id == self.sos_eos()
    }

    /// One token per line; the line number (from 0) is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Vocabulary::from_tokens(tokens)
    }
}

/// Ordered list of BPE merges; apply in rank order for deterministic encoding.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i == 0 {
                format!("{BOUNDARY}{c}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Greedy highest-frequency adjacent-pair merging within words. Ties are
/// broken by lexicographic order of the pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return Err(Error::Tokenizer("empty corpus for BPE training".into()));
    }
    let mut word_freq: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for line in corpus {
        for word in line.as_ref().split_whitespace() {
            *word_freq.entry(word_symbols(word)).or_insert(0) += 1;
        }
    }
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut pair_freq: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (symbols, &freq) in &word_freq {
            for pair in symbols.windows(2) {
                *pair_freq.entry((&pair[0], &pair[1])).or_insert(0) += freq;
            }
        }
        let Some((&best, _)) = pair_freq
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        else {
            break;
        };
        let best = (best.0.to_string(), best.1.to_string());
        let merged: BTreeMap<Vec<String>, u64> = word_freq
            .iter()
            .map(|(symbols, &freq)| (merge_pair(symbols, &best), freq))
            .collect();
        word_freq = merged;
        merges.push(best);
    }
    Ok(BpeModel { merges })
}

fn merge_pair(symbols: &[String], pair: &(String, String)) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Segments one whitespace word by applying merges in rank order.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        for pair in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            symbols = merge_pair(&symbols, pair);
        }
        symbols
    }

    pub fn segment(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .flat_map(|w| self.segment_word(w))
            .collect()
    }

    /// One merge pair per line, rank order, fields separated by a space.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (a, b) in &self.merges {
            text.push_str(a);
            text.push(' ');
            text.push_str(b);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()));
                }
                _ => {
                    return Err(Error::Tokenizer(format!(
                        "bad merge at line {} of {}",
                        i + 1,
                        path.display()
                    )))
                }
            }
        }
        Ok(BpeModel { merges })
    }
}

/// Splits text into surface units for a scheme, without vocabulary lookup.
pub fn text_units(text: &str, scheme: Scheme, bpe: Option<&BpeModel>) -> Vec<String> {
    match scheme {
        Scheme::Word => text.split_whitespace().map(str::to_string).collect(),
        Scheme::Char => {
            let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
            normalized
                .chars()
                .map(|c| {
                    if c == ' ' {
                        BOUNDARY.to_string()
                    } else {
                        c.to_string()
                    }
                })
                .collect()
        }
        Scheme::Bpe => bpe
            .map(|m| m.segment(text))
            .unwrap_or_else(|| text.split_whitespace().map(str::to_string).collect()),
    }
}

/// Encodes text to ids. Total: out-of-vocabulary units map to unk.
pub fn encode(text: &str, scheme: Scheme, vocab: &Vocabulary, bpe: Option<&BpeModel>) -> Vec<usize> {
    text_units(text, scheme, bpe)
        .iter()
        .map(|u| vocab.id_or_unk(u))
        .collect()
}

/// Inverse of encode for in-vocabulary text (up to whitespace normalization).
pub fn decode(ids: &[usize], scheme: Scheme, vocab: &Vocabulary) -> Result<String> {
    let mut tokens = Vec::with_capacity(ids.len());
    for &id in ids {
        tokens.push(vocab.token(id)?);
    }
    Ok(join_units(&tokens, scheme))
}

/// Joins surface units back into a string for a scheme.
pub fn join_units<S: AsRef<str>>(units: &[S], scheme: Scheme) -> String {
    match scheme {
        Scheme::Word => units
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" "),
        Scheme::Char | Scheme::Bpe => {
            let glued: String = units.iter().map(AsRef::as_ref).collect();
            glued
                .split(BOUNDARY)
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
                .trim()
                .to_string()
        }
    }
}

fn class_labels(manifest: &CorpusManifest) -> BTreeSet<String> {
    let mut labels = BTreeSet::new();
    for utts in manifest.splits.values() {
        for u in utts {
            for l in [&u.intent, &u.emotion, &u.dialog_act].into_iter().flatten() {
                labels.insert(l.clone());
            }
            for e in &u.entities {
                labels.insert(e.label.clone());
            }
        }
    }
    labels
}

/// Builds a vocabulary: reserved tokens, class labels (atomic, plus the
/// units needed by the configured label granularity), then train-split
/// text units sorted by frequency then lexicographically.
pub fn build_vocab(
    manifest: &CorpusManifest,
    cfg: &TokenizerConfig,
    bpe: Option<&BpeModel>,
) -> Result<Vocabulary> {
    let train = manifest.split("train")?;
    if train.is_empty() {
        return Err(Error::Tokenizer("empty train split".into()));
    }
    let mut tokens: Vec<String> = vec![
        BLANK_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
        SEP_TOKEN.to_string(),
        FILL_TOKEN.to_string(),
    ];
    let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
    seen.insert(SOS_EOS_TOKEN.to_string());

    let labels = class_labels(manifest);
    for l in &labels {
        if seen.insert(l.clone()) {
            tokens.push(l.clone());
        }
    }
    // Units the label granularity needs beyond the atomic label tokens.
    let mut granularity_units: BTreeSet<String> = BTreeSet::new();
    match cfg.label_granularity {
        LabelGranularity::Full => {}
        LabelGranularity::Char => {
            for l in &labels {
                for c in l.chars() {
                    granularity_units.insert(c.to_string());
                }
            }
        }
        LabelGranularity::Slot => {
            for l in &labels {
                for part in l.split('_').filter(|p| !p.is_empty()) {
                    granularity_units.insert(part.to_string());
                }
            }
        }
    }
    for u in granularity_units {
        if seen.insert(u.clone()) {
            tokens.push(u);
        }
    }

    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for u in train {
        for unit in text_units(&u.transcript, cfg.transcript_scheme, bpe) {
            *freq.entry(unit).or_insert(0) += 1;
        }
        // Fillers may be normalized differently than the transcript slice;
        // include their units so slot targets stay in-vocabulary.
        for e in &u.entities {
            for unit in text_units(&e.filler, cfg.transcript_scheme, bpe) {
                *freq.entry(unit).or_insert(0) += 1;
            }
        }
    }
    let mut units: Vec<(String, u64)> = freq.into_iter().collect();
    units.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (u, _) in units {
        if seen.insert(u.clone()) {
            tokens.push(u);
        }
    }

    tokens.push(SOS_EOS_TOKEN.to_string());
    Vocabulary::from_tokens(tokens)
}

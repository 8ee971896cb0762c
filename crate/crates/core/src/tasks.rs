//! Target sequence construction and hypothesis parsing for each SLU task.
//!
//! Targets are conditional-prediction sequences: the class token comes
//! first (intent, emotion, or dialogue act), optionally followed by slot
//! groups and, under ASR multi-tasking, the transcript. The grammar uses
//! two distinct separators so parsing is unambiguous:
//!
//! ```text
//! IC/ER/DA:  label [<sep> transcript...]
//! SF:        intent (<sep> entity_label <fill> filler...)* [<sep> <sep> transcript...]
//! ASR:       transcript...
//! ```
//!
//! `parse_hypothesis` is total and best-effort so scoring never crashes
//! on malformed decodes.

use serde::{Deserialize, Serialize};

use crate::corpus::{Task, Utterance};
use crate::error::{Error, Result};
use crate::tokenizer::{
    self, BpeModel, LabelGranularity, Scheme, TokenizerConfig, Vocabulary, FILL, SEP,
};

pub const FALLBACK_LABEL: &str = "<unk>";

/// Target token sequence for one utterance, without sos/eos (those are
/// added by the trainer and decoder).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSequence {
    pub tokens: Vec<usize>,
    pub task: Task,
    pub has_transcript: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedHypothesis {
    pub class_label: String,
    pub entities: Vec<(String, String)>,
    pub transcript: Option<String>,
}

fn label_tokens(
    label: &str,
    vocab: &Vocabulary,
    granularity: LabelGranularity,
) -> Result<Vec<usize>> {
    match granularity {
        LabelGranularity::Full => {
            let id = vocab.id(label).ok_or_else(|| {
                Error::Target(format!("class label '{label}' not in vocabulary"))
            })?;
            Ok(vec![id])
        }
        LabelGranularity::Char => Ok(label
            .chars()
            .map(|c| vocab.id_or_unk(&c.to_string()))
            .collect()),
        LabelGranularity::Slot => Ok(label
            .split('_')
            .filter(|p| !p.is_empty())
            .map(|p| vocab.id_or_unk(p))
            .collect()),
    }
}

/// Builds the target for a classification task (IC, ER, DA):
/// `[label]`, or `[label, <sep>, transcript...]` with ASR multi-tasking.
pub fn make_classification_target(
    u: &Utterance,
    task: Task,
    multitask: bool,
    vocab: &Vocabulary,
    cfg: &TokenizerConfig,
    bpe: Option<&BpeModel>,
) -> Result<TargetSequence> {
    let label = u.class_label(task).ok_or_else(|| {
        Error::Target(format!("utt '{}' has no label for task {task}", u.utt_id))
    })?;
    let mut tokens = label_tokens(label, vocab, cfg.label_granularity)?;
    let mut has_transcript = false;
    if multitask {
        tokens.push(SEP);
        tokens.extend(tokenizer::encode(
            &u.transcript,
            cfg.transcript_scheme,
            vocab,
            bpe,
        ));
        has_transcript = true;
    }
    Ok(TargetSequence {
        tokens,
        task,
        has_transcript,
    })
}

/// Builds the slot-filling target: intent first, then one
/// `<sep> label <fill> filler` group per entity in span order, then
/// optionally `<sep> <sep> transcript`.
pub fn make_slotfill_target(
    u: &Utterance,
    multitask: bool,
    vocab: &Vocabulary,
    cfg: &TokenizerConfig,
    bpe: Option<&BpeModel>,
) -> Result<TargetSequence> {
    let intent = u
        .intent
        .as_deref()
        .ok_or_else(|| Error::Target(format!("utt '{}' has no intent", u.utt_id)))?;
    let intent_id = vocab
        .id(intent)
        .ok_or_else(|| Error::Target(format!("intent '{intent}' not in vocabulary")))?;
    let mut tokens = vec![intent_id];
    let mut entities: Vec<&crate::corpus::Entity> = u.entities.iter().collect();
    entities.sort_by_key(|e| e.span[0]);
    for e in entities {
        let label_id = vocab
            .id(&e.label)
            .ok_or_else(|| Error::Target(format!("entity label '{}' not in vocabulary", e.label)))?;
        tokens.push(SEP);
        tokens.push(label_id);
        tokens.push(FILL);
        tokens.extend(tokenizer::encode(
            &e.filler,
            cfg.transcript_scheme,
            vocab,
            bpe,
        ));
    }
    let mut has_transcript = false;
    if multitask {
        tokens.push(SEP);
        tokens.push(SEP);
        tokens.extend(tokenizer::encode(
            &u.transcript,
            cfg.transcript_scheme,
            vocab,
            bpe,
        ));
        has_transcript = true;
    }
    Ok(TargetSequence {
        tokens,
        task: Task::Sf,
        has_transcript,
    })
}

/// ASR-only target: the transcript tokens.
pub fn make_asr_target(
    u: &Utterance,
    vocab: &Vocabulary,
    cfg: &TokenizerConfig,
    bpe: Option<&BpeModel>,
) -> Result<TargetSequence> {
    Ok(TargetSequence {
        tokens: tokenizer::encode(&u.transcript, cfg.transcript_scheme, vocab, bpe),
        task: Task::Asr,
        has_transcript: true,
    })
}

/// Dispatches to the right target constructor for the task.
pub fn make_target(
    u: &Utterance,
    task: Task,
    multitask: bool,
    vocab: &Vocabulary,
    cfg: &TokenizerConfig,
    bpe: Option<&BpeModel>,
) -> Result<TargetSequence> {
    match task {
        Task::Sf => make_slotfill_target(u, multitask, vocab, cfg, bpe),
        Task::Asr => make_asr_target(u, vocab, cfg, bpe),
        _ => make_classification_target(u, task, multitask, vocab, cfg, bpe),
    }
}

/// Reads class-label tokens from the front of a decode until a separator,
/// honoring the label granularity.
fn take_label(
    ids: &[usize],
    vocab: &Vocabulary,
    granularity: LabelGranularity,
) -> (String, usize) {
    match granularity {
        LabelGranularity::Full => match ids.first() {
            Some(&first) if !vocab.is_reserved(first) => match vocab.token(first) {
                Ok(tok) => (tok.to_string(), 1),
                Err(_) => (FALLBACK_LABEL.to_string(), 1),
            },
            // Reserved or missing first token: fall back, consume nothing.
            _ => (FALLBACK_LABEL.to_string(), 0),
        },
        LabelGranularity::Char | LabelGranularity::Slot => {
            let mut parts = Vec::new();
            let mut consumed = 0;
            for &id in ids {
                if vocab.is_reserved(id) {
                    break;
                }
                match vocab.token(id) {
                    Ok(tok) => parts.push(tok.to_string()),
                    Err(_) => break,
                }
                consumed += 1;
            }
            if parts.is_empty() {
                (FALLBACK_LABEL.to_string(), consumed)
            } else if granularity == LabelGranularity::Char {
                (parts.concat(), consumed)
            } else {
                (parts.join("_"), consumed)
            }
        }
    }
}

fn decode_span(ids: &[usize], scheme: Scheme, vocab: &Vocabulary) -> String {
    let units: Vec<&str> = ids.iter().filter_map(|&id| vocab.token(id).ok()).collect();
    tokenizer::join_units(&units, scheme)
}

/// Parses a decoded token sequence back into semantics. Total; malformed
/// tails are ignored and a missing/invalid class falls back to `<unk>`.
pub fn parse_hypothesis(
    ids: &[usize],
    task: Task,
    vocab: &Vocabulary,
    cfg: &TokenizerConfig,
) -> ParsedHypothesis {
    if task == Task::Asr {
        return ParsedHypothesis {
            class_label: String::new(),
            entities: Vec::new(),
            transcript: Some(decode_span(ids, cfg.transcript_scheme, vocab)),
        };
    }

    let granularity = if task == Task::Sf {
        LabelGranularity::Full
    } else {
        cfg.label_granularity
    };
    let (class_label, mut pos) = take_label(ids, vocab, granularity);
    let mut entities = Vec::new();
    let mut transcript = None;

    if task == Task::Sf {
        while pos < ids.len() && ids[pos] == SEP {
            if pos + 1 < ids.len() && ids[pos + 1] == SEP {
                // Double separator: the rest is the multitask transcript.
                transcript = Some(decode_span(&ids[pos + 2..], cfg.transcript_scheme, vocab));
                break;
            }
            // Entity group: <sep> label <fill> filler-tokens.
            let label_pos = pos + 1;
            if label_pos >= ids.len() || vocab.is_reserved(ids[label_pos]) {
                break;
            }
            let Ok(label) = vocab.token(ids[label_pos]) else {
                break;
            };
            let fill_pos = label_pos + 1;
            if fill_pos >= ids.len() || ids[fill_pos] != FILL {
                break;
            }
            let mut end = fill_pos + 1;
            while end < ids.len() && ids[end] != SEP {
                end += 1;
            }
            let filler = decode_span(&ids[fill_pos + 1..end], cfg.transcript_scheme, vocab);
            entities.push((label.to_string(), filler));
            pos = end;
        }
    } else if pos < ids.len() && ids[pos] == SEP {
        transcript = Some(decode_span(&ids[pos + 1..], cfg.transcript_scheme, vocab));
    }

    ParsedHypothesis {
        class_label,
        entities,
        transcript,
    }
}

/// Concatenates the waveforms of turns `max(0, i-k)..=i`, in order, with
/// no inserted gap.
pub fn concat_context(conv: &[Vec<f64>], current_index: usize, k: usize) -> Result<Vec<f64>> {
    if current_index >= conv.len() {
        return Err(Error::Target(format!(
            "context index {current_index} out of range for {} turns",
            conv.len()
        )));
    }
    let start = current_index.saturating_sub(k);
    let total: usize = conv[start..=current_index].iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for wave in &conv[start..=current_index] {
        out.extend_from_slice(wave);
    }
    Ok(out)
}

/// Serialized hypothesis line for the decode → score interface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypLine {
    pub utt_id: String,
    pub class: String,
    pub entities: Vec<HypEntity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    pub raw_tokens: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypEntity {
    pub label: String,
    pub filler: String,
}

impl HypLine {
    pub fn new(utt_id: &str, parsed: &ParsedHypothesis, raw_tokens: Vec<usize>) -> Self {
        HypLine {
            utt_id: utt_id.to_string(),
            class: parsed.class_label.clone(),
            entities: parsed
                .entities
                .iter()
                .map(|(label, filler)| HypEntity {
                    label: label.clone(),
                    filler: filler.clone(),
                })
                .collect(),
            transcript: parsed.transcript.clone(),
            raw_tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{
        BLANK_TOKEN, FILL_TOKEN, SEP_TOKEN, SOS_EOS_TOKEN, UNK_TOKEN,
    };

    fn vocab_for(words: &[&str]) -> Vocabulary {
        let mut tokens = vec![
            BLANK_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            SEP_TOKEN.to_string(),
            FILL_TOKEN.to_string(),
        ];
        tokens.extend(words.iter().map(|w| w.to_string()));
        tokens.push(SOS_EOS_TOKEN.to_string());
        Vocabulary::from_tokens(tokens).unwrap()
    }

    fn utt(intent: &str, transcript: &str) -> Utterance {
        Utterance {
            utt_id: "u0".into(),
            audio_path: "u0.wav".into(),
            speaker_id: String::new(),
            transcript: transcript.into(),
            intent: Some(intent.into()),
            entities: Vec::new(),
            emotion: None,
            dialog_act: None,
            conversation_id: None,
            turn_index: None,
        }
    }

    #[test]
    fn classification_target_single_label() {
        let vocab = vocab_for(&["lights_on", "turn", "on", "the", "lights"]);
        let cfg = TokenizerConfig::default();
        let t = make_classification_target(
            &utt("lights_on", "turn on the lights"),
            Task::Ic,
            false,
            &vocab,
            &cfg,
            None,
        )
        .unwrap();
        assert_eq!(t.tokens, vec![vocab.id("lights_on").unwrap()]);
        assert!(!t.has_transcript);
    }

    #[test]
    fn classification_target_multitask() {
        let vocab = vocab_for(&["lights_on", "turn", "on", "the", "lights"]);
        let cfg = TokenizerConfig::default();
        let t = make_classification_target(
            &utt("lights_on", "turn on the lights"),
            Task::Ic,
            true,
            &vocab,
            &cfg,
            None,
        )
        .unwrap();
        let expect: Vec<usize> = vec![
            vocab.id("lights_on").unwrap(),
            SEP,
            vocab.id("turn").unwrap(),
            vocab.id("on").unwrap(),
            vocab.id("the").unwrap(),
            vocab.id("lights").unwrap(),
        ];
        assert_eq!(t.tokens, expect);
    }

    #[test]
    fn char_granularity_spells_label() {
        let vocab = vocab_for(&["l", "i", "g", "h", "t", "s", "_", "o", "n"]);
        let cfg = TokenizerConfig {
            label_granularity: LabelGranularity::Char,
            ..TokenizerConfig::default()
        };
        let t = make_classification_target(&utt("li", ""), Task::Ic, false, &vocab, &cfg, None)
            .unwrap();
        assert_eq!(
            t.tokens,
            vec![vocab.id("l").unwrap(), vocab.id("i").unwrap()]
        );
        let parsed = parse_hypothesis(&t.tokens, Task::Ic, &vocab, &cfg);
        assert_eq!(parsed.class_label, "li");
    }

    #[test]
    fn slot_granularity_splits_label() {
        let vocab = vocab_for(&["turn_on", "turn", "on"]);
        let cfg = TokenizerConfig {
            label_granularity: LabelGranularity::Slot,
            ..TokenizerConfig::default()
        };
        let t = make_classification_target(&utt("turn_on", ""), Task::Ic, false, &vocab, &cfg, None)
            .unwrap();
        assert_eq!(
            t.tokens,
            vec![vocab.id("turn").unwrap(), vocab.id("on").unwrap()]
        );
        let parsed = parse_hypothesis(&t.tokens, Task::Ic, &vocab, &cfg);
        assert_eq!(parsed.class_label, "turn_on");
    }

    #[test]
    fn missing_label_is_error() {
        let vocab = vocab_for(&["x"]);
        let cfg = TokenizerConfig::default();
        let mut u = utt("x", "");
        u.intent = None;
        assert!(
            make_classification_target(&u, Task::Ic, false, &vocab, &cfg, None).is_err()
        );
        let u2 = utt("not_in_vocab", "");
        assert!(
            make_classification_target(&u2, Task::Ic, false, &vocab, &cfg, None).is_err()
        );
    }

    fn sf_utt() -> Utterance {
        let mut u = utt("email_query", "send john a mail");
        u.entities = vec![crate::corpus::Entity {
            label: "person".into(),
            filler: "john".into(),
            span: [5, 9],
        }];
        u
    }

    #[test]
    fn slotfill_target_grammar() {
        let vocab = vocab_for(&["email_query", "person", "send", "john", "a", "mail"]);
        let cfg = TokenizerConfig::default();
        let t = make_slotfill_target(&sf_utt(), false, &vocab, &cfg, None).unwrap();
        assert_eq!(
            t.tokens,
            vec![
                vocab.id("email_query").unwrap(),
                SEP,
                vocab.id("person").unwrap(),
                FILL,
                vocab.id("john").unwrap(),
            ]
        );
    }

    #[test]
    fn slotfill_zero_entities() {
        let vocab = vocab_for(&["email_query"]);
        let cfg = TokenizerConfig::default();
        let mut u = sf_utt();
        u.entities.clear();
        u.transcript = String::new();
        let t = make_slotfill_target(&u, false, &vocab, &cfg, None).unwrap();
        assert_eq!(t.tokens, vec![vocab.id("email_query").unwrap()]);
    }

    #[test]
    fn entities_emitted_in_span_order() {
        let vocab = vocab_for(&["go", "color", "object", "red", "lamp"]);
        let cfg = TokenizerConfig::default();
        let mut u = utt("go", "red lamp");
        u.entities = vec![
            crate::corpus::Entity {
                label: "object".into(),
                filler: "lamp".into(),
                span: [4, 8],
            },
            crate::corpus::Entity {
                label: "color".into(),
                filler: "red".into(),
                span: [0, 3],
            },
        ];
        let t = make_slotfill_target(&u, false, &vocab, &cfg, None).unwrap();
        let parsed = parse_hypothesis(&t.tokens, Task::Sf, &vocab, &cfg);
        assert_eq!(
            parsed.entities,
            vec![
                ("color".to_string(), "red".to_string()),
                ("object".to_string(), "lamp".to_string())
            ]
        );
    }

    #[test]
    fn parse_classification_roundtrip() {
        let vocab = vocab_for(&["lights_on", "turn", "on"]);
        let cfg = TokenizerConfig::default();
        let t = make_classification_target(
            &utt("lights_on", "turn on"),
            Task::Ic,
            true,
            &vocab,
            &cfg,
            None,
        )
        .unwrap();
        let parsed = parse_hypothesis(&t.tokens, Task::Ic, &vocab, &cfg);
        assert_eq!(parsed.class_label, "lights_on");
        assert_eq!(parsed.transcript.as_deref(), Some("turn on"));
        assert!(parsed.entities.is_empty());
    }

    #[test]
    fn parse_sf_roundtrip_with_transcript() {
        let vocab = vocab_for(&["email_query", "person", "send", "john", "a", "mail"]);
        let cfg = TokenizerConfig::default();
        let t = make_slotfill_target(&sf_utt(), true, &vocab, &cfg, None).unwrap();
        let parsed = parse_hypothesis(&t.tokens, Task::Sf, &vocab, &cfg);
        assert_eq!(parsed.class_label, "email_query");
        assert_eq!(
            parsed.entities,
            vec![("person".to_string(), "john".to_string())]
        );
        assert_eq!(parsed.transcript.as_deref(), Some("send john a mail"));
    }

    #[test]
    fn parse_malformed_falls_back() {
        let vocab = vocab_for(&["person"]);
        let cfg = TokenizerConfig::default();
        let parsed = parse_hypothesis(&[SEP, vocab.id("person").unwrap()], Task::Sf, &vocab, &cfg);
        assert_eq!(parsed.class_label, FALLBACK_LABEL);
        assert!(parsed.entities.is_empty());
        let parsed = parse_hypothesis(&[], Task::Ic, &vocab, &cfg);
        assert_eq!(parsed.class_label, FALLBACK_LABEL);
    }

    #[test]
    fn context_concatenation() {
        let turns: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 100 * (i + 1)]).collect();
        // i = 0: only the current utterance, any k.
        let out = concat_context(&turns, 0, 3).unwrap();
        assert_eq!(out, turns[0]);
        // Full history.
        let out = concat_context(&turns, 3, 3).unwrap();
        assert_eq!(out.len(), turns.iter().map(Vec::len).sum::<usize>());
        // k = 1 equals manual concatenation of u2, u3.
        let out = concat_context(&turns, 3, 1).unwrap();
        let mut manual = turns[2].clone();
        manual.extend_from_slice(&turns[3]);
        assert_eq!(out, manual);
        assert!(concat_context(&turns, 4, 1).is_err());
    }
}

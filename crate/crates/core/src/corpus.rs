//! Corpus manifests: per-utterance audio references, transcripts, and
//! semantic annotations.
//!
//! A manifest is a JSONL file with one utterance object per line. An
//! optional header line (any object without an `utt_id` key, first line
//! only) carries corpus-level metadata; without it the corpus name,
//! task, and sample rate fall back to defaults, with the task inferred
//! from the annotations present. Audio paths are resolved relative to
//! the manifest file's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "SF")]
    Sf,
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "DA")]
    Da,
    #[serde(rename = "ASR")]
    Asr,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Ic => "IC",
            Task::Sf => "SF",
            Task::Er => "ER",
            Task::Da => "DA",
            Task::Asr => "ASR",
        };
        f.write_str(s)
    }
}

/// Annotated entity: label plus the lexical filler it covers, with an
/// explicit char span `[start, end)` into the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub label: String,
    pub filler: String,
    pub span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    /// Resolved (absolute or manifest-relative-resolved) path to the WAV file.
    pub audio_path: PathBuf,
    pub speaker_id: String,
    pub transcript: String,
    pub intent: Option<String>,
    pub entities: Vec<Entity>,
    pub emotion: Option<String>,
    pub dialog_act: Option<String>,
    pub conversation_id: Option<String>,
    pub turn_index: Option<usize>,
}

impl Utterance {
    /// Label relevant to a classification-style task, if present.
    pub fn class_label(&self, task: Task) -> Option<&str> {
        match task {
            Task::Ic | Task::Sf => self.intent.as_deref(),
            Task::Er => self.emotion.as_deref(),
            Task::Da => self.dialog_act.as_deref(),
            Task::Asr => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub name: String,
    pub task: Task,
    pub sample_rate_hz: u32,
    /// Split name → utterances, in file order.
    pub splits: BTreeMap<String, Vec<Utterance>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    task: Option<Task>,
    #[serde(default)]
    sample_rate_hz: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UttLine {
    utt_id: String,
    audio: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speaker: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dialog_act: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conversation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    turn_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn line_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::ManifestLine {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn manifest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Validates the per-utterance invariants: entity spans in bounds,
/// non-overlapping and sorted by start; turn linkage consistent.
fn validate_utterance(u: &Utterance) -> std::result::Result<(), String> {
    let n_chars = u.transcript.chars().count();
    let mut prev_end = 0usize;
    for (i, e) in u.entities.iter().enumerate() {
        let [s, t] = e.span;
        if s > t || t > n_chars {
            return Err(format!(
                "utt '{}': entity {} span [{s},{t}) out of bounds for transcript of length {n_chars}",
                u.utt_id, i
            ));
        }
        if i > 0 && s < prev_end {
            return Err(format!(
                "utt '{}': entity {} span [{s},{t}) overlaps or is out of order",
                u.utt_id, i
            ));
        }
        prev_end = t;
    }
    if u.turn_index.is_some() && u.conversation_id.is_none() {
        return Err(format!(
            "utt '{}': turn_index given without conversation_id",
            u.utt_id
        ));
    }
    Ok(())
}

fn infer_task(splits: &BTreeMap<String, Vec<Utterance>>) -> Task {
    let all = splits.values().flatten();
    let mut any_entities = false;
    let mut any_da = false;
    let mut any_emotion = false;
    let mut any_intent = false;
    for u in all {
        any_entities |= !u.entities.is_empty();
        any_da |= u.dialog_act.is_some();
        any_emotion |= u.emotion.is_some();
        any_intent |= u.intent.is_some();
    }
    if any_entities {
        Task::Sf
    } else if any_da {
        Task::Da
    } else if any_emotion {
        Task::Er
    } else if any_intent {
        Task::Ic
    } else {
        Task::Asr
    }
}

/// Loads and validates a JSONL corpus manifest.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();

    let mut header: Option<HeaderLine> = None;
    let mut splits: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut n_utts = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| line_err(path, line_no, format!("malformed JSON: {e}")))?;
        let is_header = value.get("utt_id").is_none();
        if is_header {
            if n_utts > 0 || header.is_some() {
                return Err(line_err(path, line_no, "header object allowed only as first line"));
            }
            header = Some(
                serde_json::from_value(value)
                    .map_err(|e| line_err(path, line_no, format!("bad header: {e}")))?,
            );
            continue;
        }
        let raw: UttLine = serde_json::from_value(value)
            .map_err(|e| line_err(path, line_no, format!("bad utterance: {e}")))?;
        if !seen_ids.insert(raw.utt_id.clone()) {
            return Err(line_err(
                path,
                line_no,
                format!("duplicate utt_id '{}'", raw.utt_id),
            ));
        }
        let audio_rel = PathBuf::from(&raw.audio);
        let audio_path = if audio_rel.is_absolute() {
            audio_rel
        } else {
            base_dir.join(audio_rel)
        };
        let utt = Utterance {
            utt_id: raw.utt_id,
            audio_path,
            speaker_id: raw.speaker.unwrap_or_default(),
            transcript: raw.transcript,
            intent: raw.intent,
            entities: raw.entities,
            emotion: raw.emotion,
            dialog_act: raw.dialog_act,
            conversation_id: raw.conversation_id,
            turn_index: raw.turn_index,
        };
        validate_utterance(&utt).map_err(|msg| line_err(path, line_no, msg))?;
        let split = raw.split.unwrap_or_else(|| "train".to_string());
        splits.entry(split).or_default().push(utt);
        n_utts += 1;
    }

    if n_utts == 0 {
        return Err(manifest_err(path, "no utterances"));
    }

    let header = header.unwrap_or(HeaderLine {
        name: None,
        task: None,
        sample_rate_hz: None,
    });
    let task = header.task.unwrap_or_else(|| infer_task(&splits));
    Ok(CorpusManifest {
        name: header.name.unwrap_or_else(|| "corpus".to_string()),
        task,
        sample_rate_hz: header.sample_rate_hz.unwrap_or(audio::SAMPLE_RATE_HZ),
        splits,
    })
}

/// Writes a manifest as JSONL: header line first, then utterances grouped
/// by split. Audio paths under the manifest directory are relativized.
pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    let header = HeaderLine {
        name: Some(manifest.name.clone()),
        task: Some(manifest.task),
        sample_rate_hz: Some(manifest.sample_rate_hz),
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap()).unwrap();
    for (split, utts) in &manifest.splits {
        for u in utts {
            let audio = u
                .audio_path
                .strip_prefix(base_dir)
                .unwrap_or(&u.audio_path)
                .to_string_lossy()
                .into_owned();
            let line = UttLine {
                utt_id: u.utt_id.clone(),
                audio,
                speaker: if u.speaker_id.is_empty() {
                    None
                } else {
                    Some(u.speaker_id.clone())
                },
                transcript: u.transcript.clone(),
                intent: u.intent.clone(),
                entities: u.entities.clone(),
                emotion: u.emotion.clone(),
                dialog_act: u.dialog_act.clone(),
                conversation_id: u.conversation_id.clone(),
                turn_index: u.turn_index,
                split: Some(split.clone()),
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap()).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

impl CorpusManifest {
    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Manifest {
                path: PathBuf::from(&self.name),
                msg: format!("missing split '{name}'"),
            })
    }

    /// Checks the full-experiment invariants: train/valid/test splits present.
    pub fn validate_splits(&self) -> Result<()> {
        for required in ["train", "valid", "test"] {
            if !self.splits.contains_key(required) {
                return Err(Error::Manifest {
                    path: PathBuf::from(&self.name),
                    msg: format!("missing required split '{required}'"),
                });
            }
        }
        Ok(())
    }

    /// Verifies every referenced audio file exists as mono PCM at the corpus rate.
    pub fn verify_audio(&self) -> Result<()> {
        for utts in self.splits.values() {
            for u in utts {
                audio::verify_wav(&u.audio_path, self.sample_rate_hz)?;
            }
        }
        Ok(())
    }

    /// Utterances of one conversation in turn order, as (index into split, utterance).
    pub fn conversation_turns<'a>(
        utts: &'a [Utterance],
        conversation_id: &str,
    ) -> Vec<&'a Utterance> {
        let mut turns: Vec<&Utterance> = utts
            .iter()
            .filter(|u| u.conversation_id.as_deref() == Some(conversation_id))
            .collect();
        turns.sort_by_key(|u| u.turn_index.unwrap_or(0));
        turns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn three_lines_three_utterances() {
        let (_d, path) = write_lines(&[
            r#"{"utt_id":"a","audio":"a.wav","transcript":"hi"}"#,
            r#"{"utt_id":"b","audio":"b.wav"}"#,
            r#"{"utt_id":"c","audio":"c.wav","intent":"greet"}"#,
        ]);
        let m = load_manifest(&path).unwrap();
        let total: usize = m.splits.values().map(Vec::len).sum();
        assert_eq!(total, 3);
        assert_eq!(m.task, Task::Ic);
        assert_eq!(m.sample_rate_hz, 16_000);
    }

    #[test]
    fn out_of_bounds_entity_span_names_utt() {
        let (_d, path) = write_lines(&[
            r#"{"utt_id":"bad1","audio":"a.wav","transcript":"0123456789","entities":[{"label":"x","filler":"y","span":[5,20]}]}"#,
        ]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("bad1"), "error should name the utt: {err}");
        assert!(err.contains("span"), "error should mention the span: {err}");
        assert!(err.contains("line 1"), "error should carry line number: {err}");
    }

    #[test]
    fn empty_file_is_no_utterances() {
        let (_d, path) = write_lines(&[]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("no utterances"));
    }

    #[test]
    fn duplicate_utt_id_rejected_with_line() {
        let (_d, path) = write_lines(&[
            r#"{"utt_id":"a","audio":"a.wav"}"#,
            r#"{"utt_id":"a","audio":"b.wav"}"#,
        ]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"));
        assert!(err.contains("line 2"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (_d, path) = write_lines(&[r#"{"utt_id":"a","audio":"a.wav"}"#, "{nope"]);
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn overlapping_spans_rejected() {
        let (_d, path) = write_lines(&[
            r#"{"utt_id":"a","audio":"a.wav","transcript":"abcdef","entities":[{"label":"x","filler":"ab","span":[0,3]},{"label":"y","filler":"cd","span":[2,5]}]}"#,
        ]);
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn turn_index_requires_conversation() {
        let (_d, path) =
            write_lines(&[r#"{"utt_id":"a","audio":"a.wav","turn_index":2}"#]);
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn roundtrip_reparses_equal() {
        let (_d, path) = write_lines(&[
            r#"{"name":"toy","task":"SF","sample_rate_hz":16000}"#,
            r#"{"utt_id":"a","audio":"a.wav","transcript":"red light","intent":"set","entities":[{"label":"color","filler":"red","span":[0,3]}],"split":"train"}"#,
            r#"{"utt_id":"b","audio":"b.wav","split":"test","speaker":"s1","conversation_id":"c0","turn_index":0}"#,
        ]);
        let m1 = load_manifest(&path).unwrap();
        let out = path.parent().unwrap().join("copy.jsonl");
        write_manifest(&m1, &out).unwrap();
        let m2 = load_manifest(&out).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn identical_bytes_identical_manifest() {
        let lines = [
            r#"{"utt_id":"a","audio":"a.wav","intent":"x"}"#,
            r#"{"utt_id":"b","audio":"b.wav","intent":"y","split":"test"}"#,
        ];
        let (_d1, p1) = write_lines(&lines);
        let (_d2, p2) = write_lines(&lines);
        let m1 = load_manifest(&p1).unwrap();
        let m2 = load_manifest(&p2).unwrap();
        // Resolved audio paths differ by temp dir; compare structure modulo base dir.
        assert_eq!(m1.name, m2.name);
        assert_eq!(m1.task, m2.task);
        assert_eq!(
            m1.splits.keys().collect::<Vec<_>>(),
            m2.splits.keys().collect::<Vec<_>>()
        );
        for (a, b) in m1.splits.values().flatten().zip(m2.splits.values().flatten()) {
            assert_eq!(a.utt_id, b.utt_id);
            assert_eq!(a.intent, b.intent);
            assert_eq!(a.audio_path.file_name(), b.audio_path.file_name());
        }
    }

    #[test]
    fn task_inference_priority() {
        let (_d, path) = write_lines(&[
            r#"{"utt_id":"a","audio":"a.wav","intent":"x","dialog_act":"q"}"#,
        ]);
        assert_eq!(load_manifest(&path).unwrap().task, Task::Da);
    }
}

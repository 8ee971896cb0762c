//! Synthetic tone-word corpora: every vocabulary word renders as a unique
//! ordered pair of 100 ms sine tones from a fixed frequency grid, so a
//! small model can learn the tasks in minutes while transcripts, intents,
//! slots, emotions, and dialogue structure stay fully controlled.
//!
//! Determinism: given (spec, seed), the WAV bytes and manifest bytes are
//! reproducible. The train split cycles through classes, templates, and
//! word pools so that everything occurring in valid/test is seen in train.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio;
use crate::corpus::{load_manifest, write_manifest, CorpusManifest, Entity, Task, Utterance};
use crate::error::{Error, Result};
use crate::frontend::rng_for;

pub const SAMPLES_PER_TONE: usize = 1600; // 100 ms at 16 kHz
pub const SAMPLES_PER_WORD: usize = 2 * SAMPLES_PER_TONE;
const TONE_AMPLITUDE: f64 = 0.25;

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

const ACTIONS: [&str; 12] = [
    "activate", "deactivate", "increase", "decrease", "open", "close", "query", "set", "play",
    "stop", "mute", "resume",
];
const OBJECTS: [&str; 12] = [
    "lights", "music", "heat", "door", "volume", "alarm", "blinds", "fan", "tv", "coffee",
    "screen", "lock",
];
const EMOTIONS: [&str; 8] = [
    "neutral", "happy", "sad", "angry", "excited", "frustrated", "surprised", "bored",
];
const DA_NAMES: [&str; 10] = [
    "statement", "question", "answer", "backchannel", "opinion", "agreement", "disagreement",
    "apology", "thanks", "greeting",
];

fn syllable(i: usize) -> String {
    format!("{}{}", ONSETS[(i / VOWELS.len()) % ONSETS.len()], VOWELS[i % VOWELS.len()])
}

/// Deterministic pronounceable word string for a vocabulary index.
pub fn word_string(i: usize) -> String {
    let n = ONSETS.len() * VOWELS.len();
    format!("{}{}", syllable(i / n), syllable(i % n))
}

pub fn intent_name(j: usize) -> String {
    format!(
        "{}_{}",
        ACTIONS[j % ACTIONS.len()],
        OBJECTS[(j + j / ACTIONS.len()) % OBJECTS.len()]
    )
}

pub fn emotion_name(j: usize) -> String {
    EMOTIONS[j % EMOTIONS.len()].to_string()
}

pub fn da_name(j: usize) -> String {
    format!("da_{}", DA_NAMES[j % DA_NAMES.len()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub task: Task,
    pub n_classes: usize,
    /// Split name → utterance count.
    pub n_utts: BTreeMap<String, usize>,
    pub vocab_words: usize,
    /// Total words per utterance, inclusive range.
    pub words_per_utt: [usize; 2],
    /// Slot label templates for SF mode; each inner list is one template.
    pub slot_templates: Vec<Vec<String>>,
    /// Turns per conversation in DA mode.
    pub conversation_length: usize,
    /// Number of grid frequencies for tone rendering.
    pub tone_grid: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let mut n_utts = BTreeMap::new();
        n_utts.insert("train".to_string(), 200);
        n_utts.insert("valid".to_string(), 50);
        n_utts.insert("test".to_string(), 50);
        SynthSpec {
            task: Task::Ic,
            n_classes: 8,
            n_utts,
            vocab_words: 24,
            words_per_utt: [2, 4],
            slot_templates: vec![
                vec!["color".to_string()],
                vec!["object".to_string()],
                vec!["color".to_string(), "object".to_string()],
            ],
            conversation_length: 10,
            tone_grid: 12,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("synth needs at least one class".into()));
        }
        if self.vocab_words == 0 {
            return Err(Error::Config("synth needs a non-empty word inventory".into()));
        }
        if self.words_per_utt[0] == 0 || self.words_per_utt[0] > self.words_per_utt[1] {
            return Err(Error::Config("bad words_per_utt range".into()));
        }
        if self.tone_grid < 2 {
            return Err(Error::Config("tone_grid must have at least 2 frequencies".into()));
        }
        if self.conversation_length < 2 {
            return Err(Error::Config("conversation_length must be at least 2".into()));
        }
        if self.task == Task::Sf
            && (self.slot_templates.is_empty() || self.slot_templates.iter().any(Vec::is_empty))
        {
            return Err(Error::Config("SF synthesis needs non-empty slot templates".into()));
        }
        Ok(())
    }

    fn slot_labels(&self) -> Vec<String> {
        let mut labels = BTreeSet::new();
        for t in &self.slot_templates {
            labels.extend(t.iter().cloned());
        }
        labels.into_iter().collect()
    }
}

fn grid_frequency(spec: &SynthSpec, k: usize) -> f64 {
    300.0 + (3000.0 - 300.0) * k as f64 / (spec.tone_grid - 1) as f64
}

fn render_word(spec: &SynthSpec, word_idx: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (a, b) = (word_idx / spec.tone_grid, word_idx % spec.tone_grid);
    let mut out = Vec::with_capacity(SAMPLES_PER_WORD);
    for freq in [grid_frequency(spec, a), grid_frequency(spec, b)] {
        let jitter = rng.random_range(0.98..1.02);
        let amp = TONE_AMPLITUDE * jitter;
        for n in 0..SAMPLES_PER_TONE {
            out.push(amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin());
        }
    }
    out
}

fn render_utterance(spec: &SynthSpec, word_ids: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut wave = Vec::with_capacity(word_ids.len() * SAMPLES_PER_WORD);
    for &w in word_ids {
        wave.extend(render_word(spec, w, rng));
    }
    wave
}

struct SplitPlan<'a> {
    split: &'a str,
    /// Words usable when drawing for this split (train-seen for eval splits).
    allowed: Option<&'a BTreeSet<usize>>,
}

fn draw_from_pool(
    pool: std::ops::Range<usize>,
    plan: &SplitPlan,
    cycle: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    match plan.allowed {
        // Train: cycle for guaranteed coverage.
        None => pool.start + cycle % pool.len(),
        Some(allowed) => {
            let candidates: Vec<usize> = pool.clone().filter(|w| allowed.contains(w)).collect();
            if candidates.is_empty() {
                pool.start
            } else {
                candidates[rng.random_range(0..candidates.len())]
            }
        }
    }
}

struct GeneratedUtt {
    word_ids: Vec<usize>,
    intent: Option<String>,
    entities: Vec<Entity>,
    emotion: Option<String>,
    dialog_act: Option<String>,
    conversation_id: Option<String>,
    turn_index: Option<usize>,
}

fn transcript_of(word_ids: &[usize]) -> String {
    word_ids
        .iter()
        .map(|&w| word_string(w))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates the corpus: WAV files under `out_dir/wav/` plus
/// `out_dir/manifest.jsonl`, returning the re-loaded validated manifest.
pub fn synth_corpus(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    spec.validate()?;
    if spec.vocab_words > spec.tone_grid * spec.tone_grid {
        return Err(Error::Synth(format!(
            "tone grid of {} supports {} words, spec asks for {}",
            spec.tone_grid,
            spec.tone_grid * spec.tone_grid,
            spec.vocab_words
        )));
    }
    let needed = match spec.task {
        Task::Ic | Task::Er => 2 * spec.n_classes + 2,
        Task::Sf => 2 * spec.n_classes + 2 * spec.slot_labels().len(),
        Task::Da | Task::Asr => spec.n_classes.max(4),
    };
    if spec.vocab_words < needed {
        return Err(Error::Synth(format!(
            "task {} with {} classes needs at least {needed} words, got {}",
            spec.task, spec.n_classes, spec.vocab_words
        )));
    }

    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;

    // Train first so eval splits can be restricted to train-seen words.
    let mut split_names: Vec<&String> = spec.n_utts.keys().collect();
    split_names.sort_by_key(|s| (s.as_str() != "train", s.as_str()));

    let mut splits: BTreeMap<String, Vec<Utterance>> = BTreeMap::new();
    let mut train_seen: BTreeSet<usize> = BTreeSet::new();

    for split in split_names {
        let n = spec.n_utts[split];
        let mut rng = rng_for(seed, &format!("synth:{split}"), 0);
        let seen_snapshot = train_seen.clone();
        let plan = SplitPlan {
            split,
            allowed: (split != "train").then_some(&seen_snapshot),
        };
        let generated = match spec.task {
            Task::Ic | Task::Er => gen_classification(spec, n, &plan, &mut rng),
            Task::Sf => gen_slotfill(spec, n, &plan, &mut rng),
            Task::Da => gen_dialogue(spec, n, &plan, &mut rng),
            Task::Asr => gen_asr(spec, n, &plan, &mut rng),
        };
        let mut utts = Vec::with_capacity(generated.len());
        for (i, g) in generated.into_iter().enumerate() {
            if split == "train" {
                train_seen.extend(g.word_ids.iter().copied());
            }
            let utt_id = format!("{split}_{i:04}");
            let wav_name = format!("{utt_id}.wav");
            let mut tone_rng = rng_for(seed, &format!("synth-tone:{utt_id}"), 0);
            let wave = render_utterance(spec, &g.word_ids, &mut tone_rng);
            let wav_path = wav_dir.join(&wav_name);
            audio::write_wav(&wav_path, &wave, audio::SAMPLE_RATE_HZ)?;
            utts.push(Utterance {
                utt_id,
                audio_path: wav_path,
                speaker_id: format!("spk{}", i % 4),
                transcript: transcript_of(&g.word_ids),
                intent: g.intent,
                entities: g.entities,
                emotion: g.emotion,
                dialog_act: g.dialog_act,
                conversation_id: g.conversation_id,
                turn_index: g.turn_index,
            });
        }
        splits.insert(split.clone(), utts);
    }

    let manifest = CorpusManifest {
        name: format!("synth-{}", spec.task),
        task: spec.task,
        sample_rate_hz: audio::SAMPLE_RATE_HZ,
        splits,
    };
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &manifest_path)?;
    load_manifest(&manifest_path)
}

/// IC/ER: the first two words are the class's command pair, the rest are
/// filler words.
fn gen_classification(
    spec: &SynthSpec,
    n: usize,
    plan: &SplitPlan,
    rng: &mut ChaCha8Rng,
) -> Vec<GeneratedUtt> {
    let filler_pool = 2 * spec.n_classes..spec.vocab_words;
    (0..n)
        .map(|i| {
            let class = if plan.allowed.is_none() {
                i % spec.n_classes
            } else {
                rng.random_range(0..spec.n_classes)
            };
            let total = rng.random_range(spec.words_per_utt[0]..=spec.words_per_utt[1]);
            let mut word_ids = vec![2 * class, 2 * class + 1];
            for k in 2..total.max(2) {
                word_ids.push(draw_from_pool(filler_pool.clone(), plan, i + 31 * k, rng));
            }
            let (intent, emotion) = match spec.task {
                Task::Er => (None, Some(emotion_name(class))),
                _ => (Some(intent_name(class)), None),
            };
            GeneratedUtt {
                word_ids,
                intent,
                entities: Vec::new(),
                emotion,
                dialog_act: None,
                conversation_id: None,
                turn_index: None,
            }
        })
        .collect()
}

/// SF: command pair, then one filler word per slot in the chosen template;
/// each slot label owns a contiguous word pool.
fn gen_slotfill(
    spec: &SynthSpec,
    n: usize,
    plan: &SplitPlan,
    rng: &mut ChaCha8Rng,
) -> Vec<GeneratedUtt> {
    let labels = spec.slot_labels();
    let pool_base = 2 * spec.n_classes;
    let pool_len = (spec.vocab_words - pool_base) / labels.len();
    let label_pool = |label: &str| -> std::ops::Range<usize> {
        let li = labels.iter().position(|l| l == label).unwrap();
        let start = pool_base + li * pool_len;
        start..start + pool_len
    };
    (0..n)
        .map(|i| {
            let class = if plan.allowed.is_none() {
                i % spec.n_classes
            } else {
                rng.random_range(0..spec.n_classes)
            };
            let template = if plan.allowed.is_none() {
                &spec.slot_templates[(i / spec.n_classes) % spec.slot_templates.len()]
            } else {
                &spec.slot_templates[rng.random_range(0..spec.slot_templates.len())]
            };
            let mut word_ids = vec![2 * class, 2 * class + 1];
            let mut entities = Vec::new();
            let mut offset = transcript_of(&word_ids).chars().count();
            for (slot_no, label) in template.iter().enumerate() {
                let w = draw_from_pool(label_pool(label), plan, i + 17 * slot_no, rng);
                word_ids.push(w);
                let filler = word_string(w);
                let start = offset + 1; // the joining space
                let end = start + filler.chars().count();
                entities.push(Entity {
                    label: label.clone(),
                    filler,
                    span: [start, end],
                });
                offset = end;
            }
            GeneratedUtt {
                word_ids,
                intent: Some(intent_name(class)),
                entities,
                emotion: None,
                dialog_act: None,
                conversation_id: None,
                turn_index: None,
            }
        })
        .collect()
}

/// DA: conversations where a turn's label is the word-class of the
/// PREVIOUS turn's first word (its own first word for turn 0), so context
/// concatenation is required to predict labels beyond turn 0.
fn gen_dialogue(
    spec: &SynthSpec,
    n: usize,
    plan: &SplitPlan,
    rng: &mut ChaCha8Rng,
) -> Vec<GeneratedUtt> {
    let all_words = 0..spec.vocab_words;
    let mut out = Vec::with_capacity(n);
    let mut conv = 0usize;
    let mut counter = 0usize;
    while out.len() < n {
        let turns = spec.conversation_length.min(n - out.len());
        let conv_id = format!("conv_{}_{conv}", plan.split);
        let mut prev_first: Option<usize> = None;
        for t in 0..turns {
            // The +conv offset desynchronizes the train cycle from the
            // conversation length so every label class occurs in train.
            let first = draw_from_pool(all_words.clone(), plan, counter + conv, rng);
            counter += 1;
            let total = rng.random_range(spec.words_per_utt[0]..=spec.words_per_utt[1]);
            let mut word_ids = vec![first];
            for k in 1..total {
                word_ids.push(draw_from_pool(all_words.clone(), plan, counter + 13 * k, rng));
            }
            let label_word = prev_first.unwrap_or(first);
            out.push(GeneratedUtt {
                word_ids,
                intent: None,
                entities: Vec::new(),
                emotion: None,
                dialog_act: Some(da_name(label_word % spec.n_classes)),
                conversation_id: Some(conv_id.clone()),
                turn_index: Some(t),
            });
            prev_first = Some(first);
        }
        conv += 1;
    }
    out
}

fn gen_asr(
    spec: &SynthSpec,
    n: usize,
    plan: &SplitPlan,
    rng: &mut ChaCha8Rng,
) -> Vec<GeneratedUtt> {
    let all_words = 0..spec.vocab_words;
    (0..n)
        .map(|i| {
            let total = rng.random_range(spec.words_per_utt[0]..=spec.words_per_utt[1]);
            let word_ids: Vec<usize> = (0..total)
                .map(|k| draw_from_pool(all_words.clone(), plan, i * 5 + k, rng))
                .collect();
            GeneratedUtt {
                word_ids,
                intent: None,
                entities: Vec::new(),
                emotion: None,
                dialog_act: None,
                conversation_id: None,
                turn_index: None,
            }
        })
        .collect()
}

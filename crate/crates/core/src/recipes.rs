//! Stage-by-stage recipe orchestration over a working directory:
//!
//! 1 prepare → 2 stats → 3 tokenize → 4 train → 5 decode → 6 score
//!
//! Each stage writes its artifacts under `workdir/stageN/` plus a `done`
//! marker, reads only from earlier stages, and reproduces identical bytes
//! when rerun with unchanged inputs. `sweep-snr` runs the speech
//! enhancement → SLU pipeline over an SNR grid using the trained model.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio;
use crate::config::{DataSource, ExperimentConfig};
use crate::corpus::{load_manifest, write_manifest, CorpusManifest, Task, Utterance};
use crate::decoder;
use crate::enhance::{self, Enhancer};
use crate::error::{Error, Result};
use crate::frontend::{self, FeatureMatrix, FrontendMode, GlobalStats};
use crate::metrics::{self, ScoreReport};
use crate::model::{load_checkpoint, ModelConfig, Parameters, SluModel};
use crate::synth::synth_corpus;
use crate::tasks::{self, HypLine};
use crate::tokenizer::{build_vocab, train_bpe, Scheme, Vocabulary};
use crate::trainer::{self, FitContext, TrainItem};

pub const STAGE_NAMES: [&str; 6] = ["prepare", "stats", "tokenize", "train", "decode", "score"];

#[derive(Debug, Clone)]
pub struct StagePlan {
    pub start: usize,
    pub stop: usize,
    pub workdir: PathBuf,
}

impl StagePlan {
    pub fn new(start: usize, stop: usize, workdir: impl Into<PathBuf>) -> Self {
        StagePlan {
            start,
            stop,
            workdir: workdir.into(),
        }
    }

    pub fn full(workdir: impl Into<PathBuf>) -> Self {
        StagePlan::new(1, 6, workdir)
    }

    fn validate(&self) -> Result<()> {
        if !(1 <= self.start && self.start <= self.stop && self.stop <= 6) {
            return Err(Error::Config(format!(
                "stage range {}..{} must satisfy 1 <= start <= stop <= 6",
                self.start, self.stop
            )));
        }
        Ok(())
    }
}

/// Paths of every artifact under a recipe working directory.
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn stage_dir(&self, stage: usize) -> PathBuf {
        self.root.join(format!("stage{stage}"))
    }

    fn done_marker(&self, stage: usize) -> PathBuf {
        self.stage_dir(stage).join("done")
    }

    pub fn is_done(&self, stage: usize) -> bool {
        self.done_marker(stage).exists()
    }

    fn mark_done(&self, stage: usize) -> Result<()> {
        let path = self.done_marker(stage);
        std::fs::write(&path, "ok\n").map_err(|e| Error::io(&path, e))
    }

    fn ensure_stage_dir(&self, stage: usize) -> Result<PathBuf> {
        let dir = self.stage_dir(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.stage_dir(1).join("manifest.jsonl")
    }

    pub fn cmvn_path(&self) -> PathBuf {
        self.stage_dir(2).join("cmvn.json")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.stage_dir(3).join("vocab.txt")
    }

    pub fn bpe_path(&self) -> PathBuf {
        self.stage_dir(3).join("bpe.txt")
    }

    pub fn targets_path(&self, split: &str) -> PathBuf {
        self.stage_dir(3).join(format!("targets_{split}.jsonl"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.stage_dir(4).join("checkpoint.bin")
    }

    pub fn train_log_path(&self) -> PathBuf {
        self.stage_dir(4).join("train_log.jsonl")
    }

    pub fn best_index_path(&self) -> PathBuf {
        self.stage_dir(4).join("best.json")
    }

    pub fn hyps_path(&self, split: &str) -> PathBuf {
        self.stage_dir(5).join(format!("hyps_{split}.jsonl"))
    }

    pub fn nbest_path(&self, split: &str) -> PathBuf {
        self.stage_dir(5).join(format!("nbest_{split}.jsonl"))
    }

    pub fn score_path(&self, split: &str) -> PathBuf {
        self.stage_dir(6).join(format!("score_{split}.json"))
    }

    pub fn enhance_dir(&self) -> PathBuf {
        self.root.join("enhance")
    }

    pub fn enhancer_path(&self) -> PathBuf {
        self.enhance_dir().join("enhancer.bin")
    }

    pub fn sweep_csv_path(&self) -> PathBuf {
        self.enhance_dir().join("snr_sweep.csv")
    }
}

/// Runs stages `start..=stop` in order; earlier stages must carry done
/// markers. Each stage halts the chain on failure.
pub fn run_stages(plan: &StagePlan, config: &ExperimentConfig) -> Result<()> {
    plan.validate()?;
    config.validate()?;
    let ws = Workspace::new(&plan.workdir);
    for prior in 1..plan.start {
        if !ws.is_done(prior) {
            return Err(Error::StagePrecondition {
                stage: format!("{} ({})", prior, STAGE_NAMES[prior - 1]),
                msg: format!(
                    "stage {prior} has no done marker in {}",
                    plan.workdir.display()
                ),
            });
        }
    }
    for stage in plan.start..=plan.stop {
        run_one_stage(&ws, stage, config).map_err(|e| match e {
            Error::StagePrecondition { .. } => e,
            other => Error::Stage {
                stage: format!("{} ({})", stage, STAGE_NAMES[stage - 1]),
                msg: other.to_string(),
            },
        })?;
    }
    Ok(())
}

fn run_one_stage(ws: &Workspace, stage: usize, config: &ExperimentConfig) -> Result<()> {
    ws.ensure_stage_dir(stage)?;
    match stage {
        1 => stage_prepare(ws, config)?,
        2 => stage_stats(ws, config)?,
        3 => stage_tokenize(ws, config)?,
        4 => stage_train(ws, config)?,
        5 => stage_decode(ws, config)?,
        6 => stage_score(ws, config)?,
        _ => unreachable!(),
    }
    ws.mark_done(stage)
}

fn stage_prepare(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = match config.data.source {
        DataSource::Synth => {
            let mut spec = config.data.synth.clone();
            spec.task = config.task;
            let data_dir = ws.stage_dir(1).join("data");
            synth_corpus(&spec, config.seed, &data_dir)?
        }
        DataSource::Manifest => {
            let path = config.data.manifest.as_ref().ok_or_else(|| {
                Error::Config("data.manifest not set for manifest source".into())
            })?;
            load_manifest(path)?
        }
    };
    manifest.validate_splits()?;
    manifest.verify_audio()?;
    write_manifest(&manifest, &ws.manifest_path())
}

#[derive(Serialize, Deserialize)]
struct CmvnFile {
    dim: usize,
    #[serde(flatten)]
    stats: GlobalStats,
}

fn load_stats(ws: &Workspace) -> Result<GlobalStats> {
    let path = ws.cmvn_path();
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: CmvnFile = serde_json::from_str(&text)
        .map_err(|e| Error::Feature(format!("bad cmvn file: {e}")))?;
    Ok(file.stats)
}

/// Raw (un-normalized) features for one split, in manifest order, with
/// acoustic context concatenation applied for conversational tasks.
fn build_features(
    manifest: &CorpusManifest,
    split: &str,
    config: &ExperimentConfig,
) -> Result<Vec<FeatureMatrix>> {
    let utts = manifest.split(split)?;
    let k = config.context_depth();
    match config.frontend.mode {
        FrontendMode::External => {
            if k > 0 {
                return Err(Error::Feature(
                    "acoustic context concatenation requires the fbank frontend".into(),
                ));
            }
            let index_path = config.frontend.external_index.as_ref().ok_or_else(|| {
                Error::Config("frontend.mode is external but external_index is not set".into())
            })?;
            let index = frontend::load_external_index(index_path)?;
            utts.iter().map(|u| index.load(&u.utt_id)).collect()
        }
        FrontendMode::Fbank => {
            // Cache waveforms per conversation for context assembly.
            let mut conv_waves: BTreeMap<&str, (Vec<Vec<f64>>, BTreeMap<&str, usize>)> =
                BTreeMap::new();
            if k > 0 {
                let conv_ids: std::collections::BTreeSet<&str> = utts
                    .iter()
                    .filter_map(|u| u.conversation_id.as_deref())
                    .collect();
                for cid in conv_ids {
                    let turns = CorpusManifest::conversation_turns(utts, cid);
                    let mut waves = Vec::with_capacity(turns.len());
                    let mut order = BTreeMap::new();
                    for (i, t) in turns.iter().enumerate() {
                        waves.push(audio::read_wav(&t.audio_path)?.0);
                        order.insert(t.utt_id.as_str(), i);
                    }
                    conv_waves.insert(cid, (waves, order));
                }
            }
            utts.iter()
                .map(|u| {
                    let wave = match (k, u.conversation_id.as_deref()) {
                        (kk, Some(cid)) if kk > 0 => {
                            let (waves, order) = &conv_waves[cid];
                            tasks::concat_context(waves, order[u.utt_id.as_str()], kk)?
                        }
                        _ => audio::read_wav(&u.audio_path)?.0,
                    };
                    let data = frontend::log_mel_fbank(&wave, &config.frontend)?;
                    Ok(FeatureMatrix {
                        utt_id: u.utt_id.clone(),
                        data,
                    })
                })
                .collect()
        }
    }
}

fn stage_stats(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(&ws.manifest_path())?;
    let feats = build_features(&manifest, "train", config)?;
    let stats = frontend::compute_global_stats(feats.iter().map(|f| &f.data))?;
    let file = CmvnFile {
        dim: stats.mean.len(),
        stats,
    };
    let path = ws.cmvn_path();
    std::fs::write(&path, serde_json::to_string_pretty(&file).unwrap())
        .map_err(|e| Error::io(&path, e))
}

#[derive(Serialize, Deserialize)]
struct TargetLine {
    utt_id: String,
    tokens: Vec<usize>,
}

fn stage_tokenize(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(&ws.manifest_path())?;
    let bpe = if config.tokenizer.transcript_scheme == Scheme::Bpe {
        let transcripts: Vec<&str> = manifest
            .split("train")?
            .iter()
            .map(|u| u.transcript.as_str())
            .collect();
        let model = train_bpe(&transcripts, config.tokenizer.bpe_merges)?;
        model.save(&ws.bpe_path())?;
        Some(model)
    } else {
        None
    };
    let vocab = build_vocab(&manifest, &config.tokenizer, bpe.as_ref())?;
    vocab.save(&ws.vocab_path())?;

    for (split, utts) in &manifest.splits {
        let mut out = Vec::new();
        for u in utts {
            let target = tasks::make_target(
                u,
                config.task,
                config.multitask_asr,
                &vocab,
                &config.tokenizer,
                bpe.as_ref(),
            )?;
            let line = TargetLine {
                utt_id: u.utt_id.clone(),
                tokens: target.tokens,
            };
            writeln!(out, "{}", serde_json::to_string(&line).unwrap()).unwrap();
        }
        let path = ws.targets_path(split);
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn load_targets(ws: &Workspace, split: &str) -> Result<BTreeMap<String, Vec<usize>>> {
    let path = ws.targets_path(split);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let parsed: TargetLine = serde_json::from_str(line).map_err(|e| {
            Error::Target(format!("bad target line {} in {}: {e}", i + 1, path.display()))
        })?;
        map.insert(parsed.utt_id, parsed.tokens);
    }
    Ok(map)
}

fn build_train_items(
    manifest: &CorpusManifest,
    split: &str,
    config: &ExperimentConfig,
    stats: &GlobalStats,
    targets: &BTreeMap<String, Vec<usize>>,
) -> Result<Vec<TrainItem>> {
    let feats = build_features(manifest, split, config)?;
    let utts = manifest.split(split)?;
    feats
        .into_iter()
        .zip(utts.iter())
        .map(|(f, u)| {
            let normalized = frontend::apply_normalization(&f, stats)?;
            let target = targets.get(&u.utt_id).ok_or_else(|| {
                Error::Target(format!("no target for utt '{}' in split {split}", u.utt_id))
            })?;
            Ok(TrainItem {
                utt_id: u.utt_id.clone(),
                features: normalized.data,
                target: target.clone(),
                class_label: u.class_label(config.task).map(str::to_string),
            })
        })
        .collect()
}

/// Model config completed with the vocabulary and feature dimensions
/// discovered by earlier stages.
fn resolved_model_config(
    config: &ExperimentConfig,
    vocab: &Vocabulary,
    stats: &GlobalStats,
) -> ModelConfig {
    let mut cfg = config.model.clone();
    if cfg.vocab_size == 0 {
        cfg.vocab_size = vocab.len();
    }
    if cfg.input_dim == 0 {
        cfg.input_dim = stats.mean.len();
    }
    cfg
}

fn stage_train(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(&ws.manifest_path())?;
    let stats = load_stats(ws)?;
    let vocab = Vocabulary::load(&ws.vocab_path())?;
    let targets_train = load_targets(ws, "train")?;
    let targets_valid = load_targets(ws, "valid")?;
    let train_items = build_train_items(&manifest, "train", config, &stats, &targets_train)?;
    let valid_items = build_train_items(&manifest, "valid", config, &stats, &targets_valid)?;
    let model_cfg = resolved_model_config(config, &vocab, &stats);
    let ctx = FitContext {
        model_cfg: &model_cfg,
        train_cfg: &config.train,
        specaug: &config.frontend.specaug,
        task: config.task,
        vocab: &vocab,
        tok_cfg: &config.tokenizer,
        decode_cfg: &config.decode,
        seed: config.seed,
    };
    trainer::fit(
        &ctx,
        &train_items,
        &valid_items,
        &ws.checkpoint_path(),
        &ws.train_log_path(),
        &ws.best_index_path(),
    )?;
    Ok(())
}

/// Decodes a list of normalized feature matrices; deterministic and
/// parallel across utterances.
fn decode_features(
    model_cfg: &ModelConfig,
    params: &Parameters,
    config: &ExperimentConfig,
    vocab: &Vocabulary,
    feats: &[FeatureMatrix],
) -> Result<Vec<(HypLine, Vec<decoder::Hypothesis>)>> {
    feats
        .par_iter()
        .map(|f| {
            let model = SluModel::new(model_cfg, params);
            let encoded = model.encode_eval(&f.data)?;
            let nbest = decoder::beam_search(&model, &encoded, &config.decode)?;
            let top = nbest.first().ok_or_else(|| {
                Error::Decode(format!("no hypothesis for utt '{}'", f.utt_id))
            })?;
            let parsed =
                tasks::parse_hypothesis(&top.tokens, config.task, vocab, &config.tokenizer);
            Ok((
                HypLine::new(&f.utt_id, &parsed, top.tokens.clone()),
                nbest,
            ))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct NbestLine {
    utt_id: String,
    nbest: Vec<NbestEntry>,
}

#[derive(Serialize, Deserialize)]
struct NbestEntry {
    tokens: Vec<usize>,
    score: f64,
}

fn stage_decode(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(&ws.manifest_path())?;
    let stats = load_stats(ws)?;
    let vocab = Vocabulary::load(&ws.vocab_path())?;
    let (params, meta) = load_checkpoint(&ws.checkpoint_path())?;
    for split in &config.eval_splits {
        let feats = build_features(&manifest, split, config)?;
        let normalized: Vec<FeatureMatrix> = feats
            .iter()
            .map(|f| frontend::apply_normalization(f, &stats))
            .collect::<Result<_>>()?;
        let decoded = decode_features(&meta.config, &params, config, &vocab, &normalized)?;
        let mut hyp_bytes = Vec::new();
        let mut nbest_bytes = Vec::new();
        for (hyp, nbest) in &decoded {
            writeln!(hyp_bytes, "{}", serde_json::to_string(hyp).unwrap()).unwrap();
            if config.decode.beam_size > 1 {
                let line = NbestLine {
                    utt_id: hyp.utt_id.clone(),
                    nbest: nbest
                        .iter()
                        .map(|h| NbestEntry {
                            tokens: h.tokens.clone(),
                            score: h.score,
                        })
                        .collect(),
                };
                writeln!(nbest_bytes, "{}", serde_json::to_string(&line).unwrap()).unwrap();
            }
        }
        let path = ws.hyps_path(split);
        std::fs::write(&path, hyp_bytes).map_err(|e| Error::io(&path, e))?;
        if config.decode.beam_size > 1 {
            let path = ws.nbest_path(split);
            std::fs::write(&path, nbest_bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

pub fn load_hyps(path: &Path) -> Result<Vec<HypLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parsed: HypLine = serde_json::from_str(line).map_err(|e| {
            Error::Decode(format!("bad hypothesis line {} in {}: {e}", i + 1, path.display()))
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub const MISSING_HYP_CLASS: &str = "<missing>";

/// Scores one split: every reference must be covered (missing hypotheses
/// count as wrong) and hypotheses for unknown utt_ids are an error.
pub fn score_report(
    refs: &[Utterance],
    hyps: &[HypLine],
    task: Task,
    report_wer: bool,
) -> Result<ScoreReport> {
    let ref_ids: std::collections::BTreeSet<&str> =
        refs.iter().map(|u| u.utt_id.as_str()).collect();
    let mut by_id: BTreeMap<&str, &HypLine> = BTreeMap::new();
    for h in hyps {
        if !ref_ids.contains(h.utt_id.as_str()) {
            return Err(Error::Metric(format!(
                "hypothesis for unknown utt_id '{}'",
                h.utt_id
            )));
        }
        by_id.insert(&h.utt_id, h);
    }

    let mut class_pairs: Vec<(String, String)> = Vec::new();
    let mut entity_pairs: Vec<(Vec<(String, String)>, Vec<(String, String)>)> = Vec::new();
    let mut wer_pairs: Vec<(String, String)> = Vec::new();
    for u in refs {
        let hyp = by_id.get(u.utt_id.as_str());
        if let Some(ref_label) = u.class_label(task) {
            let hyp_label = hyp
                .map(|h| h.class.clone())
                .unwrap_or_else(|| MISSING_HYP_CLASS.to_string());
            class_pairs.push((ref_label.to_string(), hyp_label));
        }
        if task == Task::Sf {
            let ref_entities: Vec<(String, String)> = u
                .entities
                .iter()
                .map(|e| (e.label.clone(), e.filler.clone()))
                .collect();
            let hyp_entities: Vec<(String, String)> = hyp
                .map(|h| {
                    h.entities
                        .iter()
                        .map(|e| (e.label.clone(), e.filler.clone()))
                        .collect()
                })
                .unwrap_or_default();
            entity_pairs.push((ref_entities, hyp_entities));
        }
        if report_wer {
            let hyp_text = hyp
                .and_then(|h| h.transcript.clone())
                .unwrap_or_default();
            wer_pairs.push((u.transcript.clone(), hyp_text));
        }
    }

    let (accuracy, micro_f1) = if class_pairs.is_empty() {
        (None, None)
    } else {
        (
            Some(metrics::accuracy(&class_pairs)?),
            Some(metrics::micro_f1(&class_pairs)?),
        )
    };
    Ok(ScoreReport {
        task,
        n: refs.len(),
        accuracy,
        micro_f1,
        slu_f1: (task == Task::Sf).then(|| metrics::slu_f1(&entity_pairs)),
        wer: report_wer.then(|| metrics::word_error_rate(&wer_pairs)),
    })
}

fn stage_score(ws: &Workspace, config: &ExperimentConfig) -> Result<()> {
    let manifest = load_manifest(&ws.manifest_path())?;
    let report_wer = config.multitask_asr || config.task == Task::Asr;
    for split in &config.eval_splits {
        let refs = manifest.split(split)?;
        let hyps = load_hyps(&ws.hyps_path(split))?;
        let report = score_report(refs, &hyps, config.task, report_wer)?;
        let path = ws.score_path(split);
        std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_score(path: &Path) -> Result<ScoreReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Metric(format!("bad score report: {e}")))
}

fn format_db(x: f64) -> String {
    if x.is_infinite() {
        "inf".to_string()
    } else {
        x.to_string()
    }
}

/// Accuracy of decoded hypotheses against reference class labels.
fn class_accuracy(
    refs: &[Utterance],
    hyps: &[HypLine],
    task: Task,
) -> Result<f64> {
    let report = score_report(refs, hyps, task, false)?;
    report
        .accuracy
        .ok_or_else(|| Error::Metric("task has no class labels to score".into()))
}

/// Runs the SE→SLU pipeline over the SNR grid: for each finite SNR the
/// test split is mixed with procedural noise and decoded both raw and
/// enhanced; one clean row is always emitted. Writes CSV rows
/// `snr_db,condition,intent_accuracy,n` and returns the CSV path.
pub fn sweep_snr(workdir: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let ws = Workspace::new(workdir);
    for stage in 1..=4 {
        if !ws.is_done(stage) {
            return Err(Error::StagePrecondition {
                stage: format!("{} ({})", stage, STAGE_NAMES[stage - 1]),
                msg: "sweep-snr needs stages 1-4 completed".into(),
            });
        }
    }
    if config.frontend.mode != FrontendMode::Fbank {
        return Err(Error::Config(
            "sweep-snr re-analyzes waveforms and requires the fbank frontend".into(),
        ));
    }
    if config.context_depth() > 0 {
        return Err(Error::Config(
            "sweep-snr does not support acoustic context concatenation".into(),
        ));
    }

    let manifest = load_manifest(&ws.manifest_path())?;
    let stats = load_stats(&ws)?;
    let vocab = Vocabulary::load(&ws.vocab_path())?;
    let (params, meta) = load_checkpoint(&ws.checkpoint_path())?;

    let enh_dir = ws.enhance_dir();
    std::fs::create_dir_all(&enh_dir).map_err(|e| Error::io(&enh_dir, e))?;
    let enhancer = if ws.enhancer_path().exists() {
        Enhancer::load(&ws.enhancer_path())?
    } else {
        let train_utts = manifest.split("train")?;
        let n_pairs = train_utts.len().min(config.enhance.max_train_pairs);
        let mut pairs = Vec::with_capacity(n_pairs);
        for u in train_utts.iter().take(n_pairs) {
            let clean = audio::read_wav(&u.audio_path)?.0;
            let mut rng = frontend::rng_for(config.seed, &format!("enh-noise:{}", u.utt_id), 0);
            let noise = enhance::procedural_noise(clean.len(), &mut rng);
            let snr =
                rng.random_range(config.enhance.train_snr_db[0]..=config.enhance.train_snr_db[1]);
            let noisy = enhance::mix_noise_at_snr(&clean, &noise, snr)?;
            pairs.push((noisy, clean));
        }
        let (enhancer, _) = enhance::enhancer_train(&pairs, &config.enhance, config.seed)?;
        enhancer.save(&ws.enhancer_path())?;
        enhancer
    };

    let refs = manifest.split("test")?;
    let decode_waves = |waves: &[(String, Vec<f64>)]| -> Result<Vec<HypLine>> {
        let feats: Vec<FeatureMatrix> = waves
            .iter()
            .map(|(utt_id, wave)| {
                let data = frontend::log_mel_fbank(wave, &config.frontend)?;
                frontend::apply_normalization(
                    &FeatureMatrix {
                        utt_id: utt_id.clone(),
                        data,
                    },
                    &stats,
                )
            })
            .collect::<Result<_>>()?;
        Ok(decode_features(&meta.config, &params, config, &vocab, &feats)?
            .into_iter()
            .map(|(hyp, _)| hyp)
            .collect())
    };

    let clean_waves: Vec<(String, Vec<f64>)> = refs
        .iter()
        .map(|u| Ok((u.utt_id.clone(), audio::read_wav(&u.audio_path)?.0)))
        .collect::<Result<_>>()?;

    let mut csv = String::from("snr_db,condition,intent_accuracy,n\n");
    let clean_acc = class_accuracy(refs, &decode_waves(&clean_waves)?, config.task)?;
    csv.push_str(&format!("inf,clean,{},{}\n", clean_acc, refs.len()));

    for point in &config.snr_grid_db {
        let snr = point.0;
        if snr.is_infinite() {
            continue;
        }
        let noisy_waves: Vec<(String, Vec<f64>)> = clean_waves
            .iter()
            .map(|(utt_id, clean)| {
                let mut rng = frontend::rng_for(
                    config.seed,
                    &format!("sweep-noise:{utt_id}:{}", format_db(snr)),
                    0,
                );
                let noise = enhance::procedural_noise(clean.len(), &mut rng);
                Ok((utt_id.clone(), enhance::mix_noise_at_snr(clean, &noise, snr)?))
            })
            .collect::<Result<_>>()?;
        let enhanced_waves: Vec<(String, Vec<f64>)> = noisy_waves
            .iter()
            .map(|(utt_id, noisy)| Ok((utt_id.clone(), enhance::enhance(noisy, &enhancer)?)))
            .collect::<Result<_>>()?;
        let noisy_acc = class_accuracy(refs, &decode_waves(&noisy_waves)?, config.task)?;
        let enhanced_acc = class_accuracy(refs, &decode_waves(&enhanced_waves)?, config.task)?;
        csv.push_str(&format!(
            "{},noisy,{},{}\n",
            format_db(snr),
            noisy_acc,
            refs.len()
        ));
        csv.push_str(&format!(
            "{},enhanced,{},{}\n",
            format_db(snr),
            enhanced_acc,
            refs.len()
        ));
    }
    let path = ws.sweep_csv_path();
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

//! Acoustic feature extraction: STFT, log-mel filterbank, global
//! mean/variance normalization, SpecAugment, and ingestion of externally
//! precomputed (pretrained-model) features used in place of the fbank
//! frontend.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendMode {
    Fbank,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugConfig {
    pub enabled: bool,
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_width: usize,
}

impl Default for SpecAugConfig {
    fn default() -> Self {
        SpecAugConfig {
            enabled: true,
            num_freq_masks: 2,
            max_freq_width: 10,
            num_time_masks: 2,
            max_time_width: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub mode: FrontendMode,
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    /// Analysis window length in samples (25 ms at 16 kHz).
    pub win_length: usize,
    /// Hop between frame starts in samples (10 ms at 16 kHz).
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub specaug: SpecAugConfig,
    pub external_index: Option<PathBuf>,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            mode: FrontendMode::Fbank,
            sample_rate_hz: 16_000,
            n_fft: 512,
            win_length: 400,
            hop_length: 160,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            specaug: SpecAugConfig::default(),
            external_index: None,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_length == 0 || self.hop_length == 0 || self.n_fft == 0 {
            return Err(Error::Config("frontend framing sizes must be positive".into()));
        }
        if self.win_length > self.n_fft {
            return Err(Error::Config(format!(
                "win_length {} exceeds n_fft {}",
                self.win_length, self.n_fft
            )));
        }
        let nyquist = f64::from(self.sample_rate_hz) / 2.0;
        if !(self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] must satisfy fmin < fmax <= {nyquist}",
                self.fmin, self.fmax
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if self.specaug.max_freq_width > self.n_mels {
            return Err(Error::Config(
                "specaug max_freq_width exceeds n_mels".into(),
            ));
        }
        Ok(())
    }

    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        if n_samples < self.win_length {
            None
        } else {
            Some((n_samples - self.win_length) / self.hop_length + 1)
        }
    }
}

/// Time × dim acoustic features for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utt_id: String,
    pub data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

/// Full-length DFT of a real frame; returns the n/2+1 non-redundant bins.
pub fn fft_real(frame: &[f64]) -> Vec<Complex64> {
    let n = frame.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf
}

fn hann_window(len: usize) -> Vec<f64> {
    // Periodic Hann.
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Short-time Fourier transform with a periodic Hann window. Frames start
/// at sample 0 and only complete windows are taken; no centering or padding.
pub fn stft(wave: &[f64], cfg: &FrontendConfig) -> Result<Array2<Complex64>> {
    let n_frames = cfg.frame_count(wave.len()).ok_or_else(|| {
        Error::Feature(format!(
            "waveform of {} samples shorter than one window ({})",
            wave.len(),
            cfg.win_length
        ))
    })?;
    let window = hann_window(cfg.win_length);
    let bins = cfg.n_fft / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut out = Array2::zeros((n_frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for f in 0..n_frames {
        let start = f * cfg.hop_length;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < cfg.win_length {
                wave[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out[(f, b)] = buf[b];
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank, n_mels × (n_fft/2+1), peak weight 1.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Array2<f64> {
    let bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|k| mel_to_hz(mel_lo + (mel_hi - mel_lo) * k as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    let bin_hz = f64::from(cfg.sample_rate_hz) / cfg.n_fft as f64;
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..bins {
            let f = b as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if (f - center).abs() < 1e-12 {
                1.0
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[(m, b)] = w.max(0.0);
        }
    }
    fb
}

/// Log-mel filterbank features: power spectrum through the mel filters,
/// then `log(. + log_floor)`. Shape frames × n_mels.
pub fn log_mel_fbank(wave: &[f64], cfg: &FrontendConfig) -> Result<Array2<f64>> {
    let spec = stft(wave, cfg)?;
    let fb = mel_filterbank(cfg);
    let (n_frames, bins) = spec.dim();
    let mut power = Array2::zeros((n_frames, bins));
    for f in 0..n_frames {
        for b in 0..bins {
            power[(f, b)] = spec[(f, b)].norm_sqr();
        }
    }
    let mel = power.dot(&fb.t());
    Ok(mel.mapv(|x| (x + cfg.log_floor).ln()))
}

/// Per-dimension global mean and population std over all frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_frames: u64,
}

pub const STD_FLOOR: f64 = 1e-8;

pub fn compute_global_stats<'a, I>(features: I) -> Result<GlobalStats>
where
    I: IntoIterator<Item = &'a Array2<f64>>,
{
    let mut sum: Option<Array1<f64>> = None;
    let mut sumsq: Option<Array1<f64>> = None;
    let mut n: u64 = 0;
    for f in features {
        let dim = f.ncols();
        let sum = sum.get_or_insert_with(|| Array1::zeros(dim));
        let sumsq = sumsq.get_or_insert_with(|| Array1::zeros(dim));
        if sum.len() != dim {
            return Err(Error::Feature(format!(
                "feature dim mismatch in stats: {} vs {}",
                sum.len(),
                dim
            )));
        }
        for row in f.rows() {
            for (d, &x) in row.iter().enumerate() {
                sum[d] += x;
                sumsq[d] += x * x;
            }
            n += 1;
        }
    }
    let (Some(sum), Some(sumsq)) = (sum, sumsq) else {
        return Err(Error::Feature("empty feature stream for stats".into()));
    };
    if n == 0 {
        return Err(Error::Feature("empty feature stream for stats".into()));
    }
    let nf = n as f64;
    let mean = &sum / nf;
    let var = &sumsq / nf - &mean * &mean;
    let std = var.mapv(|v| v.max(0.0).sqrt().max(STD_FLOOR));
    Ok(GlobalStats {
        mean: mean.to_vec(),
        std: std.to_vec(),
        n_frames: n,
    })
}

pub fn apply_normalization(f: &FeatureMatrix, stats: &GlobalStats) -> Result<FeatureMatrix> {
    if f.dim() != stats.mean.len() {
        return Err(Error::Feature(format!(
            "normalization dim mismatch: features {} vs stats {}",
            f.dim(),
            stats.mean.len()
        )));
    }
    let mut data = f.data.clone();
    for mut row in data.rows_mut() {
        for (d, x) in row.iter_mut().enumerate() {
            *x = (*x - stats.mean[d]) / stats.std[d];
        }
    }
    Ok(FeatureMatrix {
        utt_id: f.utt_id.clone(),
        data,
    })
}

/// Derives a per-(seed, utt, epoch) RNG so parallel processing order cannot
/// change stochastic results. FNV-1a over the inputs seeds a ChaCha stream.
pub fn rng_for(seed: u64, utt_id: &str, epoch: u64) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |byte: u8| {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x100000001b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for b in utt_id.as_bytes() {
        eat(*b);
    }
    for b in epoch.to_le_bytes() {
        eat(b);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// SpecAugment: zero out random contiguous frequency and time bands.
/// Mask widths are drawn uniformly from [0, max_width] (clamped to the
/// matrix size); time warping is not applied.
pub fn spec_augment(f: &FeatureMatrix, cfg: &SpecAugConfig, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    let mut data = f.data.clone();
    if cfg.enabled {
        apply_spec_augment(&mut data, cfg, rng);
    }
    FeatureMatrix {
        utt_id: f.utt_id.clone(),
        data,
    }
}

pub(crate) fn apply_spec_augment(data: &mut Array2<f64>, cfg: &SpecAugConfig, rng: &mut ChaCha8Rng) {
    if !cfg.enabled {
        return;
    }
    let (frames, dims) = data.dim();
    for _ in 0..cfg.num_freq_masks {
        let max_w = cfg.max_freq_width.min(dims);
        let w = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=dims - w);
        for t in 0..frames {
            for d in start..start + w {
                data[(t, d)] = 0.0;
            }
        }
    }
    for _ in 0..cfg.num_time_masks {
        let max_w = cfg.max_time_width.min(frames);
        let w = rng.random_range(0..=max_w);
        let start = rng.random_range(0..=frames - w);
        for t in start..start + w {
            for d in 0..dims {
                data[(t, d)] = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ExternalEntry {
    path: String,
    frames: usize,
    dim: usize,
}

/// Index of externally precomputed feature matrices (the pre-encoder
/// interface for frozen pretrained-model embeddings).
pub struct ExternalIndex {
    base_dir: PathBuf,
    entries: BTreeMap<String, ExternalEntry>,
}

pub fn load_external_index(path: &Path) -> Result<ExternalIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: BTreeMap<String, ExternalEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Feature(format!("bad external index {}: {e}", path.display())))?;
    Ok(ExternalIndex {
        base_dir: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        entries,
    })
}

impl ExternalIndex {
    /// Loads the declared frames × dim little-endian f32 matrix for one utterance.
    pub fn load(&self, utt_id: &str) -> Result<FeatureMatrix> {
        let entry = self.entries.get(utt_id).ok_or_else(|| {
            Error::Feature(format!("external index has no entry for utt '{utt_id}'"))
        })?;
        let rel = PathBuf::from(&entry.path);
        let path = if rel.is_absolute() {
            rel
        } else {
            self.base_dir.join(rel)
        };
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = entry.frames * entry.dim * 4;
        if bytes.len() != expected {
            return Err(Error::Feature(format!(
                "external features for '{utt_id}': file holds {} bytes, expected {expected} ({}x{})",
                bytes.len(),
                entry.frames,
                entry.dim
            )));
        }
        let mut data = Array2::zeros((entry.frames, entry.dim));
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::Feature(format!(
                    "external features for '{utt_id}': non-finite value at element {i}"
                )));
            }
            data[(i / entry.dim, i % entry.dim)] = f64::from(v);
        }
        Ok(FeatureMatrix {
            utt_id: utt_id.to_string(),
            data,
        })
    }

    pub fn contains(&self, utt_id: &str) -> bool {
        self.entries.contains_key(utt_id)
    }
}

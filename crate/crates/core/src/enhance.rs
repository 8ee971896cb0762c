//! Noisy-speech simulation and a trainable spectral-mask enhancer for the
//! speech-enhancement → SLU pipeline.
//!
//! Enhancement runs magnitude masking with the noisy phase retained:
//! STFT (Hann, 75% overlap), a per-frame feedforward mask network trained
//! against the ideal ratio mask, and COLA overlap-add reconstruction.
//! Enhancement framing (512/128) is independent of the recognizer's
//! feature framing; the SLU frontend re-analyzes the enhanced waveform.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{load_tensors, save_tensors, Parameters};
use crate::trainer::AdamState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Cap on (noisy, clean) training pairs drawn from the train split.
    pub max_train_pairs: usize,
    /// SNR range (dB) for synthesizing training mixtures.
    pub train_snr_db: [f64; 2],
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            n_fft: 512,
            hop: 128,
            hidden: 256,
            layers: 2,
            epochs: 25,
            lr: 1e-3,
            max_train_pairs: 48,
            train_snr_db: [0.0, 10.0],
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || self.hop == 0 || self.n_fft % self.hop != 0 || self.n_fft / self.hop < 2
        {
            return Err(Error::Config(
                "enhance framing must have hop dividing n_fft with at least 2x overlap".into(),
            ));
        }
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("mask net needs hidden units and layers".into()));
        }
        if self.train_snr_db[0] > self.train_snr_db[1] {
            return Err(Error::Config("train_snr_db range is reversed".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// STFT with window length n_fft and the configured hop; complete windows only.
pub fn stft_frames(wave: &[f64], cfg: &EnhanceConfig) -> Result<Array2<Complex64>> {
    if wave.len() < cfg.n_fft {
        return Err(Error::Enhance(format!(
            "waveform of {} samples shorter than the {}-point analysis window",
            wave.len(),
            cfg.n_fft
        )));
    }
    let n_frames = (wave.len() - cfg.n_fft) / cfg.hop + 1;
    let window = hann_periodic(cfg.n_fft);
    let bins = cfg.bins();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut out = Array2::zeros((n_frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for f in 0..n_frames {
        let start = f * cfg.hop;
        for i in 0..cfg.n_fft {
            buf[i] = Complex64::new(wave[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bins {
            out[(f, b)] = buf[b];
        }
    }
    Ok(out)
}

/// Inverse STFT by windowed overlap-add with per-sample COLA normalization.
/// Reconstruction is exact wherever at least one analysis frame covers the
/// sample; `out_len` truncates the synthesized signal.
pub fn istft(spec: &Array2<Complex64>, cfg: &EnhanceConfig, out_len: usize) -> Result<Vec<f64>> {
    let bins = cfg.bins();
    if spec.ncols() != bins {
        return Err(Error::Enhance(format!(
            "spectrum has {} bins, expected {bins}",
            spec.ncols()
        )));
    }
    let n_frames = spec.nrows();
    let total = (n_frames.saturating_sub(1)) * cfg.hop + cfg.n_fft;
    let window = hann_periodic(cfg.n_fft);
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(cfg.n_fft);
    let mut acc = vec![0.0; total.max(out_len)];
    let mut norm = vec![0.0; total.max(out_len)];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.n_fft];
    for f in 0..n_frames {
        for b in 0..bins {
            buf[b] = spec[(f, b)];
        }
        // Hermitian symmetry for the upper bins.
        for b in bins..cfg.n_fft {
            buf[b] = spec[(f, cfg.n_fft - b)].conj();
        }
        ifft.process(&mut buf);
        let start = f * cfg.hop;
        for i in 0..cfg.n_fft {
            let sample = buf[i].re / cfg.n_fft as f64;
            acc[start + i] += sample * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut out = vec![0.0; out_len];
    for i in 0..out_len.min(total) {
        if norm[i] > 1e-12 {
            out[i] = acc[i] / norm[i];
        }
    }
    Ok(out)
}

fn mean_power(wave: &[f64]) -> f64 {
    if wave.is_empty() {
        return 0.0;
    }
    wave.iter().map(|x| x * x).sum::<f64>() / wave.len() as f64
}

/// Tiles (or truncates) `noise` to the clean length and scales it so the
/// mixture has the requested SNR in dB. Returns clean + g * noise.
pub fn mix_noise_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    let p_clean = mean_power(clean);
    if p_clean == 0.0 {
        return Err(Error::Enhance("clean signal has zero power".into()));
    }
    if noise.iter().all(|&x| x == 0.0) {
        return Err(Error::Enhance("noise signal has zero power".into()));
    }
    let tiled: Vec<f64> = (0..clean.len()).map(|i| noise[i % noise.len()]).collect();
    let p_noise = mean_power(&tiled);
    if p_noise == 0.0 {
        return Err(Error::Enhance("noise signal has zero power".into()));
    }
    let g = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(clean
        .iter()
        .zip(tiled.iter())
        .map(|(c, n)| c + g * n)
        .collect())
}

/// |S| / (|S| + |N|) elementwise.
pub fn ideal_ratio_mask(clean_mag: &Array2<f64>, noise_mag: &Array2<f64>) -> Result<Array2<f64>> {
    if clean_mag.dim() != noise_mag.dim() {
        return Err(Error::Enhance(format!(
            "mask shape mismatch: {:?} vs {:?}",
            clean_mag.dim(),
            noise_mag.dim()
        )));
    }
    Ok(Array2::from_shape_fn(clean_mag.dim(), |idx| {
        let s = clean_mag[idx];
        let n = noise_mag[idx];
        if s + n == 0.0 {
            0.0
        } else {
            s / (s + n)
        }
    }))
}

/// Broadband Gaussian noise with a few wandering tone interferers, the
/// desk-scale stand-in for real noise corpora.
pub fn procedural_noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    // Box-Muller white noise.
    let mut i = 0;
    while i < len {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out[i] = r * theta.cos();
        if i + 1 < len {
            out[i + 1] = r * theta.sin();
        }
        i += 2;
    }
    // Two interferer tones, re-drawn every 200 ms.
    let segment = 3200;
    for tone in 0..2 {
        let mut pos = 0;
        while pos < len {
            let freq = rng.random_range(300.0..3000.0);
            let amp = rng.random_range(0.5..1.0);
            let end = (pos + segment).min(len);
            for (k, slot) in out[pos..end].iter_mut().enumerate() {
                let t = (pos + k) as f64 / 16000.0;
                *slot += amp * (2.0 * std::f64::consts::PI * freq * t + tone as f64).sin();
            }
            pos = end;
        }
    }
    out
}

const MAG_FLOOR: f64 = 1e-8;

fn log_mag_features(spec: &Array2<Complex64>) -> Array2<f64> {
    Array2::from_shape_fn(spec.dim(), |idx| (spec[idx].norm() + MAG_FLOOR).ln())
}

/// Per-bin standardization of the log-magnitude inputs; the mean and std
/// live in the enhancer's parameter set (`mask.in_mean`, `mask.in_std`).
fn standardize(features: &Array2<f64>, mean: &Array2<f64>, std: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn(features.dim(), |(t, b)| {
        (features[(t, b)] - mean[(0, b)]) / std[(0, b)]
    })
}

fn magnitudes(spec: &Array2<Complex64>) -> Array2<f64> {
    Array2::from_shape_fn(spec.dim(), |idx| spec[idx].norm())
}

/// Per-frame feedforward mask estimator: log-magnitude in, sigmoid mask out.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub cfg: EnhanceConfig,
    pub params: Parameters,
}

fn init_mask_net(cfg: &EnhanceConfig, seed: u64) -> Parameters {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Parameters::new(seed);
    let bins = cfg.bins();
    let mut dims = vec![bins];
    dims.extend(std::iter::repeat(cfg.hidden).take(cfg.layers));
    dims.push(bins);
    let out_layer = dims.len() - 2;
    for l in 0..dims.len() - 1 {
        let (rows, cols) = (dims[l], dims[l + 1]);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        params.set(&format!("mask.{l}.w"), w);
        // Start the sigmoid output near the small-mask prior of mostly-noise bins.
        let bias = if l == out_layer { -2.0 } else { 0.0 };
        params.set(&format!("mask.{l}.b"), Array2::from_elem((1, cols), bias));
    }
    params.set("mask.in_mean", Array2::zeros((1, bins)));
    params.set("mask.in_std", Array2::from_elem((1, bins), 1.0));
    params
}

fn mask_net_forward(
    g: &mut Graph,
    params: &Parameters,
    cfg: &EnhanceConfig,
    features: &Array2<f64>,
) -> crate::autodiff::VarId {
    let mut x = g.input(features.clone());
    let n_layers = cfg.layers + 1;
    for l in 0..n_layers {
        let w = g.leaf(&format!("mask.{l}.w"), params.get(&format!("mask.{l}.w")).clone());
        let b = g.leaf(&format!("mask.{l}.b"), params.get(&format!("mask.{l}.b")).clone());
        x = g.matmul(x, w);
        x = g.add_row(x, b);
        x = if l + 1 == n_layers { g.sigmoid_op(x) } else { g.relu(x) };
    }
    x
}

/// Trains the mask network with MSE against the ideal ratio mask of each
/// (noisy, clean) pair. Returns the enhancer and the mean loss per epoch.
pub fn enhancer_train(
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &EnhanceConfig,
    seed: u64,
) -> Result<(Enhancer, Vec<f64>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Enhance("no training pairs".into()));
    }
    // Precompute per-pair features and IRM targets.
    let mut feats = Vec::with_capacity(pairs.len());
    for (noisy, clean) in pairs {
        if noisy.len() != clean.len() {
            return Err(Error::Enhance("pair length mismatch".into()));
        }
        let noise: Vec<f64> = noisy.iter().zip(clean.iter()).map(|(n, c)| n - c).collect();
        let spec_noisy = stft_frames(noisy, cfg)?;
        let spec_clean = stft_frames(clean, cfg)?;
        let spec_noise = stft_frames(&noise, cfg)?;
        let irm = ideal_ratio_mask(&magnitudes(&spec_clean), &magnitudes(&spec_noise))?;
        feats.push((log_mag_features(&spec_noisy), irm));
    }

    let mut params = init_mask_net(cfg, seed);
    // Standardize inputs per bin over the training set.
    let stats = crate::frontend::compute_global_stats(feats.iter().map(|(f, _)| f))
        .map_err(|e| Error::Enhance(format!("input stats failed: {e}")))?;
    let bins = cfg.bins();
    let mean = Array2::from_shape_fn((1, bins), |(_, b)| stats.mean[b]);
    let std = Array2::from_shape_fn((1, bins), |(_, b)| stats.std[b]);
    for (f, _) in feats.iter_mut() {
        *f = standardize(f, &mean, &std);
    }
    params.set("mask.in_mean", mean);
    params.set("mask.in_std", std);
    let mut opt = AdamState::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..feats.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = crate::frontend::rng_for(seed, "enhancer-shuffle", epoch as u64);
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let (x, irm) = &feats[i];
            let mut g = Graph::new();
            let pred = mask_net_forward(&mut g, &params, cfg, x);
            let loss = g.mse(pred, irm);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Enhance(format!("non-finite loss in epoch {epoch}")));
            }
            total += value;
            let grads = g.backward(loss);
            opt.apply(&mut params, &grads, cfg.lr);
        }
        epoch_losses.push(total / feats.len() as f64);
    }
    Ok((
        Enhancer {
            cfg: cfg.clone(),
            params,
        },
        epoch_losses,
    ))
}

fn reflect_pad(wave: &[f64], pad: usize) -> Vec<f64> {
    let len = wave.len();
    debug_assert!(len >= 2);
    let bounce = |idx: isize| -> f64 {
        // Reflect without repeating the edge sample, period 2(len-1).
        let period = 2 * (len as isize - 1);
        let mut k = idx.rem_euclid(period);
        if k >= len as isize {
            k = period - k;
        }
        wave[k as usize]
    };
    (0..len + 2 * pad)
        .map(|i| bounce(i as isize - pad as isize))
        .collect()
}

impl Enhancer {
    /// Predicted mask for a block of log-magnitude features (eval mode).
    fn predict_mask(&self, features: &Array2<f64>) -> Array2<f64> {
        let standardized = standardize(
            features,
            self.params.get("mask.in_mean"),
            self.params.get("mask.in_std"),
        );
        let mut g = Graph::new();
        let out = mask_net_forward(&mut g, &self.params, &self.cfg, &standardized);
        g.value(out).clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_value(&self.cfg)
            .map_err(|e| Error::Enhance(format!("cannot serialize enhancer config: {e}")))?;
        save_tensors(path, meta, self.params.iter())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = load_tensors(path)?;
        let cfg: EnhanceConfig = serde_json::from_value(meta)
            .map_err(|e| Error::Enhance(format!("bad enhancer meta: {e}")))?;
        Ok(Enhancer {
            cfg,
            params: Parameters::from_tensors(tensors, 0),
        })
    }
}

/// Applies the trained spectral mask: analysis over a reflection-padded
/// signal, predicted mask times the noisy magnitude with the noisy phase,
/// then overlap-add back to exactly the input length.
pub fn enhance(noisy: &[f64], enhancer: &Enhancer) -> Result<Vec<f64>> {
    let cfg = &enhancer.cfg;
    if noisy.len() < 2 {
        return Ok(noisy.to_vec());
    }
    let pad = cfg.n_fft;
    let padded = reflect_pad(noisy, pad);
    let spec = stft_frames(&padded, cfg)?;
    let mask = enhancer.predict_mask(&log_mag_features(&spec));
    let masked = Array2::from_shape_fn(spec.dim(), |idx| spec[idx] * mask[idx]);
    let full = istft(&masked, cfg, padded.len())?;
    Ok(full[pad..pad + noisy.len()].to_vec())
}

/// 10*log10(P_signal / P_error) of an enhanced signal against the known clean.
pub fn output_snr_db(clean: &[f64], processed: &[f64]) -> f64 {
    let p_signal = mean_power(clean);
    let err: Vec<f64> = clean
        .iter()
        .zip(processed.iter())
        .map(|(c, p)| p - c)
        .collect();
    let p_err = mean_power(&err);
    if p_err == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (p_signal / p_err).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg() -> EnhanceConfig {
        EnhanceConfig::default()
    }

    fn tone(freq: f64, len: usize, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * freq * n as f64 / 16000.0).sin())
            .collect()
    }

    #[test]
    fn mix_equal_powers_at_zero_db_is_unit_gain() {
        // Both tones span whole periods over 4000 samples, so powers match.
        let clean = tone(440.0, 4000, 0.5);
        let noise = tone(1204.0, 4000, 0.5);
        let mixed = mix_noise_at_snr(&clean, &noise, 0.0).unwrap();
        for i in 0..clean.len() {
            assert!((mixed[i] - clean[i] - noise[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn mix_twenty_db_gain_is_tenth() {
        let clean = tone(440.0, 4000, 0.5);
        let noise = tone(1204.0, 4000, 0.5);
        let mixed = mix_noise_at_snr(&clean, &noise, 20.0).unwrap();
        for i in 0..clean.len() {
            assert!((mixed[i] - clean[i] - 0.1 * noise[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn measured_snr_matches_requested() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = tone(620.0, 7000, 0.4);
        let noise = procedural_noise(3000, &mut rng); // shorter: exercises tiling
        for &snr in &[-5.0, 0.0, 7.5, 20.0] {
            let mixed = mix_noise_at_snr(&clean, &noise, snr).unwrap();
            let added: Vec<f64> = mixed.iter().zip(clean.iter()).map(|(m, c)| m - c).collect();
            let measured = 10.0 * (mean_power(&clean) / mean_power(&added)).log10();
            assert!((measured - snr).abs() < 1e-9, "requested {snr}, got {measured}");
        }
    }

    #[test]
    fn mix_scale_consistency() {
        let clean = tone(440.0, 4000, 0.5);
        let noise = tone(991.0, 4000, 0.3);
        let m1 = mix_noise_at_snr(&clean, &noise, 10.0).unwrap();
        let clean2: Vec<f64> = clean.iter().map(|x| x * 3.0).collect();
        let noise2: Vec<f64> = noise.iter().map(|x| x * 3.0).collect();
        let m2 = mix_noise_at_snr(&clean2, &noise2, 10.0).unwrap();
        for i in 0..m1.len() {
            assert!((m2[i] - 3.0 * m1[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn silent_inputs_are_errors() {
        let clean = tone(440.0, 2000, 0.5);
        assert!(mix_noise_at_snr(&[0.0; 2000], &clean, 0.0).is_err());
        assert!(mix_noise_at_snr(&clean, &[0.0; 2000], 0.0).is_err());
    }

    #[test]
    fn istft_roundtrip_interior_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let wave: Vec<f64> = (0..16000).map(|_| rng.random_range(-0.8..0.8)).collect();
        let c = cfg();
        let spec = stft_frames(&wave, &c).unwrap();
        let back = istft(&spec, &c, wave.len()).unwrap();
        // Sample 0 carries zero window weight (periodic Hann) and samples
        // past the last complete window are uncovered; everything else is
        // reconstructed exactly.
        let covered = (spec.nrows() - 1) * c.hop + c.n_fft;
        for i in 1..covered.min(wave.len()) {
            assert!(
                (wave[i] - back[i]).abs() < 1e-6,
                "sample {i}: {} vs {}",
                wave[i],
                back[i]
            );
        }
    }

    #[test]
    fn istft_zero_spectrum_is_silence() {
        let c = cfg();
        let spec = Array2::from_elem((10, c.bins()), Complex64::new(0.0, 0.0));
        let out = istft(&spec, &c, 2000).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn istft_linearity() {
        let c = cfg();
        let a = stft_frames(&tone(500.0, 3000, 0.4), &c).unwrap();
        let b = stft_frames(&tone(1200.0, 3000, 0.3), &c).unwrap();
        let sum = &a + &b;
        let ia = istft(&a, &c, 3000).unwrap();
        let ib = istft(&b, &c, 3000).unwrap();
        let isum = istft(&sum, &c, 3000).unwrap();
        for i in 0..3000 {
            assert!((isum[i] - ia[i] - ib[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn irm_edge_cases() {
        let s = Array2::from_elem((2, 3), 2.0);
        let zero = Array2::zeros((2, 3));
        let ones = ideal_ratio_mask(&s, &zero).unwrap();
        assert!(ones.iter().all(|&x| x == 1.0));
        let zeros = ideal_ratio_mask(&zero, &s).unwrap();
        assert!(zeros.iter().all(|&x| x == 0.0));
        let half = ideal_ratio_mask(&s, &s).unwrap();
        assert!(half.iter().all(|&x| (x - 0.5).abs() < 1e-12));
        assert!(ideal_ratio_mask(&s, &Array2::zeros((3, 2))).is_err());
    }

    fn stub_enhancer(bias: f64) -> Enhancer {
        // Mask net with zero weights and a large output bias: sigmoid
        // saturates to an all-ones or all-zeros mask.
        let c = cfg();
        let mut params = init_mask_net(&c, 0);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let dim = params.get(&name).dim();
            params.set(&name, Array2::zeros(dim));
        }
        let bins = c.bins();
        params.set("mask.in_std", Array2::from_elem((1, bins), 1.0));
        params.set(&format!("mask.{}.b", c.layers), Array2::from_elem((1, bins), bias));
        Enhancer { cfg: c, params }
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let noisy = tone(700.0, 9000, 0.4);
        let out = enhance(&noisy, &stub_enhancer(40.0)).unwrap();
        assert_eq!(out.len(), noisy.len());
        for i in 0..noisy.len() {
            assert!((out[i] - noisy[i]).abs() < 1e-5, "sample {i}");
        }
    }

    #[test]
    fn all_zeros_mask_silences() {
        let noisy = tone(700.0, 9000, 0.4);
        let out = enhance(&noisy, &stub_enhancer(-40.0)).unwrap();
        let p_in = mean_power(&noisy);
        let p_out = mean_power(&out);
        assert!(p_out < 1e-8 * p_in, "residual energy {p_out} vs input {p_in}");
    }

    // Tone-pair signals on the synthetic corpus's frequency grid.
    fn grid_freq(k: usize) -> f64 {
        300.0 + (3000.0 - 300.0) * k as f64 / 11.0
    }

    fn grid_clean(rng: &mut ChaCha8Rng, words: usize) -> Vec<f64> {
        let mut clean = Vec::new();
        for _ in 0..words * 2 {
            let f = grid_freq(rng.random_range(0..12));
            let amp = 0.25 * rng.random_range(0.98..1.02);
            clean.extend(tone(f, 1600, amp));
        }
        clean
    }

    fn training_pairs(n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let words = rng.random_range(1..3);
                let clean = grid_clean(&mut rng, words);
                let noise = procedural_noise(clean.len(), &mut rng);
                let snr = rng.random_range(0.0..10.0);
                let noisy = mix_noise_at_snr(&clean, &noise, snr).unwrap();
                (noisy, clean)
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss() {
        let c = EnhanceConfig {
            hidden: 64,
            epochs: 4,
            ..cfg()
        };
        let pairs = training_pairs(12, 3);
        let (_, losses) = enhancer_train(&pairs, &c, 9).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let c = EnhanceConfig {
            epochs: 0,
            ..cfg()
        };
        let pairs = training_pairs(2, 4);
        let (enh, losses) = enhancer_train(&pairs, &c, 11).unwrap();
        assert!(losses.is_empty());
        // Network weights untouched; only the input stats are data-derived.
        let init = init_mask_net(&c, 11);
        for l in 0..=c.layers {
            for part in ["w", "b"] {
                let name = format!("mask.{l}.{part}");
                assert_eq!(enh.params.get(&name), init.get(&name), "{name}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let c = EnhanceConfig {
            hidden: 32,
            epochs: 2,
            ..cfg()
        };
        let pairs = training_pairs(6, 5);
        let (a, _) = enhancer_train(&pairs, &c, 13).unwrap();
        let (b, _) = enhancer_train(&pairs, &c, 13).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn trained_enhancer_improves_snr_by_3db() {
        let c = EnhanceConfig {
            epochs: 12,
            ..cfg()
        };
        let pairs = training_pairs(24, 6);
        let (enh, _) = enhancer_train(&pairs, &c, 17).unwrap();
        // Held-out tone sequence + noise at 0 dB.
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        let clean = grid_clean(&mut rng, 3);
        let noise = procedural_noise(clean.len(), &mut rng);
        let noisy = mix_noise_at_snr(&clean, &noise, 0.0).unwrap();
        let enhanced = enhance(&noisy, &enh).unwrap();
        let before = output_snr_db(&clean, &noisy);
        let after = output_snr_db(&clean, &enhanced);
        assert!(
            after - before >= 3.0,
            "SNR went from {before:.2} dB to {after:.2} dB"
        );
        assert!(enhanced.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn enhancer_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enh.bin");
        let c = EnhanceConfig {
            hidden: 16,
            epochs: 1,
            ..cfg()
        };
        let pairs = training_pairs(2, 7);
        let (enh, _) = enhancer_train(&pairs, &c, 19).unwrap();
        enh.save(&path).unwrap();
        let loaded = Enhancer::load(&path).unwrap();
        assert_eq!(loaded.cfg, enh.cfg);
        // f32 container quantization.
        for (name, t) in enh.params.iter() {
            for (a, b) in t.iter().zip(loaded.params.get(name).iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

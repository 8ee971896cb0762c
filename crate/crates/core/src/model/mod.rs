//! The hybrid CTC/attention network: convolutional subsampling, a
//! transformer or conformer encoder, an optional post-encoder NLU
//! self-attention stack, an autoregressive transformer decoder, and a
//! CTC output head.

mod checkpoint;
mod net;

pub use checkpoint::{load_checkpoint, load_tensors, save_checkpoint, save_tensors, CheckpointMeta};
pub use net::{sinusoidal_positional_encoding, EncodeOut, EncodedUtt, NetBuilder, SluModel};

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderType {
    Transformer,
    Conformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostEncoderConfig {
    pub enabled: bool,
    /// Number of NLU self-attention blocks (M).
    pub blocks: usize,
    pub nlu_dim: usize,
    /// Frozen pretrained weights; randomly initialized and trainable when absent.
    pub weights_path: Option<PathBuf>,
}

impl Default for PostEncoderConfig {
    fn default() -> Self {
        PostEncoderConfig {
            enabled: false,
            blocks: 2,
            nlu_dim: 256,
            weights_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub encoder_type: EncoderType,
    pub ff_dim: usize,
    /// Depthwise convolution kernel size for the conformer module.
    pub conv_kernel: usize,
    pub dropout: f64,
    pub post_encoder: PostEncoderConfig,
    /// Filled from the vocabulary by the pipeline when 0.
    pub vocab_size: usize,
    /// Filled from the feature dimension by the pipeline when 0.
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            heads: 4,
            encoder_blocks: 12,
            decoder_blocks: 6,
            encoder_type: EncoderType::Transformer,
            ff_dim: 1024,
            conv_kernel: 15,
            dropout: 0.1,
            post_encoder: PostEncoderConfig::default(),
            vocab_size: 0,
            input_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.ff_dim == 0 || self.heads == 0 {
            return Err(Error::Config("model dims must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.conv_kernel == 0 || self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if self.post_encoder.enabled {
            if self.post_encoder.nlu_dim == 0 {
                return Err(Error::Config("nlu_dim must be positive".into()));
            }
            if self.post_encoder.nlu_dim % self.heads != 0 {
                return Err(Error::Config(format!(
                    "nlu_dim {} not divisible by heads {}",
                    self.post_encoder.nlu_dim, self.heads
                )));
            }
        }
        Ok(())
    }

    fn validate_for_init(&self) -> Result<()> {
        self.validate()?;
        if self.vocab_size == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "vocab_size and input_dim must be set before init".into(),
            ));
        }
        Ok(())
    }
}

/// Named weight tensors of a model, plus the init seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    tensors: BTreeMap<String, Array2<f64>>,
    frozen: BTreeSet<String>,
    pub seed: u64,
}

impl Parameters {
    pub fn new(seed: u64) -> Self {
        Parameters {
            tensors: BTreeMap::new(),
            frozen: BTreeSet::new(),
            seed,
        }
    }

    pub fn from_tensors(tensors: BTreeMap<String, Array2<f64>>, seed: u64) -> Self {
        Parameters {
            tensors,
            frozen: BTreeSet::new(),
            seed,
        }
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor '{name}'"))
    }

    pub fn try_get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing parameter tensor '{name}'")))
    }

    pub fn set(&mut self, name: &str, value: Array2<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter tensor '{name}'"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(|t| t.nrows() * t.ncols()).sum()
    }

    pub fn freeze_prefix(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .tensors
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        self.frozen.extend(names);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

struct InitDraw {
    rng: ChaCha8Rng,
    out: BTreeMap<String, Array2<f64>>,
}

impl InitDraw {
    /// Glorot-uniform matrix.
    fn weight(&mut self, name: &str, rows: usize, cols: usize) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let m = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-limit..limit));
        self.out.insert(name.to_string(), m);
    }

    fn zeros(&mut self, name: &str, cols: usize) {
        self.out.insert(name.to_string(), Array2::zeros((1, cols)));
    }

    fn ones(&mut self, name: &str, cols: usize) {
        self.out
            .insert(name.to_string(), Array2::from_elem((1, cols), 1.0));
    }

    fn layer_norm(&mut self, prefix: &str, dim: usize) {
        self.ones(&format!("{prefix}.g"), dim);
        self.zeros(&format!("{prefix}.b"), dim);
    }

    fn linear(&mut self, prefix: &str, rows: usize, cols: usize) {
        self.weight(&format!("{prefix}.w"), rows, cols);
        self.zeros(&format!("{prefix}.b"), cols);
    }

    fn attention(&mut self, prefix: &str, dim: usize) {
        for part in ["wq", "wk", "wv", "wo"] {
            self.weight(&format!("{prefix}.{part}"), dim, dim);
        }
        for part in ["bq", "bk", "bv", "bo"] {
            self.zeros(&format!("{prefix}.{part}"), dim);
        }
    }

    fn feed_forward(&mut self, prefix: &str, dim: usize, ff: usize) {
        self.weight(&format!("{prefix}.w1"), dim, ff);
        self.zeros(&format!("{prefix}.b1"), ff);
        self.weight(&format!("{prefix}.w2"), ff, dim);
        self.zeros(&format!("{prefix}.b2"), dim);
    }
}

/// Initializes all weight tensors for a config; fully determined by the seed.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<Parameters> {
    cfg.validate_for_init()?;
    let mut draw = InitDraw {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: BTreeMap::new(),
    };
    let d = cfg.d_model;

    draw.linear("sub.conv1", 3 * cfg.input_dim, d);
    draw.linear("sub.conv2", 3 * d, d);

    for i in 0..cfg.encoder_blocks {
        match cfg.encoder_type {
            EncoderType::Transformer => {
                draw.layer_norm(&format!("enc.{i}.ln1"), d);
                draw.attention(&format!("enc.{i}.attn"), d);
                draw.layer_norm(&format!("enc.{i}.ln2"), d);
                draw.feed_forward(&format!("enc.{i}.ff"), d, cfg.ff_dim);
            }
            EncoderType::Conformer => {
                draw.layer_norm(&format!("enc.{i}.ff1.ln"), d);
                draw.feed_forward(&format!("enc.{i}.ff1"), d, cfg.ff_dim);
                draw.layer_norm(&format!("enc.{i}.mha.ln"), d);
                draw.attention(&format!("enc.{i}.attn"), d);
                draw.layer_norm(&format!("enc.{i}.conv.ln"), d);
                draw.linear(&format!("enc.{i}.conv.pw1"), d, 2 * d);
                let limit = (3.0 / cfg.conv_kernel as f64).sqrt();
                let kernel = Array2::from_shape_fn((cfg.conv_kernel, d), |_| {
                    draw.rng.random_range(-limit..limit)
                });
                draw.out.insert(format!("enc.{i}.conv.dw.w"), kernel);
                draw.zeros(&format!("enc.{i}.conv.dw.b"), d);
                draw.layer_norm(&format!("enc.{i}.conv.norm"), d);
                draw.linear(&format!("enc.{i}.conv.pw2"), d, d);
                draw.layer_norm(&format!("enc.{i}.ff2.ln"), d);
                draw.feed_forward(&format!("enc.{i}.ff2"), d, cfg.ff_dim);
                draw.layer_norm(&format!("enc.{i}.final_ln"), d);
            }
        }
    }
    if cfg.encoder_blocks > 0 {
        draw.layer_norm("enc.final_ln", d);
    }

    let mut frozen_prefix = None;
    if cfg.post_encoder.enabled {
        let nd = cfg.post_encoder.nlu_dim;
        draw.linear("post.down", d, nd);
        for i in 0..cfg.post_encoder.blocks {
            draw.layer_norm(&format!("post.{i}.ln1"), nd);
            draw.attention(&format!("post.{i}.attn"), nd);
            draw.layer_norm(&format!("post.{i}.ln2"), nd);
            draw.feed_forward(&format!("post.{i}.ff"), nd, 4 * nd);
        }
        if cfg.post_encoder.blocks > 0 {
            draw.layer_norm("post.final_ln", nd);
        }
        draw.linear("post.up", nd, d);
        if cfg.post_encoder.weights_path.is_some() {
            frozen_prefix = Some("post.");
        }
    }

    draw.weight("dec.embed", cfg.vocab_size, d);
    for i in 0..cfg.decoder_blocks {
        draw.layer_norm(&format!("dec.{i}.ln1"), d);
        draw.attention(&format!("dec.{i}.self_attn"), d);
        draw.layer_norm(&format!("dec.{i}.ln2"), d);
        draw.attention(&format!("dec.{i}.cross_attn"), d);
        draw.layer_norm(&format!("dec.{i}.ln3"), d);
        draw.feed_forward(&format!("dec.{i}.ff"), d, cfg.ff_dim);
    }
    if cfg.decoder_blocks > 0 {
        draw.layer_norm("dec.final_ln", d);
    }
    draw.linear("dec.out", d, cfg.vocab_size);
    draw.linear("ctc", d, cfg.vocab_size);

    let mut params = Parameters::from_tensors(draw.out, seed);

    // Pretrained post-encoder weights replace the random ones and freeze.
    if let Some(path) = &cfg.post_encoder.weights_path {
        let (_, tensors) = load_tensors(path)?;
        for (name, value) in tensors {
            if !params.contains(&name) {
                return Err(Error::Model(format!(
                    "post-encoder weight file has unexpected tensor '{name}'"
                )));
            }
            let expected = params.get(&name).dim();
            if value.dim() != expected {
                return Err(Error::Model(format!(
                    "post-encoder tensor '{name}' has shape {:?}, expected {:?}",
                    value.dim(),
                    expected
                )));
            }
            params.set(&name, value);
        }
    }
    if let Some(prefix) = frozen_prefix {
        params.freeze_prefix(prefix);
    }
    Ok(params)
}

/// Output length of one stride-2 kernel-3 valid convolution.
fn conv_out_len(t: usize) -> Option<usize> {
    if t < 3 {
        None
    } else {
        Some((t - 3) / 2 + 1)
    }
}

/// Frame count after the two-layer subsampling stack; `None` if the input
/// is too short (needs at least 7 frames).
pub fn subsampled_len(t: usize) -> Option<usize> {
    conv_out_len(t).and_then(conv_out_len)
}

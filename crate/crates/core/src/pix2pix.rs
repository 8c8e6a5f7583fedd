//! Conditional GAN mapping 3-channel camera-view inputs to visibility maps:
//! a U-Net generator, a PatchGAN discriminator, their losses, the training
//! loop and inference.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nn::checkpoint::{self, Entry};
use nn::{AdamConfig, NnError, ParamStore, Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TrainingSample;
use crate::lidar_image::VisibilityMap;
use crate::raster::Image3;

pub const IN_CHANNELS: usize = 3;
pub const OUT_CHANNELS: usize = 1;
pub const KERNEL: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPSILON: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
/// Channel multiplier cap: widths grow as `base * min(2^i, 8)`.
pub const MAX_WIDTH_FACTOR: usize = 8;
const META_INPUT_SIZE: &str = "meta.input_size";

#[derive(Debug, Error)]
pub enum Pix2PixError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input is {width}x{height}, the network expects {expected}x{expected}")]
    SizeMismatch { expected: u32, width: u32, height: u32 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss or parameters at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint does not describe a model: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Pix2PixError> = std::result::Result<T, E>;

fn width(base: usize, level: usize) -> usize {
    base * (1usize << level.min(3)).min(MAX_WIDTH_FACTOR)
}

fn invalid(msg: impl Into<String>) -> Pix2PixError {
    Pix2PixError::InvalidConfig(msg.into())
}

/// Output side length of a 4x4 convolution.
fn conv_out(size: usize, stride: usize, padding: usize) -> Option<usize> {
    (size + 2 * padding).checked_sub(KERNEL).map(|s| s / stride + 1)
}

/// One convolution (or transposed convolution), optionally followed by
/// batch norm. Parameters are `weight`, then `bias` or `gamma, beta`.
#[derive(Clone, Debug, PartialEq)]
struct Layer {
    name: String,
    in_ch: usize,
    out_ch: usize,
    transpose: bool,
    stride: usize,
    padding: usize,
    norm: bool,
}

impl Layer {
    fn conv(name: String, in_ch: usize, out_ch: usize, stride: usize, norm: bool) -> Self {
        Self {
            name,
            in_ch,
            out_ch,
            transpose: false,
            stride,
            padding: 1,
            norm,
        }
    }

    fn up(name: String, in_ch: usize, out_ch: usize, norm: bool) -> Self {
        Self {
            name,
            in_ch,
            out_ch,
            transpose: true,
            stride: 2,
            padding: 1,
            norm,
        }
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut dyn RngCore) {
        let shape = if self.transpose {
            [self.in_ch, self.out_ch, KERNEL, KERNEL]
        } else {
            [self.out_ch, self.in_ch, KERNEL, KERNEL]
        };
        store.push(format!("{}.weight", self.name), nn::init::normal(shape, 0.0, INIT_STD, rng));
        let per_channel = [1, self.out_ch, 1, 1];
        if self.norm {
            store.push(format!("{}.gamma", self.name), nn::init::normal(per_channel, 1.0, INIT_STD, rng));
            store.push(format!("{}.beta", self.name), Tensor::zeros(per_channel));
        } else {
            store.push(format!("{}.bias", self.name), Tensor::zeros(per_channel));
        }
    }

    fn apply<T: Real>(&self, tape: &mut Tape<T>, params: &mut impl Iterator<Item = Var>, x: Var) -> Result<Var> {
        let mut next = || params.next().ok_or_else(|| invalid("too few parameters for the model"));
        let weight = next()?;
        if self.norm {
            let (gamma, beta) = (next()?, next()?);
            let y = if self.transpose {
                tape.conv_transpose2d(x, weight, None, self.stride, self.padding)?
            } else {
                tape.conv2d(x, weight, None, self.stride, self.padding)?
            };
            Ok(tape.batch_norm(y, gamma, beta, T::lit(BN_EPSILON))?)
        } else {
            let bias = Some(next()?);
            Ok(if self.transpose {
                tape.conv_transpose2d(x, weight, bias, self.stride, self.padding)?
            } else {
                tape.conv2d(x, weight, bias, self.stride, self.padding)?
            })
        }
    }
}

fn init_layers<'a, T: Real>(layers: impl IntoIterator<Item = &'a Layer>, rng: &mut dyn RngCore) -> ParamStore<T> {
    let mut store = ParamStore::new();
    for l in layers {
        l.init(&mut store, rng);
    }
    store
}

fn check_param_count(params: &[Var], expected: usize) -> Result<()> {
    if params.len() != expected {
        return Err(invalid(format!("{} parameters bound, model has {expected}", params.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    /// Square input side in pixels; a power of two.
    pub input_size: u32,
    pub base_channels: usize,
    /// Number of down (and up) blocks.
    pub depth: usize,
    /// Hidden decoder blocks, counted from the bottleneck, that use dropout.
    pub dropout_blocks: usize,
    pub dropout_rate: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            base_channels: 64,
            depth: 8,
            dropout_blocks: 3,
            dropout_rate: 0.5,
        }
    }
}

impl UNetConfig {
    /// 64x64 input, 8 base channels, 4 levels.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            base_channels: 8,
            depth: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(invalid("base_channels must be at least 1"));
        }
        if self.depth == 0 || self.depth > 31 {
            return Err(invalid(format!("depth {} out of range", self.depth)));
        }
        if !self.input_size.is_power_of_two() {
            return Err(invalid(format!("input_size {} is not a power of two", self.input_size)));
        }
        if (self.input_size as u64) < 1u64 << self.depth {
            return Err(invalid(format!(
                "input_size {} is smaller than 2^{} = {}",
                self.input_size,
                self.depth,
                1u64 << self.depth
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// U-Net generator. Encoder block `i` is a stride-2 conv to
/// `base * min(2^i, 8)` channels, batch norm (except the outermost and the
/// bottleneck), and leaky ReLU. Decoder blocks mirror it with transposed
/// convs, batch norm, optional dropout, ReLU and skip concatenation; the last
/// block emits one channel through tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    cfg: UNetConfig,
    encoder: Vec<Layer>,
    decoder: Vec<Layer>,
}

impl UNet {
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, b) = (cfg.depth, cfg.base_channels);
        let encoder = (0..d)
            .map(|i| {
                let in_ch = if i == 0 { IN_CHANNELS } else { width(b, i - 1) };
                Layer::conv(format!("enc{i}"), in_ch, width(b, i), 2, i != 0 && i != d - 1)
            })
            .collect();
        let decoder = (0..d)
            .map(|j| {
                let in_ch = if j == 0 { width(b, d - 1) } else { 2 * width(b, d - 1 - j) };
                if j + 1 < d {
                    Layer::up(format!("dec{j}"), in_ch, width(b, d - 2 - j), true)
                } else {
                    Layer::up(format!("dec{j}"), in_ch, OUT_CHANNELS, false)
                }
            })
            .collect();
        Ok(Self { cfg, encoder, decoder })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn init_params<T: Real>(&self, rng: &mut dyn RngCore) -> ParamStore<T> {
        init_layers(self.encoder.iter().chain(&self.decoder), rng)
    }

    fn param_count(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|l| if l.norm { 3 } else { 2 }).sum()
    }

    /// `x` is `(n, 3, s, s)` with `s` divisible by `2^depth`; the result is
    /// `(n, 1, s, s)` in `(-1, 1)`. Dropout is applied only when `dropout`
    /// supplies a random source.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        mut dropout: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        check_param_count(params, self.param_count())?;
        let mut it = params.iter().copied();
        let slope = T::lit(LEAKY_SLOPE);
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for layer in &self.encoder {
            h = layer.apply(tape, &mut it, h)?;
            h = tape.leaky_relu(h, slope);
            skips.push(h);
        }
        let mut h = skips.pop().expect("depth >= 1");
        let last = self.decoder.len() - 1;
        for (j, layer) in self.decoder.iter().enumerate() {
            if j > 0 {
                let skip = skips.pop().expect("one skip per level");
                h = tape.concat(h, skip)?;
            }
            h = layer.apply(tape, &mut it, h)?;
            if j < last {
                if j < self.cfg.dropout_blocks {
                    if let Some(rng) = dropout.as_deref_mut() {
                        h = tape.dropout(h, self.cfg.dropout_rate, rng);
                    }
                }
                h = tape.relu(h);
            } else {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGanConfig {
    /// Number of stride-2 blocks.
    pub layers: usize,
    pub base_channels: usize,
}

impl Default for PatchGanConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            base_channels: 64,
        }
    }
}

impl PatchGanConfig {
    pub fn desk() -> Self {
        Self {
            layers: 3,
            base_channels: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.layers > 31 {
            return Err(invalid(format!("discriminator layers {} out of range", self.layers)));
        }
        if self.base_channels == 0 {
            return Err(invalid("discriminator base_channels must be at least 1"));
        }
        Ok(())
    }

    /// Side of the logit grid for a square input, or `None` when the input
    /// is too small for the stack (including batch-norm layers that would
    /// see a single value per channel).
    pub fn logit_size(&self, input: usize) -> Option<usize> {
        let mut s = input;
        for i in 0..self.layers {
            s = conv_out(s, 2, 1).filter(|&s| s >= 1)?;
            if i > 0 && s * s < 2 {
                return None;
            }
        }
        s = conv_out(s, 1, 1).filter(|&s| s >= 1)?;
        if s * s < 2 {
            return None;
        }
        conv_out(s, 1, 1).filter(|&s| s >= 1)
    }
}

/// PatchGAN discriminator over the channel concatenation of the condition
/// image and a candidate map. Emits raw logits, one per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGan {
    cfg: PatchGanConfig,
    layers: Vec<Layer>,
}

impl PatchGan {
    pub fn new(cfg: PatchGanConfig) -> Result<Self> {
        cfg.validate()?;
        let (l, b) = (cfg.layers, cfg.base_channels);
        let mut layers: Vec<Layer> = (0..l)
            .map(|i| {
                let in_ch = if i == 0 { IN_CHANNELS + OUT_CHANNELS } else { width(b, i - 1) };
                Layer::conv(format!("down{i}"), in_ch, width(b, i), 2, i != 0)
            })
            .collect();
        layers.push(Layer::conv("flat".into(), width(b, l - 1), width(b, l), 1, true));
        layers.push(Layer::conv("out".into(), width(b, l), 1, 1, false));
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &PatchGanConfig {
        &self.cfg
    }

    pub fn init_params<T: Real>(&self, rng: &mut dyn RngCore) -> ParamStore<T> {
        init_layers(&self.layers, rng)
    }

    fn param_count(&self) -> usize {
        self.layers.iter().map(|l| if l.norm { 3 } else { 2 }).sum()
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, params: &[Var], condition: Var, candidate: Var) -> Result<Var> {
        check_param_count(params, self.param_count())?;
        let mut h = tape.concat(condition, candidate)?;
        let mut it = params.iter().copied();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, &mut it, h)?;
            if i < last {
                h = tape.leaky_relu(h, T::lit(LEAKY_SLOPE));
            }
        }
        Ok(h)
    }
}

/// Scalar loss terms of one generator update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorLoss {
    pub total: Var,
    pub adversarial: Var,
    pub l1: Var,
}

/// `adversarial = BCE(fake_logits, 1)`, `l1 = mean |gen_out - target|`,
/// `total = adversarial + lambda * l1`.
pub fn generator_loss<T: Real>(
    tape: &mut Tape<T>,
    fake_logits: Var,
    gen_out: Var,
    target: Var,
    lambda: f64,
) -> Result<GeneratorLoss> {
    let l1 = tape.mean_abs_diff(gen_out, target)?;
    let adversarial = tape.bce_with_logits(fake_logits, T::one());
    let weighted = tape.scale(l1, T::lit(lambda));
    let total = tape.add(adversarial, weighted)?;
    Ok(GeneratorLoss {
        total,
        adversarial,
        l1,
    })
}

/// `BCE(real_logits, 1) + BCE(fake_logits, 0)`.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let (rs, fs) = (tape.value(real_logits).shape(), tape.value(fake_logits).shape());
    if rs != fs {
        return Err(NnError::ShapeMismatch(format!("real logits {rs:?}, fake logits {fs:?}")).into());
    }
    let real = tape.bce_with_logits(real_logits, T::one());
    let fake = tape.bce_with_logits(fake_logits, T::zero());
    Ok(tape.add(real, fake)?)
}

/// `(1, 3, s, s)` tensor scaled from `[0, 1]` to `[-1, 1]`.
pub fn image_tensor(img: &Image3) -> Tensor<f32> {
    let data = img.data.iter().map(|&v| 2.0 * v - 1.0).collect();
    Tensor::from_vec([1, 3, img.height as usize, img.width as usize], data).expect("planar layout")
}

pub fn map_tensor(map: &VisibilityMap) -> Tensor<f32> {
    let data = map.values().iter().map(|&v| 2.0 * v - 1.0).collect();
    Tensor::from_vec([1, 1, map.height as usize, map.width as usize], data).expect("row-major layout")
}

/// Generator and discriminator with their parameters.
#[derive(Clone, Debug)]
pub struct Pix2Pix {
    pub generator: UNet,
    pub discriminator: PatchGan,
    pub gen_params: ParamStore<f32>,
    pub disc_params: ParamStore<f32>,
}

impl Pix2Pix {
    pub fn new(unet: UNetConfig, disc: PatchGanConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let generator = UNet::new(unet)?;
        let discriminator = PatchGan::new(disc)?;
        if disc.logit_size(unet.input_size as usize).is_none() {
            return Err(invalid(format!(
                "{}x{} input is too small for a {}-layer discriminator",
                unet.input_size, unet.input_size, disc.layers
            )));
        }
        let gen_params = generator.init_params(rng);
        let disc_params = discriminator.init_params(rng);
        Ok(Self {
            generator,
            discriminator,
            gen_params,
            disc_params,
        })
    }

    pub fn input_size(&self) -> u32 {
        self.generator.cfg.input_size
    }

    fn check_size(&self, width: u32, height: u32) -> Result<()> {
        let expected = self.input_size();
        if width != expected || height != expected {
            return Err(Pix2PixError::SizeMismatch { expected, width, height });
        }
        Ok(())
    }

    /// Predicted visibility map. Dropout is off and batch norm uses the
    /// statistics of the single input.
    pub fn infer(&self, input: &Image3) -> Result<VisibilityMap> {
        self.check_size(input.width, input.height)?;
        let mut tape = Tape::new();
        let params = self.gen_params.bind_frozen(&mut tape);
        let x = tape.constant(image_tensor(input));
        let y = self.generator.forward(&mut tape, &params, x, None)?;
        let data = tape
            .value(y)
            .data()
            .iter()
            .map(|&v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect();
        let s = self.input_size();
        Ok(VisibilityMap::new(s, s, data).expect("clamped to [0, 1]"))
    }

    pub fn to_entries(&self) -> Vec<Entry> {
        let mut entries = vec![Entry::from_tensor(
            META_INPUT_SIZE,
            &Tensor::<f32>::scalar(self.input_size() as f32),
        )];
        for (prefix, store) in [("gen", &self.gen_params), ("disc", &self.disc_params)] {
            entries.extend(store.iter().map(|p| Entry::from_tensor(format!("{prefix}.{}", p.name), &p.value)));
        }
        entries
    }

    /// Rebuilds a model from checkpoint entries. Network widths and depths
    /// are recovered from the weight shapes; dropout settings take their
    /// defaults.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let bad = |m: String| Pix2PixError::BadCheckpoint(m);
        let find = |name: &str| entries.iter().find(|e| e.name == name);
        let count = |prefix: &str| (0..).take_while(|i| find(&format!("{prefix}{i}.weight")).is_some()).count();
        let meta = find(META_INPUT_SIZE).ok_or_else(|| bad(format!("missing {META_INPUT_SIZE}")))?;
        let input_size = meta.values.first().copied().unwrap_or(0.0) as u32;
        let depth = count("gen.enc");
        let gen_base = find("gen.enc0.weight").ok_or_else(|| bad("missing gen.enc0.weight".into()))?.shape[0];
        let layers = count("disc.down");
        let disc_base = find("disc.down0.weight").ok_or_else(|| bad("missing disc.down0.weight".into()))?.shape[0];
        let unet = UNetConfig {
            input_size,
            base_channels: gen_base,
            depth,
            ..UNetConfig::default()
        };
        let disc = PatchGanConfig {
            layers,
            base_channels: disc_base,
        };
        let mut model = Self::new(unet, disc, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (prefix, store) in [("gen", &mut model.gen_params), ("disc", &mut model.disc_params)] {
            let values = store
                .iter()
                .map(|p| {
                    let name = format!("{prefix}.{}", p.name);
                    let e = find(&name).ok_or_else(|| bad(format!("missing {name}")))?;
                    e.to_tensor::<f32>().map_err(Pix2PixError::from)
                })
                .collect::<Result<Vec<_>>>()?;
            store.set_values(values)?;
        }
        let expected = 1 + model.gen_params.len() + model.disc_params.len();
        if entries.len() != expected {
            return Err(bad(format!("{} entries, model has {expected}", entries.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        checkpoint::write(&mut w, &self.to_entries())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries = checkpoint::read(std::io::BufReader::new(File::open(path)?))?;
        Self::from_entries(&entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub steps: usize,
    /// Only 1 is supported.
    pub batch: usize,
    pub seed: u64,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda: 100.0,
            steps: 32_000,
            batch: 1,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("lr must be positive and betas in [0, 1)"));
        }
        if self.batch != 1 {
            return Err(invalid(format!("batch {} is not supported, use 1", self.batch)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Losses of one training step. Generator terms are measured on the
/// `[-1, 1]` scale the network works in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub d_loss: f64,
    pub g_total: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

/// Receives the loss curve and checkpoints during training.
pub trait TrainSink {
    fn record(&mut self, _record: &StepRecord) -> std::io::Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _step: usize, _model: &Pix2Pix) -> std::io::Result<()> {
        Ok(())
    }
}

impl TrainSink for () {}

/// Writes `train_log.jsonl` and `checkpoint.bin` (latest) into a directory.
pub struct DirectorySink {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl DirectorySink {
    pub const LOG_FILE: &'static str = "train_log.jsonl";
    pub const CHECKPOINT_FILE: &'static str = "checkpoint.bin";

    pub fn create(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let log = BufWriter::new(File::create(dir.join(Self::LOG_FILE))?);
        Ok(Self { dir, log })
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(Self::CHECKPOINT_FILE)
    }
}

impl TrainSink for DirectorySink {
    fn record(&mut self, record: &StepRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.log, record)?;
        self.log.write_all(b"\n")
    }

    fn checkpoint(&mut self, _step: usize, model: &Pix2Pix) -> std::io::Result<()> {
        self.log.flush()?;
        let tmp = self.dir.join(format!("{}.tmp", Self::CHECKPOINT_FILE));
        let mut w = BufWriter::new(File::create(&tmp)?);
        checkpoint::write(&mut w, &model.to_entries()).map_err(std::io::Error::other)?;
        w.flush()?;
        drop(w);
        std::fs::rename(tmp, self.checkpoint_path())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Pix2Pix,
    pub log: Vec<StepRecord>,
}

fn scalar(tape: &Tape<f32>, v: Var) -> f64 {
    f64::from(tape.value(v).data()[0])
}

/// Adversarial training, one sample per step: a discriminator update on the
/// real pair and the detached fake, then a generator update against the
/// freshly updated discriminator. Samples are visited in a seeded shuffle
/// per epoch. On a non-finite loss or parameter the model is rolled back to
/// the start of the failing step, handed to the sink as a checkpoint, and
/// training stops with [`Pix2PixError::NonFiniteLoss`].
pub fn train(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    unet: UNetConfig,
    disc: PatchGanConfig,
    sink: &mut dyn TrainSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Pix2PixError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Pix2Pix::new(unet, disc, &mut rng)?;
    for s in samples {
        model.check_size(s.input.width, s.input.height)?;
        model.check_size(s.target.width, s.target.height)?;
    }
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = samples
        .iter()
        .map(|s| (image_tensor(&s.input), map_tensor(&s.target)))
        .collect();
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let pos = (step - 1) % pairs.len();
        if pos == 0 {
            order.shuffle(&mut rng);
        }
        let (x, y) = &pairs[order[pos]];
        let snapshot = (model.gen_params.values(), model.disc_params.values());
        let rollback = |model: &mut Pix2Pix, sink: &mut dyn TrainSink| -> Pix2PixError {
            let restored = model
                .gen_params
                .set_values(snapshot.0.clone())
                .and_then(|_| model.disc_params.set_values(snapshot.1.clone()));
            if let Err(e) = restored {
                return e.into();
            }
            match sink.checkpoint(step - 1, model) {
                Ok(()) => Pix2PixError::NonFiniteLoss { step },
                Err(e) => e.into(),
            }
        };

        let mut tape = Tape::new();
        let gv = model.gen_params.bind(&mut tape);
        let dv = model.disc_params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let fake = model.generator.forward(&mut tape, &gv, xv, Some(&mut rng))?;

        let real_logits = model.discriminator.forward(&mut tape, &dv, xv, yv)?;
        let fake_detached = tape.detach(fake);
        let fake_logits = model.discriminator.forward(&mut tape, &dv, xv, fake_detached)?;
        let d_loss = discriminator_loss(&mut tape, real_logits, fake_logits)?;
        let d_value = scalar(&tape, d_loss);
        if !d_value.is_finite() {
            return Err(rollback(&mut model, sink));
        }
        tape.backward(d_loss)?;
        model.disc_params.accumulate_grads(&tape, &dv);
        model.disc_params.adam_step(&adam);

        let frozen = model.disc_params.bind_frozen(&mut tape);
        let judged = model.discriminator.forward(&mut tape, &frozen, xv, fake)?;
        let g = generator_loss(&mut tape, judged, fake, yv, cfg.lambda)?;
        let record = StepRecord {
            step,
            d_loss: d_value,
            g_total: scalar(&tape, g.total),
            g_adv: scalar(&tape, g.adversarial),
            g_l1: scalar(&tape, g.l1),
        };
        if !record.g_total.is_finite() {
            return Err(rollback(&mut model, sink));
        }
        tape.backward(g.total)?;
        model.gen_params.accumulate_grads(&tape, &gv);
        model.gen_params.adam_step(&adam);
        if !model.gen_params.is_finite() || !model.disc_params.is_finite() {
            return Err(rollback(&mut model, sink));
        }

        sink.record(&record)?;
        log.push(record);
        if step == cfg.steps || (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            sink.checkpoint(step, &model)?;
        }
    }
    Ok(TrainOutcome { model, log })
}

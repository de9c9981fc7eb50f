//! Experiment orchestration and the flat config grammar.
//!
//! # Config grammar
//!
//! One `key = value` pair per line. Keys are dotted (`section.name`), values
//! may be wrapped in double quotes, `#` starts a comment outside quotes, and
//! blank lines are ignored. Lists are comma-separated (`64, 64`). Every key
//! is optional and defaults to [`ExperimentConfig::default`]; unknown or
//! repeated keys are errors. [`ExperimentConfig::to_text`] emits the full
//! key set.
//!
//! An experiment runs the stages `data`, `split`, `augment`,
//! `train-diffusion`, `generate`, `localize` in order; each stage's seed is
//! derived from the experiment seed and the stage name, so running the
//! stages separately reproduces [`run_experiment`].

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{interpolate_unseen, no_augmentation, DEFAULT_INTERPOLATION_K};
use crate::dataset::{
    generate_synthetic, grid_locations, load_dataset, random_ap_layout, Coordinate, FingerprintDataset,
    NormalizationParams, SyntheticEnvironment,
};
use crate::diffusion::{
    default_bandwidth, generate_unseen_map, train, DiffusionTrainConfig, KernelForm, NoiseSchedule, TrainedModel,
};
use crate::diffusion::{Checkpoint, DenoiserNetwork};
use crate::error::{Error, Result, StageExt};
use crate::initializer::{select_unseen_density, select_unseen_grid, select_unseen_random, DensityParams, LocationSplit};
use crate::localizer::{evaluate, fit_localizer, LocalizationReport, LocalizerParams, LocalizerVariant};
use crate::nn::Activation;
use crate::seed;
use crate::synthesizer::{augment_seen, AugmentationConfig};

pub const STAGE_DATA: &str = "data";
pub const STAGE_SPLIT: &str = "split";
pub const STAGE_AUGMENT: &str = "augment";
pub const STAGE_TRAIN: &str = "train-diffusion";
pub const STAGE_GENERATE: &str = "generate";
pub const STAGE_LOCALIZE: &str = "localize";

/// Survey time per seen location: 120 minutes for 70 locations.
pub const DEFAULT_MINUTES_PER_LOCATION: f64 = 12.0 / 7.0;

/// Desk-scale synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub width_m: f64,
    pub height_m: f64,
    pub ap_count: usize,
    /// AP positions are fixed across experiment seeds.
    pub layout_seed: u64,
    pub tx_power_dbm: f64,
    pub path_loss_exponent: f64,
    pub shadowing_sigma_db: f64,
    pub reference_distance_m: f64,
    pub detection_threshold_dbm: f64,
    pub train_samples_per_location: usize,
    pub test_samples_per_location: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            grid_nx: 10,
            grid_ny: 10,
            width_m: 50.0,
            height_m: 50.0,
            ap_count: 20,
            layout_seed: 7,
            tx_power_dbm: -40.0,
            path_loss_exponent: 2.5,
            shadowing_sigma_db: 4.0,
            reference_distance_m: 1.0,
            detection_threshold_dbm: -95.0,
            train_samples_per_location: 8,
            test_samples_per_location: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn environment(&self) -> SyntheticEnvironment {
        SyntheticEnvironment {
            ap_positions: random_ap_layout(self.ap_count, self.width_m, self.height_m, self.layout_seed),
            tx_power_dbm: self.tx_power_dbm,
            path_loss_exponent: self.path_loss_exponent,
            shadowing_sigma_db: self.shadowing_sigma_db,
            reference_distance_m: self.reference_distance_m,
            detection_threshold_dbm: self.detection_threshold_dbm,
        }
    }

    pub fn grid(&self) -> Vec<Coordinate> {
        grid_locations(self.grid_nx, self.grid_ny, self.width_m, self.height_m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    Density,
    Random,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmenter {
    Diffusion,
    Interpolator,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub source: DataSource,
    pub norm: NormalizationParams,
    pub split_strategy: SplitStrategy,
    pub density: DensityParams,
    /// Fraction of all locations marked unseen.
    pub unseen_fraction: f64,
    pub augmentation: AugmentationConfig,
    pub augmenter: Augmenter,
    pub diffusion: DiffusionTrainConfig,
    pub interpolator_k: usize,
    /// Synthesized fingerprints per unseen location.
    pub samples_per_unseen: usize,
    pub localizer: LocalizerParams,
    pub minutes_per_location: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            source: DataSource::Synthetic(SyntheticSpec::default()),
            norm: NormalizationParams::default(),
            split_strategy: SplitStrategy::Density,
            density: DensityParams::default(),
            unseen_fraction: 0.5,
            augmentation: AugmentationConfig::default(),
            augmenter: Augmenter::Diffusion,
            diffusion: DiffusionTrainConfig::default(),
            interpolator_k: DEFAULT_INTERPOLATION_K,
            samples_per_unseen: 40,
            localizer: LocalizerParams::default(),
            minutes_per_location: DEFAULT_MINUTES_PER_LOCATION,
        }
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}`"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_num)
        .collect()
}

fn join_list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Silu => "silu",
        Activation::Relu => "relu",
    }
}

/// Splits `line` into its content before any unquoted `#`.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(value: &str) -> std::result::Result<&str, String> {
    match (value.starts_with('"'), value.ends_with('"') && value.len() >= 2) {
        (true, true) => Ok(&value[1..value.len() - 1]),
        (true, false) => Err("unterminated quote".into()),
        _ => Ok(value),
    }
}

impl ExperimentConfig {
    pub fn synthetic(&self) -> Option<&SyntheticSpec> {
        match &self.source {
            DataSource::Synthetic(s) => Some(s),
            DataSource::Files { .. } => None,
        }
    }

    fn synthetic_mut(&mut self) -> std::result::Result<&mut SyntheticSpec, String> {
        match &mut self.source {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Files { .. } => Err("synthetic.* keys require data.source = synthetic".into()),
        }
    }

    fn files_mut(&mut self) -> &mut DataSource {
        if !matches!(self.source, DataSource::Files { .. }) {
            self.source = DataSource::Files {
                train: PathBuf::new(),
                test: PathBuf::new(),
            };
        }
        &mut self.source
    }

    /// Assigns one config key. Unknown keys are errors naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(key, value).map_err(|m| Error::Config(format!("{key}: {m}")))
    }

    fn apply(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let d = &mut self.diffusion;
        match key {
            "seed" => self.seed = parse_num(value)?,
            "data.source" => match value {
                "synthetic" => {
                    if self.synthetic().is_none() {
                        self.source = DataSource::Synthetic(SyntheticSpec::default());
                    }
                }
                "file" => {
                    self.files_mut();
                }
                _ => return Err(format!("expected synthetic or file, got `{value}`")),
            },
            "data.train_path" => {
                if let DataSource::Files { train, .. } = self.files_mut() {
                    *train = PathBuf::from(value);
                }
            }
            "data.test_path" => {
                if let DataSource::Files { test, .. } = self.files_mut() {
                    *test = PathBuf::from(value);
                }
            }
            "norm.rss_min" => self.norm.rss_min = parse_num(value)?,
            "norm.rss_max" => self.norm.rss_max = parse_num(value)?,
            "norm.sentinel" => self.norm.sentinel_raw = parse_num(value)?,
            "norm.detect_floor" => self.norm.detect_floor = parse_num(value)?,
            "synthetic.grid_nx" => self.synthetic_mut()?.grid_nx = parse_num(value)?,
            "synthetic.grid_ny" => self.synthetic_mut()?.grid_ny = parse_num(value)?,
            "synthetic.width_m" => self.synthetic_mut()?.width_m = parse_num(value)?,
            "synthetic.height_m" => self.synthetic_mut()?.height_m = parse_num(value)?,
            "synthetic.ap_count" => self.synthetic_mut()?.ap_count = parse_num(value)?,
            "synthetic.layout_seed" => self.synthetic_mut()?.layout_seed = parse_num(value)?,
            "synthetic.tx_power_dbm" => self.synthetic_mut()?.tx_power_dbm = parse_num(value)?,
            "synthetic.path_loss_exponent" => self.synthetic_mut()?.path_loss_exponent = parse_num(value)?,
            "synthetic.shadowing_sigma_db" => self.synthetic_mut()?.shadowing_sigma_db = parse_num(value)?,
            "synthetic.reference_distance_m" => self.synthetic_mut()?.reference_distance_m = parse_num(value)?,
            "synthetic.detection_threshold_dbm" => {
                self.synthetic_mut()?.detection_threshold_dbm = parse_num(value)?
            }
            "synthetic.train_samples_per_location" => {
                self.synthetic_mut()?.train_samples_per_location = parse_num(value)?
            }
            "synthetic.test_samples_per_location" => {
                self.synthetic_mut()?.test_samples_per_location = parse_num(value)?
            }
            "split.strategy" => {
                self.split_strategy = match value {
                    "density" => SplitStrategy::Density,
                    "random" => SplitStrategy::Random,
                    "grid" => SplitStrategy::Grid,
                    _ => return Err(format!("expected density, random or grid, got `{value}`")),
                }
            }
            "split.unseen_fraction" => self.unseen_fraction = parse_num(value)?,
            "split.k_neighbors" => self.density.k_neighbors = parse_num(value)?,
            "split.batch_per_iteration" => self.density.batch_per_iteration = parse_num(value)?,
            "augment.noise_sigma" => self.augmentation.noise_sigma = parse_num(value)?,
            "augment.drop_threshold" => self.augmentation.drop_threshold = parse_num(value)?,
            "augment.replicas_per_sample" => self.augmentation.replicas_per_sample = parse_num(value)?,
            "augmenter" => {
                self.augmenter = match value {
                    "diffusion" => Augmenter::Diffusion,
                    "interpolator" => Augmenter::Interpolator,
                    "none" => Augmenter::None,
                    _ => return Err(format!("expected diffusion, interpolator or none, got `{value}`")),
                }
            }
            "generate.samples_per_location" => self.samples_per_unseen = parse_num(value)?,
            "diffusion.steps" => d.steps = parse_num(value)?,
            "diffusion.beta_start" => d.beta_start = parse_num(value)?,
            "diffusion.beta_end" => d.beta_end = parse_num(value)?,
            "diffusion.learning_rate" => d.learning_rate = parse_num(value)?,
            "diffusion.batch_size" => d.batch_size = parse_num(value)?,
            "diffusion.epochs" => d.epochs = parse_num(value)?,
            "diffusion.ema_decay" => d.ema_decay = parse_num(value)?,
            "diffusion.kernel" => {
                d.kernel = match value {
                    "gaussian" => KernelForm::Gaussian,
                    "hard" => KernelForm::Hard,
                    _ => return Err(format!("expected gaussian or hard, got `{value}`")),
                }
            }
            "diffusion.sigma_w" => d.bandwidth = if value == "auto" { None } else { Some(parse_num(value)?) },
            "diffusion.hidden" => d.arch.hidden = parse_list(value)?,
            "diffusion.activation" => {
                d.arch.activation = match value {
                    "silu" => Activation::Silu,
                    "relu" => Activation::Relu,
                    _ => return Err(format!("expected silu or relu, got `{value}`")),
                }
            }
            "diffusion.cond_frequencies" => d.arch.cond_frequencies = parse_num(value)?,
            "diffusion.time_dim" => d.arch.time_dim = parse_num(value)?,
            "diffusion.skips" => d.arch.skips = parse_bool(value)?,
            "diffusion.input_blend" => d.arch.input_blend = parse_bool(value)?,
            "interpolator.k" => self.interpolator_k = parse_num(value)?,
            "localizer.variant" => {
                self.localizer.variant = match value {
                    "knn" => LocalizerVariant::Knn,
                    "feedforward" => LocalizerVariant::Feedforward,
                    _ => return Err(format!("expected knn or feedforward, got `{value}`")),
                }
            }
            "localizer.k" => self.localizer.k = parse_num(value)?,
            "localizer.hidden" => self.localizer.hidden = parse_list(value)?,
            "localizer.learning_rate" => self.localizer.learning_rate = parse_num(value)?,
            "localizer.epochs" => self.localizer.epochs = parse_num(value)?,
            "localizer.batch_size" => self.localizer.batch_size = parse_num(value)?,
            "overhead.minutes_per_location" => self.minutes_per_location = parse_num(value)?,
            _ => return Err("unknown config key".into()),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `origin` names the source
    /// in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen_keys = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i as u64 + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = unquote(value.trim()).map_err(|m| err(format!("{key}: {m}")))?;
            if !seen_keys.insert(key.to_string()) {
                return Err(err(format!("{key}: repeated key")));
            }
            cfg.apply(key, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Every key with its current value, in grammar form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        match &self.source {
            DataSource::Synthetic(s) => {
                put("data.source", "synthetic".into());
                put("synthetic.grid_nx", s.grid_nx.to_string());
                put("synthetic.grid_ny", s.grid_ny.to_string());
                put("synthetic.width_m", s.width_m.to_string());
                put("synthetic.height_m", s.height_m.to_string());
                put("synthetic.ap_count", s.ap_count.to_string());
                put("synthetic.layout_seed", s.layout_seed.to_string());
                put("synthetic.tx_power_dbm", s.tx_power_dbm.to_string());
                put("synthetic.path_loss_exponent", s.path_loss_exponent.to_string());
                put("synthetic.shadowing_sigma_db", s.shadowing_sigma_db.to_string());
                put("synthetic.reference_distance_m", s.reference_distance_m.to_string());
                put("synthetic.detection_threshold_dbm", s.detection_threshold_dbm.to_string());
                put("synthetic.train_samples_per_location", s.train_samples_per_location.to_string());
                put("synthetic.test_samples_per_location", s.test_samples_per_location.to_string());
            }
            DataSource::Files { train, test } => {
                put("data.source", "file".into());
                put("data.train_path", format!("\"{}\"", train.display()));
                put("data.test_path", format!("\"{}\"", test.display()));
            }
        }
        put("norm.rss_min", self.norm.rss_min.to_string());
        put("norm.rss_max", self.norm.rss_max.to_string());
        put("norm.sentinel", self.norm.sentinel_raw.to_string());
        put("norm.detect_floor", self.norm.detect_floor.to_string());
        let strategy = match self.split_strategy {
            SplitStrategy::Density => "density",
            SplitStrategy::Random => "random",
            SplitStrategy::Grid => "grid",
        };
        put("split.strategy", strategy.into());
        put("split.unseen_fraction", self.unseen_fraction.to_string());
        put("split.k_neighbors", self.density.k_neighbors.to_string());
        put("split.batch_per_iteration", self.density.batch_per_iteration.to_string());
        put("augment.noise_sigma", self.augmentation.noise_sigma.to_string());
        put("augment.drop_threshold", self.augmentation.drop_threshold.to_string());
        put("augment.replicas_per_sample", self.augmentation.replicas_per_sample.to_string());
        let augmenter = match self.augmenter {
            Augmenter::Diffusion => "diffusion",
            Augmenter::Interpolator => "interpolator",
            Augmenter::None => "none",
        };
        put("augmenter", augmenter.into());
        put("generate.samples_per_location", self.samples_per_unseen.to_string());
        let d = &self.diffusion;
        put("diffusion.steps", d.steps.to_string());
        put("diffusion.beta_start", d.beta_start.to_string());
        put("diffusion.beta_end", d.beta_end.to_string());
        put("diffusion.learning_rate", d.learning_rate.to_string());
        put("diffusion.batch_size", d.batch_size.to_string());
        put("diffusion.epochs", d.epochs.to_string());
        put("diffusion.ema_decay", d.ema_decay.to_string());
        let kernel = match d.kernel {
            KernelForm::Gaussian => "gaussian",
            KernelForm::Hard => "hard",
        };
        put("diffusion.kernel", kernel.into());
        put("diffusion.sigma_w", d.bandwidth.map_or("auto".into(), |b| b.to_string()));
        put("diffusion.hidden", join_list(&d.arch.hidden));
        put("diffusion.activation", activation_name(d.arch.activation).into());
        put("diffusion.cond_frequencies", d.arch.cond_frequencies.to_string());
        put("diffusion.time_dim", d.arch.time_dim.to_string());
        put("diffusion.skips", d.arch.skips.to_string());
        put("diffusion.input_blend", d.arch.input_blend.to_string());
        put("interpolator.k", self.interpolator_k.to_string());
        let variant = match self.localizer.variant {
            LocalizerVariant::Knn => "knn",
            LocalizerVariant::Feedforward => "feedforward",
        };
        put("localizer.variant", variant.into());
        put("localizer.k", self.localizer.k.to_string());
        put("localizer.hidden", join_list(&self.localizer.hidden));
        put("localizer.learning_rate", self.localizer.learning_rate.to_string());
        put("localizer.epochs", self.localizer.epochs.to_string());
        put("localizer.batch_size", self.localizer.batch_size.to_string());
        put("overhead.minutes_per_location", self.minutes_per_location.to_string());
        out
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        self.density.validate()?;
        self.augmentation.validate()?;
        self.diffusion.validate()?;
        if !(0.0..1.0).contains(&self.unseen_fraction) {
            return Err(Error::Config(format!(
                "split.unseen_fraction must lie in [0, 1), got {}",
                self.unseen_fraction
            )));
        }
        if !(self.minutes_per_location > 0.0) || !self.minutes_per_location.is_finite() {
            return Err(Error::Config("overhead.minutes_per_location must be positive".into()));
        }
        if self.interpolator_k == 0 || self.samples_per_unseen == 0 {
            return Err(Error::Config(
                "interpolator.k and generate.samples_per_location must be positive".into(),
            ));
        }
        match &self.source {
            DataSource::Synthetic(s) => {
                if s.grid_nx == 0 || s.grid_ny == 0 || !(s.width_m > 0.0) || !(s.height_m > 0.0) {
                    return Err(Error::Config("synthetic grid must be non-empty with positive extent".into()));
                }
                s.environment().validate()?;
            }
            DataSource::Files { train, test } => {
                if train.as_os_str().is_empty() || test.as_os_str().is_empty() {
                    return Err(Error::Config("file source needs data.train_path and data.test_path".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of unseen locations out of `n_locations`, rounded to nearest.
    pub fn unseen_count(&self, n_locations: usize) -> usize {
        (self.unseen_fraction * n_locations as f64).round() as usize
    }

    pub fn stage_seed(&self, tag: &str) -> u64 {
        seed::derive(self.seed, tag)
    }
}

/// Survey cost of `n_seen` locations.
pub fn collection_overhead(n_seen: usize, minutes_per_location: f64) -> f64 {
    n_seen as f64 * minutes_per_location
}

/// Collected data: a fresh synthetic draw or the configured training file.
pub fn training_data(cfg: &ExperimentConfig) -> Result<FingerprintDataset> {
    match &cfg.source {
        DataSource::Synthetic(s) => generate_synthetic(
            &s.environment(),
            &s.grid(),
            s.train_samples_per_location,
            &cfg.norm,
            cfg.stage_seed(seed::TAG_TRAIN_DATA),
        ),
        DataSource::Files { train, .. } => load_dataset(train, &cfg.norm),
    }
}

/// Held-out data: an independent synthetic draw at every grid location, or
/// the configured test file.
pub fn test_data(cfg: &ExperimentConfig) -> Result<FingerprintDataset> {
    match &cfg.source {
        DataSource::Synthetic(s) => generate_synthetic(
            &s.environment(),
            &s.grid(),
            s.test_samples_per_location,
            &cfg.norm,
            cfg.stage_seed(seed::TAG_TEST_DATA),
        ),
        DataSource::Files { test, .. } => load_dataset(test, &cfg.norm),
    }
}

pub fn split_locations(cfg: &ExperimentConfig, locations: &[Coordinate]) -> Result<LocationSplit> {
    let n_unseen = cfg.unseen_count(locations.len());
    let n_seen = locations.len() - n_unseen.min(locations.len());
    if n_seen < cfg.density.k_neighbors + 1 {
        return Err(Error::Config(format!(
            "unseen_fraction {} leaves {n_seen} seen locations; at least {} required",
            cfg.unseen_fraction,
            cfg.density.k_neighbors + 1
        )));
    }
    if n_unseen == 0 {
        return Ok(LocationSplit {
            seen: locations.to_vec(),
            unseen: Vec::new(),
        });
    }
    match cfg.split_strategy {
        SplitStrategy::Density => select_unseen_density(locations, n_unseen, &cfg.density),
        SplitStrategy::Random => select_unseen_random(locations, n_unseen, cfg.stage_seed(seed::TAG_SPLIT)),
        SplitStrategy::Grid => select_unseen_grid(locations, n_unseen),
    }
}

/// What the surveyor actually holds: samples at seen locations only.
pub fn collected(data: &FingerprintDataset, split: &LocationSplit) -> Result<FingerprintDataset> {
    no_augmentation(data, split)
}

pub fn augment(cfg: &ExperimentConfig, seen: &FingerprintDataset, split: &LocationSplit) -> Result<FingerprintDataset> {
    let aug = AugmentationConfig {
        seed: cfg.stage_seed(seed::TAG_AUGMENT),
        ..cfg.augmentation
    };
    augment_seen(seen, split, &aug)
}

pub fn diffusion_config(cfg: &ExperimentConfig) -> DiffusionTrainConfig {
    DiffusionTrainConfig {
        seed: cfg.stage_seed(seed::TAG_DIFFUSION_TRAIN),
        ..cfg.diffusion.clone()
    }
}

pub fn train_generator(
    cfg: &ExperimentConfig,
    augmented: &FingerprintDataset,
    split: &LocationSplit,
) -> Result<TrainedModel> {
    train(augmented, split, &diffusion_config(cfg))
}

pub fn generate(
    cfg: &ExperimentConfig,
    network: &DenoiserNetwork,
    schedule: &NoiseSchedule,
    split: &LocationSplit,
) -> Result<FingerprintDataset> {
    generate_unseen_map(
        network,
        split,
        schedule,
        cfg.samples_per_unseen,
        &cfg.norm,
        cfg.stage_seed(seed::TAG_GENERATE),
    )
}

pub fn interpolate(cfg: &ExperimentConfig, seen: &FingerprintDataset, split: &LocationSplit) -> Result<FingerprintDataset> {
    interpolate_unseen(seen, split, cfg.interpolator_k, cfg.samples_per_unseen)
}

pub fn localize(
    cfg: &ExperimentConfig,
    train_map: &FingerprintDataset,
    test: &FingerprintDataset,
) -> Result<LocalizationReport> {
    let model = fit_localizer(train_map, &cfg.localizer, cfg.stage_seed(seed::TAG_LOCALIZER))?;
    evaluate(&model, test)
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub report: LocalizationReport,
    pub collection_overhead_min: f64,
    pub split: LocationSplit,
    pub training_samples: usize,
    /// Mean loss of the last diffusion epoch, when a generator was trained.
    pub diffusion_final_loss: Option<f64>,
    pub config_echo: String,
    pub wall_clock_seconds: f64,
}

impl ExperimentResult {
    pub fn n_seen(&self) -> usize {
        self.split.seen.len()
    }

    pub fn n_unseen(&self) -> usize {
        self.split.unseen.len()
    }

    /// Fixed-precision `key,value` summary; wall-clock time is excluded so
    /// the file is reproducible.
    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "key,value").map_err(io)?;
        writeln!(out, "n_seen,{}", self.n_seen()).map_err(io)?;
        writeln!(out, "n_unseen,{}", self.n_unseen()).map_err(io)?;
        writeln!(out, "training_samples,{}", self.training_samples).map_err(io)?;
        writeln!(out, "collection_overhead_min,{:.6}", self.collection_overhead_min).map_err(io)?;
        writeln!(out, "mean_error_m,{:.6}", self.report.mean_error_m).map_err(io)?;
        writeln!(out, "median_error_m,{:.6}", self.report.median_error_m).map_err(io)?;
        if let Some(loss) = self.diffusion_final_loss {
            writeln!(out, "diffusion_final_loss,{loss:.6}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Runs collection, splitting, augmentation, generation and localization
/// for one configuration. Errors carry the name of the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let started = Instant::now();
    cfg.validate().stage(STAGE_DATA)?;
    let full = training_data(cfg).stage(STAGE_DATA)?;
    let test = test_data(cfg).stage(STAGE_DATA)?;
    if test.ap_count() != full.ap_count() {
        return Err(Error::Shape(format!(
            "training data has {} APs, test data {}",
            full.ap_count(),
            test.ap_count()
        ))
        .in_stage(STAGE_DATA));
    }
    let split = split_locations(cfg, full.locations()).stage(STAGE_SPLIT)?;
    let seen = collected(&full, &split).stage(STAGE_SPLIT)?;

    let mut diffusion_final_loss = None;
    let train_map = match cfg.augmenter {
        Augmenter::None => seen,
        Augmenter::Interpolator => {
            if split.unseen.is_empty() {
                seen
            } else {
                let synth = interpolate(cfg, &seen, &split).stage(STAGE_GENERATE)?;
                seen.merge(&synth).stage(STAGE_GENERATE)?
            }
        }
        Augmenter::Diffusion => {
            let augmented = augment(cfg, &seen, &split).stage(STAGE_AUGMENT)?;
            if split.unseen.is_empty() {
                augmented
            } else {
                let model = train_generator(cfg, &augmented, &split).stage(STAGE_TRAIN)?;
                diffusion_final_loss = Some(model.final_loss());
                let synth = generate(cfg, &model.network, &model.schedule, &split).stage(STAGE_GENERATE)?;
                augmented.merge(&synth).stage(STAGE_GENERATE)?
            }
        }
    };
    let report = localize(cfg, &train_map, &test).stage(STAGE_LOCALIZE)?;
    Ok(ExperimentResult {
        report,
        collection_overhead_min: collection_overhead(split.seen.len(), cfg.minutes_per_location),
        training_samples: train_map.len(),
        split,
        diffusion_final_loss,
        config_echo: cfg.to_text(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One experiment per unseen fraction, all sharing the base seed so every
/// run sees the same collected and test data.
pub fn sweep_ratio(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<ExperimentResult>> {
    for &f in fractions {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Config(format!("unseen fraction {f} outside [0, 1)")));
        }
    }
    fractions
        .par_iter()
        .map(|&f| {
            let run = ExperimentConfig {
                unseen_fraction: f,
                ..cfg.clone()
            };
            run_experiment(&run)
        })
        .collect()
}

/// Sweep table with one fixed-precision row per fraction.
pub fn write_sweep(path: impl AsRef<Path>, fractions: &[f64], results: &[ExperimentResult]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(
        out,
        "unseen_fraction,n_seen,n_unseen,collection_overhead_min,mean_error_m,median_error_m"
    )
    .map_err(io)?;
    for (f, r) in fractions.iter().zip(results) {
        writeln!(
            out,
            "{f:.6},{},{},{:.6},{:.6},{:.6}",
            r.n_seen(),
            r.n_unseen(),
            r.collection_overhead_min,
            r.report.mean_error_m,
            r.report.median_error_m
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// A checkpoint holding a freshly trained generator.
pub fn checkpoint_of(model: &TrainedModel) -> Checkpoint {
    Checkpoint {
        network: model.network.clone(),
        schedule: model.schedule.clone(),
    }
}

/// Kernel bandwidth the configuration resolves to for `split`.
pub fn resolved_bandwidth(cfg: &ExperimentConfig, split: &LocationSplit) -> Result<f64> {
    match cfg.diffusion.bandwidth {
        Some(b) => Ok(b),
        None => default_bandwidth(split),
    }
}

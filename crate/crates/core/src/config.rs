//! Pipeline configuration: flat `key = value` text with dotted section
//! keys, `#` comments, and `PIPELINE_*` environment overrides.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataio::{NoiseReference, SplitSpec};
use crate::doe::Combiner;
use crate::dsp::{NodeOrder, WptConfig, Wavelet};
use crate::error::{Error, Result};
use crate::features::{ChannelPolicy, FeatureConfig};
use crate::mlp::{GridSpace, MlpConfig};
use crate::rng::derive_seed;
use crate::selection::SelectionThresholds;
use crate::synthgen::SensorQuantity;

pub const ENV_PREFIX: &str = "PIPELINE_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpMode {
    Fixed,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Manifest paths; `None` means synthesize.
    pub confirmation_dataset: Option<PathBuf>,
    pub training_dataset: Option<PathBuf>,

    pub synth_n_training: usize,
    pub synth_energy_min: f64,
    pub synth_energy_max: f64,
    pub synth_sensor_quantity: SensorQuantity,
    pub synth_seed: Option<u64>,

    pub onset_frac: f64,
    pub count_frac: f64,
    pub channel_policy: ChannelPolicy,
    pub wavelet: Wavelet,
    pub node_order: NodeOrder,

    pub combiner: Combiner,

    pub noise_level: f64,
    pub noise_reference: NoiseReference,
    pub noise_seed: Option<u64>,

    pub correlation_threshold: f64,
    pub r_min: f64,
    pub variance_target: f64,

    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_seed: Option<u64>,

    pub mlp_mode: MlpMode,
    pub mlp_hidden_size: usize,
    pub mlp_hidden_layers: usize,
    pub mlp_learning_rate: f64,
    pub mlp_batch_norm: bool,
    pub mlp_max_epochs: usize,
    pub mlp_patience: usize,
    pub mlp_seed: Option<u64>,
    pub grid_hidden_sizes: Vec<usize>,
    pub grid_hidden_layers: Vec<usize>,
    pub grid_learning_rates: Vec<f64>,
    pub grid_folds: usize,

    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let grid = GridSpace::default();
        Self {
            seed: 0,
            confirmation_dataset: None,
            training_dataset: None,
            synth_n_training: 66,
            synth_energy_min: 3.81,
            synth_energy_max: 85.37,
            synth_sensor_quantity: SensorQuantity::Strain,
            synth_seed: None,
            onset_frac: 0.05,
            count_frac: 0.05,
            channel_policy: ChannelPolicy::MaxPa,
            wavelet: Wavelet::Db4,
            node_order: NodeOrder::Frequency,
            combiner: Combiner::Min,
            noise_level: 0.05,
            noise_reference: NoiseReference::Peak,
            noise_seed: None,
            correlation_threshold: 0.9,
            r_min: 0.85,
            variance_target: 0.95,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            split_seed: None,
            mlp_mode: MlpMode::Fixed,
            mlp_hidden_size: 32,
            mlp_hidden_layers: 2,
            mlp_learning_rate: 1e-3,
            mlp_batch_norm: true,
            mlp_max_epochs: 10_000,
            mlp_patience: 1_000,
            mlp_seed: None,
            grid_hidden_sizes: grid.hidden_sizes,
            grid_hidden_layers: grid.hidden_layers,
            grid_learning_rates: grid.learning_rates,
            grid_folds: 5,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Every recognised key, in canonical order.
pub const KEYS: &[&str] = &[
    "seed",
    "dataset.confirmation",
    "dataset.training",
    "synth.n_training",
    "synth.energy_min",
    "synth.energy_max",
    "synth.sensor_quantity",
    "synth.seed",
    "features.onset_frac",
    "features.count_frac",
    "features.channel_policy",
    "features.wavelet",
    "features.node_order",
    "doe.combiner",
    "noise.level",
    "noise.reference",
    "noise.seed",
    "selection.correlation_threshold",
    "selection.r_min",
    "selection.variance_target",
    "split.train",
    "split.val",
    "split.test",
    "split.seed",
    "mlp.mode",
    "mlp.hidden_size",
    "mlp.hidden_layers",
    "mlp.learning_rate",
    "mlp.batch_norm",
    "mlp.max_epochs",
    "mlp.patience",
    "mlp.seed",
    "mlp.grid.hidden_sizes",
    "mlp.grid.hidden_layers",
    "mlp.grid.learning_rates",
    "mlp.grid.folds",
    "output.dir",
];

/// Keys that do not change any artifact and are left out of the hash.
const UNHASHED: &[&str] = &["output.dir"];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{v}`: {e}")))
}

fn parse_opt_seed(key: &str, v: &str) -> Result<Option<u64>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (v != "synthetic").then(|| PathBuf::from(v))
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "dataset.confirmation" => self.confirmation_dataset = parse_path(v),
            "dataset.training" => self.training_dataset = parse_path(v),
            "synth.n_training" => self.synth_n_training = parse(key, v)?,
            "synth.energy_min" => self.synth_energy_min = parse(key, v)?,
            "synth.energy_max" => self.synth_energy_max = parse(key, v)?,
            "synth.sensor_quantity" => {
                self.synth_sensor_quantity = match v {
                    "strain" => SensorQuantity::Strain,
                    "displacement" => SensorQuantity::Displacement,
                    _ => return Err(Error::Config(format!("{key}: expected strain|displacement, got `{v}`"))),
                }
            }
            "synth.seed" => self.synth_seed = parse_opt_seed(key, v)?,
            "features.onset_frac" => self.onset_frac = parse(key, v)?,
            "features.count_frac" => self.count_frac = parse(key, v)?,
            "features.channel_policy" => self.channel_policy = parse(key, v)?,
            "features.wavelet" => {
                self.wavelet = match v {
                    "haar" => Wavelet::Haar,
                    "db2" => Wavelet::Db2,
                    "db4" => Wavelet::Db4,
                    _ => return Err(Error::Config(format!("{key}: expected haar|db2|db4, got `{v}`"))),
                }
            }
            "features.node_order" => {
                self.node_order = match v {
                    "frequency" => NodeOrder::Frequency,
                    "natural" => NodeOrder::Natural,
                    _ => return Err(Error::Config(format!("{key}: expected frequency|natural, got `{v}`"))),
                }
            }
            "doe.combiner" => self.combiner = parse(key, v)?,
            "noise.level" => self.noise_level = parse(key, v)?,
            "noise.reference" => self.noise_reference = parse(key, v)?,
            "noise.seed" => self.noise_seed = parse_opt_seed(key, v)?,
            "selection.correlation_threshold" => self.correlation_threshold = parse(key, v)?,
            "selection.r_min" => self.r_min = parse(key, v)?,
            "selection.variance_target" => self.variance_target = parse(key, v)?,
            "split.train" => self.split_train = parse(key, v)?,
            "split.val" => self.split_val = parse(key, v)?,
            "split.test" => self.split_test = parse(key, v)?,
            "split.seed" => self.split_seed = parse_opt_seed(key, v)?,
            "mlp.mode" => {
                self.mlp_mode = match v {
                    "fixed" => MlpMode::Fixed,
                    "grid" => MlpMode::Grid,
                    _ => return Err(Error::Config(format!("{key}: expected fixed|grid, got `{v}`"))),
                }
            }
            "mlp.hidden_size" => self.mlp_hidden_size = parse(key, v)?,
            "mlp.hidden_layers" => self.mlp_hidden_layers = parse(key, v)?,
            "mlp.learning_rate" => self.mlp_learning_rate = parse(key, v)?,
            "mlp.batch_norm" => self.mlp_batch_norm = parse(key, v)?,
            "mlp.max_epochs" => self.mlp_max_epochs = parse(key, v)?,
            "mlp.patience" => self.mlp_patience = parse(key, v)?,
            "mlp.seed" => self.mlp_seed = parse_opt_seed(key, v)?,
            "mlp.grid.hidden_sizes" => self.grid_hidden_sizes = parse_list(key, v)?,
            "mlp.grid.hidden_layers" => self.grid_hidden_layers = parse_list(key, v)?,
            "mlp.grid.learning_rates" => self.grid_learning_rates = parse_list(key, v)?,
            "mlp.grid.folds" => self.grid_folds = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let seed = |s: Option<u64>| s.map_or("auto".to_string(), |v| v.to_string());
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("synthetic".to_string(), |p| p.display().to_string())
        };
        Some(match key {
            "seed" => self.seed.to_string(),
            "dataset.confirmation" => path(&self.confirmation_dataset),
            "dataset.training" => path(&self.training_dataset),
            "synth.n_training" => self.synth_n_training.to_string(),
            "synth.energy_min" => self.synth_energy_min.to_string(),
            "synth.energy_max" => self.synth_energy_max.to_string(),
            "synth.sensor_quantity" => match self.synth_sensor_quantity {
                SensorQuantity::Strain => "strain".into(),
                SensorQuantity::Displacement => "displacement".into(),
            },
            "synth.seed" => seed(self.synth_seed),
            "features.onset_frac" => self.onset_frac.to_string(),
            "features.count_frac" => self.count_frac.to_string(),
            "features.channel_policy" => self.channel_policy.as_str().to_ascii_lowercase(),
            "features.wavelet" => match self.wavelet {
                Wavelet::Haar => "haar".into(),
                Wavelet::Db2 => "db2".into(),
                Wavelet::Db4 => "db4".into(),
            },
            "features.node_order" => match self.node_order {
                NodeOrder::Frequency => "frequency".into(),
                NodeOrder::Natural => "natural".into(),
            },
            "doe.combiner" => self.combiner.as_str().into(),
            "noise.level" => self.noise_level.to_string(),
            "noise.reference" => self.noise_reference.to_string(),
            "noise.seed" => seed(self.noise_seed),
            "selection.correlation_threshold" => self.correlation_threshold.to_string(),
            "selection.r_min" => self.r_min.to_string(),
            "selection.variance_target" => self.variance_target.to_string(),
            "split.train" => self.split_train.to_string(),
            "split.val" => self.split_val.to_string(),
            "split.test" => self.split_test.to_string(),
            "split.seed" => seed(self.split_seed),
            "mlp.mode" => match self.mlp_mode {
                MlpMode::Fixed => "fixed".into(),
                MlpMode::Grid => "grid".into(),
            },
            "mlp.hidden_size" => self.mlp_hidden_size.to_string(),
            "mlp.hidden_layers" => self.mlp_hidden_layers.to_string(),
            "mlp.learning_rate" => self.mlp_learning_rate.to_string(),
            "mlp.batch_norm" => self.mlp_batch_norm.to_string(),
            "mlp.max_epochs" => self.mlp_max_epochs.to_string(),
            "mlp.patience" => self.mlp_patience.to_string(),
            "mlp.seed" => seed(self.mlp_seed),
            "mlp.grid.hidden_sizes" => list(&self.grid_hidden_sizes),
            "mlp.grid.hidden_layers" => list(&self.grid_hidden_layers),
            "mlp.grid.learning_rates" => list(&self.grid_learning_rates),
            "mlp.grid.folds" => self.grid_folds.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown keys are errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", n + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Environment variable overriding `key`: dots become underscores,
    /// upper-cased, with the `PIPELINE_` prefix.
    pub fn env_name(key: &str) -> String {
        format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
    }

    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let k = k.as_ref();
            if !k.starts_with(ENV_PREFIX) {
                continue;
            }
            let key = KEYS
                .iter()
                .find(|key| Self::env_name(key) == k)
                .ok_or_else(|| Error::Config(format!("environment variable {k} matches no config key")))?;
            self.set(key, v.as_ref())
                .map_err(|e| Error::Config(format!("{k}: {e}")))?;
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every key.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// SHA-256 over the canonical listing of every artifact-relevant key.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for k in KEYS.iter().filter(|k| !UNHASHED.contains(k)) {
            h.update(format!("{k}={}\n", self.get(k).expect("known key")));
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let frac = |name: &str, v: f64, lo_open: bool| -> Result<()> {
            let ok = if lo_open { v > 0.0 && v < 1.0 } else { (0.0..=1.0).contains(&v) };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside its valid range")))
            }
        };
        frac("features.onset_frac", self.onset_frac, true)?;
        frac("features.count_frac", self.count_frac, true)?;
        frac("noise.level", self.noise_level, true)?;
        frac("selection.correlation_threshold", self.correlation_threshold, false)?;
        frac("selection.r_min", self.r_min, false)?;
        frac("selection.variance_target", self.variance_target, true)?;
        self.split_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.synth_energy_min > 0.0 && self.synth_energy_max > self.synth_energy_min) {
            return bad(format!(
                "synth energy range ({}, {}) must be positive and increasing",
                self.synth_energy_min, self.synth_energy_max
            ));
        }
        if self.synth_n_training < 10 {
            return bad(format!("synth.n_training = {} must be >= 10", self.synth_n_training));
        }
        for p in [&self.confirmation_dataset, &self.training_dataset].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("dataset manifest {} does not exist", p.display()));
            }
        }
        match self.mlp_mode {
            MlpMode::Fixed => self.mlp_config(1).validate()?,
            MlpMode::Grid => {
                self.grid_space().validate()?;
                if self.grid_folds < 2 {
                    return bad(format!("mlp.grid.folds = {} must be >= 2", self.grid_folds));
                }
                let probe = MlpConfig {
                    hidden_size: 1,
                    hidden_layers: 1,
                    learning_rate: 1.0,
                    ..self.mlp_config(1)
                };
                probe.validate()?;
                if self.grid_hidden_sizes.contains(&0)
                    || self.grid_hidden_layers.contains(&0)
                    || self.grid_learning_rates.iter().any(|lr| !(*lr > 0.0))
                {
                    return bad("grid candidates must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn stream(&self, explicit: Option<u64>, stream: u64) -> u64 {
        explicit.unwrap_or_else(|| derive_seed(self.seed, stream))
    }

    pub fn synth_seed(&self) -> u64 {
        self.stream(self.synth_seed, 1)
    }

    pub fn noise_seed(&self) -> u64 {
        self.stream(self.noise_seed, 2)
    }

    pub fn split_seed(&self) -> u64 {
        self.stream(self.split_seed, 3)
    }

    pub fn mlp_seed(&self) -> u64 {
        self.stream(self.mlp_seed, 4)
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            onset_frac: self.onset_frac,
            count_frac: Some(self.count_frac),
            channel_policy: self.channel_policy,
            wpt: WptConfig { wavelet: self.wavelet, order: self.node_order },
        }
    }

    pub fn thresholds(&self) -> SelectionThresholds {
        SelectionThresholds {
            correlation: self.correlation_threshold,
            variance: self.variance_target,
            r_min: self.r_min,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_frac: self.split_train,
            val_frac: self.split_val,
            test_frac: self.split_test,
            seed: self.split_seed(),
        }
    }

    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_layers: self.mlp_hidden_layers,
            hidden_size: self.mlp_hidden_size,
            batch_norm: self.mlp_batch_norm,
            learning_rate: self.mlp_learning_rate,
            max_epochs: self.mlp_max_epochs,
            patience: self.mlp_patience,
            seed: self.mlp_seed(),
        }
    }

    pub fn grid_space(&self) -> GridSpace {
        GridSpace {
            hidden_sizes: self.grid_hidden_sizes.clone(),
            hidden_layers: self.grid_hidden_layers.clone(),
            learning_rates: self.grid_learning_rates.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("mlp.grid.hidden_sizes", "8, 16").unwrap();
        cfg.set("noise.seed", "42").unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text(), "text").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn output_dir_not_hashed() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn comments_and_errors() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# header\n\nseed = 9  # trailing\n", "t").unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(cfg.apply_text("no equals sign", "t").is_err());
        assert!(cfg.apply_text("bogus.key = 1", "t").is_err());
        assert!(cfg.apply_text("seed = minus one", "t").is_err());
    }

    #[test]
    fn env_overrides() {
        assert_eq!(PipelineConfig::env_name("mlp.grid.hidden_sizes"), "PIPELINE_MLP_GRID_HIDDEN_SIZES");
        let mut cfg = PipelineConfig::default();
        cfg.apply_env([("PIPELINE_MLP_HIDDEN_SIZE", "64"), ("HOME", "/root")]).unwrap();
        assert_eq!(cfg.mlp_hidden_size, 64);
        assert!(cfg.apply_env([("PIPELINE_NOPE", "1")]).is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.set("mlp.mode", "grid").unwrap();
        cfg.set("mlp.grid.hidden_sizes", "").unwrap();
        assert!(cfg.validate().is_err());
        PipelineConfig::default().validate().unwrap();
    }
}

//! Run configuration, stored as TOML. Lengths are in units of `λ_m`.
//!
//! ```toml
//! [geometry]
//! layers = 4
//! layer_side = 9
//! fov_side = 3
//! channels = 2
//!
//! [material]
//! kind = "dispersion-free"
//!
//! [task]
//! seed = 42
//! train = 5000
//! val = 500
//! test = 500
//!
//! [training]
//! epochs = 30
//!
//! [output]
//! dir = "runs/demo"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::Material;
use crate::propagation::Boundary;
use crate::stack::{default_channels, BitDepth, StackGeometry, DEFAULT_LAYERS};
use crate::taskgen::SplitSizes;
use crate::training::{
    LossSettings, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, ETA_THRESHOLD_ABSORBING,
    ETA_THRESHOLD_LOSSLESS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub layer_side: usize,
    pub fov_side: usize,
    /// Number of channels on the default wavelength ladder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Explicit channel wavelengths; overrides `channels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_wavelengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
    #[serde(default)]
    pub periodic: bool,
    /// `λ_m` in meters, for documentation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_m_meters: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MaterialConfig {
    #[default]
    DispersionFree,
    Constant {
        n: f64,
        #[serde(default)]
        kappa: f64,
    },
    /// Dispersion table file; relative paths resolve against the config file.
    Table { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub seed: u64,
    #[serde(default = "default_train")]
    pub train: usize,
    #[serde(default = "default_val")]
    pub val: usize,
    #[serde(default = "default_test")]
    pub test: usize,
    /// Also write every dataset split to disk in `gen-tasks`.
    #[serde(default)]
    pub cache: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub beta: f64,
    /// Efficiency threshold; by default chosen from whether the material absorbs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_threshold: Option<f64>,
    /// Thickness bit depth; continuous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<u32>,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default = "default_true")]
    pub adaptive_weights: bool,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_run_id")]
    pub run_id: String,
}

fn default_layers() -> usize {
    DEFAULT_LAYERS
}
fn default_train() -> usize {
    55_000
}
fn default_val() -> usize {
    5_000
}
fn default_test() -> usize {
    10_000
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_true() -> bool {
    true
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_dir() -> PathBuf {
    PathBuf::from("run")
}
fn default_run_id() -> String {
    "run".to_string()
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            beta: 0.0,
            eta_threshold: None,
            bit_depth: None,
            deterministic: true,
            adaptive_weights: true,
            weight_decay: default_weight_decay(),
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            run_id: default_run_id(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file; a relative material table path is resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let MaterialConfig::Table { path: table } = &mut cfg.material {
            if table.is_relative() {
                if let Some(dir) = path.parent() {
                    *table = dir.join(&*table);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn channel_wavelengths(&self) -> Result<Vec<f64>> {
        match (&self.geometry.channel_wavelengths, self.geometry.channels) {
            (Some(list), Some(n)) if list.len() != n => Err(Error::Config(format!(
                "geometry.channels = {n} disagrees with {} channel_wavelengths",
                list.len()
            ))),
            (Some(list), _) => Ok(list.clone()),
            (None, Some(n)) if n > 0 => Ok(default_channels(n)),
            _ => Err(Error::Config(
                "geometry needs `channels` or `channel_wavelengths`".into(),
            )),
        }
    }

    pub fn stack_geometry(&self) -> Result<StackGeometry> {
        let g = &self.geometry;
        let mut geometry = StackGeometry::new(g.layers, g.layer_side, g.fov_side, self.channel_wavelengths()?)?;
        if let Some(side) = g.grid_side {
            geometry = geometry.with_grid_side(side)?;
        }
        if let Some(d) = g.distance {
            geometry = geometry.with_distance(d)?;
        }
        if g.periodic {
            geometry = geometry.with_boundary(Boundary::Periodic);
        }
        Ok(geometry)
    }

    pub fn material(&self) -> Result<Material> {
        match &self.material {
            MaterialConfig::DispersionFree => Ok(Material::dispersion_free()),
            MaterialConfig::Constant { n, kappa } => Material::constant(*n, *kappa),
            MaterialConfig::Table { path } => Material::load_table(path),
        }
    }

    pub fn bit_depth(&self) -> Result<BitDepth> {
        match self.training.bit_depth {
            None => Ok(BitDepth::Continuous),
            Some(q) => BitDepth::bits(q).map_err(|e| Error::Config(format!("training.bit_depth: {e}"))),
        }
    }

    pub fn split_sizes(&self) -> Result<SplitSizes> {
        SplitSizes::new(self.task.train, self.task.val, self.task.test).map_err(|e| Error::Config(format!("task: {e}")))
    }

    pub fn eta_threshold(&self) -> Result<f64> {
        if let Some(th) = self.training.eta_threshold {
            return Ok(th);
        }
        let material = self.material()?;
        Ok(if material.is_lossless() {
            ETA_THRESHOLD_LOSSLESS
        } else {
            ETA_THRESHOLD_ABSORBING
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        if !(t.learning_rate > 0.0) || t.batch_size == 0 || t.epochs == 0 {
            return Err(Error::Config(
                "training needs a positive learning_rate, batch_size and epochs".into(),
            ));
        }
        if !(t.beta >= 0.0) {
            return Err(Error::Config(format!(
                "training.beta must be non-negative, got {}",
                t.beta
            )));
        }
        Ok(TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            loss: LossSettings {
                beta: t.beta,
                eta_threshold: self.eta_threshold()?,
            },
            adaptive_weights: t.adaptive_weights,
            weight_decay: t.weight_decay,
            shuffle_seed: self.task.seed,
            start_epoch: 0,
        })
    }

    /// Checks every derived setting without touching the file system
    /// beyond a material table.
    pub fn validate(&self) -> Result<()> {
        self.stack_geometry()?;
        self.material()?;
        self.bit_depth()?;
        self.split_sizes()?;
        self.train_config()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[geometry]\nlayer_side = 9\nfov_side = 3\nchannels = 2\n[task]\nseed = 7\n";

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.geometry.layers, 8);
        assert_eq!(cfg.training.learning_rate, 0.001);
        assert_eq!(cfg.training.batch_size, 8);
        assert_eq!(cfg.training.epochs, 50);
        assert_eq!((cfg.task.train, cfg.task.val, cfg.task.test), (55_000, 5_000, 10_000));
        assert_eq!(cfg.eta_threshold().unwrap(), 3e-4);
        assert_eq!(cfg.bit_depth().unwrap(), BitDepth::Continuous);
        let g = cfg.stack_geometry().unwrap();
        assert_eq!(g.channels, vec![0.9125, 1.0875]);
        assert_eq!(g.distance, 2.25);
    }

    #[test]
    fn absorbing_material_lowers_threshold() {
        let text = format!("{MINIMAL}[material]\nkind = \"constant\"\nn = 1.7\nkappa = 0.01\n");
        assert_eq!(RunConfig::parse(&text).unwrap().eta_threshold().unwrap(), 3e-5);
    }

    #[test]
    fn missing_seed_is_named() {
        let err = RunConfig::parse("[geometry]\nlayer_side = 9\nfov_side = 3\nchannels = 1\n[task]\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(&format!("{MINIMAL}[training]\nlearnin_rate = 1.0\n")).is_err());
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}[material]\nkind = \"table\"\npath = \"m.txt\"\n[training]\nbeta = 1e4\neta_threshold = 1e-3\nbit_depth = 8\n[output]\ndir = \"x\"\nrun_id = \"y\"\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn explicit_wavelengths_and_overrides() {
        let text = "[geometry]\nlayer_side = 10\nfov_side = 2\nchannel_wavelengths = [0.95, 1.05]\ngrid_side = 20\ndistance = 3.0\n[task]\nseed = 1\n";
        let g = RunConfig::parse(text).unwrap().stack_geometry().unwrap();
        assert_eq!((g.grid_side, g.distance, g.channels.len()), (20, 3.0, 2));
        let bad = "[geometry]\nlayer_side = 10\nfov_side = 2\n[task]\nseed = 1\n";
        assert!(matches!(
            RunConfig::parse(bad).unwrap().stack_geometry(),
            Err(Error::Config(_))
        ));
    }
}

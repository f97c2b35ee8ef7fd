//! TOML experiment configuration.
//!
//! Only `dataset.sample_count` and `train.epochs` are required; everything
//! else falls back to the defaults below. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use hybridloc::dataset::{curriculum_grid, grids, DatasetManifest};
use hybridloc::evaluation::{SweepSpec, SweepVariable};
use hybridloc::mlp::{InputMode, TrainConfig, DEFAULT_HIDDEN};
use hybridloc::scene::{AnchorLayout, PathLossConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for anchors, dataset, training and sweeps.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub path_loss: PathLossSection,
    pub dataset: DatasetSection,
    pub train: TrainSection,
    #[serde(default = "default_sweeps")]
    pub sweeps: Vec<SweepSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_sweeps() -> Vec<SweepSpec> {
    SweepVariable::ALL
        .iter()
        .map(|&v| SweepSpec::default_for(v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub box_size: f64,
    pub anchor_count: usize,
    /// Defaults to anchors drawn from the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_layout: Option<AnchorLayout<f64>>,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            box_size: 15.0,
            anchor_count: 4,
            anchor_layout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossSection {
    pub p0_dbm: f64,
    pub d0: f64,
    pub gamma_true_range: [f64; 2],
    pub gamma_rx: f64,
}

impl Default for PathLossSection {
    fn default() -> Self {
        let d = PathLossConfig::<f64>::default();
        Self {
            p0_dbm: d.p0_dbm,
            d0: d.d0,
            gamma_true_range: d.gamma_true_range,
            gamma_rx: d.gamma_rx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub sample_count: usize,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub noise: NoiseGridSection,
}

fn default_split() -> [f64; 3] {
    [0.75, 0.15, 0.10]
}

/// Training noise levels: each sweep grid crossed with the base values of the
/// other two noises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseGridSection {
    pub rss_db: Vec<f64>,
    pub angle_deg: Vec<f64>,
    pub base_rss_db: f64,
    pub base_angle_deg: f64,
}

impl Default for NoiseGridSection {
    fn default() -> Self {
        Self {
            rss_db: grids::RSS_DB.to_vec(),
            angle_deg: grids::ANGLE_DEG.to_vec(),
            base_rss_db: grids::BASE_RSS_DB,
            base_angle_deg: grids::BASE_ANGLE_DEG,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lr() -> f64 {
    TrainConfig::default().lr
}
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

/// Sweep trials use their own seed so they never replay dataset streams.
pub fn sweep_seed(master: u64) -> u64 {
    master ^ 0x9e37_79b9_7f4a_7c15
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies overrides, fills the anchor layout and checks every nested invariant.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(s) = seed {
            self.seed = s;
            if matches!(
                self.scene.anchor_layout,
                Some(AnchorLayout::FixedSeeded { .. })
            ) {
                self.scene.anchor_layout = None;
            }
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        if self.scene.anchor_layout.is_none() {
            self.scene.anchor_layout = Some(AnchorLayout::FixedSeeded { seed: self.seed });
        }
        let field = |name: &str, e: hybridloc::Error| CliError::Config(format!("{name}: {e}"));
        self.manifest()
            .validate()
            .map_err(|e| field("dataset", e))?;
        self.train_config(InputMode::Preprocessed)
            .validate()
            .map_err(|e| field("train", e))?;
        for (i, s) in self.sweeps.iter().enumerate() {
            s.validate()
                .map_err(|e| field(&format!("sweeps[{i}]"), e))?;
            if self.sweeps[..i].iter().any(|o| o.variable == s.variable) {
                return Err(CliError::Config(format!(
                    "sweeps[{i}]: {} is swept more than once",
                    s.variable.as_str()
                )));
            }
        }
        Ok(self)
    }

    pub fn scene_config(&self) -> SceneConfig<f64> {
        SceneConfig {
            box_size: self.scene.box_size,
            anchor_count: self.scene.anchor_count,
            anchor_layout: self
                .scene
                .anchor_layout
                .clone()
                .unwrap_or(AnchorLayout::FixedSeeded { seed: self.seed }),
        }
    }

    pub fn path_loss_config(&self) -> PathLossConfig<f64> {
        let p = self.path_loss;
        PathLossConfig {
            p0_dbm: p.p0_dbm,
            d0: p.d0,
            gamma_true_range: p.gamma_true_range,
            gamma_rx: p.gamma_rx,
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        let n = &self.dataset.noise;
        DatasetManifest {
            seed: self.seed,
            scene: self.scene_config(),
            path_loss: self.path_loss_config(),
            sample_count: self.dataset.sample_count,
            split: self.dataset.split,
            noise_grid: curriculum_grid(&n.rss_db, &n.angle_deg, n.base_rss_db, n.base_angle_deg),
        }
    }

    pub fn train_config(&self, mode: InputMode) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.seed,
            lr: self.train.lr,
            input_mode: mode,
            hidden: self.train.hidden,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self)
            .map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
    }
}

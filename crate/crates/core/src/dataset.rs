//! Training corpora: generation, splitting and the on-disk format.
//!
//! File layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"HLDSET\0\0"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 header length H
//! 20      H     UTF-8 JSON header { "manifest": ..., "anchors": [...] }
//! 20+H    8     u64 sample count M
//! 28+H    ...   M records of (15N + 7) f64:
//!                 theta     3N   [rss; azimuth; elevation]
//!                 features  12N  [vec(A_w) column-major; b_w]
//!                 target    3
//!                 noise     3    sigma_rss (dB), sigma_azimuth, sigma_elevation (rad)
//!                 gamma_true 1
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearization::preprocess;
use crate::measurement::{synthesize_measurements, MeasurementVector, NoiseConfig};
use crate::mlp::InputMode;
use crate::scene::{PathLossConfig, Point3, SceneConfig, SceneSampler};

pub const DATASET_MAGIC: [u8; 8] = *b"HLDSET\0\0";
pub const DATASET_VERSION: u32 = 1;

/// Noise grids used for training and for the default sweeps.
pub mod grids {
    pub const RSS_DB: [f64; 7] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    pub const ANGLE_DEG: [f64; 11] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
    pub const BASE_RSS_DB: f64 = 3.0;
    pub const BASE_ANGLE_DEG: f64 = 5.0;
}

/// Union of the three one-at-a-time sweeps around a base point, without duplicates.
///
/// RSS values are in dB, angle values in degrees; the result is in dB / radians.
pub fn curriculum_grid(
    rss_db: &[f64],
    angle_deg: &[f64],
    base_rss_db: f64,
    base_angle_deg: f64,
) -> Vec<NoiseConfig<f64>> {
    let mut grid: Vec<NoiseConfig<f64>> = Vec::new();
    let mut push = |n: NoiseConfig<f64>| {
        if !grid.contains(&n) {
            grid.push(n);
        }
    };
    for &r in rss_db {
        push(NoiseConfig::from_db_deg(r, base_angle_deg, base_angle_deg));
    }
    for &a in angle_deg {
        push(NoiseConfig::from_db_deg(base_rss_db, a, base_angle_deg));
    }
    for &e in angle_deg {
        push(NoiseConfig::from_db_deg(base_rss_db, base_angle_deg, e));
    }
    grid
}

pub fn default_noise_grid() -> Vec<NoiseConfig<f64>> {
    curriculum_grid(
        &grids::RSS_DB,
        &grids::ANGLE_DEG,
        grids::BASE_RSS_DB,
        grids::BASE_ANGLE_DEG,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scene: SceneConfig<f64>,
    pub path_loss: PathLossConfig<f64>,
    pub sample_count: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub noise_grid: Vec<NoiseConfig<f64>>,
}

impl DatasetManifest {
    pub fn new(seed: u64, sample_count: usize) -> Self {
        Self {
            seed,
            scene: SceneConfig::with_seed(seed),
            path_loss: PathLossConfig::default(),
            sample_count,
            split: [0.75, 0.15, 0.10],
            noise_grid: default_noise_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.path_loss.validate()?;
        validate_ratios(self.split)?;
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be positive".into()));
        }
        if self.noise_grid.is_empty() {
            return Err(Error::Config("noise_grid must not be empty".into()));
        }
        for n in &self.noise_grid {
            n.validate()?;
        }
        if matches!(
            self.scene.anchor_layout,
            crate::scene::AnchorLayout::Randomized
        ) {
            return Err(Error::Config(
                "datasets need a fixed anchor layout (fixed_seeded or user_provided)".into(),
            ));
        }
        Ok(())
    }
}

fn validate_ratios(r: [f64; 3]) -> Result<()> {
    if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {r:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub theta: MeasurementVector<f64>,
    pub features: Vec<f64>,
    pub target: Point3<f64>,
    pub noise: NoiseConfig<f64>,
    pub gamma_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub anchors: Vec<Point3<f64>>,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    manifest: DatasetManifest,
    anchors: Vec<Point3<f64>>,
}

/// Index sets of a three-way partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-sample random stream; independent of generation order and thread count.
fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let sampler = SceneSampler::new(&manifest.scene, &manifest.path_loss)?;
    let anchors = sampler
        .fixed_anchors()
        .expect("validated layout has fixed anchors")
        .to_vec();
    let pl = manifest.path_loss;
    let samples = (0..manifest.sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(manifest.seed, i);
            let noise = manifest.noise_grid[rng.random_range(0..manifest.noise_grid.len())];
            let scene = sampler.sample(&mut rng)?;
            let theta = synthesize_measurements(&scene, &pl, &noise, &mut rng)?;
            let features = preprocess(&theta, &anchors, &pl)?.0;
            Ok(Sample {
                theta,
                features,
                target: scene.target,
                noise,
                gamma_true: scene.gamma_true,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: manifest.clone(),
        anchors,
        samples,
    })
}

/// Seeded shuffle into train/validation/test. Validation and test sizes are
/// floored; the remainder goes to training.
pub fn split(sample_count: usize, ratios: [f64; 3], seed: u64) -> Result<Split> {
    validate_ratios(ratios)?;
    let floor = |r: f64| ((sample_count as f64) * r + 1e-9).floor() as usize;
    let n_val = floor(ratios[1]);
    let n_test = floor(ratios[2]);
    let n_train = sample_count - n_val - n_test;
    let mut idx: Vec<usize> = (0..sample_count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        test,
    })
}

impl Dataset {
    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Result<Split> {
        split(self.samples.len(), self.manifest.split, self.manifest.seed)
    }

    /// Row-major input matrix and labels for the chosen representation.
    pub fn design_matrix(&self, mode: InputMode, indices: &[usize]) -> (Vec<f64>, Vec<[f64; 3]>) {
        let d = mode.input_dim(self.anchor_count());
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = &self.samples[i];
            match mode {
                InputMode::Preprocessed => x.extend_from_slice(&s.features),
                InputMode::Raw => x.extend(s.theta.theta()),
            }
            y.push(s.target.to_array());
        }
        (x, y)
    }

    /// Largest absolute difference between stored and recomputed features
    /// over the given samples.
    pub fn audit_features(&self, indices: &[usize]) -> Result<f64> {
        let mut worst = 0.0f64;
        for &i in indices {
            let s = &self.samples[i];
            let x = preprocess(&s.theta, &self.anchors, &self.manifest.path_loss)?;
            for (a, b) in x.0.iter().zip(&s.features) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            manifest: self.manifest.clone(),
            anchors: self.anchors.clone(),
        })?;
        w.write_all(&DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * record_len(self.anchor_count()) * 8);
        for s in &self.samples {
            let values = s
                .theta
                .theta()
                .into_iter()
                .chain(s.features.iter().copied())
                .chain(s.target.to_array())
                .chain([
                    s.noise.sigma_rss,
                    s.noise.sigma_azimuth,
                    s.noise.sigma_elevation,
                    s.gamma_true,
                ]);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("file too short for dataset header".into()))?;
        if magic != DATASET_MAGIC {
            return Err(Error::Format("bad magic: not a dataset file".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if header_len > 1 << 30 {
            return Err(Error::Format(format!(
                "implausible header length {header_len}"
            )));
        }
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("corrupt header: {e}")))?;
        let count = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let n = header.anchors.len();
        if n == 0 {
            return Err(Error::Format("header lists no anchors".into()));
        }
        let rec = record_len(n);
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != count * rec * 8 {
            return Err(Error::Format(format!(
                "expected {count} records of {rec} values ({} bytes), found {} bytes",
                count * rec * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        let samples = values
            .chunks_exact(rec)
            .map(|v| {
                let (theta, rest) = v.split_at(3 * n);
                let (features, rest) = rest.split_at(12 * n);
                Ok(Sample {
                    theta: MeasurementVector::from_theta(theta)?,
                    features: features.to_vec(),
                    target: Point3::new(rest[0], rest[1], rest[2]),
                    noise: NoiseConfig::new(rest[3], rest[4], rest[5]),
                    gamma_true: rest[6],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest: header.manifest,
            anchors: header.anchors,
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn record_len(n: usize) -> usize {
    15 * n + 7
}

fn read_array<const K: usize, R: Read>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(b)
}

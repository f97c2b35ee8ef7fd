//! JSON checkpoint of a trained network.
//!
//! Floats are written in shortest round-trip form, so save/load is lossless
//! for `f64` models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputMode, Layout, MlpModel, Normalizer, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::Point3;

pub const CHECKPOINT_FORMAT: &str = "hybridloc-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_mode: InputMode,
    pub input_dim: usize,
    pub hidden: usize,
    pub anchor_count: usize,
    pub seed: u64,
    pub layernorm_eps: f64,
    /// Geometry the network was trained on.
    pub anchors: Vec<Point3<f64>>,
    pub params: Parameters,
    pub normalizer: NormalizerStats,
    /// Free-form provenance, typically the resolved experiment config.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(
        model: &MlpModel<T>,
        anchors: &[Point3<f64>],
        metadata: serde_json::Value,
    ) -> Self {
        let l = model.layout;
        let p = &model.params;
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            input_mode: model.input_mode,
            input_dim: l.input,
            hidden: l.hidden,
            anchor_count: anchors.len(),
            seed: model.seed,
            layernorm_eps: LAYER_NORM_EPS,
            anchors: anchors.to_vec(),
            params: Parameters {
                w1: to_f64(&p[l.w1()]),
                b1: to_f64(&p[l.b1()]),
                ln_gain: to_f64(&p[l.ln_gain()]),
                ln_bias: to_f64(&p[l.ln_bias()]),
                w2: to_f64(&p[l.w2()]),
                b2: to_f64(&p[l.b2()]),
            },
            normalizer: NormalizerStats {
                mean: to_f64(&model.normalizer.mean),
                std: to_f64(&model.normalizer.std),
            },
            metadata,
        }
    }

    /// Rebuilds the model, enforcing the recorded input dimension.
    pub fn to_model<T: Scalar>(&self) -> Result<MlpModel<T>> {
        let expected_dim = self.input_mode.input_dim(self.anchor_count);
        if self.input_dim != expected_dim {
            return Err(Error::Format(format!(
                "checkpoint records input_dim {} but {} mode with {} anchors implies {}",
                self.input_dim,
                self.input_mode.as_str(),
                self.anchor_count,
                expected_dim
            )));
        }
        if self.anchors.len() != self.anchor_count {
            return Err(Error::Format(format!(
                "checkpoint lists {} anchors but anchor_count is {}",
                self.anchors.len(),
                self.anchor_count
            )));
        }
        let layout = Layout::new(self.input_dim, self.hidden);
        let blocks = [
            ("w1", &self.params.w1, layout.w1().len()),
            ("b1", &self.params.b1, layout.b1().len()),
            ("ln_gain", &self.params.ln_gain, layout.ln_gain().len()),
            ("ln_bias", &self.params.ln_bias, layout.ln_bias().len()),
            ("w2", &self.params.w2, layout.w2().len()),
            ("b2", &self.params.b2, layout.b2().len()),
            ("normalizer.mean", &self.normalizer.mean, self.input_dim),
            ("normalizer.std", &self.normalizer.std, self.input_dim),
        ];
        for (name, v, want) in blocks {
            if v.len() != want {
                return Err(Error::Format(format!(
                    "{name} has {} values, expected {want}",
                    v.len()
                )));
            }
        }
        let mut params = Vec::with_capacity(layout.param_count());
        for block in [
            &self.params.w1,
            &self.params.b1,
            &self.params.ln_gain,
            &self.params.ln_bias,
            &self.params.w2,
            &self.params.b2,
        ] {
            params.extend(from_f64::<T>(block));
        }
        let model = MlpModel {
            layout,
            params,
            normalizer: Normalizer {
                mean: from_f64(&self.normalizer.mean),
                std: from_f64(&self.normalizer.std),
            },
            input_mode: self.input_mode,
            seed: self.seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("not a checkpoint: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unexpected checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                header.format
            )));
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> (MlpModel<f64>, Vec<Point3<f64>>) {
        let mut m = MlpModel::init(InputMode::Preprocessed, 48, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.params
            .iter_mut()
            .for_each(|p| *p += rng.random_range(-1e-3..1e-3));
        m.normalizer.mean = (0..48).map(|_| rng.random::<f64>()).collect();
        let anchors = (0..4)
            .map(|i| Point3::new(i as f64, 2.0 * i as f64, 1.0 / 3.0))
            .collect();
        (m, anchors)
    }

    #[test]
    fn save_load_is_lossless() {
        let (m, anchors) = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ck = Checkpoint::from_model(&m, &anchors, serde_json::json!({"note": "test"}));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model::<f64>().unwrap(), m);
    }

    #[test]
    fn records_and_enforces_dimension() {
        let (m, anchors) = model();
        let mut ck = Checkpoint::from_model(&m, &anchors, serde_json::Value::Null);
        assert_eq!(ck.input_dim, 48);
        ck.input_mode = InputMode::Raw;
        assert!(matches!(ck.to_model::<f64>(), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_named() {
        let (m, anchors) = model();
        let mut ck = Checkpoint::from_model(&m, &anchors, serde_json::Value::Null);
        ck.version = 7;
        let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(
            err,
            Error::VersionMismatch {
                found: 7,
                expected: 1
            }
        ));
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(
            Checkpoint::from_json("{\"hello\": 1}"),
            Err(Error::Format(_))
        ));
    }
}

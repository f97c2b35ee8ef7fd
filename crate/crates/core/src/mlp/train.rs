use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_normalizer, mse_loss, AdamState, InputMode, MlpModel, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Samples per parallel work item. Fixed so the gradient reduction order
/// does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_mode")]
    pub input_mode: InputMode,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_epochs() -> usize {
    300
}
fn default_batch() -> usize {
    256
}
fn default_lr() -> f64 {
    0.01
}
fn default_mode() -> InputMode {
    InputMode::Preprocessed
}
fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            lr: default_lr(),
            input_mode: default_mode(),
            hidden: default_hidden(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.hidden < 1 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Row-major features with one 3D label per row.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a, T> {
    pub features: &'a [T],
    pub labels: &'a [[T; 3]],
    pub dim: usize,
}

impl<'a, T: Scalar> TrainingSet<'a, T> {
    pub fn new(features: &'a [T], labels: &'a [[T; 3]], dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the epoch's mini-batches, evaluated before each update.
    pub train_mse: f64,
    pub val_mse: f64,
}

fn evaluate<T: Scalar>(model: &MlpModel<T>, set: &TrainingSet<'_, T>) -> Result<T> {
    let preds: Vec<[T; 3]> = (0..set.len())
        .into_par_iter()
        .map(|i| model.forward_unchecked(set.row(i)).output)
        .collect();
    mse_loss(&preds, set.labels)
}

/// Mini-batch Adam on shuffled training rows; returns the parameters with the
/// lowest validation loss and the per-epoch curve.
pub fn train<T: Scalar>(
    train_set: &TrainingSet<'_, T>,
    val_set: &TrainingSet<'_, T>,
    cfg: &TrainConfig,
) -> Result<(MlpModel<T>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be nonempty".into(),
        ));
    }
    if train_set.dim != val_set.dim {
        return Err(Error::Dimension {
            expected: train_set.dim,
            got: val_set.dim,
        });
    }
    let dim = train_set.dim;
    let mut model = MlpModel::init(cfg.input_mode, dim, cfg.hidden, cfg.seed);
    model.normalizer = fit_normalizer(train_set.features, dim)?;
    let mut adam = AdamState::new(model.params.len(), T::lit(cfg.lr));

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(T, Vec<T>)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = T::zero();
        for batch in order.chunks(cfg.batch_size) {
            let scale = T::one() / T::from_usize_lossy(batch.len());
            let partials: Vec<(Vec<T>, T)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grads = vec![T::zero(); model.params.len()];
                    let mut loss = T::zero();
                    for &i in chunk {
                        let cache = model.forward_unchecked(train_set.row(i));
                        let label = train_set.labels[i];
                        loss += (0..3)
                            .map(|k| (cache.output[k] - label[k]) * (cache.output[k] - label[k]))
                            .sum::<T>();
                        model.accumulate_gradients(&cache, label, scale, &mut grads);
                    }
                    (grads, loss)
                })
                .collect();
            let mut grads = vec![T::zero(); model.params.len()];
            for (g, loss) in partials {
                for (acc, v) in grads.iter_mut().zip(g) {
                    *acc += v;
                }
                epoch_loss += loss;
            }
            if !epoch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            adam.step(&mut model.params, &grads);
        }
        let train_mse = epoch_loss / T::from_usize_lossy(train_set.len());
        let val_mse = evaluate(&model, val_set)?;
        if !val_mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        curve.push(EpochMetrics {
            epoch,
            train_mse: train_mse.to_f64_lossy(),
            val_mse: val_mse.to_f64_lossy(),
        });
        if best.as_ref().is_none_or(|(b, _)| val_mse < *b) {
            best = Some((val_mse, model.params.clone()));
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Features uniform in [-1, 1]^4, labels a fixed affine map of them.
    fn affine_toy(n: usize, seed: u64) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = [
            [1.0, -0.5, 0.3, 2.0],
            [0.2, 0.4, -1.0, 0.0],
            [-0.7, 0.1, 0.5, 0.9],
        ];
        let c = [0.5, -1.0, 2.0];
        let mut x = Vec::with_capacity(n * 4);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            x.extend_from_slice(&row);
            y.push(std::array::from_fn(|k| {
                c[k] + (0..4).map(|j| m[k][j] * row[j]).sum::<f64>()
            }));
        }
        (x, y)
    }

    #[test]
    fn small_lr_training_loss_falls_tenfold() {
        let (x, y) = affine_toy(200, 4);
        let tr = TrainingSet::new(&x, &y, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 16,
            seed: 5,
            lr: 1e-3,
            input_mode: InputMode::Raw,
            hidden: 32,
        };
        let (_, curve) = train(&tr, &tr, &cfg).unwrap();
        assert!(curve.last().unwrap().train_mse * 10.0 < curve[0].train_mse);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = affine_toy(300, 6);
        let tr = TrainingSet::new(&x[..200 * 4], &y[..200], 4).unwrap();
        let va = TrainingSet::new(&x[200 * 4..], &y[200..], 4).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 50,
            seed: 9,
            hidden: 16,
            input_mode: InputMode::Raw,
            lr: 0.01,
        };
        let (a, ca) = train(&tr, &va, &cfg).unwrap();
        let (b, cb) = train(&tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (x, y) = affine_toy(10, 0);
        let s = TrainingSet::new(&x, &y, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&s, &s, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_reports_epoch() {
        let (x, mut y) = affine_toy(20, 0);
        y[3] = [f64::INFINITY, 0.0, 0.0];
        let s = TrainingSet::new(&x, &y, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            hidden: 8,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&s, &s, &cfg),
            Err(Error::Divergence { epoch: 1 })
        ));
    }

    #[test]
    fn f32_training_runs() {
        let (x, y) = affine_toy(100, 7);
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let y32: Vec<[f32; 3]> = y.iter().map(|r| r.map(|v| v as f32)).collect();
        let s = TrainingSet::new(&x32, &y32, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 10,
            hidden: 16,
            input_mode: InputMode::Raw,
            ..TrainConfig::default()
        };
        let (_, curve) = train(&s, &s, &cfg).unwrap();
        assert!(curve.last().unwrap().val_mse < curve[0].val_mse);
    }
}

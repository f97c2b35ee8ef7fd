//! Two-layer perceptron `Linear -> LayerNorm -> ReLU -> Linear(3)` trained
//! with squared-error loss and Adam.
//!
//! All parameters live in one flat vector so the optimizer and checkpoint
//! code can treat them uniformly:
//!
//! ```text
//! [ W1 (hidden x input, row-major) | b1 | ln_gain | ln_bias | W2 (3 x hidden, row-major) | b2 ]
//! ```

mod adam;
mod checkpoint;
mod normalizer;
mod train;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use normalizer::{fit_normalizer, Normalizer, STD_FLOOR};
pub use train::{train, EpochMetrics, TrainConfig, TrainingSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::Point3;

pub const DEFAULT_HIDDEN: usize = 128;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const OUTPUT_DIM: usize = 3;

/// Which representation of the measurements the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Flattened weighted linear system, 12N values.
    Preprocessed,
    /// Stacked RSS/azimuth/elevation, 3N values.
    Raw,
}

impl InputMode {
    pub fn input_dim(self, anchors: usize) -> usize {
        match self {
            InputMode::Preprocessed => 12 * anchors,
            InputMode::Raw => 3 * anchors,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Preprocessed => "preprocessed",
            InputMode::Raw => "raw",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preprocessed" | "pre" => Ok(InputMode::Preprocessed),
            "raw" => Ok(InputMode::Raw),
            other => Err(Error::Config(format!(
                "unknown input mode {other:?}, expected \"raw\" or \"preprocessed\""
            ))),
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self { input, hidden }
    }

    pub fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input
    }
    pub fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    pub fn ln_gain(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden
    }
    pub fn ln_bias(&self) -> std::ops::Range<usize> {
        let s = self.ln_gain().end;
        s..s + self.hidden
    }
    pub fn w2(&self) -> std::ops::Range<usize> {
        let s = self.ln_bias().end;
        s..s + OUTPUT_DIM * self.hidden
    }
    pub fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + OUTPUT_DIM
    }
    pub fn param_count(&self) -> usize {
        self.b2().end
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub x_norm: Vec<T>,
    pub x_hat: Vec<T>,
    pub inv_std: T,
    pub h2: Vec<T>,
    pub h3: Vec<T>,
    pub output: [T; 3],
}

/// Layer normalization of `h`: returns `(gain * x_hat + bias, x_hat, 1/sqrt(var + eps))`
/// with population variance.
pub fn layer_norm<T: Scalar>(h: &[T], gain: &[T], bias: &[T], eps: T) -> (Vec<T>, Vec<T>, T) {
    let n = T::from_usize_lossy(h.len());
    let mean = h.iter().copied().sum::<T>() / n;
    let var = h.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    let x_hat: Vec<T> = h.iter().map(|&v| (v - mean) * inv_std).collect();
    let out = x_hat
        .iter()
        .zip(gain)
        .zip(bias)
        .map(|((&x, &g), &b)| g * x + b)
        .collect();
    (out, x_hat, inv_std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layout: Layout,
    pub params: Vec<T>,
    pub normalizer: Normalizer<T>,
    pub input_mode: InputMode,
    pub seed: u64,
}

impl<T: Scalar> MlpModel<T> {
    /// Uniform `+-sqrt(6 / fan_in)` weights, zero biases, unit LayerNorm gain.
    pub fn init(input_mode: InputMode, input: usize, hidden: usize, seed: u64) -> Self {
        let layout = Layout::new(input, hidden);
        let mut params = vec![T::zero(); layout.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lim1 = (6.0 / input as f64).sqrt();
        for p in &mut params[layout.w1()] {
            *p = T::lit(rng.random_range(-lim1..lim1));
        }
        for p in &mut params[layout.ln_gain()] {
            *p = T::one();
        }
        let lim2 = (6.0 / hidden as f64).sqrt();
        for p in &mut params[layout.w2()] {
            *p = T::lit(rng.random_range(-lim2..lim2));
        }
        Self {
            layout,
            params,
            normalizer: Normalizer::identity(input),
            input_mode,
            seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.layout.param_count() {
            return Err(Error::Dimension {
                expected: self.layout.param_count(),
                got: self.params.len(),
            });
        }
        if self.normalizer.mean.len() != self.layout.input
            || self.normalizer.std.len() != self.layout.input
        {
            return Err(Error::Dimension {
                expected: self.layout.input,
                got: self.normalizer.mean.len(),
            });
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(
                "model parameters must be finite".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.layout.input {
            return Err(Error::Dimension {
                expected: self.layout.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<([T; 3], ForwardCache<T>)> {
        self.check_input(x)?;
        let cache = self.forward_unchecked(x);
        Ok((cache.output, cache))
    }

    pub(crate) fn forward_unchecked(&self, x: &[T]) -> ForwardCache<T> {
        let l = &self.layout;
        let p = &self.params;
        let x_norm = self.normalizer.apply(x);
        let w1 = &p[l.w1()];
        let b1 = &p[l.b1()];
        let h1: Vec<T> = (0..l.hidden)
            .map(|j| {
                let row = &w1[j * l.input..(j + 1) * l.input];
                row.iter().zip(&x_norm).map(|(&w, &v)| w * v).sum::<T>() + b1[j]
            })
            .collect();
        let (h2, x_hat, inv_std) = layer_norm(
            &h1,
            &p[l.ln_gain()],
            &p[l.ln_bias()],
            T::lit(LAYER_NORM_EPS),
        );
        let h3: Vec<T> = h2.iter().map(|&v| v.max(T::zero())).collect();
        let w2 = &p[l.w2()];
        let b2 = &p[l.b2()];
        let mut output = [T::zero(); 3];
        for (k, o) in output.iter_mut().enumerate() {
            let row = &w2[k * l.hidden..(k + 1) * l.hidden];
            *o = row.iter().zip(&h3).map(|(&w, &v)| w * v).sum::<T>() + b2[k];
        }
        ForwardCache {
            x_norm,
            x_hat,
            inv_std,
            h2,
            h3,
            output,
        }
    }

    /// Gradient of the per-sample loss `||label - output||^2` for every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, label: [T; 3]) -> Vec<T> {
        let mut grads = vec![T::zero(); self.layout.param_count()];
        self.accumulate_gradients(cache, label, T::one(), &mut grads);
        grads
    }

    /// Adds `scale` times the per-sample loss gradient into `grads`.
    pub fn accumulate_gradients(
        &self,
        cache: &ForwardCache<T>,
        label: [T; 3],
        scale: T,
        grads: &mut [T],
    ) {
        let l = self.layout;
        let p = &self.params;
        let two = T::lit(2.0);
        let g_out: [T; 3] = std::array::from_fn(|k| scale * two * (cache.output[k] - label[k]));

        let w2 = &p[l.w2()];
        {
            let gw2 = &mut grads[l.w2()];
            for k in 0..OUTPUT_DIM {
                for j in 0..l.hidden {
                    gw2[k * l.hidden + j] += g_out[k] * cache.h3[j];
                }
            }
        }
        for (g, &go) in grads[l.b2()].iter_mut().zip(&g_out) {
            *g += go;
        }

        // through ReLU
        let g_h2: Vec<T> = (0..l.hidden)
            .map(|j| {
                if cache.h2[j] > T::zero() {
                    (0..OUTPUT_DIM)
                        .map(|k| w2[k * l.hidden + j] * g_out[k])
                        .sum()
                } else {
                    T::zero()
                }
            })
            .collect();

        // LayerNorm affine
        for (j, g) in grads[l.ln_gain()].iter_mut().enumerate() {
            *g += g_h2[j] * cache.x_hat[j];
        }
        for (g, &gh) in grads[l.ln_bias()].iter_mut().zip(&g_h2) {
            *g += gh;
        }

        // LayerNorm normalization, including the mean/variance coupling
        let gain = &p[l.ln_gain()];
        let g_xhat: Vec<T> = g_h2.iter().zip(gain).map(|(&g, &a)| g * a).collect();
        let n = T::from_usize_lossy(l.hidden);
        let mean_g = g_xhat.iter().copied().sum::<T>() / n;
        let mean_gx = g_xhat
            .iter()
            .zip(&cache.x_hat)
            .map(|(&g, &x)| g * x)
            .sum::<T>()
            / n;
        let g_h1: Vec<T> = g_xhat
            .iter()
            .zip(&cache.x_hat)
            .map(|(&g, &x)| cache.inv_std * (g - mean_g - x * mean_gx))
            .collect();

        for (g, &gh) in grads[l.b1()].iter_mut().zip(&g_h1) {
            *g += gh;
        }
        let gw1 = &mut grads[l.w1()];
        for (j, &gh) in g_h1.iter().enumerate() {
            if gh == T::zero() {
                continue;
            }
            let row = &mut gw1[j * l.input..(j + 1) * l.input];
            for (g, &x) in row.iter_mut().zip(&cache.x_norm) {
                *g += gh * x;
            }
        }
    }

    pub fn predict_one(&self, x: &[T]) -> Result<Point3<T>> {
        self.check_input(x)?;
        Ok(Point3::from_array(self.forward_unchecked(x).output))
    }

    /// Predictions for a row-major batch of inputs.
    pub fn predict(&self, features: &[T]) -> Result<Vec<Point3<T>>> {
        use rayon::prelude::*;
        let d = self.layout.input;
        if d == 0 || !features.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                got: features.len(),
            });
        }
        Ok(features
            .par_chunks(d)
            .map(|x| Point3::from_array(self.forward_unchecked(x).output))
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        let c = |v: &[T]| {
            v.iter()
                .map(|&x| U::lit(x.to_f64_lossy()))
                .collect::<Vec<U>>()
        };
        MlpModel {
            layout: self.layout,
            params: c(&self.params),
            normalizer: Normalizer {
                mean: c(&self.normalizer.mean),
                std: c(&self.normalizer.std),
            },
            input_mode: self.input_mode,
            seed: self.seed,
        }
    }
}

/// Mean over samples of the squared Euclidean error.
pub fn mse_loss<T: Scalar>(predictions: &[[T; 3]], labels: &[[T; 3]]) -> Result<T> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("mse of an empty batch".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    let total: T = predictions
        .iter()
        .zip(labels)
        .map(|(p, t)| (0..3).map(|k| (t[k] - p[k]) * (t[k] - p[k])).sum::<T>())
        .sum();
    Ok(total / T::from_usize_lossy(predictions.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_model(seed: u64, input: usize, hidden: usize) -> MlpModel<f64> {
        let mut m = MlpModel::init(InputMode::Raw, input, hidden, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        // perturb everything so no gradient is trivially zero
        for p in &mut m.params {
            *p += rng.random_range(-0.3..0.3);
        }
        m.normalizer = Normalizer {
            mean: (0..input).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..input).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        m
    }

    fn loss(m: &MlpModel<f64>, x: &[f64], t: [f64; 3]) -> f64 {
        let (o, _) = m.forward(x).unwrap();
        (0..3).map(|k| (t[k] - o[k]).powi(2)).sum()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut m = MlpModel::<f64>::init(InputMode::Raw, 5, 8, 1);
        m.params.iter_mut().for_each(|p| *p = 0.0);
        let (o, _) = m.forward(&[1.0, -2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(o, [0.0; 3]);
    }

    #[test]
    fn layer_norm_hand_values() {
        let (out, _, _) = layer_norm(&[1.0, 2.0, 3.0], &[1.0; 3], &[0.0; 3], 0.0);
        let s = 1.5f64.sqrt();
        assert!((out[0] + s).abs() < 1e-15);
        assert!(out[1].abs() < 1e-15);
        assert!((out[2] - s).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let h: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (out, _, _) = layer_norm(&h, &[1.0; 64], &[0.0; 64], LAYER_NORM_EPS);
            let mean = out.iter().sum::<f64>() / 64.0;
            let std = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0).sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dead_output_row_returns_bias() {
        let mut m = random_model(3, 6, 8);
        let l = m.layout;
        for j in 0..l.hidden {
            m.params[l.w2().start + l.hidden + j] = 0.0;
        }
        let b = m.params[l.b2().start + 1];
        let (o, _) = m.forward(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(o[1], b);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = MlpModel::<f64>::init(InputMode::Preprocessed, 48, 16, 0);
        assert!(matches!(
            m.forward(&[0.0; 12]),
            Err(Error::Dimension {
                expected: 48,
                got: 12
            })
        ));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(
            mse_loss(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]]).unwrap(),
            0.0
        );
        assert_eq!(mse_loss(&[[3.0, 4.0, 0.0]], &[[0.0; 3]]).unwrap(), 25.0);
        assert_eq!(
            mse_loss(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], &[[0.0; 3], [0.0; 3]]).unwrap(),
            2.5
        );
        assert!(mse_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn zero_error_zero_gradient() {
        let m = random_model(4, 12, 8);
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let (o, cache) = m.forward(&x).unwrap();
        assert!(m.backward(&cache, o).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gated_unit_has_zero_w2_gradient() {
        let m = random_model(5, 12, 8);
        let x: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, [1.0, -1.0, 2.0]);
        let l = m.layout;
        let dead: Vec<usize> = (0..l.hidden).filter(|&j| cache.h2[j] < 0.0).collect();
        assert!(!dead.is_empty());
        for j in dead {
            for k in 0..3 {
                assert_eq!(g[l.w2().start + k * l.hidden + j], 0.0);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-5;
        for seed in 0..10 {
            let mut m = random_model(seed, 12, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ];
            let (_, cache) = m.forward(&x).unwrap();
            if cache.h2.iter().any(|v| v.abs() < 1e-3) {
                continue;
            }
            let g = m.backward(&cache, t);
            for i in 0..m.params.len() {
                let orig = m.params[i];
                m.params[i] = orig + h;
                let up = loss(&m, &x, t);
                m.params[i] = orig - h;
                let down = loss(&m, &x, t);
                m.params[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let err = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-4, "seed {seed} param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn f32_forward_matches_f64() {
        let m = random_model(6, 12, 8);
        let m32: MlpModel<f32> = m.cast();
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let (a, _) = m.forward(&x).unwrap();
        let (b, _) = m32.forward(&x32).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn input_mode_parsing() {
        assert_eq!("raw".parse::<InputMode>().unwrap(), InputMode::Raw);
        assert_eq!(
            "preprocessed".parse::<InputMode>().unwrap(),
            InputMode::Preprocessed
        );
        assert!("rawish".parse::<InputMode>().is_err());
        assert_eq!(InputMode::Preprocessed.input_dim(4), 48);
        assert_eq!(InputMode::Raw.input_dim(4), 12);
    }
}

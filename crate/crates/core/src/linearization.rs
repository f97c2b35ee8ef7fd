//! Linearization of the RSS/AoA model into `A t = b`, the per-anchor weights,
//! and the flattened feature vector fed to the preprocessed-input network.
//!
//! Each anchor contributes three rows, grouped by block:
//!
//! ```text
//! RSS:        lambda_i u_i^T                 | lambda_i u_i^T a_i + eta d0
//! azimuth:    c_i^T                          | c_i^T a_i
//! elevation:  (cos(alpha_i) u_i - k)^T       | (cos(alpha_i) u_i - k)^T a_i
//! ```
//!
//! with `u_i` the unit vector pointing from anchor to target, `c_i` its
//! horizontal normal, `k = [0, 0, 1]`, `lambda_i = 10^(P_i / 10 gamma)` and
//! `eta = 10^(P0 / 10 gamma)`. The receiver exponent `gamma_rx` is used
//! throughout. At zero noise and matched exponent every row holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::MeasurementVector;
use crate::scalar::Scalar;
use crate::scene::{PathLossConfig, Point3};

/// `A` (row-major, 3N x 3) and `b` (3N).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<T> {
    pub a: Vec<[T; 3]>,
    pub b: Vec<T>,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn anchor_count(&self) -> usize {
        self.a.len() / 3
    }

    pub fn residual(&self, t: Point3<T>) -> Vec<T> {
        let t = t.to_array();
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| row[0] * t[0] + row[1] * t[1] + row[2] * t[2] - b)
            .collect()
    }

    pub fn residual_norm(&self, t: Point3<T>) -> T {
        self.residual(t).iter().map(|&r| r * r).sum::<T>().sqrt()
    }
}

/// Per-anchor weights and the RSS range estimates they derive from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    pub w: Vec<T>,
    pub d_hat: Vec<T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn uniform(n: usize) -> Self {
        Self {
            w: vec![T::one(); n],
            d_hat: vec![T::one(); n],
        }
    }
}

/// `[vec(A_w); b_w]`, column-major, length 12N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<T>(pub Vec<T>);

impl<T: Scalar> FeatureVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Inverse of [`feature_vector`].
    pub fn to_system(&self) -> Result<LinearSystem<T>> {
        let len = self.0.len();
        if len == 0 || !len.is_multiple_of(12) {
            return Err(Error::InvalidInput(format!(
                "feature length {len} is not a positive multiple of 12"
            )));
        }
        let rows = len / 4;
        let x = &self.0;
        let a = (0..rows)
            .map(|r| [x[r], x[rows + r], x[2 * rows + r]])
            .collect();
        let b = x[3 * rows..].to_vec();
        Ok(LinearSystem { a, b })
    }
}

pub fn lambda_eta<T: Scalar>(rss: &[T], pl: &PathLossConfig<T>) -> (Vec<T>, T) {
    let ten = T::lit(10.0);
    let scale = ten * pl.gamma_rx;
    let lambda = rss.iter().map(|&p| ten.powf(p / scale)).collect();
    (lambda, ten.powf(pl.p0_dbm / scale))
}

/// Unit vector for azimuth `phi` and polar elevation `alpha`.
pub fn direction_vector<T: Scalar>(phi: T, alpha: T) -> [T; 3] {
    let (sp, cp) = phi.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [cp * sa, sp * sa, ca]
}

/// Horizontal unit normal to the azimuth direction.
pub fn orthogonal_vector<T: Scalar>(phi: T) -> [T; 3] {
    let (sp, cp) = phi.sin_cos();
    [-sp, cp, T::zero()]
}

pub fn direction_vectors<T: Scalar>(azimuth: &[T], elevation: &[T]) -> (Vec<[T; 3]>, Vec<[T; 3]>) {
    let u = azimuth
        .iter()
        .zip(elevation)
        .map(|(&p, &a)| direction_vector(p, a))
        .collect();
    let c = azimuth.iter().map(|&p| orthogonal_vector(p)).collect();
    (u, c)
}

fn dot3<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn build_system<T: Scalar>(
    theta: &MeasurementVector<T>,
    anchors: &[Point3<T>],
    pl: &PathLossConfig<T>,
) -> Result<LinearSystem<T>> {
    let n = anchors.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!(
            "need at least 4 anchors, got {n}"
        )));
    }
    for len in [theta.rss.len(), theta.azimuth.len(), theta.elevation.len()] {
        if len != n {
            return Err(Error::Dimension {
                expected: n,
                got: len,
            });
        }
    }
    let (lambda, eta) = lambda_eta(&theta.rss, pl);
    let (u, c) = direction_vectors(&theta.azimuth, &theta.elevation);
    let mut a = Vec::with_capacity(3 * n);
    let mut b = Vec::with_capacity(3 * n);

    for i in 0..n {
        let row = u[i].map(|v| lambda[i] * v);
        a.push(row);
        b.push(dot3(row, anchors[i].to_array()) + eta * pl.d0);
    }
    for i in 0..n {
        a.push(c[i]);
        b.push(dot3(c[i], anchors[i].to_array()));
    }
    for i in 0..n {
        let cos_a = theta.elevation[i].cos();
        let row = [cos_a * u[i][0], cos_a * u[i][1], cos_a * u[i][2] - T::one()];
        a.push(row);
        b.push(dot3(row, anchors[i].to_array()));
    }
    Ok(LinearSystem { a, b })
}

/// `w_i = 1 - d_hat_i / sum_j d_hat_j`, with `d_hat_i = d0 10^((P0 - P_i) / 10 gamma_rx)`.
pub fn build_weights<T: Scalar>(rss: &[T], pl: &PathLossConfig<T>) -> WeightVector<T> {
    let ten = T::lit(10.0);
    let d_hat: Vec<T> = rss
        .iter()
        .map(|&p| pl.d0 * ten.powf((pl.p0_dbm - p) / (ten * pl.gamma_rx)))
        .collect();
    let total: T = d_hat.iter().copied().sum();
    let w = d_hat.iter().map(|&d| T::one() - d / total).collect();
    WeightVector { w, d_hat }
}

/// Scales row `i` of every measurement block by `w_i`, i.e. `(I_3 kron diag(w)) A`.
pub fn apply_weights<T: Scalar>(
    sys: &LinearSystem<T>,
    w: &WeightVector<T>,
) -> Result<LinearSystem<T>> {
    let n = w.w.len();
    if sys.a.len() != 3 * n || sys.b.len() != 3 * n {
        return Err(Error::Dimension {
            expected: 3 * n,
            got: sys.a.len(),
        });
    }
    let a = sys
        .a
        .iter()
        .enumerate()
        .map(|(r, row)| row.map(|v| w.w[r % n] * v))
        .collect();
    let b = sys
        .b
        .iter()
        .enumerate()
        .map(|(r, &v)| w.w[r % n] * v)
        .collect();
    Ok(LinearSystem { a, b })
}

/// Column-major `vec(A_w)` followed by `b_w`.
pub fn feature_vector<T: Scalar>(weighted: &LinearSystem<T>) -> FeatureVector<T> {
    let rows = weighted.a.len();
    let mut x = Vec::with_capacity(4 * rows);
    for col in 0..3 {
        x.extend(weighted.a.iter().map(|r| r[col]));
    }
    x.extend_from_slice(&weighted.b);
    FeatureVector(x)
}

/// Full chain from measurements to the 12N feature vector.
pub fn preprocess<T: Scalar>(
    theta: &MeasurementVector<T>,
    anchors: &[Point3<T>],
    pl: &PathLossConfig<T>,
) -> Result<FeatureVector<T>> {
    let sys = build_system(theta, anchors, pl)?;
    let w = build_weights(&theta.rss, pl);
    Ok(feature_vector(&apply_weights(&sys, &w)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{synthesize_measurements, NoiseConfig};
    use crate::scene::{SceneConfig, SceneSampler};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn noiseless(
        seed: u64,
    ) -> (
        crate::scene::Scene<f64>,
        MeasurementVector<f64>,
        PathLossConfig<f64>,
    ) {
        let sampler =
            SceneSampler::new(&SceneConfig::with_seed(seed), &PathLossConfig::matched(2.5))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let s = sampler.sample(&mut rng).unwrap();
        let m = synthesize_measurements(&s, sampler.path_loss(), &NoiseConfig::default(), &mut rng)
            .unwrap();
        (s, m, *sampler.path_loss())
    }

    #[test]
    fn lambda_equals_eta_at_reference_power() {
        let pl = PathLossConfig::default();
        let (l, eta) = lambda_eta(&[-10.0], &pl);
        assert_eq!(l[0], eta);
    }

    #[test]
    fn lambda_hand_value() {
        let (l, _) = lambda_eta(&[-35.0], &PathLossConfig::default());
        assert!((l[0] - 10f64.powf(-1.4)).abs() < 1e-15);
        assert!((l[0] - 0.039811).abs() < 1e-6);
    }

    #[test]
    fn lambda_times_distance_is_constant_noiseless() {
        for seed in 0..200 {
            let (s, m, pl) = noiseless(seed);
            let (lambda, eta) = lambda_eta(&m.rss, &pl);
            for (i, a) in s.anchors.iter().enumerate() {
                let lhs = lambda[i] * (s.target - *a).norm();
                assert!((lhs - eta * pl.d0).abs() <= 1e-12 * eta);
            }
        }
    }

    #[test]
    fn direction_axis_cases() {
        assert_eq!(orthogonal_vector(0.0), [-0.0, 1.0, 0.0]);
        let u = direction_vector(0.0, FRAC_PI_2);
        assert!((u[0] - 1.0).abs() < 1e-15 && u[1].abs() < 1e-15 && u[2].abs() < 1e-15);
        let u = direction_vector(FRAC_PI_4, FRAC_PI_2);
        let h = 2f64.sqrt() / 2.0;
        assert!((u[0] - h).abs() < 1e-15 && (u[1] - h).abs() < 1e-15 && u[2].abs() < 1e-15);
    }

    #[test]
    fn direction_vectors_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let az: Vec<f64> = (0..10_000).map(|_| rng.random_range(-PI..PI)).collect();
        let el: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..PI)).collect();
        let (u, c) = direction_vectors(&az, &el);
        for (u, c) in u.iter().zip(&c) {
            assert!((dot3(*u, *u) - 1.0).abs() < 1e-14);
            assert!((dot3(*c, *c) - 1.0).abs() < 1e-14);
            assert!(dot3(*u, *c).abs() < 1e-14);
        }
    }

    #[test]
    fn system_dimensions_and_exactness() {
        for seed in 0..200 {
            let (s, m, pl) = noiseless(seed);
            let sys = build_system(&m, &s.anchors, &pl).unwrap();
            assert_eq!(sys.a.len(), 12);
            assert_eq!(sys.b.len(), 12);
            let worst = sys
                .residual(s.target)
                .iter()
                .fold(0.0f64, |acc, r| acc.max(r.abs()));
            assert!(worst < 1e-9, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn horizontal_elevation_row() {
        let anchors: Vec<Point3<f64>> = (0..4)
            .map(|i| Point3::new(i as f64, 1.0, 2.0 + i as f64))
            .collect();
        let m = MeasurementVector {
            rss: vec![-20.0; 4],
            azimuth: vec![0.3, 1.0, -2.0, 2.5],
            elevation: vec![FRAC_PI_2; 4],
        };
        let sys = build_system(&m, &anchors, &PathLossConfig::default()).unwrap();
        for i in 0..4 {
            let row = sys.a[8 + i];
            assert!(row[0].abs() < 1e-15 && row[1].abs() < 1e-15);
            assert_eq!(row[2], -1.0);
            assert!((sys.b[8 + i] + anchors[i].z).abs() < 1e-14);
        }
    }

    #[test]
    fn equal_rss_gives_equal_weights() {
        let w = build_weights::<f64>(&[-30.0; 4], &PathLossConfig::default());
        for wi in &w.w {
            assert!((wi - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn range_estimate_hand_value() {
        let w = build_weights::<f64>(&[-35.0, -20.0, -25.0, -30.0], &PathLossConfig::default());
        assert!((w.d_hat[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_leave_system_unchanged() {
        let (s, m, pl) = noiseless(3);
        let sys = build_system(&m, &s.anchors, &pl).unwrap();
        assert_eq!(apply_weights(&sys, &WeightVector::uniform(4)).unwrap(), sys);
        let scaled = apply_weights(
            &sys,
            &WeightVector {
                w: vec![0.75; 4],
                d_hat: vec![1.0; 4],
            },
        )
        .unwrap();
        for (r, r0) in scaled.a.iter().zip(&sys.a) {
            for k in 0..3 {
                assert_eq!(r[k], 0.75 * r0[k]);
            }
        }
    }

    #[test]
    fn weights_scale_rows_blockwise() {
        let (s, m, pl) = noiseless(5);
        let sys = build_system(&m, &s.anchors, &pl).unwrap();
        let w = WeightVector {
            w: vec![0.1, 0.2, 0.3, 0.4],
            d_hat: vec![1.0; 4],
        };
        let ws = apply_weights(&sys, &w).unwrap();
        for block in 0..3 {
            for i in 0..4 {
                let r = block * 4 + i;
                for k in 0..3 {
                    assert_eq!(ws.a[r][k], w.w[i] * sys.a[r][k]);
                }
                assert_eq!(ws.b[r], w.w[i] * sys.b[r]);
            }
        }
    }

    #[test]
    fn feature_layout() {
        let (s, m, pl) = noiseless(6);
        let x = preprocess(&m, &s.anchors, &pl).unwrap();
        assert_eq!(x.len(), 48);
        let zero = LinearSystem {
            a: vec![[0.0; 3]; 12],
            b: vec![0.0; 12],
        };
        assert!(feature_vector(&zero).0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f32_chain_is_consistent() {
        let (s, m, pl) = noiseless(7);
        let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let m32 = MeasurementVector {
            rss: cast(&m.rss),
            azimuth: cast(&m.azimuth),
            elevation: cast(&m.elevation),
        };
        let anchors: Vec<Point3<f32>> = s.anchors.iter().map(|a| a.cast()).collect();
        let pl32 = PathLossConfig::<f32>::matched(2.5);
        let _ = pl;
        let sys = build_system(&m32, &anchors, &pl32).unwrap();
        let worst = sys
            .residual(s.target.cast())
            .iter()
            .fold(0.0f32, |a, r| a.max(r.abs()));
        assert!(worst < 1e-3, "{worst}");
    }

    proptest! {
        #[test]
        fn weights_sum_to_n_minus_one(rss in proptest::collection::vec(-90.0f64..0.0, 4..12)) {
            let w = build_weights(&rss, &PathLossConfig::default());
            let n = rss.len() as f64;
            prop_assert!((w.w.iter().sum::<f64>() - (n - 1.0)).abs() < 1e-12);
            prop_assert!(w.w.iter().all(|&x| x > 0.0 && x < 1.0));
            prop_assert!(w.d_hat.iter().all(|&d| d > 0.0));
        }

        #[test]
        fn vec_unvec_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 48)) {
            let x = FeatureVector(vals.clone());
            let sys = x.to_system().unwrap();
            prop_assert_eq!(feature_vector(&sys).0, vals);
        }
    }
}

//! Noisy RSS / azimuth / elevation observations and their Gaussian likelihood.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{geometry_between, PathLossConfig, Point3, Scene};

/// Standard deviations of the three measurement noises (dB, rad, rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig<T> {
    pub sigma_rss: T,
    pub sigma_azimuth: T,
    pub sigma_elevation: T,
}

impl<T: Scalar> NoiseConfig<T> {
    pub fn new(sigma_rss: T, sigma_azimuth: T, sigma_elevation: T) -> Self {
        Self {
            sigma_rss,
            sigma_azimuth,
            sigma_elevation,
        }
    }

    /// RSS noise in dB, angle noises in degrees.
    pub fn from_db_deg(sigma_rss_db: T, azimuth_deg: T, elevation_deg: T) -> Self {
        Self::new(
            sigma_rss_db,
            azimuth_deg.to_radians(),
            elevation_deg.to_radians(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_rss", self.sigma_rss),
            ("sigma_azimuth", self.sigma_azimuth),
            ("sigma_elevation", self.sigma_elevation),
        ] {
            if !(s >= T::zero()) || !s.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Stacked observation `[rss; azimuth; elevation]`, each block one entry per anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector<T> {
    pub rss: Vec<T>,
    pub azimuth: Vec<T>,
    pub elevation: Vec<T>,
}

impl<T: Scalar> MeasurementVector<T> {
    pub fn anchor_count(&self) -> usize {
        self.rss.len()
    }

    /// The 3N-vector in stacking order rss, azimuth, elevation.
    pub fn theta(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(3 * self.rss.len());
        v.extend_from_slice(&self.rss);
        v.extend_from_slice(&self.azimuth);
        v.extend_from_slice(&self.elevation);
        v
    }

    pub fn from_theta(theta: &[T]) -> Result<Self> {
        if theta.is_empty() || !theta.len().is_multiple_of(3) {
            return Err(Error::InvalidInput(format!(
                "measurement vector length {} is not a positive multiple of 3",
                theta.len()
            )));
        }
        let n = theta.len() / 3;
        Ok(Self {
            rss: theta[..n].to_vec(),
            azimuth: theta[n..2 * n].to_vec(),
            elevation: theta[2 * n..].to_vec(),
        })
    }

    fn check_consistent(&self, anchors: usize) -> Result<()> {
        for len in [self.rss.len(), self.azimuth.len(), self.elevation.len()] {
            if len != anchors {
                return Err(Error::Dimension {
                    expected: anchors,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

fn gaussian<T: Scalar, R: Rng + ?Sized>(rng: &mut R, sigma: T) -> T {
    // Always consume a draw so streams stay aligned across noise levels.
    let z: f64 = rng.sample(StandardNormal);
    sigma * T::lit(z)
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    if a > -T::PI() && a <= T::PI() {
        return a;
    }
    let two_pi = T::TAU();
    let mut r = (a + T::PI()) % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    let w = r - T::PI();
    if w <= -T::PI() {
        w + two_pi
    } else {
        w
    }
}

/// Noiseless log-distance path loss at distance `d`.
pub fn path_loss_dbm<T: Scalar>(d: T, gamma: T, pl: &PathLossConfig<T>) -> T {
    pl.p0_dbm - T::lit(10.0) * gamma * (d / pl.d0).log10()
}

pub fn synthesize_rss<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene<T>,
    pl: &PathLossConfig<T>,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> Result<Vec<T>> {
    (0..scene.anchor_count())
        .map(|i| {
            let g = scene.true_geometry(i)?;
            Ok(path_loss_dbm(g.distance, scene.gamma_true, pl) + gaussian(rng, noise.sigma_rss))
        })
        .collect()
}

/// Azimuth noise wraps into (-pi, pi]; elevation noise clamps to [0, pi].
pub fn synthesize_angles<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene<T>,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>)> {
    let geoms = (0..scene.anchor_count())
        .map(|i| scene.true_geometry(i))
        .collect::<Result<Vec<_>>>()?;
    let azimuth = geoms
        .iter()
        .map(|g| wrap_angle(g.azimuth + gaussian(rng, noise.sigma_azimuth)))
        .collect();
    let elevation = geoms
        .iter()
        .map(|g| {
            (g.elevation + gaussian(rng, noise.sigma_elevation))
                .max(T::zero())
                .min(T::PI())
        })
        .collect();
    Ok((azimuth, elevation))
}

pub fn synthesize_measurements<T: Scalar, R: Rng + ?Sized>(
    scene: &Scene<T>,
    pl: &PathLossConfig<T>,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> Result<MeasurementVector<T>> {
    let rss = synthesize_rss(scene, pl, noise, rng)?;
    let (azimuth, elevation) = synthesize_angles(scene, noise, rng)?;
    Ok(MeasurementVector {
        rss,
        azimuth,
        elevation,
    })
}

/// Log of the independent-Gaussian measurement density at `candidate`.
///
/// The model uses the receiver exponent `gamma_rx`. Azimuth residuals are
/// taken modulo 2pi.
pub fn log_likelihood<T: Scalar>(
    theta: &MeasurementVector<T>,
    candidate: Point3<T>,
    anchors: &[Point3<T>],
    pl: &PathLossConfig<T>,
    noise: &NoiseConfig<T>,
) -> Result<T> {
    theta.check_consistent(anchors.len())?;
    let sigmas = [noise.sigma_rss, noise.sigma_azimuth, noise.sigma_elevation];
    if sigmas.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Config(
            "likelihood requires strictly positive noise deviations".into(),
        ));
    }
    let half = T::lit(0.5);
    let log_two_pi = T::TAU().ln();
    let term = |residual: T, sigma: T| {
        -half * (log_two_pi + (sigma * sigma).ln())
            - residual * residual / (T::lit(2.0) * sigma * sigma)
    };

    let mut ll = T::zero();
    for (i, &anchor) in anchors.iter().enumerate() {
        let g =
            geometry_between(candidate, anchor).ok_or(Error::DegenerateGeometry { anchor: i })?;
        ll += term(
            theta.rss[i] - path_loss_dbm(g.distance, pl.gamma_rx, pl),
            sigmas[0],
        );
        ll += term(wrap_angle(theta.azimuth[i] - g.azimuth), sigmas[1]);
        ll += term(theta.elevation[i] - g.elevation, sigmas[2]);
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{SceneConfig, SceneSampler};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn one_anchor_scene(d: f64, gamma: f64) -> Scene<f64> {
        Scene {
            anchors: vec![Point3::new(0.0, 0.0, 0.0)],
            target: Point3::new(d, 0.0, 0.0),
            gamma_true: gamma,
        }
    }

    fn matched_sampler(seed: u64) -> SceneSampler<f64> {
        SceneSampler::new(&SceneConfig::with_seed(seed), &PathLossConfig::matched(2.5)).unwrap()
    }

    #[test]
    fn rss_at_reference_distance() {
        let pl = PathLossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = synthesize_rss(
            &one_anchor_scene(1.0, 2.5),
            &pl,
            &NoiseConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(p, vec![-10.0]);
    }

    #[test]
    fn rss_at_ten_meters() {
        let pl = PathLossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = synthesize_rss(
            &one_anchor_scene(10.0, 2.5),
            &pl,
            &NoiseConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!((p[0] + 35.0).abs() < 1e-12);
    }

    #[test]
    fn rss_noise_has_requested_deviation() {
        let pl = PathLossConfig::default();
        let scene = one_anchor_scene(4.0, 2.5);
        let clean = path_loss_dbm(4.0, 2.5, &pl);
        let noise = NoiseConfig::new(2.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let dev: Vec<f64> = (0..n)
            .map(|_| synthesize_rss(&scene, &pl, &noise, &mut rng).unwrap()[0] - clean)
            .collect();
        let mean = dev.iter().sum::<f64>() / n as f64;
        let std = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((std - 2.0).abs() < 0.03, "std {std}");
    }

    #[test]
    fn zero_noise_angles_are_exact() {
        let sampler = matched_sampler(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let scene = sampler.sample(&mut rng).unwrap();
        let (az, el) = synthesize_angles(&scene, &NoiseConfig::default(), &mut rng).unwrap();
        for i in 0..scene.anchor_count() {
            let g = scene.true_geometry(i).unwrap();
            assert_eq!(az[i], g.azimuth);
            assert_eq!(el[i], g.elevation);
        }
    }

    #[test]
    fn azimuth_wraps_across_pi() {
        let w = wrap_angle(PI - 0.01 + 0.02);
        assert!((w - (-PI + 0.01)).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.5) - (-PI + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn elevation_noise_deviation() {
        // target level with the anchor: elevation pi/2, far from the clamps
        let scene = one_anchor_scene(5.0, 2.5);
        let noise = NoiseConfig::new(0.0, 0.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let dev: Vec<f64> = (0..n)
            .map(|_| synthesize_angles(&scene, &noise, &mut rng).unwrap().1[0] - PI / 2.0)
            .collect();
        let mean = dev.iter().sum::<f64>() / n as f64;
        let std = (dev.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((std - 0.1).abs() < 0.002, "std {std}");
    }

    #[test]
    fn stacking_order_and_length() {
        let sampler = matched_sampler(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = sampler.sample(&mut rng).unwrap();
        let m = synthesize_measurements(
            &scene,
            sampler.path_loss(),
            &NoiseConfig::new(1.0, 0.1, 0.1),
            &mut rng,
        )
        .unwrap();
        let theta = m.theta();
        assert_eq!(theta.len(), 12);
        for i in 0..4 {
            assert_eq!(theta[i], m.rss[i]);
            assert_eq!(theta[4 + i], m.azimuth[i]);
            assert_eq!(theta[8 + i], m.elevation[i]);
        }
        assert_eq!(MeasurementVector::from_theta(&theta).unwrap(), m);
    }

    #[test]
    fn same_seed_same_measurements() {
        let sampler = matched_sampler(8);
        let noise = NoiseConfig::new(3.0, 0.05, 0.05);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let s = sampler.sample(&mut rng).unwrap();
            synthesize_measurements(&s, sampler.path_loss(), &noise, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noiseless_rss_inverts_to_distance() {
        let sampler = matched_sampler(21);
        let pl = *sampler.path_loss();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = sampler.sample(&mut rng).unwrap();
            let m = synthesize_measurements(&s, &pl, &NoiseConfig::default(), &mut rng).unwrap();
            for i in 0..4 {
                let d = pl.d0 * 10f64.powf((pl.p0_dbm - m.rss[i]) / (10.0 * pl.gamma_rx));
                let truth = s.true_geometry(i).unwrap().distance;
                assert!((d - truth).abs() <= 1e-9 * truth);
            }
        }
    }

    fn noiseless_case(seed: u64) -> (Scene<f64>, MeasurementVector<f64>, PathLossConfig<f64>) {
        let sampler = matched_sampler(seed);
        let pl = *sampler.path_loss();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sampler.sample(&mut rng).unwrap();
        let m = synthesize_measurements(&s, &pl, &NoiseConfig::default(), &mut rng).unwrap();
        (s, m, pl)
    }

    #[test]
    fn likelihood_zero_residual_is_normalization_only() {
        let (s, m, pl) = noiseless_case(12);
        let noise = NoiseConfig::new(2.0, 0.1, 0.2);
        let ll = log_likelihood(&m, s.target, &s.anchors, &pl, &noise).unwrap();
        let want: f64 = -4.0
            * [2.0f64, 0.1, 0.2]
                .iter()
                .map(|s| 0.5 * (2.0 * PI * s * s).ln())
                .sum::<f64>();
        assert!((ll - want).abs() < 1e-9, "{ll} vs {want}");
    }

    #[test]
    fn likelihood_is_maximized_at_truth() {
        let (s, m, pl) = noiseless_case(13);
        let noise = NoiseConfig::new(2.0, 0.1, 0.1);
        let best = log_likelihood(&m, s.target, &s.anchors, &pl, &noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let off = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * 0.3;
            let ll = log_likelihood(&m, s.target + off, &s.anchors, &pl, &noise).unwrap();
            assert!(ll < best);
        }
    }

    #[test]
    fn doubling_sigma_shifts_normalization() {
        let (s, m, pl) = noiseless_case(14);
        let a = NoiseConfig::new(1.0, 0.1, 0.1);
        let b = NoiseConfig::new(2.0, 0.2, 0.2);
        let la = log_likelihood(&m, s.target, &s.anchors, &pl, &a).unwrap();
        let lb = log_likelihood(&m, s.target, &s.anchors, &pl, &b).unwrap();
        assert!(((lb - la) - (-12.0 * 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn likelihood_rejects_zero_sigma() {
        let (s, m, pl) = noiseless_case(15);
        let err = log_likelihood(
            &m,
            s.target,
            &s.anchors,
            &pl,
            &NoiseConfig::new(1.0, 0.0, 0.1),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn per_anchor_noise_is_uncorrelated() {
        let sampler = matched_sampler(31);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = sampler.sample(&mut rng).unwrap();
        let pl = *sampler.path_loss();
        let noise = NoiseConfig::new(1.0, 0.0, 0.0);
        let clean = synthesize_rss(&s, &pl, &NoiseConfig::default(), &mut rng).unwrap();
        let n = 100_000;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for _ in 0..n {
            let p = synthesize_rss(&s, &pl, &noise, &mut rng).unwrap();
            let (x, y) = (p[0] - clean[0], p[1] - clean[1]);
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        assert!((sxy / (sxx * syy).sqrt()).abs() < 0.02);
    }
}

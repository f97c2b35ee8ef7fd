//! Anchor/target geometry and path-loss configuration.

use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

/// Minimum target-anchor separation in meters.
pub const MIN_ANCHOR_DISTANCE: f64 = 0.5;
/// Anchor sets whose centered coordinate matrix is worse conditioned are redrawn.
pub const MAX_ANCHOR_CONDITION: f64 = 1e6;
const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(v: [T; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Scalar>(self) -> Point3<U> {
        Point3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Where anchors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorLayout<T> {
    /// One anchor set drawn uniformly in the box from `seed`, reused for every scene.
    FixedSeeded {
        seed: u64,
    },
    UserProvided {
        anchors: Vec<Point3<T>>,
    },
    /// Fresh anchors drawn from the caller's random source on every scene.
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig<T> {
    pub box_size: T,
    pub anchor_count: usize,
    pub anchor_layout: AnchorLayout<T>,
}

impl<T: Scalar> SceneConfig<T> {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            box_size: T::lit(15.0),
            anchor_count: 4,
            anchor_layout: AnchorLayout::FixedSeeded { seed },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_size > T::zero()) || !self.box_size.is_finite() {
            return Err(Error::Config(format!(
                "box_size must be positive, got {}",
                self.box_size
            )));
        }
        if self.anchor_count < 4 {
            return Err(Error::Config(format!(
                "anchor_count must be at least 4, got {}",
                self.anchor_count
            )));
        }
        if let AnchorLayout::UserProvided { anchors } = &self.anchor_layout {
            if anchors.len() != self.anchor_count {
                return Err(Error::Config(format!(
                    "anchor_layout provides {} anchors but anchor_count is {}",
                    anchors.len(),
                    self.anchor_count
                )));
            }
            if anchors.iter().any(|a| !a.is_finite()) {
                return Err(Error::Config("anchor coordinates must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Log-distance path-loss parameters.
///
/// `gamma_true_range` drives measurement generation; `gamma_rx` is the
/// exponent the receiver assumes in every estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossConfig<T> {
    pub p0_dbm: T,
    pub d0: T,
    pub gamma_true_range: [T; 2],
    pub gamma_rx: T,
}

impl<T: Scalar> Default for PathLossConfig<T> {
    fn default() -> Self {
        Self {
            p0_dbm: T::lit(-10.0),
            d0: T::one(),
            gamma_true_range: [T::lit(2.2), T::lit(2.8)],
            gamma_rx: T::lit(2.5),
        }
    }
}

impl<T: Scalar> PathLossConfig<T> {
    /// Generation and reception share a single exponent.
    pub fn matched(gamma: T) -> Self {
        Self {
            gamma_true_range: [gamma, gamma],
            gamma_rx: gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.gamma_true_range;
        if !(self.d0 > T::zero()) {
            return Err(Error::Config(format!(
                "d0 must be positive, got {}",
                self.d0
            )));
        }
        if !(lo > T::zero()) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::Config(format!(
                "gamma_true_range must be positive and ordered, got [{lo}, {hi}]"
            )));
        }
        if !(self.gamma_rx > T::zero()) || !self.gamma_rx.is_finite() {
            return Err(Error::Config(format!(
                "gamma_rx must be positive, got {}",
                self.gamma_rx
            )));
        }
        if !self.p0_dbm.is_finite() {
            return Err(Error::Config("p0_dbm must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene<T> {
    pub anchors: Vec<Point3<T>>,
    pub target: Point3<T>,
    pub gamma_true: T,
}

/// Distance, azimuth and elevation of a target as seen from one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorGeometry<T> {
    pub distance: T,
    /// Four-quadrant azimuth in (-pi, pi].
    pub azimuth: T,
    /// Polar angle from +z in [0, pi].
    pub elevation: T,
}

/// Geometry of `target` relative to `anchor`. Azimuth is 0 on the vertical axis.
pub fn geometry_between<T: Scalar>(
    target: Point3<T>,
    anchor: Point3<T>,
) -> Option<AnchorGeometry<T>> {
    let d = target - anchor;
    let distance = d.norm();
    if !(distance > T::zero()) {
        return None;
    }
    let azimuth = if d.x == T::zero() && d.y == T::zero() {
        T::zero()
    } else {
        let a = d.y.atan2(d.x);
        if a == -T::PI() {
            T::PI()
        } else {
            a
        }
    };
    let cos_el = (d.z / distance).max(-T::one()).min(T::one());
    Some(AnchorGeometry {
        distance,
        azimuth,
        elevation: cos_el.acos(),
    })
}

impl<T: Scalar> Scene<T> {
    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn true_geometry(&self, anchor_index: usize) -> Result<AnchorGeometry<T>> {
        let anchor = *self.anchors.get(anchor_index).ok_or_else(|| {
            Error::InvalidInput(format!(
                "anchor index {anchor_index} out of range for {} anchors",
                self.anchors.len()
            ))
        })?;
        geometry_between(self.target, anchor).ok_or(Error::DegenerateGeometry {
            anchor: anchor_index,
        })
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        Ok(serde_json::from_str(s)?)
    }
}

fn uniform_point<T: Scalar, R: Rng + ?Sized>(rng: &mut R, box_size: T) -> Point3<T> {
    let b = box_size.to_f64_lossy();
    let x: f64 = rng.random::<f64>() * b;
    let y: f64 = rng.random::<f64>() * b;
    let z: f64 = rng.random::<f64>() * b;
    Point3::new(T::lit(x), T::lit(y), T::lit(z))
}

fn anchors_well_posed<T: Scalar>(anchors: &[Point3<T>]) -> bool {
    for (i, a) in anchors.iter().enumerate() {
        for b in &anchors[i + 1..] {
            if (*a - *b).norm() == T::zero() {
                return false;
            }
        }
    }
    let n = T::from_usize_lossy(anchors.len());
    let centroid = anchors
        .iter()
        .fold(Point3::default(), |acc: Point3<T>, a| acc + *a)
        * (T::one() / n);
    let rows: Vec<[T; 3]> = anchors.iter().map(|a| (*a - centroid).to_array()).collect();
    // cond(C) = sqrt(cond(C^T C))
    let cond = linalg::spd_condition3(linalg::gram3(&rows)).sqrt();
    cond.to_f64_lossy() <= MAX_ANCHOR_CONDITION
}

fn draw_anchors<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    box_size: T,
    n: usize,
) -> Result<Vec<Point3<T>>> {
    for _ in 0..MAX_REJECTIONS {
        let anchors: Vec<Point3<T>> = (0..n).map(|_| uniform_point(rng, box_size)).collect();
        if anchors_well_posed(&anchors) {
            return Ok(anchors);
        }
    }
    Err(Error::Config(
        "could not draw a non-degenerate anchor set".into(),
    ))
}

/// Draws the fixed anchor set for a `FixedSeeded` layout.
pub fn seeded_anchors<T: Scalar>(seed: u64, box_size: T, n: usize) -> Result<Vec<Point3<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_anchors(&mut rng, box_size, n)
}

/// Samples scenes for one experiment, resolving fixed anchors once.
#[derive(Debug, Clone)]
pub struct SceneSampler<T> {
    cfg: SceneConfig<T>,
    pl: PathLossConfig<T>,
    anchors: Option<Vec<Point3<T>>>,
}

impl<T: Scalar> SceneSampler<T> {
    pub fn new(cfg: &SceneConfig<T>, pl: &PathLossConfig<T>) -> Result<Self> {
        cfg.validate()?;
        pl.validate()?;
        let anchors = match &cfg.anchor_layout {
            AnchorLayout::FixedSeeded { seed } => {
                Some(seeded_anchors(*seed, cfg.box_size, cfg.anchor_count)?)
            }
            AnchorLayout::UserProvided { anchors } => Some(anchors.clone()),
            AnchorLayout::Randomized => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            pl: *pl,
            anchors,
        })
    }

    /// The anchor set shared by every scene, if the layout is fixed.
    pub fn fixed_anchors(&self) -> Option<&[Point3<T>]> {
        self.anchors.as_deref()
    }

    pub fn config(&self) -> &SceneConfig<T> {
        &self.cfg
    }

    pub fn path_loss(&self) -> &PathLossConfig<T> {
        &self.pl
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scene<T>> {
        let anchors = match &self.anchors {
            Some(a) => a.clone(),
            None => draw_anchors(rng, self.cfg.box_size, self.cfg.anchor_count)?,
        };
        let d_min = T::lit(MIN_ANCHOR_DISTANCE);
        let b = self.cfg.box_size;
        let mut target = None;
        for _ in 0..MAX_REJECTIONS {
            let t = uniform_point(rng, b);
            let inside = [t.x, t.y, t.z].iter().all(|&c| c > T::zero() && c < b);
            if inside && anchors.iter().all(|a| (t - *a).norm() >= d_min) {
                target = Some(t);
                break;
            }
        }
        let target = target.ok_or_else(|| {
            Error::Config("no admissible target position: anchors crowd the box".into())
        })?;
        let [lo, hi] = self.pl.gamma_true_range;
        let u: f64 = rng.random();
        let gamma_true = lo + (hi - lo) * T::lit(u);
        Ok(Scene {
            anchors,
            target,
            gamma_true,
        })
    }
}

/// One-shot scene sampling. Prefer [`SceneSampler`] in loops.
pub fn sample_scene<T: Scalar, R: Rng + ?Sized>(
    cfg: &SceneConfig<T>,
    pl: &PathLossConfig<T>,
    rng: &mut R,
) -> Result<Scene<T>> {
    SceneSampler::new(cfg, pl)?.sample(rng)
}

//! Monte Carlo RMSE sweeps over one noise parameter at a time.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{solve_ls, solve_wls, Method};
use crate::linearization::{apply_weights, build_system, build_weights, feature_vector};
use crate::measurement::{synthesize_measurements, NoiseConfig};
use crate::mlp::{Checkpoint, InputMode, MlpModel};
use crate::scalar::Scalar;
use crate::scene::{Point3, SceneSampler};

pub const CSV_HEADER: [&str; 8] = [
    "sweep_var",
    "value",
    "method",
    "rmse_m",
    "trials",
    "failures",
    "ci_low",
    "ci_high",
];
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// A sweep aborts when more than this fraction of trials at a point is singular.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

pub fn rmse<T: Scalar>(truths: &[Point3<T>], estimates: &[Point3<T>]) -> Result<T> {
    if truths.is_empty() {
        return Err(Error::InvalidInput("rmse of zero trials".into()));
    }
    if truths.len() != estimates.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: estimates.len(),
        });
    }
    let sum: T = truths
        .iter()
        .zip(estimates)
        .map(|(&t, &e)| {
            let d = t - e;
            d.dot(d)
        })
        .sum();
    Ok((sum / T::from_usize_lossy(truths.len())).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SigmaRss,
    SigmaAzimuth,
    SigmaElevation,
}

impl SweepVariable {
    pub const ALL: [SweepVariable; 3] = [Self::SigmaRss, Self::SigmaAzimuth, Self::SigmaElevation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SigmaRss => "sigma_rss",
            Self::SigmaAzimuth => "sigma_azimuth",
            Self::SigmaElevation => "sigma_elevation",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Self::SigmaRss => "dB",
            _ => "deg",
        }
    }
}

/// One-at-a-time sweep. RSS values are in dB, angle values in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    #[serde(default = "default_rss")]
    pub fixed_rss_db: f64,
    #[serde(default = "default_angle")]
    pub fixed_azimuth_deg: f64,
    #[serde(default = "default_angle")]
    pub fixed_elevation_deg: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_rss() -> f64 {
    3.0
}
fn default_angle() -> f64 {
    5.0
}
fn default_trials() -> usize {
    10_000
}

impl SweepSpec {
    pub fn new(variable: SweepVariable, grid: Vec<f64>) -> Self {
        Self {
            variable,
            grid,
            fixed_rss_db: default_rss(),
            fixed_azimuth_deg: default_angle(),
            fixed_elevation_deg: default_angle(),
            trials: default_trials(),
        }
    }

    /// The artifact's default grids: 0..=6 dB for RSS, 0..=10 degrees for angles.
    pub fn default_for(variable: SweepVariable) -> Self {
        let grid = match variable {
            SweepVariable::SigmaRss => crate::dataset::grids::RSS_DB.to_vec(),
            _ => crate::dataset::grids::ANGLE_DEG.to_vec(),
        };
        Self::new(variable, grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid must not be empty".into()));
        }
        if self.grid.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "sweep grid values must be finite and non-negative".into(),
            ));
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "sweep grid must be strictly increasing".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::Config(
                "sweep needs at least one trial per point".into(),
            ));
        }
        self.noise_at(0.0).validate()
    }

    pub fn noise_at(&self, value: f64) -> NoiseConfig<f64> {
        let (mut r, mut a, mut e) = (
            self.fixed_rss_db,
            self.fixed_azimuth_deg,
            self.fixed_elevation_deg,
        );
        match self.variable {
            SweepVariable::SigmaRss => r = value,
            SweepVariable::SigmaAzimuth => a = value,
            SweepVariable::SigmaElevation => e = value,
        }
        NoiseConfig::from_db_deg(r, a, e)
    }
}

/// A trained network bound to the anchor geometry it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub model: MlpModel<f64>,
    pub anchors: Vec<Point3<f64>>,
}

impl TrainedEstimator {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: ck.to_model()?,
            anchors: ck.anchors.clone(),
        })
    }

    pub fn method(&self) -> Method {
        match self.model.input_mode {
            InputMode::Raw => Method::MlpRaw,
            InputMode::Preprocessed => Method::MlpPre,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub method: Method,
    pub rmse: f64,
    pub trials: usize,
    pub failures: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SweepRow {
    /// Summarizes per-trial squared errors, with a percentile bootstrap CI on the RMSE.
    pub fn from_squared_errors(
        value: f64,
        method: Method,
        sq_errors: &[f64],
        failures: usize,
        seed: u64,
    ) -> Result<Self> {
        if sq_errors.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no successful trials for {method} at {value}"
            )));
        }
        let n = sq_errors.len();
        let rmse = (sq_errors.iter().sum::<f64>() / n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let s: f64 = (0..n).map(|_| sq_errors[rng.random_range(0..n)]).sum();
                (s / n as f64).sqrt()
            })
            .collect();
        boots.sort_by(|a, b| a.total_cmp(b));
        let lo = (0.025 * BOOTSTRAP_RESAMPLES as f64).floor() as usize;
        let hi = (0.975 * BOOTSTRAP_RESAMPLES as f64).ceil() as usize - 1;
        Ok(Self {
            value,
            method,
            rmse,
            trials: n + failures,
            failures,
            ci_low: boots[lo],
            ci_high: boots[hi],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, value: f64, method: Method) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.method == method)
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.value) {
                v.push(r.value);
            }
        }
        v
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.rows {
            wr.write_record([
                self.variable.as_str().to_string(),
                r.value.to_string(),
                r.method.tag().to_string(),
                r.rmse.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

/// Squared errors per method for one trial; `None` marks a singular geometry.
type TrialOutcome = Vec<Option<f64>>;

/// Runs every estimator on freshly synthesized trials at each grid point.
///
/// All methods see the same trials. Networks must have been trained on the
/// sampler's fixed anchor set.
pub fn run_sweep(
    spec: &SweepSpec,
    sampler: &SceneSampler<f64>,
    networks: &[TrainedEstimator],
    seed: u64,
) -> Result<SweepResult> {
    spec.validate()?;
    let n = sampler.config().anchor_count;
    if !networks.is_empty() {
        let anchors = sampler.fixed_anchors().ok_or_else(|| {
            Error::Config("evaluating trained networks requires a fixed anchor layout".into())
        })?;
        for net in networks {
            if net.anchors.as_slice() != anchors {
                return Err(Error::Config(format!(
                    "{} network was trained on different anchors than the sweep scene",
                    net.method()
                )));
            }
            let want = net.model.input_mode.input_dim(n);
            if net.model.input_dim() != want {
                return Err(Error::Config(format!(
                    "{} network expects {} inputs, scene with {n} anchors provides {want}",
                    net.method(),
                    net.model.input_dim()
                )));
            }
        }
    }
    let mut methods = vec![Method::Wls, Method::Ls];
    methods.extend(networks.iter().map(|n| n.method()));
    let pl = *sampler.path_loss();

    let mut rows = Vec::new();
    for (p, &value) in spec.grid.iter().enumerate() {
        let noise = spec.noise_at(value);
        let outcomes: Vec<TrialOutcome> = (0..spec.trials)
            .into_par_iter()
            .map(|k| -> Result<TrialOutcome> {
                let mut rng = trial_rng(seed, p, k);
                let scene = sampler.sample(&mut rng)?;
                let theta = synthesize_measurements(&scene, &pl, &noise, &mut rng)?;
                let sys = build_system(&theta, &scene.anchors, &pl)?;
                let w = build_weights(&theta.rss, &pl);
                let t = scene.target;
                let sq = |e: Point3<f64>| {
                    let d = e - t;
                    d.dot(d)
                };
                let mut out = vec![
                    solve_wls(&sys, &w).ok().map(|e| sq(e.position)),
                    solve_ls(&sys).ok().map(|e| sq(e.position)),
                ];
                let features = if networks
                    .iter()
                    .any(|n| n.model.input_mode == InputMode::Preprocessed)
                {
                    Some(feature_vector(&apply_weights(&sys, &w)?).0)
                } else {
                    None
                };
                let raw = theta.theta();
                for net in networks {
                    let x = match net.model.input_mode {
                        InputMode::Raw => raw.as_slice(),
                        InputMode::Preprocessed => features.as_deref().expect("computed above"),
                    };
                    out.push(Some(sq(net.model.predict_one(x)?)));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;

        for (m, &method) in methods.iter().enumerate() {
            let sq: Vec<f64> = outcomes.iter().filter_map(|o| o[m]).collect();
            let failures = spec.trials - sq.len();
            if failures as f64 > MAX_FAILURE_FRACTION * spec.trials as f64 {
                return Err(Error::TooManyFailures {
                    method: method.tag().to_string(),
                    value,
                    failures,
                    trials: spec.trials,
                });
            }
            let boot_seed = seed ^ ((p as u64) << 40) ^ ((m as u64) << 56) ^ 0xb007;
            rows.push(SweepRow::from_squared_errors(
                value, method, &sq, failures, boot_seed,
            )?);
        }
    }
    Ok(SweepResult {
        variable: spec.variable,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedMethod {
    /// 1-based; tied methods share a rank.
    pub rank: usize,
    pub method: Method,
    pub rmse: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub value: f64,
    pub ranking: Vec<RankedMethod>,
}

impl PointReport {
    pub fn rank_of(&self, method: Method) -> Option<usize> {
        self.ranking
            .iter()
            .find(|r| r.method == method)
            .map(|r| r.rank)
    }
}

/// Per grid point, methods ordered by RMSE (ties share a rank) with their CIs.
pub fn compare_report(result: &SweepResult) -> Vec<PointReport> {
    result
        .values()
        .into_iter()
        .map(|value| {
            let mut rows: Vec<&SweepRow> =
                result.rows.iter().filter(|r| r.value == value).collect();
            rows.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.method.cmp(&b.method)));
            let mut ranking: Vec<RankedMethod> = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                let rank = match ranking.last() {
                    Some(prev) if prev.rmse == r.rmse => prev.rank,
                    _ => i + 1,
                };
                ranking.push(RankedMethod {
                    rank,
                    method: r.method,
                    rmse: r.rmse,
                    ci: (r.ci_low, r.ci_high),
                });
            }
            PointReport { value, ranking }
        })
        .collect()
}

pub fn render_report(result: &SweepResult) -> String {
    let mut s = String::new();
    let unit = result.variable.unit();
    for p in compare_report(result) {
        let _ = write!(s, "{} = {} {}:", result.variable.as_str(), p.value, unit);
        for r in &p.ranking {
            let _ = write!(
                s,
                "  {}. {} {:.4} m [{:.4}, {:.4}]",
                r.rank, r.method, r.rmse, r.ci.0, r.ci.1
            );
        }
        s.push('\n');
    }
    s
}

/// Matplotlib script drawing RMSE against the swept noise for each CSV.
pub fn plot_script(csv_files: &[&str]) -> String {
    let files = csv_files
        .iter()
        .map(|f| format!("    {f:?},"))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        r#"#!/usr/bin/env python3
# Plots RMSE versus noise level, one figure per sweep CSV.
import csv
import os
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = [os.path.join(HERE, f) for f in [
{files}
]]
LABELS = {{"sigma_rss": "RSS noise std (dB)", "sigma_azimuth": "azimuth noise std (deg)", "sigma_elevation": "elevation noise std (deg)"}}
STYLE = {{"WLS": "s-", "LS": "^-", "MLP_RAW": "x--", "MLP_PRE": "o-"}}

for path in (sys.argv[1:] or FILES):
    series = defaultdict(list)
    var = None
    with open(path) as f:
        for row in csv.DictReader(f):
            var = row["sweep_var"]
            series[row["method"]].append((float(row["value"]), float(row["rmse_m"]), float(row["ci_low"]), float(row["ci_high"])))
    fig, ax = plt.subplots(figsize=(5, 4))
    for method, pts in sorted(series.items()):
        pts.sort()
        x = [p[0] for p in pts]
        y = [p[1] for p in pts]
        err = [[p[1] - p[2] for p in pts], [p[3] - p[1] for p in pts]]
        ax.errorbar(x, y, yerr=err, fmt=STYLE.get(method, "-"), label=method, capsize=2)
    ax.set_xlabel(LABELS.get(var, var))
    ax.set_ylabel("RMSE (m)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = path.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=150)
    print("wrote", out)
"#
    )
}

//! Closed-form position estimators over the linearized system.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linearization::{apply_weights, LinearSystem, WeightVector};
use crate::scalar::Scalar;
use crate::scene::Point3;

/// Normal-matrix condition estimates above this are reported as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "WLS")]
    Wls,
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "MLP_RAW")]
    MlpRaw,
    #[serde(rename = "MLP_PRE")]
    MlpPre,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Wls, Method::Ls, Method::MlpRaw, Method::MlpPre];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Wls => "WLS",
            Method::Ls => "LS",
            Method::MlpRaw => "MLP_RAW",
            Method::MlpPre => "MLP_PRE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionEstimate<T> {
    pub position: Point3<T>,
    /// Condition number of the (weighted) normal matrix; NaN for learned estimators.
    pub condition_estimate: T,
    pub method: Method,
}

fn solve<T: Scalar>(sys: &LinearSystem<T>, method: Method) -> Result<PositionEstimate<T>> {
    if sys.a.len() < 3 || sys.a.len() != sys.b.len() {
        return Err(Error::InvalidInput(format!(
            "system needs at least 3 rows with matching rhs, got {}x3 and {}",
            sys.a.len(),
            sys.b.len()
        )));
    }
    let singular = |condition: T| Error::SingularGeometry {
        condition: condition.to_f64_lossy(),
        limit: SINGULAR_CONDITION,
    };
    let condition = linalg::spd_condition3(linalg::gram3(&sys.a));
    if !(condition.to_f64_lossy() <= SINGULAR_CONDITION) {
        return Err(singular(condition));
    }
    let (x, _r) =
        linalg::householder_lstsq3(&sys.a, &sys.b).ok_or_else(|| singular(T::infinity()))?;
    let position = Point3::from_array(x);
    if !position.is_finite() {
        return Err(singular(condition));
    }
    Ok(PositionEstimate {
        position,
        condition_estimate: condition,
        method,
    })
}

/// Minimizer of `||W (A t - b)||` via Householder QR of the weighted system.
pub fn solve_wls<T: Scalar>(
    sys: &LinearSystem<T>,
    w: &WeightVector<T>,
) -> Result<PositionEstimate<T>> {
    solve(&apply_weights(sys, w)?, Method::Wls)
}

/// Unweighted least squares on the same system.
pub fn solve_ls<T: Scalar>(sys: &LinearSystem<T>) -> Result<PositionEstimate<T>> {
    solve(sys, Method::Ls)
}

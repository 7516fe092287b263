use nalgebra::DVector;

use super::{identity, ShapeCode};
use crate::error::{Result, SfmError};

const UNIT_TOL: f64 = 1e-9;
const ANTIPODAL_MARGIN: f64 = 1e-6;
const SMALL_ANGLE: f64 = 1e-6;

/// Geodesic interpolation between two unit vectors on the hypersphere.
///
/// Angles below `1e-6` fall back to normalized linear interpolation; angles
/// within `1e-6` of `pi` are rejected.
pub fn slerp_identity(a: &DVector<f64>, b: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if a.len() != b.len() {
        return Err(SfmError::DimensionMismatch {
            what: "slerp endpoint dimension",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(SfmError::InvalidConfig(format!(
            "interpolation parameter {t} outside [0, 1]"
        )));
    }
    for (name, v) in [("a", a), ("b", b)] {
        let n = v.norm();
        if n.is_nan() || (n - 1.0).abs() > UNIT_TOL {
            return Err(SfmError::InvalidConfig(format!(
                "slerp endpoint {name} has norm {n}, expected 1"
            )));
        }
    }
    let theta = a.dot(b).clamp(-1.0, 1.0).acos();
    if theta > std::f64::consts::PI - ANTIPODAL_MARGIN {
        return Err(SfmError::Antipodal { angle: theta });
    }
    if t == 0.0 {
        return Ok(a.clone());
    }
    if t == 1.0 || a == b {
        return Ok(b.clone());
    }
    let out = if theta < SMALL_ANGLE {
        a * (1.0 - t) + b * t
    } else {
        let sin_theta = theta.sin();
        a * (((1.0 - t) * theta).sin() / sin_theta) + b * ((t * theta).sin() / sin_theta)
    };
    let n = out.norm();
    Ok(out / n)
}

/// Slerps the identities and linearly interpolates the scales. The returned
/// `x` is the interpolated unit identity.
pub fn interpolate_codes(c1: &ShapeCode, c2: &ShapeCode, t: f64) -> Result<ShapeCode> {
    let a = identity(c1)?;
    let b = identity(c2)?;
    let x = slerp_identity(&a, &b, t)?;
    let s = if t == 1.0 { c2.s } else { c1.s + t * (c2.s - c1.s) };
    Ok(ShapeCode::new(x, s))
}

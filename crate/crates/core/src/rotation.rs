//! Exponential-map and Euler-angle conversions for per-joint rotations.
//!
//! Euler angles use the intrinsic Z-Y-X convention: `R = Rz(yaw) · Ry(pitch) · Rx(roll)`,
//! returned as `[yaw, pitch, roll]`. When `|pitch|` is within
//! [`GIMBAL_TOLERANCE`] of `π/2` only `yaw ∓ roll` is observable; roll is
//! then fixed to zero and yaw carries the whole in-plane rotation.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub const GIMBAL_TOLERANCE: f64 = 1e-6;

const ORTHO_TOLERANCE: f64 = 1e-8;

/// Rodrigues' formula. Vectors shorter than `1e-12` map to the identity.
pub fn expmap_to_rotmat(v: [f64; 3]) -> Result<Mat3> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("exponential map {v:?}")));
    }
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-12 {
        return Ok(IDENTITY);
    }
    let [x, y, z] = [v[0] / theta, v[1] / theta, v[2] / theta];
    let (s, c) = theta.sin_cos();
    let k: Mat3 = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let k2 = mul(&k, &k);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    Ok(r)
}

pub fn euler_to_rotmat([yaw, pitch, roll]: [f64; 3]) -> Mat3 {
    let (sz, cz) = yaw.sin_cos();
    let (sy, cy) = pitch.sin_cos();
    let (sx, cx) = roll.sin_cos();
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    mul(&mul(&rz, &ry), &rx)
}

/// Returns `[yaw, pitch, roll]`, each in `(-π, π]`.
pub fn rotmat_to_euler(r: &Mat3) -> Result<[f64; 3]> {
    check_rotation(r)?;
    let pitch = (-r[2][0]).clamp(-1.0, 1.0).asin();
    let (yaw, roll) = if (pitch.abs() - FRAC_PI_2).abs() <= GIMBAL_TOLERANCE {
        ((-r[0][1]).atan2(r[1][1]), 0.0)
    } else {
        (r[1][0].atan2(r[0][0]), r[2][1].atan2(r[2][2]))
    };
    Ok([wrap(yaw), pitch, wrap(roll)])
}

pub fn expmap_to_euler(v: [f64; 3]) -> Result<[f64; 3]> {
    rotmat_to_euler(&expmap_to_rotmat(v)?)
}

/// Converts a row of concatenated per-joint exponential maps into Euler
/// angles of the same width.
pub fn frame_to_euler(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.len() % 3 != 0 {
        return Err(Error::dims(format!(
            "frame width {} is not a multiple of 3",
            frame.len()
        )));
    }
    let mut out = Vec::with_capacity(frame.len());
    for joint in frame.chunks_exact(3) {
        out.extend(expmap_to_euler([joint[0], joint[1], joint[2]])?);
    }
    Ok(out)
}

pub fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn det(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &Mat3, b: &Mat3) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += (a[i][j] - b[i][j]).powi(2);
        }
    }
    acc.sqrt()
}

fn check_rotation(r: &Mat3) -> Result<()> {
    if r.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rotation matrix".into()));
    }
    let rtr = mul(&transpose(r), r);
    let err = frobenius_distance(&rtr, &IDENTITY);
    if err > ORTHO_TOLERANCE {
        return Err(Error::NotRotation(format!("|RᵀR - I| = {err:e}")));
    }
    if det(r) <= 0.0 {
        return Err(Error::NotRotation("determinant is not positive".into()));
    }
    Ok(())
}

fn wrap(angle: f64) -> f64 {
    if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

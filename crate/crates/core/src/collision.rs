//! Collision geometry for the non-cutoff kernel.
//!
//! A collision between velocities `v` and `v_*` is parameterized by a
//! deviation angle `theta` in `(0, pi/2]` and an azimuth `phi`. The azimuth is
//! measured in a frame `(I(X), J(X))` attached to the relative velocity
//! `X = v - v_*`; see [`orthonormal_frame`] for the selection rule.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::vec3::Vec3;

/// Cross section `|v - v_*|^gamma * b(theta)` with `b(theta) = c_b theta^(-1-nu)`
/// on `(0, pi/2]`, optionally truncated at level `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub gamma: f64,
    pub nu: f64,
    /// Lower envelope constant of `b`.
    pub c0: f64,
    /// Upper envelope constant of `b`.
    pub c_upper: f64,
    /// Constant actually used, `c0 <= c_b <= c_upper`.
    pub c_b: f64,
    pub k: Option<f64>,
}

impl CrossSection {
    pub fn new(gamma: f64, nu: f64) -> Result<Self> {
        Self::with_constants(gamma, nu, 1.0, 1.0, 1.0, None)
    }

    pub fn with_constants(
        gamma: f64,
        nu: f64,
        c0: f64,
        c_upper: f64,
        c_b: f64,
        k: Option<f64>,
    ) -> Result<Self> {
        if !(gamma > -1.0 && gamma < 1.0) {
            return domain(format!("gamma = {gamma} outside (-1, 1)"));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return domain(format!("nu = {nu} outside (0, 1)"));
        }
        if !(c0 > 0.0 && c0 <= c_b && c_b <= c_upper) {
            return domain(format!(
                "need 0 < c0 <= c_b <= C0, got c0 = {c0}, c_b = {c_b}, C0 = {c_upper}"
            ));
        }
        if let Some(k) = k {
            if !(k >= 1.0 && k.is_finite()) {
                return domain(format!("truncation level k = {k} must be finite and >= 1"));
            }
        }
        Ok(CrossSection { gamma, nu, c0, c_upper, c_b, k })
    }

    pub fn truncated(self, k: f64) -> Result<Self> {
        Self::with_constants(self.gamma, self.nu, self.c0, self.c_upper, self.c_b, Some(k))
    }

    /// Soft-potential experiments need `gamma + nu > 0`.
    pub fn require_soft_admissible(&self) -> Result<()> {
        if self.gamma + self.nu <= 0.0 {
            return domain(format!(
                "gamma + nu = {} must be positive",
                self.gamma + self.nu
            ));
        }
        Ok(())
    }

    /// Angular density `b(theta)`.
    pub fn b(&self, theta: f64) -> f64 {
        if theta > 0.0 && theta <= FRAC_PI_2 {
            self.c_b * theta.powf(-1.0 - self.nu)
        } else {
            0.0
        }
    }

    /// `int_{theta_min}^{pi/2} b`.
    pub fn angular_mass(&self, theta_min: f64) -> f64 {
        self.c_b * (theta_min.powf(-self.nu) - FRAC_PI_2.powf(-self.nu)) / self.nu
    }

    /// Kinetic factor `|x|^gamma`, capped at `k` when truncated.
    pub fn kinetic(&self, rel_speed: f64) -> f64 {
        let r = rel_speed.powf(self.gamma);
        match self.k {
            Some(k) => r.min(k),
            None => r,
        }
    }

    /// Candidate rate `k * c_Theta(k) * 2 pi` of the truncated kernel.
    pub fn candidate_rate(&self) -> Result<f64> {
        let k = self.truncation()?;
        Ok(k * self.angular_mass(1.0 / k) * TAU)
    }

    pub fn truncation(&self) -> Result<f64> {
        self.k
            .ok_or_else(|| crate::Error::InvalidParam("cross section has no truncation level k".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub i_vec: Vec3,
    pub j_vec: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionAngles {
    pub theta: f64,
    pub phi: f64,
}

impl CollisionAngles {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= FRAC_PI_2) {
            return domain(format!("theta = {theta} outside (0, pi/2]"));
        }
        if !(0.0..TAU).contains(&phi) {
            return domain(format!("phi = {phi} outside [0, 2pi)"));
        }
        Ok(CollisionAngles { theta, phi })
    }
}

/// Frame `(I(X), J(X))` with `X/|X|, I/|X|, J/|X|` orthonormal and
/// positively oriented.
///
/// The seed axis is the coordinate axis least aligned with `X`; ties go to the
/// lower index. `I` is that axis projected off `X` and rescaled to `|X|`, and
/// `J = X/|X| x I`. The map is discontinuous where the seed axis switches.
pub fn orthonormal_frame(x: Vec3) -> Frame {
    let n = x.norm();
    if n == 0.0 {
        return Frame { i_vec: Vec3::ZERO, j_vec: Vec3::ZERO };
    }
    let u = x / n;
    let a = [u.x.abs(), u.y.abs(), u.z.abs()];
    let mut axis = 0;
    for i in 1..3 {
        if a[i] < a[axis] {
            axis = i;
        }
    }
    let e = [Vec3::X, Vec3::Y, Vec3::Z][axis];
    let p = e - u * e.dot(u);
    let i_vec = p * (n / p.norm());
    let j_vec = u.cross(i_vec);
    Frame { i_vec, j_vec }
}

/// `Gamma(X, phi) = cos(phi) I(X) + sin(phi) J(X)`.
pub fn gamma_vec(x: Vec3, phi: f64) -> Vec3 {
    let f = orthonormal_frame(x);
    frame_gamma(&f, phi)
}

#[inline]
pub fn frame_gamma(f: &Frame, phi: f64) -> Vec3 {
    let (s, c) = phi.sin_cos();
    f.i_vec * c + f.j_vec * s
}

/// Deviation `a(v, v_*, theta, phi) = v' - v`.
pub fn deviation(v: Vec3, v_star: Vec3, angles: CollisionAngles) -> Vec3 {
    let x = v - v_star;
    deviation_in_frame(x, &orthonormal_frame(x), angles.theta, angles.phi)
}

#[inline]
pub(crate) fn deviation_in_frame(x: Vec3, f: &Frame, theta: f64, phi: f64) -> Vec3 {
    let (s, c) = theta.sin_cos();
    x * (-(1.0 - c) / 2.0) + frame_gamma(f, phi) * (s / 2.0)
}

/// Post-collision pair `(v', v'_*)` with `v'_* = v + v_* - v'`.
pub fn post_collision(v: Vec3, v_star: Vec3, angles: CollisionAngles) -> (Vec3, Vec3) {
    let vp = v + deviation(v, v_star, angles);
    (vp, v + v_star - vp)
}

/// Inverse-CDF draw from `theta^(-1-nu)` restricted to `[theta_min, pi/2]`.
pub fn sample_theta(cs: &CrossSection, theta_min: f64, u: f64) -> Result<f64> {
    if !(theta_min > 0.0 && theta_min < FRAC_PI_2) {
        return domain(format!("theta_min = {theta_min} outside (0, pi/2)"));
    }
    if u == 1.0 {
        return Ok(FRAC_PI_2);
    }
    let lo = theta_min.powf(-cs.nu);
    let hi = FRAC_PI_2.powf(-cs.nu);
    let th = (lo - u * (lo - hi)).powf(-1.0 / cs.nu);
    Ok(th.clamp(theta_min, FRAC_PI_2))
}

/// Azimuth shift aligning the frame of `Y` with the frame of `X`.
///
/// Maximizes `<I(X), I'(Y)> + <J(X), J'(Y)>` over rotations `(I', J')` of
/// the frame of `Y`, which minimizes the mean-square gap
/// `int |Gamma(X, phi) - Gamma(Y, phi + phi0)|^2 dphi`.
pub fn tanaka_phi0(x: Vec3, y: Vec3) -> f64 {
    phi0_from_frames(&orthonormal_frame(x), &orthonormal_frame(y))
}

pub(crate) fn phi0_from_frames(fx: &Frame, fy: &Frame) -> f64 {
    let s = fx.i_vec.dot(fy.j_vec) - fx.j_vec.dot(fy.i_vec);
    let c = fx.i_vec.dot(fy.i_vec) + fx.j_vec.dot(fy.j_vec);
    if s == 0.0 && c == 0.0 {
        return 0.0;
    }
    let p = s.atan2(c);
    if p < 0.0 {
        let q = p + TAU;
        if q >= TAU { 0.0 } else { q }
    } else {
        p
    }
}

/// Velocity clamp `H_k(v) = (|v| ^ k) / |v| * v`.
pub fn clamp_speed(v: Vec3, k: f64) -> Vec3 {
    let n = v.norm();
    if n <= k {
        v
    } else {
        v * (k / n)
    }
}

/// Uniform azimuth from a unit draw.
pub fn phi_from_unit(u: f64) -> f64 {
    let p = u * TAU;
    if p >= TAU { 0.0 } else { p }
}

/// Upper end of the angular support.
pub const THETA_MAX: f64 = FRAC_PI_2;

//! Lévy symbol of the frozen small-angle increment and its inversion.
//!
//! The symbol integrates `1 - exp(i <xi, a(v0, v, theta, phi)>)` against
//! `|v - v0|^gamma b(theta)` over `theta < eps^(1/nu)`, the background law and
//! the time window `[t - eps, t]`.
//!
//! The azimuthal average is taken in closed form: writing
//! `rho = |xi_perp| |X|` for `X = v0 - v`,
//! `mean_phi exp(i <xi, a>) = exp(-i sin^2(theta/2) <xi, X>) J0(sin(theta) rho / 2)`.
//! The uniform azimuthal rule agrees with this up to terms of order
//! `J_256(sin(theta) rho / 2)`.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::collision::CrossSection;
use crate::error::{domain, Error, Result};
use crate::fft3::{fft3, freq_index, Direction};
use crate::sde::Snapshot;
use crate::stats::{GridDensity, GridSpec};
use crate::vec3::Vec3;

/// Gauss-Legendre nodes used for the angular integral.
pub const THETA_NODES: usize = 128;
/// Coarser rule used for the error estimate.
const THETA_NODES_CHECK: usize = 64;
/// Target relative accuracy; larger estimates are logged.
pub const SYMBOL_RTOL: f64 = 1e-6;
/// Relative tail mass above which [`invert_fn`] refuses.
pub const TAIL_MASS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct LevyCtx<'a> {
    pub eps: f64,
    pub t: f64,
    pub v0: Vec3,
    /// Snapshots, interpolated linearly in time. A single snapshot is read
    /// as a stationary background.
    pub background: &'a [Snapshot],
    pub cs: CrossSection,
    /// Evenly strided subsample of each snapshot, if set.
    pub max_samples: Option<usize>,
}

impl<'a> LevyCtx<'a> {
    pub fn new(eps: f64, t: f64, v0: Vec3, background: &'a [Snapshot], cs: CrossSection) -> Result<Self> {
        let ctx = LevyCtx { eps, t, v0, background, cs, max_samples: None };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn with_max_samples(mut self, n: usize) -> Self {
        self.max_samples = Some(n.max(1));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return domain(format!("eps = {} outside (0, 1)", self.eps));
        }
        if !self.t.is_finite() || !self.v0.is_finite() {
            return domain("t and v0 must be finite");
        }
        if self.background.is_empty() {
            return Err(Error::InvalidParam("empty background".into()));
        }
        if self.background.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::InvalidParam("background times must increase".into()));
        }
        if self.background.len() > 1 {
            let (first, last) = (self.background[0].t, self.background[self.background.len() - 1].t);
            if self.t - self.eps < first || self.t > last {
                return domain(format!(
                    "background covers [{first}, {last}], window is [{}, {}]",
                    self.t - self.eps,
                    self.t
                ));
            }
        }
        Ok(())
    }

    /// Upper end `eps^(1/nu)` of the angular integral.
    pub fn theta_max(&self) -> f64 {
        self.eps.powf(1.0 / self.cs.nu)
    }

    /// Weights `W_k` with `int_{s0}^{s1} f_s ds = sum_k W_k f_{t_k}` for the
    /// piecewise-linear interpolant of the snapshots.
    pub fn time_weights(&self, s0: f64, s1: f64) -> Result<Vec<(usize, f64)>> {
        if !(s0 <= s1) {
            return domain(format!("time interval [{s0}, {s1}] is empty"));
        }
        let bg = self.background;
        if bg.len() == 1 {
            return Ok(vec![(0, s1 - s0)]);
        }
        if s0 < bg[0].t || s1 > bg[bg.len() - 1].t {
            return domain(format!("[{s0}, {s1}] not covered by the background"));
        }
        let mut w = vec![0.0; bg.len()];
        for k in 0..bg.len() - 1 {
            let (ta, tb) = (bg[k].t, bg[k + 1].t);
            let a = s0.max(ta);
            let b = s1.min(tb);
            if a >= b {
                continue;
            }
            let d = tb - ta;
            w[k] += ((tb - a).powi(2) - (tb - b).powi(2)) / (2.0 * d);
            w[k + 1] += ((b - ta).powi(2) - (a - ta).powi(2)) / (2.0 * d);
        }
        Ok(w.into_iter().enumerate().filter(|(_, x)| *x > 0.0).collect())
    }

    /// Samples and weights of snapshot `k` after subsampling.
    fn cloud(&self, k: usize) -> Vec<(Vec3, f64)> {
        let m = &self.background[k].measure;
        let stride = match self.max_samples {
            Some(n) if m.len() > n => m.len().div_ceil(n),
            _ => 1,
        };
        let picked: Vec<(Vec3, f64)> = m.iter().step_by(stride).collect();
        let total: f64 = picked.iter().map(|(_, w)| w).sum();
        picked.into_iter().map(|(v, w)| (v, w / total)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolValue {
    pub xi: Vec3,
    pub psi_re: f64,
    pub psi_im: f64,
    /// Relative gap between the 128- and 64-node angular rules.
    pub rel_error: f64,
}

impl SymbolValue {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.psi_re, self.psi_im)
    }
}

/// Gauss-Legendre rule on `[0, w_max]` with `theta = w^(1/p)` precomputed.
struct ThetaRule {
    theta: Vec<f64>,
    weight: Vec<f64>,
}

impl ThetaRule {
    fn new(n: usize, theta_max: f64, p: f64) -> ThetaRule {
        let gl = gauss_quad::GaussLegendre::new(n).expect("rule of degree >= 2");
        let w_max = theta_max.powf(p);
        let (theta, weight) = gl
            .as_node_weight_pairs()
            .iter()
            .map(|(x, w)| {
                let s = 0.5 * w_max * (x + 1.0);
                (s.powf(1.0 / p), 0.5 * w_max * w)
            })
            .unzip();
        ThetaRule { theta, weight }
    }
}

/// `1 - J0(z)` without cancellation near zero.
pub fn one_minus_j0(z: f64) -> f64 {
    if z.abs() < 0.1 {
        let q = 0.25 * z * z;
        q * (1.0 - q / 4.0 * (1.0 - q / 9.0 * (1.0 - q / 16.0)))
    } else {
        1.0 - libm::j0(z)
    }
}

/// Per-snapshot symbol `sum_v w_v |X|^gamma int G(theta) b(theta) dtheta dphi`.
fn snapshot_symbol(ctx: &LevyCtx, cloud: &[(Vec3, f64)], xi: Vec3, rule: &ThetaRule) -> Complex64 {
    let cs = &ctx.cs;
    let xi2 = xi.norm2();
    // w = theta^(2-nu) flattens theta^(-1-nu) * O(theta^2).
    let pref = TAU * cs.c_b / (2.0 - cs.nu);
    let nodes: Vec<(f64, f64, f64)> = rule
        .theta
        .iter()
        .zip(&rule.weight)
        .map(|(th, w)| {
            let h = (0.5 * th).sin();
            (h * h, 0.5 * th.sin(), w / (th * th))
        })
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for (v, wv) in cloud {
        let x = ctx.v0 - *v;
        let r2 = x.norm2();
        if r2 == 0.0 {
            continue;
        }
        let kin = r2.sqrt().powf(cs.gamma);
        let xdot = xi.dot(x);
        let rho = (r2 * xi2 - xdot * xdot).max(0.0).sqrt();
        let (mut re, mut im) = (0.0, 0.0);
        for &(c1, c2, w) in &nodes {
            let z = c2 * rho;
            let a = 1.0 - one_minus_j0(z);
            let ph = c1 * xdot;
            let s = (0.5 * ph).sin();
            re += w * (one_minus_j0(z) + 2.0 * a * s * s);
            im += w * a * ph.sin();
        }
        acc += Complex64::new(re, im) * (wv * kin);
    }
    acc * pref
}

/// `Psi_{eps,t,v0}(xi)` over the full window `[t - eps, t]`.
pub fn psi(ctx: &LevyCtx, xi: Vec3) -> Result<SymbolValue> {
    psi_over(ctx, ctx.t - ctx.eps, ctx.t, xi)
}

/// Time integral restricted to `[s0, s1]`.
pub fn psi_over(ctx: &LevyCtx, s0: f64, s1: f64, xi: Vec3) -> Result<SymbolValue> {
    if !xi.is_finite() {
        return domain(format!("xi = {xi:?} is not finite"));
    }
    ctx.validate()?;
    let tw = ctx.time_weights(s0, s1)?;
    if xi == Vec3::ZERO {
        return Ok(SymbolValue { xi, psi_re: 0.0, psi_im: 0.0, rel_error: 0.0 });
    }
    let p = 2.0 - ctx.cs.nu;
    let fine = ThetaRule::new(THETA_NODES, ctx.theta_max(), p);
    let coarse = ThetaRule::new(THETA_NODES_CHECK, ctx.theta_max(), p);
    let (mut val, mut chk) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (k, w) in tw {
        let cloud = ctx.cloud(k);
        val += snapshot_symbol(ctx, &cloud, xi, &fine) * w;
        chk += snapshot_symbol(ctx, &cloud, xi, &coarse) * w;
    }
    if !(val.re >= 0.0) {
        return Err(Error::Domain(format!("Re Psi({xi:?}) = {} is negative", val.re)));
    }
    let scale = val.norm();
    let rel_error = if scale > 0.0 { (val - chk).norm() / scale } else { 0.0 };
    if rel_error > SYMBOL_RTOL {
        log::warn!("Psi({xi:?}): angular quadrature gap {rel_error:.2e}");
    }
    Ok(SymbolValue { xi, psi_re: val.re, psi_im: val.im, rel_error })
}

/// Symbol on a list of frequencies, evaluated in parallel.
pub fn symbol_sweep(ctx: &LevyCtx, xis: &[Vec3]) -> Result<Vec<SymbolValue>> {
    xis.par_iter().map(|xi| psi(ctx, *xi)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coercivity {
    /// `min Re Psi(eps^(-1/nu) xi) / ((|xi|^2 ^ |xi|^nu) w(v0))` over the grid.
    pub c_hat: f64,
    pub argmin: Vec3,
    /// Set when `c_hat` is not positive.
    pub degenerate: bool,
    /// Grid points dropped for a zero denominator.
    pub excluded: usize,
}

/// Velocity weight `w(v0)`: 1 for hard potentials, `(1 + |v0|)^gamma` otherwise.
pub fn coercivity_weight(cs: &CrossSection, v0: Vec3) -> f64 {
    if cs.gamma > 0.0 {
        1.0
    } else {
        (1.0 + v0.norm()).powf(cs.gamma)
    }
}

pub fn verify_coercivity(ctx: &LevyCtx, xi_grid: &[Vec3]) -> Result<Coercivity> {
    let scale = ctx.eps.powf(-1.0 / ctx.cs.nu);
    let wv = coercivity_weight(&ctx.cs, ctx.v0);
    let kept: Vec<Vec3> = xi_grid.iter().copied().filter(|x| x.norm() > 0.0).collect();
    let excluded = xi_grid.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::InvalidParam("no nonzero frequencies in the grid".into()));
    }
    let ratios: Vec<(f64, Vec3)> = kept
        .par_iter()
        .map(|xi| {
            let s = psi(ctx, *xi * scale)?;
            let n = xi.norm();
            let den = (n * n).min(n.powf(ctx.cs.nu)) * wv;
            Ok((s.psi_re / den, *xi))
        })
        .collect::<Result<_>>()?;
    let (c_hat, argmin) = ratios
        .into_iter()
        .fold((f64::INFINITY, Vec3::ZERO), |a, b| if b.0 < a.0 { b } else { a });
    Ok(Coercivity { c_hat, argmin, degenerate: !(c_hat > 0.0), excluded })
}

fn check_moment_order(n: u32) -> Result<()> {
    if n != 1 && n != 4 {
        return domain(format!("moment order {n} not in {{1, 4}}"));
    }
    Ok(())
}

/// `m_n(lambda) = int |y|^n lambda(dy)` for the rescaled jump measure.
///
/// `|a| = |X| sin(theta/2)` does not depend on `phi`, so the angular part
/// reduces to a one-dimensional integral.
pub fn lambda_moments(ctx: &LevyCtx, n: u32) -> Result<f64> {
    check_moment_order(n)?;
    ctx.validate()?;
    let cs = &ctx.cs;
    let nf = n as f64;
    let p = nf - cs.nu;
    let rule = ThetaRule::new(THETA_NODES, ctx.theta_max(), p);
    // w = theta^(n-nu) removes the endpoint singularity.
    let ang: f64 = rule
        .theta
        .iter()
        .zip(&rule.weight)
        .map(|(th, w)| w * ((0.5 * th).sin() / th).powi(n as i32))
        .sum::<f64>()
        * TAU
        * cs.c_b
        / p;
    let scale = ctx.eps.powf(-nf / cs.nu);
    let mut total = 0.0;
    for (k, w) in ctx.time_weights(ctx.t - ctx.eps, ctx.t)? {
        let s: f64 = ctx
            .cloud(k)
            .iter()
            .map(|(v, wv)| wv * (ctx.v0 - *v).norm().powf(cs.gamma + nf))
            .sum();
        total += w * s;
    }
    Ok(total * ang * scale)
}

/// Right-hand side `C sup_s int (|v|^(gamma+n) + |v0|^(gamma+n)) f_s(dv)` with
/// `C = 2 pi c_b 2^(-n) max(1, 2^(n+gamma-1)) / (n - nu)`.
pub fn lambda_moment_bound(ctx: &LevyCtx, n: u32) -> Result<f64> {
    check_moment_order(n)?;
    let cs = &ctx.cs;
    let q = cs.gamma + n as f64;
    let c = TAU * cs.c_b * 0.5f64.powi(n as i32) * 2f64.powf(q - 1.0).max(1.0) / (n as f64 - cs.nu);
    let v0q = ctx.v0.norm().powf(q);
    let mut sup = 0.0f64;
    for (k, _) in ctx.time_weights(ctx.t - ctx.eps, ctx.t)? {
        let s: f64 = ctx.cloud(k).iter().map(|(v, w)| w * (v.norm().powf(q) + v0q)).sum();
        sup = sup.max(s);
    }
    Ok(c * sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub density: GridDensity,
    /// `sum |grad k| dV` from the spectral gradient.
    pub grad_l1: f64,
    /// Share of `int e^(-Re Phi) (1 + |xi|)` outside the frequency box.
    pub tail_mass: f64,
    /// `int e^(-Re Phi) (1 + |xi|) dxi` including the tail estimate.
    pub weighted_mass: f64,
    pub min_value: f64,
}

fn check_cubic(grid: &GridSpec) -> Result<usize> {
    let [a, b, c] = grid.n;
    if a != b || b != c || a < 4 {
        return Err(Error::InvalidParam(format!("inversion needs a cubic grid, got {:?}", grid.n)));
    }
    Ok(a)
}

/// Inverse Fourier transform of `exp(-phi(xi))` on `grid`; refuses when the
/// frequency box leaves more than [`TAIL_MASS_TOL`] of the weighted mass out.
pub fn invert_fn<F>(phi: F, grid: GridSpec) -> Result<Inversion>
where
    F: Fn(Vec3) -> Result<Complex64> + Sync,
{
    let inv = invert_fn_unchecked(phi, grid)?;
    if inv.tail_mass > TAIL_MASS_TOL {
        return Err(Error::Refused(format!(
            "frequency box too small: tail mass {:.3e} > {TAIL_MASS_TOL:e}; refine the spacing below {}",
            inv.tail_mass, grid.spacing
        )));
    }
    Ok(inv)
}

/// As [`invert_fn`] but always returns, for diagnostics.
pub fn invert_fn_unchecked<F>(phi: F, grid: GridSpec) -> Result<Inversion>
where
    F: Fn(Vec3) -> Result<Complex64> + Sync,
{
    let n = check_cubic(&grid)?;
    let h = grid.spacing;
    let dxi = TAU / (n as f64 * h);
    let xi_at = |idx: usize| {
        let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
        Vec3::new(freq_index(i, n) as f64, freq_index(j, n) as f64, freq_index(k, n) as f64) * dxi
    };
    let khat: Vec<Complex64> = (0..n * n * n)
        .into_par_iter()
        .map(|idx| Ok((-phi(xi_at(idx))?).exp()))
        .collect::<Result<_>>()?;

    let inside: f64 = (0..khat.len())
        .map(|idx| khat[idx].norm() * (1.0 + xi_at(idx).norm()))
        .sum::<f64>()
        * dxi.powi(3);
    let tail = radial_tail(&phi, PI / h)?;
    let weighted_mass = inside + tail;
    let tail_mass = if weighted_mass > 0.0 { tail / weighted_mass } else { 0.0 };

    // k(x) = (2 pi)^-3 int e^{-i xi x} khat(xi) dxi, a forward DFT after the
    // phase shift for the grid origin.
    let norm = 1.0 / (n as f64 * h).powi(3);
    let transform = |mult: &dyn Fn(usize, Vec3) -> Complex64| -> Vec<f64> {
        let mut data: Vec<Complex64> = (0..khat.len())
            .map(|idx| {
                let xi = xi_at(idx);
                mult(idx, xi) * khat[idx] * Complex64::from_polar(1.0, -xi.dot(grid.origin))
            })
            .collect();
        fft3(&mut data, grid.n, Direction::Forward);
        data.iter().map(|c| c.re * norm).collect()
    };
    let values = transform(&|_, _| Complex64::new(1.0, 0.0));
    let nyquist = |idx: usize, axis: usize| {
        let i = [idx / (n * n), (idx / n) % n, idx % n][axis];
        n % 2 == 0 && i == n / 2
    };
    let mut grad2 = vec![0.0; values.len()];
    for axis in 0..3 {
        let d = transform(&|idx, xi| {
            if nyquist(idx, axis) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -xi.axis(axis))
            }
        });
        for (g, di) in grad2.iter_mut().zip(d) {
            *g += di * di;
        }
    }
    let vol = h.powi(3);
    let grad_l1 = grad2.iter().map(|g| g.sqrt()).sum::<f64>() * vol;
    let min_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mass: f64 = values.iter().sum::<f64>() * vol;
    Ok(Inversion {
        density: GridDensity { grid, values, coverage_warning: mass < 0.999 },
        grad_l1,
        tail_mass,
        weighted_mass,
        min_value,
    })
}

/// `int_{|xi| > r0} e^(-Re phi) (1 + |xi|) dxi` on a Fibonacci sphere of rays,
/// radially in `log |xi|` up to `64 r0`.
fn radial_tail<F>(phi: &F, r0: f64) -> Result<f64>
where
    F: Fn(Vec3) -> Result<Complex64> + Sync,
{
    const RAYS: usize = 64;
    let gl = gauss_quad::GaussLegendre::new(48).expect("degree >= 2");
    let golden = PI * (3.0 - 5f64.sqrt());
    let per_ray: Vec<f64> = (0..RAYS)
        .into_par_iter()
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / RAYS as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            let dir = Vec3::new(r * a.cos(), r * a.sin(), z);
            let mut err = None;
            let val = gl.integrate(0.0, 64f64.ln(), |s| {
                let rad = r0 * s.exp();
                match phi(dir * rad) {
                    Ok(p) => (-p.re).exp() * (1.0 + rad) * rad.powi(3),
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok(val),
            }
        })
        .collect::<Result<_>>()?;
    Ok(per_ray.iter().sum::<f64>() * 4.0 * PI / RAYS as f64)
}

/// Inversion of `Phi(xi) = Psi(eps^(-1/nu) xi)`, the law of the small-angle
/// increment rescaled by `eps^(-1/nu)`.
pub fn invert_symbol(ctx: &LevyCtx, grid: GridSpec) -> Result<Inversion> {
    let scale = ctx.eps.powf(-1.0 / ctx.cs.nu);
    invert_fn(|xi| Ok(psi(ctx, xi * scale)?.value()), grid)
}

/// `(1 + m_1^4 + m_4) * int e^(-Re Phi) (1 + |xi|) dxi`, the shape of the
/// gradient bound; the constant in front is calibrated by the caller.
pub fn gradient_bound_shape(ctx: &LevyCtx, inv: &Inversion) -> Result<f64> {
    let m1 = lambda_moments(ctx, 1)?;
    let m4 = lambda_moments(ctx, 4)?;
    Ok((1.0 + m1.powi(4) + m4) * inv.weighted_mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::EmpiricalMeasure;
    use approx::assert_relative_eq;

    fn gaussian_cloud(n: usize, sigma: f64) -> Vec<Vec3> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|_| {
                let mut d = || -> f64 { StandardNormal.sample(&mut rng) };
                Vec3::new(d(), d(), d()) * sigma
            })
            .collect()
    }

    fn stationary(samples: Vec<Vec3>) -> Vec<Snapshot> {
        vec![Snapshot::new(0.0, EmpiricalMeasure::uniform(samples).unwrap(), &[]).unwrap()]
    }

    #[test]
    fn one_minus_j0_is_continuous_at_switch() {
        let a = one_minus_j0(0.1 - 1e-12);
        let b = 1.0 - libm::j0(0.1);
        assert_relative_eq!(a, b, max_relative = 1e-10);
        assert_eq!(one_minus_j0(0.0), 0.0);
    }

    #[test]
    fn closed_azimuth_matches_uniform_rule() {
        // 256-point rule on exp(i z cos(phi - phi1)).
        for &(z, phi1) in &[(0.3, 0.1), (4.0, 1.3), (25.0, 2.9)] {
            let s: f64 = (0..256)
                .map(|j| (z * (TAU * j as f64 / 256.0 - phi1).cos()).cos())
                .sum::<f64>()
                / 256.0;
            assert_relative_eq!(1.0 - s, one_minus_j0(z), max_relative = 1e-12);
        }
    }

    #[test]
    fn time_weights_integrate_linear_interpolant() {
        let m = EmpiricalMeasure::uniform(vec![Vec3::X]).unwrap();
        let bg: Vec<Snapshot> = [0.0, 0.5, 1.0]
            .iter()
            .map(|t| Snapshot::new(*t, m.clone(), &[]).unwrap())
            .collect();
        let cs = CrossSection::new(0.5, 0.5).unwrap();
        let ctx = LevyCtx::new(0.3, 0.8, Vec3::ZERO, &bg, cs).unwrap();
        let w = ctx.time_weights(0.2, 0.8).unwrap();
        let total: f64 = w.iter().map(|(_, x)| x).sum();
        assert_relative_eq!(total, 0.6, max_relative = 1e-14);
        // int_{0.2}^{0.8} s ds against interpolated identity
        let first: f64 = w.iter().map(|(k, x)| x * bg[*k].t).sum();
        assert_relative_eq!(first, 0.3, max_relative = 1e-14);
        assert!(LevyCtx::new(0.3, 1.2, Vec3::ZERO, &bg, cs).is_err());
    }

    #[test]
    fn zero_frequency_and_dirac_background() {
        let cs = CrossSection::new(0.5, 0.5).unwrap();
        let bg = stationary(gaussian_cloud(50, 1.0));
        let ctx = LevyCtx::new(0.1, 1.0, Vec3::ZERO, &bg, cs).unwrap();
        let s = psi(&ctx, Vec3::ZERO).unwrap();
        assert_eq!((s.psi_re, s.psi_im), (0.0, 0.0));

        let v0 = Vec3::new(0.3, -0.2, 1.0);
        let dirac = stationary(vec![v0; 10]);
        let ctx = LevyCtx::new(0.1, 1.0, v0, &dirac, cs).unwrap();
        let s = psi(&ctx, Vec3::new(3.0, 1.0, 2.0)).unwrap();
        assert_eq!((s.psi_re, s.psi_im), (0.0, 0.0));
        assert_eq!(lambda_moments(&ctx, 1).unwrap(), 0.0);
        assert_eq!(lambda_moments(&ctx, 4).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_frequency_rejected() {
        let cs = CrossSection::new(0.5, 0.5).unwrap();
        let bg = stationary(gaussian_cloud(10, 1.0));
        let ctx = LevyCtx::new(0.1, 1.0, Vec3::ZERO, &bg, cs).unwrap();
        assert!(matches!(psi(&ctx, Vec3::new(f64::NAN, 0.0, 0.0)), Err(Error::Domain(_))));
        assert!(lambda_moments(&ctx, 2).is_err());
    }

    #[test]
    fn moment_matches_direct_theta_integral() {
        // Independent route: plain GL in theta on a log scale.
        let cs = CrossSection::new(0.5, 0.5).unwrap();
        let bg = stationary(vec![Vec3::new(1.0, 0.0, 0.0)]);
        let eps: f64 = 0.2;
        let ctx = LevyCtx::new(eps, 1.0, Vec3::ZERO, &bg, cs).unwrap();
        let tm = eps.powf(2.0);
        let gl = gauss_quad::GaussLegendre::new(200).unwrap();
        for n in [1u32, 4] {
            let ang = gl.integrate((tm * 1e-14).ln(), tm.ln(), |s| {
                let th = s.exp();
                (0.5 * th).sin().powi(n as i32) * th.powf(-1.0 - cs.nu) * th
            });
            let want = eps * TAU * ang * eps.powf(-(n as f64) / cs.nu);
            assert_relative_eq!(lambda_moments(&ctx, n).unwrap(), want, max_relative = 1e-6);
        }
    }
}

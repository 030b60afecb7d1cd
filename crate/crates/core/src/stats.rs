//! Diagnostics on empirical measures.
//!
//! Moments, a Gaussian KDE on a regular grid, the Kozachenko-Leonenko entropy
//! estimator, a finite-difference Besov-smoothness estimator built on
//! ball-kernel mollification, and the closed-form smoothness exponents.

use std::f64::consts::PI;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::fft3::{fft3, Direction};
use crate::measure::EmpiricalMeasure;
use crate::vec3::Vec3;

/// `sum_i w_i |v_i|^p`.
pub fn moment(m: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return domain(format!("moment order p = {p} must be >= 0"));
    }
    if p == 0.0 {
        return Ok(m.weights().iter().sum());
    }
    Ok(m.iter().map(|(v, w)| w * v.norm().powf(p)).sum())
}

/// Regular grid; cell `(i, j, k)` is centered at `origin + (i, j, k) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub spacing: f64,
    pub n: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: Vec3, spacing: f64, n: [usize; 3]) -> Result<Self> {
        if !(spacing > 0.0) || n.iter().any(|&k| k == 0) {
            return Err(Error::InvalidParam(format!(
                "grid needs positive spacing and sizes, got {spacing}, {n:?}"
            )));
        }
        Ok(GridSpec { origin, spacing, n })
    }

    /// Cube of `n` cells per axis centered at `center` with half-width `half`.
    pub fn cube(center: Vec3, half: f64, n: usize) -> Result<Self> {
        let spacing = 2.0 * half / n as f64;
        let off = half - 0.5 * spacing;
        Self::new(center - Vec3::new(off, off, off), spacing, [n, n, n])
    }

    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// Cell containing `v`, if inside the grid.
    pub fn locate(&self, v: Vec3) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let c = ((v.axis(a) - self.origin.axis(a)) / self.spacing + 0.5).floor();
            if c < 0.0 || c >= self.n[a] as f64 {
                return None;
            }
            out[a] = c as usize;
        }
        Some(out)
    }

    pub fn centers(&self) -> impl Iterator<Item = Vec3> + '_ {
        let [n0, n1, n2] = self.n;
        (0..n0).flat_map(move |i| {
            (0..n1).flat_map(move |j| (0..n2).map(move |k| self.center(i, j, k)))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    /// Set when the grid holds less than 99.9% of the sample mass.
    pub coverage_warning: bool,
}

impl GridDensity {
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn argmax(&self) -> [usize; 3] {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        let [_, n1, n2] = self.grid.n;
        [best / (n1 * n2), (best / n2) % n1, best % n2]
    }

    /// `sum |f - g| dV` against a density evaluated at the cell centers.
    pub fn l1_distance(&self, f: impl Fn(Vec3) -> f64) -> f64 {
        self.grid
            .centers()
            .zip(&self.values)
            .map(|(x, v)| (v - f(x)).abs())
            .sum::<f64>()
            * self.grid.cell_volume()
    }
}

/// Silverman's normal-reference bandwidth in three dimensions.
pub fn silverman_bandwidth(m: &EmpiricalMeasure) -> f64 {
    let mean = m.mean();
    let var: f64 = m.iter().map(|(v, w)| w * (v - mean).norm2()).sum::<f64>() / 3.0;
    let n = m.len() as f64;
    var.sqrt() * (4.0 / 5.0f64).powf(1.0 / 7.0) * n.powf(-1.0 / 7.0)
}

/// Gaussian kernel density on `grid`, renormalized to unit mass.
pub fn kde_density(m: &EmpiricalMeasure, bandwidth: f64, grid: GridSpec) -> Result<GridDensity> {
    if !(bandwidth > 0.0) {
        return domain(format!("bandwidth = {bandwidth} must be positive"));
    }
    let reach = (5.0 * bandwidth / grid.spacing).ceil() as i64;
    let norm = (2.0 * PI * bandwidth * bandwidth).powf(-1.5);
    let inside = m.mass_where(|v| grid.locate(v).is_some());

    let chunk = 4096;
    let partials: Vec<Vec<f64>> = m
        .samples()
        .par_chunks(chunk)
        .zip(m.weights().par_chunks(chunk))
        .map(|(vs, ws)| {
            let mut acc = vec![0.0; grid.len()];
            let mut kern = [Vec::new(), Vec::new(), Vec::new()];
            for (v, w) in vs.iter().zip(ws) {
                let mut lo = [0usize; 3];
                for a in 0..3 {
                    let c = ((v.axis(a) - grid.origin.axis(a)) / grid.spacing).round() as i64;
                    let l = (c - reach).max(0);
                    let h = (c + reach).min(grid.n[a] as i64 - 1);
                    kern[a].clear();
                    if h < l {
                        continue;
                    }
                    lo[a] = l as usize;
                    for i in l..=h {
                        let d = grid.origin.axis(a) + i as f64 * grid.spacing - v.axis(a);
                        kern[a].push((-0.5 * d * d / (bandwidth * bandwidth)).exp());
                    }
                }
                if kern.iter().any(|k| k.is_empty()) {
                    continue;
                }
                for (di, kx) in kern[0].iter().enumerate() {
                    for (dj, ky) in kern[1].iter().enumerate() {
                        let wxy = w * norm * kx * ky;
                        let base = grid.index(lo[0] + di, lo[1] + dj, lo[2]);
                        for (dk, kz) in kern[2].iter().enumerate() {
                            acc[base + dk] += wxy * kz;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut values = vec![0.0; grid.len()];
    for p in partials {
        for (a, b) in values.iter_mut().zip(p) {
            *a += b;
        }
    }
    let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
    if mass > 0.0 {
        values.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(GridDensity { grid, values, coverage_warning: inside < 0.999 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Duplicate points were jittered before the neighbor search.
    pub jittered: bool,
    pub n: usize,
    pub k_nn: usize,
}

/// Kozachenko-Leonenko differential entropy estimate.
///
/// Weighted measures are first resampled to an unweighted cloud of the same
/// size with a generator seeded by `seed`.
pub fn entropy_knn(m: &EmpiricalMeasure, k_nn: usize, seed: u64) -> Result<EntropyEstimate> {
    if k_nn == 0 {
        return domain("k_nn must be >= 1");
    }
    if m.len() <= k_nn {
        return domain(format!("need more than k_nn = {k_nn} samples, got {}", m.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owned;
    let m = if m.is_uniform() {
        m
    } else {
        owned = m.resample(m.len(), &mut rng)?;
        &owned
    };
    let mut pts: Vec<[f64; 3]> = m.samples().iter().map(|v| v.to_array()).collect();
    let mut dists = knn_distances(&pts, k_nn);

    let scale = m.samples().iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = scale * 1e-13;
    let mut jittered = false;
    if dists.iter().any(|d| *d <= tol) {
        jittered = true;
        let amp = dists.iter().copied().filter(|d| *d > tol).fold(f64::INFINITY, f64::min);
        let amp = if amp.is_finite() { amp * 1e-3 } else { scale * 1e-9 };
        let amp = amp.max(tol * 10.0);
        for (p, d) in pts.iter_mut().zip(&dists) {
            if *d <= tol {
                for c in p.iter_mut() {
                    *c += amp * (rng.gen::<f64>() - 0.5);
                }
            }
        }
        dists = knn_distances(&pts, k_nn);
        log::warn!("entropy_knn: duplicate samples jittered at scale {amp:e}");
    }

    let n = pts.len();
    let sum_log: f64 = dists.iter().map(|d| d.max(f64::MIN_POSITIVE).ln()).sum();
    let value = digamma_int(n) - digamma_int(k_nn) + (4.0 * PI / 3.0).ln() + 3.0 * sum_log / n as f64;
    Ok(EntropyEstimate { value, jittered, n, k_nn })
}

fn knn_distances(pts: &[[f64; 3]], k: usize) -> Vec<f64> {
    let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(pts);
    pts.par_iter()
        .map(|p| {
            let nn = tree.nearest_n::<SquaredEuclidean>(p, k + 1);
            nn.last().map(|x| x.distance.sqrt()).unwrap_or(0.0)
        })
        .collect()
}

/// Digamma at a positive integer: `-gamma_E + sum_{j<n} 1/j`.
fn digamma_int(n: usize) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    -EULER_GAMMA + (1..n).map(|j| 1.0 / j as f64).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovEstimate {
    pub kappa: f64,
    pub a_exp: f64,
    /// Fitted exponent of `r` in `D ~ kappa |h|^a r^(-alpha_fit)`.
    pub alpha_fit: f64,
    pub alpha: f64,
    /// `a_exp - alpha`; unset when `D` is not monotone in `|h|`.
    pub s_est: Option<f64>,
    pub fit_residual: f64,
    pub monotone: bool,
    pub spacing: f64,
    /// `(r, |h|, D(h, r))` after snapping `h` to the grid.
    pub table: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovOptions {
    /// Cells per axis across the mass box before refinement for small `r`.
    pub base_cells: usize,
    pub max_cells: usize,
    pub mass_fraction: f64,
}

impl Default for BesovOptions {
    fn default() -> Self {
        BesovOptions { base_cells: 64, max_cells: 256, mass_fraction: 0.999 }
    }
}

/// Finite-difference smoothness estimate of the ball-mollified measure.
pub fn besov_estimate(
    m: &EmpiricalMeasure,
    r_set: &[f64],
    h_set: &[f64],
    alpha: f64,
) -> Result<BesovEstimate> {
    besov_estimate_with(m, r_set, h_set, alpha, BesovOptions::default())
}

pub fn besov_estimate_with(
    m: &EmpiricalMeasure,
    r_set: &[f64],
    h_set: &[f64],
    alpha: f64,
    opts: BesovOptions,
) -> Result<BesovEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha = {alpha} outside (0, 1)"));
    }
    if r_set.is_empty() || h_set.is_empty() {
        return domain("r_set and h_set must be nonempty");
    }
    if r_set.iter().chain(h_set).any(|x| !(*x > 0.0 && *x < 1.0)) {
        return domain("radii and shifts must lie in (0, 1)");
    }
    let r_min = r_set.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = r_set.iter().copied().fold(0.0, f64::max);
    let h_max = h_set.iter().copied().fold(0.0, f64::max);

    let (lo, hi) = mass_box(m, opts.mass_fraction);
    let margin = r_max + h_max;
    let lo = lo - Vec3::new(margin, margin, margin);
    let hi = hi + Vec3::new(margin, margin, margin);
    let ext = hi - lo;
    let widest = ext.x.max(ext.y).max(ext.z);
    let spacing = (widest / opts.base_cells as f64).min(r_min / 4.0);
    let mut n = [0usize; 3];
    for a in 0..3 {
        n[a] = (ext.axis(a) / spacing).ceil() as usize + 1;
        if n[a] > opts.max_cells {
            return Err(Error::Refused(format!(
                "grid would need {} cells on axis {a} (max {}); raise r_min or max_cells",
                n[a], opts.max_cells
            )));
        }
    }
    let grid = GridSpec::new(lo, spacing, n)?;

    let mut shifts: Vec<usize> = h_set
        .iter()
        .map(|h| ((h / spacing).round() as usize).max(1))
        .collect();
    shifts.sort_unstable();
    shifts.dedup();

    let hist = histogram(m, &grid);
    let mut table = Vec::new();
    let mut monotone = true;
    for &r in r_set {
        let g = mollify_ball(&hist, &grid, r);
        let mut prev = 0.0;
        for &s in &shifts {
            let d = (0..3).map(|a| shift_l1(&g, &grid, a, s)).sum::<f64>() / 3.0;
            if d < prev {
                monotone = false;
            }
            prev = d;
            table.push((r, s as f64 * spacing, d));
        }
    }

    let (kappa, a_exp, alpha_fit, fit_residual) = fit_power_law(&table)?;
    let s_est = if monotone { Some(a_exp - alpha) } else { None };
    Ok(BesovEstimate {
        kappa,
        a_exp,
        alpha_fit,
        alpha,
        s_est,
        fit_residual,
        monotone,
        spacing,
        table,
    })
}

/// Per-axis box holding at least `frac` of the mass.
fn mass_box(m: &EmpiricalMeasure, frac: f64) -> (Vec3, Vec3) {
    let tail = (1.0 - frac) / 6.0;
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for a in 0..3 {
        let mut pairs: Vec<(f64, f64)> = m.iter().map(|(v, w)| (v.axis(a), w)).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        lo[a] = weighted_quantile(&pairs, tail);
        hi[a] = weighted_quantile(&pairs, 1.0 - tail);
    }
    (Vec3::from_array(lo), Vec3::from_array(hi))
}

fn weighted_quantile(sorted: &[(f64, f64)], q: f64) -> f64 {
    let mut acc = 0.0;
    for (x, w) in sorted {
        acc += w;
        if acc >= q {
            return *x;
        }
    }
    sorted.last().map(|p| p.0).unwrap_or(0.0)
}

/// Nearest-cell deposit of the weights, as a density.
fn histogram(m: &EmpiricalMeasure, grid: &GridSpec) -> Vec<f64> {
    let mut h = vec![0.0; grid.len()];
    let inv = 1.0 / grid.cell_volume();
    for (v, w) in m.iter() {
        if let Some([i, j, k]) = grid.locate(v) {
            h[grid.index(i, j, k)] += w * inv;
        }
    }
    h
}

/// Convolution with the discrete uniform ball of radius `r`, normalized to
/// unit mass, through a zero-padded FFT.
fn mollify_ball(dens: &[f64], grid: &GridSpec, r: f64) -> Vec<f64> {
    let reach = (r / grid.spacing).floor() as usize;
    let dims = [
        (grid.n[0] + 2 * reach + 1).next_power_of_two(),
        (grid.n[1] + 2 * reach + 1).next_power_of_two(),
        (grid.n[2] + 2 * reach + 1).next_power_of_two(),
    ];
    let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
    let zero = Complex64::new(0.0, 0.0);

    let mut kern = vec![zero; dims[0] * dims[1] * dims[2]];
    let mut count = 0.0;
    let rr = reach as i64;
    for di in -rr..=rr {
        for dj in -rr..=rr {
            for dk in -rr..=rr {
                let d2 = ((di * di + dj * dj + dk * dk) as f64) * grid.spacing * grid.spacing;
                if d2 < r * r {
                    let w = |d: i64, n: usize| d.rem_euclid(n as i64) as usize;
                    kern[idx(w(di, dims[0]), w(dj, dims[1]), w(dk, dims[2]))] += 1.0;
                    count += 1.0;
                }
            }
        }
    }
    let mut buf = vec![zero; kern.len()];
    for i in 0..grid.n[0] {
        for j in 0..grid.n[1] {
            for k in 0..grid.n[2] {
                buf[idx(i, j, k)] = Complex64::new(dens[grid.index(i, j, k)], 0.0);
            }
        }
    }
    fft3(&mut kern, dims, Direction::Forward);
    fft3(&mut buf, dims, Direction::Forward);
    for (b, k) in buf.iter_mut().zip(&kern) {
        *b *= k;
    }
    fft3(&mut buf, dims, Direction::Inverse);
    let scale = 1.0 / (count * kern.len() as f64);
    // The padded result is only nonzero within `reach` of the original grid,
    // which the mass-box margin already accommodates.
    let mut out = vec![0.0; grid.len()];
    for i in 0..grid.n[0] {
        for j in 0..grid.n[1] {
            for k in 0..grid.n[2] {
                out[grid.index(i, j, k)] = buf[idx(i, j, k)].re * scale;
            }
        }
    }
    out
}

/// `int |g(x + s e_axis) - g(x)| dx` with `g = 0` off the grid.
pub(crate) fn shift_l1(g: &[f64], grid: &GridSpec, axis: usize, s: usize) -> f64 {
    let [n0, n1, n2] = grid.n;
    let n = grid.n[axis];
    let mut total = 0.0;
    for i in 0..n0 {
        for j in 0..n1 {
            for k in 0..n2 {
                let c = [i, j, k][axis];
                let here = g[grid.index(i, j, k)];
                let there = if c + s < n {
                    let mut p = [i, j, k];
                    p[axis] += s;
                    g[grid.index(p[0], p[1], p[2])]
                } else {
                    0.0
                };
                total += (there - here).abs();
            }
        }
    }
    // Terms with x outside the grid but x + h inside.
    for i in 0..n0 {
        for j in 0..n1 {
            for k in 0..n2 {
                if [i, j, k][axis] < s {
                    total += g[grid.index(i, j, k)].abs();
                }
            }
        }
    }
    total * grid.cell_volume()
}

/// Least-squares fit of `log D = log kappa + a log h - alpha_fit log r`.
fn fit_power_law(table: &[(f64, f64, f64)]) -> Result<(f64, f64, f64, f64)> {
    let rows: Vec<(f64, f64, f64)> = table
        .iter()
        .filter(|(_, _, d)| *d > 0.0)
        .map(|(r, h, d)| (r.ln(), h.ln(), d.ln()))
        .collect();
    let distinct = |f: fn(&(f64, f64, f64)) -> f64| {
        let first = f(&rows[0]);
        rows.iter().any(|x| (f(x) - first).abs() > 1e-12)
    };
    if rows.len() < 2 || !distinct(|x| x.1) {
        return domain("need at least two distinct shifts with positive D to fit a slope");
    }
    let fit_r = distinct(|x| x.0) && rows.len() >= 3;
    let p = if fit_r { 3 } else { 2 };
    // Normal equations for columns [1, log h, -log r].
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (lr, lh, ld) in &rows {
        let x = [1.0, *lh, -*lr];
        for a in 0..p {
            atb[a] += x[a] * ld;
            for b in 0..p {
                ata[a][b] += x[a] * x[b];
            }
        }
    }
    let beta = solve_small(&ata, &atb, p)?;
    let res: f64 = rows
        .iter()
        .map(|(lr, lh, ld)| {
            let pred = beta[0] + beta[1] * lh - if fit_r { beta[2] * lr } else { 0.0 };
            (ld - pred).powi(2)
        })
        .sum::<f64>();
    let resid = (res / rows.len() as f64).sqrt();
    Ok((beta[0].exp(), beta[1], if fit_r { beta[2] } else { 0.0 }, resid))
}

fn solve_small(a: &[[f64; 3]; 3], b: &[f64; 3], p: usize) -> Result<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..p {
        m[i][..p].copy_from_slice(&a[i][..p]);
        m[i][3] = b[i];
    }
    for c in 0..p {
        let piv = (c..p)
            .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
            .unwrap_or(c);
        m.swap(c, piv);
        if m[c][c].abs() < 1e-300 {
            return domain("singular least-squares system");
        }
        for r in 0..p {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in 0..4 {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    let mut x = [0.0; 3];
    for i in 0..p {
        x[i] = m[i][3] / m[i][i];
    }
    Ok(x)
}

/// Hard-potential exponent: `(nu - 2 nu^2)/(1 + 2 nu)` below
/// `(sqrt 2 - 1)/2`, `(sqrt 2 - 1)^2 / 2` above.
pub fn smoothness_exponent_hard(nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu < 1.0) {
        return domain(format!("nu = {nu} outside (0, 1)"));
    }
    let brk = (2f64.sqrt() - 1.0) / 2.0;
    Ok(if nu < brk {
        (nu - 2.0 * nu * nu) / (1.0 + 2.0 * nu)
    } else {
        (2f64.sqrt() - 1.0).powi(2) / 2.0
    })
}

fn check_soft(gamma: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu < 1.0) {
        return domain(format!("nu = {nu} outside (0, 1)"));
    }
    if !(gamma > -1.0 && gamma <= 0.0) {
        return domain(format!("gamma = {gamma} outside (-1, 0]"));
    }
    if gamma + nu <= 0.0 {
        return domain(format!("gamma + nu = {} must be positive", gamma + nu));
    }
    Ok(2.0 + gamma / nu)
}

/// `sup_{0 < alpha <= nu} m alpha / (1 + m alpha) - alpha` with
/// `m = 2 + gamma/nu`, by golden-section search.
pub fn smoothness_exponent_soft(gamma: f64, nu: f64) -> Result<f64> {
    let m = check_soft(gamma, nu)?;
    let f = |a: f64| m * a / (1.0 + m * a) - a;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, nu);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let best = f(0.5 * (lo + hi)).max(f(nu));
    Ok(best)
}

/// Closed form of [`smoothness_exponent_soft`].
pub fn smoothness_exponent_soft_closed(gamma: f64, nu: f64) -> Result<f64> {
    let m = check_soft(gamma, nu)?;
    let star = (m.sqrt() - 1.0) / m;
    Ok(if star <= nu {
        (m.sqrt() - 1.0).powi(2) / m
    } else {
        m * nu / (1.0 + m * nu) - nu
    })
}

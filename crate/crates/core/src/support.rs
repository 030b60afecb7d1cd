//! Test sets `K(w, zeta)` and the sphere-spreading construction for supports.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::sde::{unit_vector, Snapshot};
use crate::vec3::Vec3;

/// `K(w, zeta) = { v : |v| <= 3, |v - w| >= 1, |<v - w, zeta>| >= |zeta| }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kset {
    pub w: Vec3,
    pub zeta: Vec3,
}

pub fn in_k(v: Vec3, k: &Kset) -> bool {
    let d = v - k.w;
    v.norm() <= 3.0 && d.norm() >= 1.0 && d.dot(k.zeta).abs() >= k.zeta.norm()
}

fn sg(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl Kset {
    pub fn new(w: Vec3, zeta: Vec3) -> Kset {
        Kset { w, zeta }
    }

    /// `x = -2 sg(<w, zeta>) zeta / |zeta|`, the center of a unit ball inside
    /// `K(w, zeta)`; with `sg(0) = 1`. Any point of `S(0, 2)` works for `zeta = 0`.
    pub fn ball_center(&self) -> Vec3 {
        let n = self.zeta.norm();
        if n == 0.0 {
            return Vec3::X * 2.0;
        }
        self.zeta * (-2.0 * sg(self.w.dot(self.zeta)) / n)
    }

    /// Whether `v`, taken from the open ball `B(ball_center, 1)`, lies in `K`.
    /// Always true by construction; exposed for checking.
    pub fn contains_ball_point(&self, v: Vec3) -> bool {
        (v - self.ball_center()).norm() >= 1.0 || in_k(v, self)
    }
}

/// Default probes: `w = 0` and `w` on shells of radius 1, 2, 3 along 14
/// directions; `zeta` along the same directions with `|zeta|` in {0.5, 1, 2}.
pub fn default_probes() -> Vec<Kset> {
    let dirs = probe_directions();
    let mut ws = vec![Vec3::ZERO];
    for r in [1.0, 2.0, 3.0] {
        ws.extend(dirs.iter().map(|d| *d * r));
    }
    let mut zetas = Vec::new();
    for m in [0.5, 1.0, 2.0] {
        zetas.extend(dirs.iter().map(|d| *d * m));
    }
    ws.iter()
        .flat_map(|w| zetas.iter().map(move |z| Kset::new(*w, *z)))
        .collect()
}

fn probe_directions() -> Vec<Vec3> {
    let mut dirs = vec![Vec3::X, Vec3::Y, Vec3::Z, -Vec3::X, -Vec3::Y, -Vec3::Z];
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                dirs.push(Vec3::new(sx, sy, sz) / 3f64.sqrt());
            }
        }
    }
    dirs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub q: f64,
    pub argmin: Kset,
    pub t: f64,
    /// `B(x, 1)` inside `K` at the center and six boundary-adjacent points,
    /// for every probe.
    pub inclusion_ok: bool,
}

/// Minimum empirical mass of `K(w, zeta)` over snapshots and probes.
pub fn estimate_q(snapshots: &[Snapshot], probes: &[Kset]) -> Result<QEstimate> {
    if probes.is_empty() || snapshots.is_empty() {
        return Err(Error::InvalidParam("estimate_q needs snapshots and probes".into()));
    }
    let inclusion_ok = probes.iter().all(|k| {
        let x = k.ball_center();
        let offsets = [Vec3::X, Vec3::Y, Vec3::Z, -Vec3::X, -Vec3::Y, -Vec3::Z];
        in_k(x, k) && offsets.iter().all(|e| in_k(x + *e * 0.999, k))
    });
    let mut best: Option<QEstimate> = None;
    for sn in snapshots {
        let masses: Vec<f64> = probes
            .par_iter()
            .map(|k| sn.measure.mass_where(|v| in_k(v, k)))
            .collect();
        for (k, m) in probes.iter().zip(masses) {
            if best.map_or(true, |b| m < b.q) {
                best = Some(QEstimate { q: m, argmin: *k, t: sn.t, inclusion_ok });
            }
        }
    }
    Ok(best.expect("nonempty inputs"))
}

/// For `v` in the closed ball `B(x, sqrt(2) r)`, two points `v1, v2` on
/// `S(x, r)` with `v` on `S((v1 + v2) / 2, |v1 - v2| / 2)`.
pub fn sqrt2_pair(x: Vec3, r: f64, v: Vec3) -> Result<(Vec3, Vec3)> {
    let d = v - x;
    let alpha = d.norm() / r;
    if !(r > 0.0) || alpha > 2f64.sqrt() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("|v - x| / r = {alpha} exceeds sqrt(2)")));
    }
    let alpha = alpha.min(2f64.sqrt());
    let sigma = if alpha > 0.0 { d / d.norm() } else { Vec3::X };
    // Any unit vector orthogonal to sigma.
    let helper = if sigma.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let tau = {
        let t = helper - sigma * helper.dot(sigma);
        t / t.norm()
    };
    let beta = (2.0 - alpha * alpha).max(0.0).sqrt();
    let a = sigma * (alpha + beta);
    let b = tau * (alpha - beta);
    Ok((x + (a + b) * (r / 2.0), x + (a - b) * (r / 2.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadResult {
    pub cloud: Vec<Vec3>,
    pub x0: Vec3,
    pub r0: f64,
    /// `2^(n/2) r0`: `B(x0, radius)` lies in the support of any law whose
    /// support is closed under the sphere operation.
    pub guaranteed_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpreadMode {
    /// Random cloud pairs, drawn with probability proportional to `|v1 - v2|`.
    Random,
    /// Iteration `i` draws `v` uniformly in `B(x0, sqrt(2) r_i)` and adds the
    /// pair from [`sqrt2_pair`] on `S(x0, r_i)` together with samples on the
    /// sphere it spans, `r_i = 2^(i/2) r0`.
    Constructive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadOptions {
    pub pairs_per_iteration: usize,
    pub seed: u64,
    pub mode: SpreadMode,
}

impl Default for SpreadOptions {
    fn default() -> Self {
        SpreadOptions { pairs_per_iteration: 2000, seed: 0, mode: SpreadMode::Random }
    }
}

pub fn sphere_spread(points: &[Vec3], iterations: usize, samples_per_pair: usize) -> Result<SpreadResult> {
    sphere_spread_with(points, iterations, samples_per_pair, SpreadOptions::default())
}

/// Augments the cloud with points on spheres `S((v1 + v2) / 2, |v1 - v2| / 2)`
/// for pairs chosen according to `opts.mode`.
pub fn sphere_spread_with(
    points: &[Vec3],
    iterations: usize,
    samples_per_pair: usize,
    opts: SpreadOptions,
) -> Result<SpreadResult> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("cloud contains non-finite points".into()));
    }
    if points.len() < 2 || points.iter().all(|p| *p == points[0]) {
        return Err(Error::Domain("cloud is a Dirac mass; need two distinct points".into()));
    }
    // Two sweeps for an approximate diameter; any distinct pair gives a valid
    // guarantee, a longer one gives a larger radius.
    let far = |from: Vec3| {
        points
            .iter()
            .copied()
            .fold(from, |a, b| if (b - from).norm2() > (a - from).norm2() { b } else { a })
    };
    let v1 = far(points[0]);
    let v2 = far(v1);
    let x0 = (v1 + v2) / 2.0;
    let r0 = (v1 - v2).norm() / 2.0;

    let streams = Streams::new(opts.seed, "sphere_spread");
    let mut cloud = points.to_vec();
    for it in 0..iterations {
        let mut rng = streams.rng(it as u64, 0);
        if opts.mode == SpreadMode::Constructive {
            let r = 2f64.powf(it as f64 / 2.0) * r0;
            let mut added = Vec::with_capacity(opts.pairs_per_iteration * (samples_per_pair + 2));
            for _ in 0..opts.pairs_per_iteration {
                let v = x0 + unit_vector(&mut rng) * (2f64.sqrt() * r * rng.gen::<f64>().cbrt());
                let (a, b) = sqrt2_pair(x0, r, v)?;
                let (mid, rad) = ((a + b) / 2.0, (a - b).norm() / 2.0);
                added.extend([a, b, v]);
                for _ in 0..samples_per_pair {
                    added.push(mid + unit_vector(&mut rng) * rad);
                }
            }
            cloud.extend(added);
            continue;
        }
        let center = cloud.iter().copied().sum::<Vec3>() / cloud.len() as f64;
        let reach = cloud.iter().map(|p| (*p - center).norm()).fold(0.0, f64::max);
        let dmax = 2.0 * reach;
        let n = cloud.len();
        let mut added = Vec::with_capacity(opts.pairs_per_iteration * samples_per_pair);
        let mut pairs = 0;
        while pairs < opts.pairs_per_iteration {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let d = (cloud[i] - cloud[j]).norm();
            // Rejection gives pair probability proportional to the distance.
            if d == 0.0 || rng.gen::<f64>() * dmax > d {
                continue;
            }
            pairs += 1;
            let mid = (cloud[i] + cloud[j]) / 2.0;
            for _ in 0..samples_per_pair {
                added.push(mid + unit_vector(&mut rng) * (d / 2.0));
            }
        }
        cloud.extend(added);
    }
    Ok(SpreadResult {
        cloud,
        x0,
        r0,
        guaranteed_radius: 2f64.powf(iterations as f64 / 2.0) * r0,
    })
}

/// Fraction of grid cells with centers in `B(center, radius)` that have a
/// cloud point within one cell diagonal.
pub fn cloud_coverage(cloud: &[Vec3], center: Vec3, radius: f64, cell: f64) -> f64 {
    use kiddo::immutable::float::kdtree::ImmutableKdTree;
    use kiddo::SquaredEuclidean;
    let pts: Vec<[f64; 3]> = cloud.iter().map(|v| v.to_array()).collect();
    let tree: ImmutableKdTree<f64, u32, 3, 32> = ImmutableKdTree::new_from_slice(&pts);
    let m = (radius / cell).ceil() as i64;
    let diag2 = 3.0 * cell * cell;
    let mut total = 0usize;
    let mut hit = 0usize;
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let c = center + Vec3::new(i as f64, j as f64, k as f64) * cell;
                if (c - center).norm() > radius {
                    continue;
                }
                total += 1;
                let nn = tree.nearest_one::<SquaredEuclidean>(&c.to_array());
                if nn.distance <= diag2 {
                    hit += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::EmpiricalMeasure;
    use approx::assert_relative_eq;

    #[test]
    fn membership_examples() {
        let k = Kset::new(Vec3::ZERO, Vec3::X);
        assert!(in_k(Vec3::new(2.0, 0.0, 0.0), &k));
        assert!(!in_k(Vec3::new(4.0, 0.0, 0.0), &k));
        assert!(!in_k(Vec3::new(2.0, 0.0, 0.0), &Kset::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 5.0))));
        // zeta = 0 leaves only the first two conditions.
        assert!(in_k(Vec3::new(0.0, 2.0, 0.0), &Kset::new(Vec3::ZERO, Vec3::ZERO)));
    }

    #[test]
    fn ball_center_sign_convention() {
        let k = Kset::new(Vec3::ZERO, Vec3::new(0.0, 3.0, 0.0));
        assert_eq!(k.ball_center(), Vec3::new(0.0, -2.0, 0.0));
        let k = Kset::new(Vec3::new(0.0, -1.0, 0.0), Vec3::new(0.0, 3.0, 0.0));
        assert_eq!(k.ball_center(), Vec3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn sqrt2_pair_two_examples() {
        let x = Vec3::new(1.0, -2.0, 0.5);
        for v in [x, x + Vec3::Z * 2f64.sqrt() * 0.7, x + Vec3::new(0.3, 0.4, 0.0)] {
            let (a, b) = sqrt2_pair(x, 0.7, v).unwrap();
            assert_relative_eq!((a - x).norm(), 0.7, max_relative = 1e-12);
            assert_relative_eq!((b - x).norm(), 0.7, max_relative = 1e-12);
            let mid = (a + b) / 2.0;
            assert_relative_eq!((v - mid).norm(), (a - b).norm() / 2.0, epsilon = 1e-12);
        }
        assert!(sqrt2_pair(x, 0.7, x + Vec3::X).is_err());
    }

    #[test]
    fn dirac_cloud_is_rejected_and_zero_iterations_keep_cloud() {
        assert!(sphere_spread(&[Vec3::X; 3], 2, 4).is_err());
        let pts = [Vec3::X, -Vec3::X];
        let r = sphere_spread(&pts, 0, 4).unwrap();
        assert_eq!(r.cloud, pts.to_vec());
        assert_eq!(r.guaranteed_radius, 1.0);
        let r = sphere_spread_with(&pts, 2, 2, SpreadOptions { pairs_per_iteration: 10, seed: 1, mode: SpreadMode::Random }).unwrap();
        assert_eq!((r.x0, r.r0, r.guaranteed_radius), (Vec3::ZERO, 1.0, 2.0));
    }

    #[test]
    fn dirac_snapshot_gives_zero_q() {
        let m = EmpiricalMeasure::uniform(vec![Vec3::ZERO; 5]).unwrap();
        let sn = Snapshot::new(0.5, m, &[]).unwrap();
        let est = estimate_q(&[sn], &default_probes()).unwrap();
        assert_eq!(est.q, 0.0);
        assert!(est.inclusion_ok);
    }
}

//! Mean-field particle dynamics for the truncated kernel, tagged-particle
//! paths in a frozen background, and the coupled frozen-coefficient replay.
//!
//! The N-particle system advances in steps of `dt`. In each step particle `i`
//! receives a Poisson number of collision candidates at the uniformized rate
//! `k * c_Theta(k) * 2 pi`; each candidate picks a partner from the velocities
//! frozen at the start of the step and is accepted with probability
//! `(|H_k(V_i) - V_j|^gamma ^ k) / k`.
//!
//! Tagged paths are exact (event driven): marks are proposed at a dominating
//! rate and thinned. Every mark in the trailing window is kept, accepted or
//! not, so that [`coupled_freeze`] can replay the same randomness with a
//! frozen base point.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collision::{
    clamp_speed, deviation_in_frame, orthonormal_frame, phi0_from_frames, phi_from_unit,
    post_collision, sample_theta, CollisionAngles, CrossSection,
};
use crate::error::{domain, Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::rng::Streams;
use crate::stats::moment;
use crate::vec3::Vec3;

/// Initial law of the particle system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    /// Mass `p_a` at `a`, `1 - p_a` at `b`.
    TwoPoint { a: Vec3, b: Vec3, p_a: f64 },
    Gaussian { mean: Vec3, sigma: f64 },
    UniformBall { center: Vec3, radius: f64 },
    /// Isotropic directions with speeds of density `~ s^(-tail - 1)` on
    /// `[s_min, s_max]`. Moments of order below `tail` stay bounded as
    /// `s_max` grows.
    ParetoSpeeds { tail: f64, s_min: f64, s_max: f64 },
    /// Draws with replacement from a fixed cloud.
    Samples(Vec<Vec3>),
    /// Single atom; always rejected.
    Dirac(Vec3),
}

impl InitialLaw {
    /// A single atom cannot regularize, so it is refused up front.
    pub fn validate(&self) -> Result<()> {
        let dirac = |why: &str| {
            Err(Error::InvalidParam(format!(
                "initial law is a Dirac mass ({why}); regularization needs f0 not concentrated at one point"
            )))
        };
        match self {
            InitialLaw::Dirac(_) => dirac("single-point spec"),
            InitialLaw::TwoPoint { a, b, p_a } => {
                if !(0.0..=1.0).contains(p_a) {
                    return Err(Error::InvalidParam(format!("p_a = {p_a} outside [0, 1]")));
                }
                if a == b || *p_a == 0.0 || *p_a == 1.0 {
                    dirac("two-point law with one atom")
                } else {
                    Ok(())
                }
            }
            InitialLaw::Gaussian { sigma, .. } => {
                if *sigma == 0.0 {
                    dirac("zero variance")
                } else if !(*sigma > 0.0) {
                    Err(Error::InvalidParam(format!("sigma = {sigma} must be positive")))
                } else {
                    Ok(())
                }
            }
            InitialLaw::UniformBall { radius, .. } => {
                if *radius == 0.0 {
                    dirac("zero radius")
                } else if !(*radius > 0.0) {
                    Err(Error::InvalidParam(format!("radius = {radius} must be positive")))
                } else {
                    Ok(())
                }
            }
            InitialLaw::ParetoSpeeds { tail, s_min, s_max } => {
                if !(*tail > 0.0 && *s_min > 0.0 && s_max > s_min) {
                    Err(Error::InvalidParam(format!(
                        "Pareto speeds need tail > 0 and 0 < s_min < s_max, got {tail}, {s_min}, {s_max}"
                    )))
                } else {
                    Ok(())
                }
            }
            InitialLaw::Samples(v) => {
                if v.is_empty() {
                    Err(Error::InvalidParam("sample file has no rows".into()))
                } else if v.iter().all(|x| *x == v[0]) {
                    dirac("all samples identical")
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec3 {
        match self {
            InitialLaw::TwoPoint { a, b, p_a } => {
                if rng.gen::<f64>() < *p_a {
                    *a
                } else {
                    *b
                }
            }
            InitialLaw::Gaussian { mean, sigma } => {
                let n = Normal::new(0.0, *sigma).expect("validated sigma");
                *mean + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
            }
            InitialLaw::UniformBall { center, radius } => {
                let r = radius * rng.gen::<f64>().cbrt();
                *center + unit_vector(rng) * r
            }
            InitialLaw::ParetoSpeeds { tail, s_min, s_max } => {
                let u: f64 = rng.gen();
                let (a, b) = (s_min.powf(-tail), s_max.powf(-tail));
                let s = (a - u * (a - b)).powf(-1.0 / tail);
                unit_vector(rng) * s
            }
            InitialLaw::Samples(v) => v[rng.gen_range(0..v.len())],
            InitialLaw::Dirac(v) => *v,
        }
    }
}

pub fn unit_vector<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// One-sided update of the tagged particle only.
    Nanbu,
    /// Both partners updated; conserves momentum and energy per collision.
    SymmetricPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub t_end: f64,
    pub dt: f64,
    pub cross_section: CrossSection,
    pub scheme: Scheme,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    /// Orders `p` of the moments recorded in each snapshot.
    pub moments: Vec<f64>,
}

impl SimConfig {
    /// Checks the invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n_particles < 2 {
            return Err(Error::InvalidParam(format!(
                "n_particles = {} must be >= 2",
                self.n_particles
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::InvalidParam(format!("t_end = {} must be >= 0", self.t_end)));
        }
        let rate = self.cross_section.candidate_rate()?;
        if self.snapshot_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParam("snapshot_times must be sorted".into()));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_end)) {
            return Err(Error::InvalidParam(format!(
                "snapshot time {t} outside [0, t_end = {}]",
                self.t_end
            )));
        }
        if self.moments.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParam("moment orders must be >= 0".into()));
        }
        let mut warnings = Vec::new();
        if rate * self.dt > 0.1 {
            warnings.push(format!(
                "dt * candidate rate = {:.3} exceeds 0.1; partners go stale within a step",
                rate * self.dt
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean velocity.
    pub momentum: Vec3,
    /// Mean of `|v|^2`.
    pub energy: f64,
    /// `(p, m_p)` pairs.
    pub moments: Vec<(f64, f64)>,
}

impl Diagnostics {
    pub fn of(m: &EmpiricalMeasure, orders: &[f64]) -> Result<Self> {
        let moments = orders
            .iter()
            .map(|p| Ok((*p, moment(m, *p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Diagnostics { momentum: m.mean(), energy: moment(m, 2.0)?, moments })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub measure: EmpiricalMeasure,
    pub diagnostics: Diagnostics,
}

impl Snapshot {
    pub fn new(t: f64, measure: EmpiricalMeasure, orders: &[f64]) -> Result<Self> {
        let diagnostics = Diagnostics::of(&measure, orders)?;
        Ok(Snapshot { t, measure, diagnostics })
    }
}

#[derive(Debug, Clone)]
pub struct ParticleSystem {
    pub velocities: Vec<Vec3>,
    pub time: f64,
    /// Number of steps taken; addresses the per-step random streams.
    pub step_index: u64,
    pub seed: u64,
    streams: Streams,
    pair_streams: Streams,
}

impl ParticleSystem {
    pub fn from_velocities(velocities: Vec<Vec3>, seed: u64) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(Error::InvalidParam("need at least two particles".into()));
        }
        Ok(ParticleSystem {
            velocities,
            time: 0.0,
            step_index: 0,
            seed,
            streams: Streams::new(seed, "step"),
            pair_streams: Streams::new(seed, "pair"),
        })
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.velocities.clone()).expect("system has particles")
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.velocities.iter().copied().sum()
    }

    pub fn total_energy(&self) -> f64 {
        self.velocities.iter().map(|v| v.norm2()).sum()
    }

    pub fn snapshot(&self, orders: &[f64]) -> Result<Snapshot> {
        Snapshot::new(self.time, self.measure(), orders)
    }
}

/// N i.i.d. draws from `f0`.
pub fn init_system(f0: &InitialLaw, config: &SimConfig) -> Result<ParticleSystem> {
    f0.validate()?;
    if config.n_particles < 2 {
        return Err(Error::InvalidParam("need at least two particles".into()));
    }
    let mut rng = Streams::new(config.seed, "init").rng(0, 0);
    let v = (0..config.n_particles).map(|_| f0.draw(&mut rng)).collect();
    ParticleSystem::from_velocities(v, config.seed)
}

/// Advances the system by `dt`.
pub fn step(system: &mut ParticleSystem, dt: f64, config: &SimConfig) -> Result<()> {
    if !(dt >= 0.0) {
        return domain(format!("dt = {dt} must be >= 0"));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let cs = &config.cross_section;
    let k = cs.truncation()?;
    let rate = cs.candidate_rate()?;
    match config.scheme {
        Scheme::Nanbu => nanbu_step(system, dt, cs, k, rate)?,
        Scheme::SymmetricPair => pair_step(system, dt, cs, k, rate)?,
    }
    system.step_index += 1;
    system.time += dt;
    Ok(())
}

fn nanbu_step(sys: &mut ParticleSystem, dt: f64, cs: &CrossSection, k: f64, rate: f64) -> Result<()> {
    let n = sys.velocities.len();
    let frozen = &sys.velocities;
    let poisson = Poisson::new(rate * dt).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let theta_min = 1.0 / k;
    let s = sys.step_index;
    let streams = &sys.streams;
    let next: Vec<Vec3> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec3> {
            let mut rng = streams.rng(s, i as u64);
            let count = poisson.sample(&mut rng) as u64;
            let mut v = frozen[i];
            for _ in 0..count {
                let j = other_index(&mut rng, i, n);
                let vj = frozen[j];
                let theta = sample_theta(cs, theta_min, rng.gen())?;
                let phi = phi_from_unit(rng.gen());
                let u: f64 = rng.gen();
                let hv = clamp_speed(v, k);
                let x = hv - vj;
                if u * k < cs.kinetic(x.norm()) {
                    v += deviation_in_frame(x, &orthonormal_frame(x), theta, phi);
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    time: sys.time + dt,
                    state: format!("start-of-step velocity {:?}, result {:?}", frozen[i], v),
                });
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    sys.velocities = next;
    Ok(())
}

fn pair_step(sys: &mut ParticleSystem, dt: f64, cs: &CrossSection, k: f64, rate: f64) -> Result<()> {
    let n = sys.velocities.len();
    let mut rng = sys.pair_streams.rng(sys.step_index, 0);
    let mean = 0.5 * rate * dt * n as f64;
    let count = Poisson::new(mean)
        .map_err(|e| Error::InvalidParam(e.to_string()))?
        .sample(&mut rng) as u64;
    let theta_min = 1.0 / k;
    for _ in 0..count {
        let i = rng.gen_range(0..n);
        let j = other_index(&mut rng, i, n);
        let theta = sample_theta(cs, theta_min, rng.gen())?;
        let phi = phi_from_unit(rng.gen());
        let u: f64 = rng.gen();
        let (vi, vj) = (sys.velocities[i], sys.velocities[j]);
        if u * k < cs.kinetic((vi - vj).norm()) {
            let (a, b) = post_collision(vi, vj, CollisionAngles { theta, phi });
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite {
                    index: i,
                    time: sys.time + dt,
                    state: format!("pair ({i}, {j}) from {vi:?}, {vj:?} to {a:?}, {b:?}"),
                });
            }
            sys.velocities[i] = a;
            sys.velocities[j] = b;
        }
    }
    Ok(())
}

#[inline]
fn other_index<R: Rng>(rng: &mut R, i: usize, n: usize) -> usize {
    let j = rng.gen_range(0..n - 1);
    if j >= i {
        j + 1
    } else {
        j
    }
}

/// Runs from `f0` and returns the snapshots at `config.snapshot_times`.
pub fn simulate(f0: &InitialLaw, config: &SimConfig) -> Result<Vec<Snapshot>> {
    for w in config.validate()? {
        log::warn!("{w}");
    }
    let mut sys = init_system(f0, config)?;
    simulate_from(&mut sys, config)
}

/// Continues `sys` through the configured snapshot times.
pub fn simulate_from(sys: &mut ParticleSystem, config: &SimConfig) -> Result<Vec<Snapshot>> {
    let mut out = Vec::with_capacity(config.snapshot_times.len());
    for &target in &config.snapshot_times {
        while sys.time < target {
            let remaining = target - sys.time;
            let h = if remaining <= config.dt * (1.0 + 1e-9) { remaining } else { config.dt };
            step(sys, h, config)?;
            if h == remaining {
                sys.time = target;
            }
        }
        out.push(sys.snapshot(&config.moments)?);
    }
    Ok(out)
}

/// One proposed mark of the tagged particle's driving measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub s: f64,
    /// Partner velocity drawn from the background.
    pub v: Vec3,
    pub theta: f64,
    pub phi: f64,
    /// Thinning variable on `[0, bound)`; the mark fires when
    /// `u <= kinetic(|V - v|)`.
    pub u: f64,
    /// Left limit `V_{s-}` of the path.
    pub v_before: Vec3,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPath {
    pub t: f64,
    /// Marks are recorded on `[t - window, t]`.
    pub window: f64,
    pub v0: Vec3,
    /// Accepted jumps as `(time, velocity after the jump)`.
    pub jumps: Vec<(f64, Vec3)>,
    pub marks: Vec<Mark>,
    pub v_t: Vec3,
    pub cross_section: CrossSection,
    pub proposals: u64,
}

impl CoupledPath {
    /// Velocity at time `s` (right-continuous).
    pub fn value_at(&self, s: f64) -> Vec3 {
        let idx = self.jumps.partition_point(|(tj, _)| *tj <= s);
        if idx == 0 {
            self.v0
        } else {
            self.jumps[idx - 1].1
        }
    }
}

/// Background value at time `s`: snapshots are held constant on
/// `(t_k, t_{k+1}]` (left-continuous).
pub fn background_at(bg: &[Snapshot], s: f64) -> &Snapshot {
    let idx = bg.partition_point(|sn| sn.t < s);
    &bg[idx.saturating_sub(1)]
}

/// Driving kernel of a tagged path: `|x|^gamma` capped at the truncation
/// level `k` of `cs`, and angles restricted to `[theta_min, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedKernel {
    pub cs: CrossSection,
    pub theta_min: f64,
}

impl TaggedKernel {
    /// Cutoff `1 / k`, matching the truncated kernel.
    pub fn from_truncation(cs: &CrossSection) -> Result<Self> {
        Ok(TaggedKernel { cs: *cs, theta_min: 1.0 / cs.truncation()? })
    }

    pub fn new(cs: &CrossSection, theta_min: f64) -> Result<Self> {
        cs.truncation()?;
        if !(theta_min > 0.0 && theta_min < crate::collision::THETA_MAX) {
            return domain(format!("theta_min = {theta_min} outside (0, pi/2)"));
        }
        Ok(TaggedKernel { cs: *cs, theta_min })
    }
}

/// Exact simulation of one particle driven by the frozen background.
pub fn tagged_path(
    background: &[Snapshot],
    v0: Vec3,
    t: f64,
    window: f64,
    kernel: &TaggedKernel,
    seed: u64,
) -> Result<CoupledPath> {
    let mut rng = Streams::new(seed, "tagged").rng(0, 0);
    tagged_path_with_rng(background, v0, t, window, kernel, &mut rng)
}

pub fn tagged_path_with_rng(
    background: &[Snapshot],
    v0: Vec3,
    t: f64,
    window: f64,
    kernel: &TaggedKernel,
    rng: &mut ChaCha8Rng,
) -> Result<CoupledPath> {
    let cs = &kernel.cs;
    if background.is_empty() {
        return domain("empty background");
    }
    let last = background[background.len() - 1].t;
    if background[0].t > 0.0 || last + 1e-12 < t {
        return domain(format!(
            "background spans [{}, {last}] but must cover [0, {t}]",
            background[0].t
        ));
    }
    if !(t >= 0.0 && window >= 0.0) {
        return domain(format!("need t >= 0 and window >= 0, got {t}, {window}"));
    }
    let k = cs.truncation()?;
    let theta_min = kernel.theta_min;
    let ang = cs.angular_mass(theta_min) * TAU;
    let bg_speed = background.iter().map(|s| s.measure.max_speed()).fold(0.0, f64::max);
    let bound = |vmax: f64| -> f64 {
        if cs.gamma > 0.0 {
            (vmax + bg_speed).powf(cs.gamma).min(k)
        } else if cs.gamma == 0.0 {
            1.0f64.min(k)
        } else {
            k
        }
    };

    let mut v = v0;
    let mut vmax = v0.norm();
    let mut s = 0.0;
    let mut jumps = Vec::new();
    let mut marks = Vec::new();
    let mut proposals = 0u64;
    let rec_from = t - window;
    let mut kb = bound(vmax);
    loop {
        let rate = kb * ang;
        if rate <= 0.0 {
            break;
        }
        s += Exp::new(rate).expect("positive rate").sample(rng);
        if s > t {
            break;
        }
        proposals += 1;
        let vb = background_at(background, s).measure.draw(rng);
        let theta = sample_theta(cs, theta_min, rng.gen())?;
        let phi = phi_from_unit(rng.gen());
        let u = kb * rng.gen::<f64>();
        let x = v - vb;
        let kin = cs.kinetic(x.norm());
        if kin > kb * (1.0 + 1e-12) {
            // Bound violated: refresh it and restart the clock at `s`.
            vmax = vmax.max(v.norm());
            kb = bound(vmax).max(kin);
            continue;
        }
        let accepted = u <= kin;
        if s >= rec_from {
            marks.push(Mark { s, v: vb, theta, phi, u, v_before: v, accepted });
        }
        if accepted {
            v += deviation_in_frame(x, &orthonormal_frame(x), theta, phi);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: 0,
                    time: s,
                    state: format!("tagged particle left {x:?}"),
                });
            }
            jumps.push((s, v));
            vmax = vmax.max(v.norm());
            kb = bound(vmax);
        }
    }
    Ok(CoupledPath {
        t,
        window,
        v0,
        jumps,
        marks,
        v_t: v,
        cross_section: *cs,
        proposals,
    })
}

/// Replays the recorded marks on `(t - eps, t]` from the frozen base point
/// `V_{t-eps}`; returns `(V_t, V_t^eps)`.
pub fn coupled_freeze(path: &CoupledPath, eps: f64) -> Result<(Vec3, Vec3)> {
    if eps > path.t {
        return domain(format!("eps = {eps} exceeds t = {}", path.t));
    }
    if !(eps >= 0.0) || eps > path.window + 1e-12 {
        return domain(format!("eps = {eps} outside the recorded window {}", path.window));
    }
    let t0 = path.t - eps;
    let base = path.value_at(t0);
    let cs = &path.cross_section;
    let mut acc = base;
    for m in path.marks.iter().filter(|m| m.s > t0) {
        let y = base - m.v;
        if m.u <= cs.kinetic(y.norm()) {
            let fy = orthonormal_frame(y);
            let p0 = phi0_from_frames(&orthonormal_frame(m.v_before - m.v), &fy);
            acc += deviation_in_frame(y, &fy, m.theta, (m.phi + p0) % TAU);
        }
    }
    Ok((path.v_t, acc))
}

/// Replay in which every mark is frozen at the replay's own left limit.
/// Reproduces `V_t` exactly when the window covers `[0, t]`.
pub fn replay_fresh(path: &CoupledPath) -> Result<Vec3> {
    if path.window < path.t {
        return domain("fresh replay needs marks recorded from time 0");
    }
    let cs = &path.cross_section;
    let mut v = path.v0;
    for m in &path.marks {
        let y = v - m.v;
        if m.u <= cs.kinetic(y.norm()) {
            let fy = orthonormal_frame(y);
            let p0 = phi0_from_frames(&orthonormal_frame(m.v_before - m.v), &fy);
            v += deviation_in_frame(y, &fy, m.theta, m.phi + p0);
        }
    }
    Ok(v)
}

/// Coupling-error experiment over a set of `eps` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub eps: Vec<f64>,
    /// Mean of `|V_t - V_t^eps|^nu` per `eps`.
    pub mean: Vec<f64>,
    /// Half-width of the 95% normal interval per `eps`.
    pub ci95: Vec<f64>,
    pub slope: f64,
    pub n_paths: usize,
}

/// Runs `n_paths` tagged paths with `V_0 ~ f0` and measures
/// `E|V_t - V_t^eps|^nu` for each `eps`.
pub fn coupling_rates(
    background: &[Snapshot],
    f0: &InitialLaw,
    kernel: &TaggedKernel,
    t: f64,
    eps_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<RateResult> {
    if eps_list.len() < 2 {
        return domain("need at least two eps values");
    }
    let window = eps_list.iter().copied().fold(0.0, f64::max);
    let streams = Streams::new(seed, "rates");
    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let mut rng = streams.rng(0, p as u64);
            let v0 = f0.draw(&mut rng);
            let path = tagged_path_with_rng(background, v0, t, window, kernel, &mut rng)?;
            eps_list
                .iter()
                .map(|&e| {
                    let (a, b) = coupled_freeze(&path, e)?;
                    Ok((a - b).norm().powf(kernel.cs.nu))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let n = n_paths as f64;
    let mut mean = Vec::new();
    let mut ci95 = Vec::new();
    for e in 0..eps_list.len() {
        let m = per_path.iter().map(|r| r[e]).sum::<f64>() / n;
        let var = per_path.iter().map(|r| (r[e] - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        mean.push(m);
        ci95.push(1.96 * (var / n).sqrt());
    }
    let slope = loglog_slope(eps_list, &mean);
    Ok(RateResult { eps: eps_list.to_vec(), mean, ci95, slope, n_paths })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Fraction of cells of a cubic grid of side `cell` inside `B(0, radius)`
/// that contain at least one sample.
pub fn ball_coverage(m: &EmpiricalMeasure, radius: f64, cell: f64) -> f64 {
    let n = (2.0 * radius / cell).ceil() as i64;
    let idx = |x: f64| ((x + radius) / cell).floor() as i64;
    let mut inside = std::collections::HashSet::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let c = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * cell
                    - Vec3::new(radius, radius, radius);
                if c.norm() <= radius {
                    inside.insert((i, j, k));
                }
            }
        }
    }
    let mut hit = std::collections::HashSet::new();
    for v in m.samples() {
        let key = (idx(v.x), idx(v.y), idx(v.z));
        if inside.contains(&key) {
            hit.insert(key);
        }
    }
    hit.len() as f64 / inside.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn config(n: usize, scheme: Scheme) -> SimConfig {
        SimConfig {
            n_particles: n,
            t_end: 1.0,
            dt: 1e-3,
            cross_section: CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap(),
            scheme,
            seed: 11,
            snapshot_times: vec![0.0],
            moments: vec![2.0, 4.0],
        }
    }

    fn two_point() -> InitialLaw {
        InitialLaw::TwoPoint { a: Vec3::X, b: -Vec3::X, p_a: 0.5 }
    }

    #[test]
    fn dirac_is_rejected() {
        let c = config(10, Scheme::Nanbu);
        let e = init_system(&InitialLaw::Dirac(Vec3::ZERO), &c).unwrap_err();
        assert!(e.to_string().contains("Dirac"));
        let same = InitialLaw::TwoPoint { a: Vec3::X, b: Vec3::X, p_a: 0.5 };
        assert!(init_system(&same, &c).is_err());
        assert!(init_system(&InitialLaw::Samples(vec![Vec3::X; 4]), &c).is_err());
    }

    #[test]
    fn zero_dt_is_identity() {
        let c = config(100, Scheme::Nanbu);
        let mut s = init_system(&two_point(), &c).unwrap();
        let before = s.velocities.clone();
        step(&mut s, 0.0, &c).unwrap();
        assert_eq!(before, s.velocities);
    }

    #[test]
    fn symmetric_pair_conserves() {
        let c = config(500, Scheme::SymmetricPair);
        let mut s = init_system(&InitialLaw::Gaussian { mean: Vec3::ZERO, sigma: 1.0 }, &c).unwrap();
        let (p0, e0) = (s.total_momentum(), s.total_energy());
        for _ in 0..50 {
            step(&mut s, 0.01, &c).unwrap();
        }
        assert!((s.total_momentum() - p0).norm() < 1e-11);
        assert!(((s.total_energy() - e0) / e0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_at_zero_is_initial_draw() {
        let c = config(64, Scheme::Nanbu);
        let snaps = simulate(&two_point(), &c).unwrap();
        let sys = init_system(&two_point(), &c).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].measure.samples(), &sys.velocities[..]);
    }

    #[test]
    fn tagged_path_stays_at_origin_in_dirac_background() {
        let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(100.0).unwrap();
        let snap = |t| Snapshot::new(t, EmpiricalMeasure::uniform(vec![Vec3::ZERO]).unwrap(), &[]).unwrap();
        let bg = vec![snap(0.0), snap(1.0)];
        let p = tagged_path(&bg, Vec3::ZERO, 1.0, 1.0, &TaggedKernel::from_truncation(&cs).unwrap(), 3).unwrap();
        assert_eq!(p.v_t, Vec3::ZERO);
        assert_eq!(replay_fresh(&p).unwrap(), Vec3::ZERO);
    }

    #[test]
    fn fresh_replay_reproduces_endpoint() {
        let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(50.0).unwrap();
        let mut rng = Streams::new(1, "bg").rng(0, 0);
        let law = InitialLaw::Gaussian { mean: Vec3::ZERO, sigma: 1.0 };
        let cloud: Vec<Vec3> = (0..200).map(|_| law.draw(&mut rng)).collect();
        let m = EmpiricalMeasure::uniform(cloud).unwrap();
        let bg = vec![Snapshot::new(0.0, m.clone(), &[]).unwrap(), Snapshot::new(1.0, m, &[]).unwrap()];
        for seed in 0..5 {
            let tk = TaggedKernel::from_truncation(&cs).unwrap();
            let p = tagged_path(&bg, Vec3::new(0.5, 0.0, -0.3), 1.0, 1.0, &tk, seed).unwrap();
            assert!(!p.jumps.is_empty());
            assert_eq!(replay_fresh(&p).unwrap(), p.v_t);
        }
    }

    #[test]
    fn freeze_with_empty_window_is_identity() {
        let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(50.0).unwrap();
        let m = EmpiricalMeasure::uniform(vec![Vec3::X, -Vec3::X]).unwrap();
        let bg = vec![Snapshot::new(0.0, m.clone(), &[]).unwrap(), Snapshot::new(1.0, m, &[]).unwrap()];
        let p = tagged_path(&bg, Vec3::Y, 1.0, 0.5, &TaggedKernel::from_truncation(&cs).unwrap(), 9).unwrap();
        let (vt, ve) = coupled_freeze(&p, 0.0).unwrap();
        assert_eq!(vt, ve);
        assert!(coupled_freeze(&p, 2.0).is_err());
    }

    #[test]
    fn coverage_of_dense_cloud_is_full() {
        let mut pts = Vec::new();
        for i in -20..=20 {
            for j in -20..=20 {
                for k in -20..=20 {
                    pts.push(Vec3::new(i as f64, j as f64, k as f64) * 0.1 + Vec3::new(0.01, 0.01, 0.01));
                }
            }
        }
        let m = EmpiricalMeasure::uniform(pts).unwrap();
        assert_abs_diff_eq!(ball_coverage(&m, 2.0, 0.2), 1.0, epsilon = 1e-12);
        let two = EmpiricalMeasure::uniform(vec![Vec3::X, -Vec3::X]).unwrap();
        assert!(ball_coverage(&two, 2.0, 0.25) < 0.01);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.4, 0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(1.7)).collect();
        assert_abs_diff_eq!(loglog_slope(&x, &y), 1.7, epsilon = 1e-12);
    }
}

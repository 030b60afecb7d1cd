//! Subcommand dispatch and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use boltzsim::levy::{self, LevyCtx};
use boltzsim::sde::{ball_coverage, coupling_rates, init_system, simulate};
use boltzsim::stats::{self, besov_estimate, entropy_knn};
use boltzsim::support::{self, SpreadMode, SpreadOptions};
use boltzsim::{Error, Result, Scheme, Snapshot, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, SpreadModeName, Subcommand};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: Subcommand,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub wall_clock_s: f64,
    pub summary: Value,
    pub checks: Vec<Check>,
    /// Names of failed checks.
    pub failed: Vec<String>,
    /// Output files relative to the output directory.
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub deterministic: bool,
}

struct Outcome {
    summary: Value,
    checks: Vec<Check>,
    files: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.out.join(rel)
    }

    fn simulate(&mut self) -> Result<Vec<Snapshot>> {
        let sim = self.cfg.sim.sim_config(self.cfg.seed)?;
        simulate(&self.cfg.sim.init.law(), &sim)
    }
}

/// Runs the configured subcommand and writes `manifest.json` last, atomically.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    let sub = cfg
        .subcommand
        .ok_or_else(|| Error::InvalidParam("no subcommand given in the config or on the command line".into()))?;
    let threads = if opts.deterministic { 1 } else { opts.threads.unwrap_or_else(rayon::current_num_threads) };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut ctx = Ctx { cfg, out: cfg.output_dir.clone(), hash: cfg.hash(), files: Vec::new() };
    std::fs::create_dir_all(&ctx.out)?;
    let outcome = pool.install(|| match sub {
        Subcommand::Simulate => run_simulate(&mut ctx),
        Subcommand::Rates => run_rates(&mut ctx),
        Subcommand::Psi => run_psi(&mut ctx),
        Subcommand::Besov => run_besov(&mut ctx),
        Subcommand::Support => run_support(&mut ctx),
        Subcommand::Entropy => run_entropy(&mut ctx),
        Subcommand::Exponents => run_exponents(&mut ctx),
    })?;
    let failed = outcome.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let mut files = ctx.files;
    files.extend(outcome.files);
    let manifest = RunManifest {
        subcommand: sub,
        config_hash: ctx.hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        threads,
        deterministic: opts.deterministic,
        wall_clock_s: start.elapsed().as_secs_f64(),
        summary: outcome.summary,
        checks: outcome.checks,
        failed,
        files,
    };
    io::write_json(&cfg.output_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn snapshot_name(t: f64) -> String {
    format!("snapshots/t_{t:.4}.csv")
}

fn run_simulate(ctx: &mut Ctx) -> Result<Outcome> {
    let snaps = ctx.simulate()?;
    let mut rows = Vec::new();
    for sn in &snaps {
        let p = ctx.path(&snapshot_name(sn.t));
        io::save_snapshot(&p, sn, ctx.cfg.seed, &ctx.hash)?;
        rows.push(json!({ "t": sn.t, "energy": sn.diagnostics.energy, "momentum": sn.diagnostics.momentum }));
    }
    let mut checks = vec![check(
        "finite_energy",
        snaps.iter().all(|s| s.diagnostics.energy.is_finite()),
        "second moment finite at every snapshot".into(),
    )];
    if let (Some(first), Some(last)) = (snaps.first(), snaps.last()) {
        let e0 = first.diagnostics.energy;
        let drift = ((last.diagnostics.energy - e0) / e0).abs();
        if ctx.cfg.sim.sim_config(0)?.scheme == Scheme::SymmetricPair {
            checks.push(check("energy_conserved", drift <= 1e-9, format!("relative drift {drift:.3e}")));
        }
    }
    Ok(Outcome { summary: json!({ "snapshots": rows }), checks, files: vec![] })
}

fn run_rates(ctx: &mut Ctx) -> Result<Outcome> {
    let bg = ctx.simulate()?;
    let r = &ctx.cfg.rates;
    let kernel = r.kernel(&ctx.cfg.sim)?;
    let res = coupling_rates(&bg, &ctx.cfg.sim.init.law(), &kernel, r.t, &r.eps, r.paths, ctx.cfg.seed)?;
    let rows: Vec<Vec<f64>> = (0..res.eps.len()).map(|i| vec![res.eps[i], res.mean[i], res.ci95[i]]).collect();
    let p = ctx.path("sweeps/rates.csv");
    io::save_table(&p, &["eps", "mean_err_nu", "ci95"], &rows)?;
    let mut checks = vec![check(
        "errors_finite",
        res.mean.iter().all(|m| m.is_finite()),
        "mean coupling errors finite".into(),
    )];
    if let Some(min) = r.min_slope {
        checks.push(check("slope", res.slope >= min, format!("slope {:.4} vs minimum {min}", res.slope)));
    }
    Ok(Outcome { summary: serde_json::to_value(&res)?, checks, files: vec![] })
}

fn direction_set() -> Vec<Vec3> {
    vec![
        Vec3::X,
        Vec3::Y,
        Vec3::Z,
        Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt(),
        Vec3::new(1.0, -2.0, 0.5) / 5.25f64.sqrt(),
    ]
}

fn run_psi(ctx: &mut Ctx) -> Result<Outcome> {
    let bg = ctx.simulate()?;
    let ps = &ctx.cfg.psi;
    let sim = &ctx.cfg.sim;
    let cs = boltzsim::CrossSection::with_constants(sim.gamma, sim.nu, sim.c_b, sim.c_b, sim.c_b, None)?;
    let mut lctx = LevyCtx::new(ps.eps, ps.t, Vec3::from_array(ps.v0), &bg, cs)?;
    if let Some(n) = ps.max_samples {
        lctx = lctx.with_max_samples(n);
    }
    let grid: Vec<Vec3> = ps
        .radii
        .iter()
        .flat_map(|r| direction_set().into_iter().map(move |d| d * *r))
        .collect();
    let scale = ps.eps.powf(-1.0 / sim.nu);
    let scaled: Vec<Vec3> = grid.iter().map(|x| *x * scale).collect();
    let sweep = levy::symbol_sweep(&lctx, &scaled)?;
    let p = ctx.path("sweeps/psi.csv");
    io::save_symbol_sweep(&p, &sweep)?;
    let coer = levy::verify_coercivity(&lctx, &grid)?;
    let zero = levy::psi(&lctx, Vec3::ZERO)?;
    let mut checks = vec![
        check("psi_zero", zero.psi_re == 0.0 && zero.psi_im == 0.0, "Psi(0) = 0".into()),
        check(
            "re_psi_nonnegative",
            sweep.iter().all(|s| s.psi_re >= 0.0),
            "Re Psi >= 0 on the sweep".into(),
        ),
        check("coercivity", !coer.degenerate, format!("c_hat = {:.4e}", coer.c_hat)),
    ];
    let mut moments = Vec::new();
    for n in [1u32, 4] {
        let m = levy::lambda_moments(&lctx, n)?;
        let b = levy::lambda_moment_bound(&lctx, n)?;
        checks.push(check(&format!("moment_{n}_bound"), m <= b, format!("m_{n} = {m:.4e} <= {b:.4e}")));
        moments.push(json!({ "n": n, "value": m, "bound": b }));
    }
    let max_err = sweep.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(Outcome {
        summary: json!({ "coercivity": coer, "moments": moments, "max_quadrature_gap": max_err }),
        checks,
        files: vec![],
    })
}

fn snapshots_at<'a>(snaps: &'a [Snapshot], times: &[f64]) -> Result<Vec<&'a Snapshot>> {
    times
        .iter()
        .map(|t| {
            snaps
                .iter()
                .find(|s| (s.t - t).abs() < 1e-12)
                .ok_or_else(|| Error::InvalidParam(format!("time {t} is not a snapshot time")))
        })
        .collect()
}

fn run_besov(ctx: &mut Ctx) -> Result<Outcome> {
    let snaps = ctx.simulate()?;
    let b = ctx.cfg.besov.clone();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for sn in snapshots_at(&snaps, &b.times)? {
        let est = besov_estimate(&sn.measure, &b.r, &b.h, b.alpha)?;
        for (r, h, d) in &est.table {
            rows.push(vec![sn.t, *r, *h, *d]);
        }
        summary.push(json!({ "t": sn.t, "estimate": est }));
    }
    let p = ctx.path("sweeps/besov.csv");
    io::save_table(&p, &["t", "r", "h", "d"], &rows)?;
    let checks = vec![check(
        "differences_finite",
        rows.iter().all(|r| r[3].is_finite()),
        "finite-difference table finite".into(),
    )];
    Ok(Outcome { summary: json!({ "estimates": summary }), checks, files: vec![] })
}

fn run_support(ctx: &mut Ctx) -> Result<Outcome> {
    let snaps = ctx.simulate()?;
    let s = ctx.cfg.support.clone();
    let cov: Vec<(f64, f64)> =
        snaps.iter().map(|sn| (sn.t, ball_coverage(&sn.measure, s.coverage_radius, s.cell))).collect();
    let monotone = cov.windows(2).all(|w| w[1].1 >= w[0].1);
    let window: Vec<Snapshot> =
        snaps.iter().filter(|sn| sn.t >= s.q_window[0] && sn.t <= s.q_window[1]).cloned().collect();
    let mut checks = vec![check("coverage_monotone", monotone, format!("{cov:?}"))];
    let q = if window.is_empty() {
        None
    } else {
        let est = support::estimate_q(&window, &support::default_probes())?;
        checks.push(check("q_positive", est.q > 0.0, format!("q = {:.4e}", est.q)));
        checks.push(check("ball_inclusion", est.inclusion_ok, "B(x, 1) inside K(w, zeta)".into()));
        Some(est)
    };
    let start = &snaps[0].measure;
    let mode = match s.mode {
        SpreadModeName::Random => SpreadMode::Random,
        SpreadModeName::Constructive => SpreadMode::Constructive,
    };
    let spread = support::sphere_spread_with(
        start.samples(),
        s.iterations,
        s.samples_per_pair,
        SpreadOptions { pairs_per_iteration: s.pairs_per_iteration, seed: ctx.cfg.seed, mode },
    )?;
    let p = ctx.path("sweeps/spread_cloud.csv");
    io::save_cloud(&p, &spread.cloud)?;
    let rows: Vec<Vec<f64>> = cov.iter().map(|(t, c)| vec![*t, *c]).collect();
    let p = ctx.path("sweeps/coverage.csv");
    io::save_table(&p, &["t", "coverage"], &rows)?;
    Ok(Outcome {
        summary: json!({
            "coverage": rows,
            "q": q,
            "spread": { "x0": spread.x0, "r0": spread.r0, "guaranteed_radius": spread.guaranteed_radius,
                        "points": spread.cloud.len() },
        }),
        checks,
        files: vec![],
    })
}

fn run_entropy(ctx: &mut Ctx) -> Result<Outcome> {
    let snaps = ctx.simulate()?;
    let k = ctx.cfg.entropy.k_nn;
    let mut rows = Vec::new();
    for sn in &snaps {
        let e = entropy_knn(&sn.measure, k, ctx.cfg.seed)?;
        rows.push(vec![sn.t, e.value, if e.jittered { 1.0 } else { 0.0 }]);
    }
    let p = ctx.path("sweeps/entropy.csv");
    io::save_table(&p, &["t", "entropy", "jittered"], &rows)?;
    let later_finite = rows.iter().filter(|r| r[0] > 0.0).all(|r| r[1].is_finite());
    Ok(Outcome {
        summary: json!({ "entropy": rows }),
        checks: vec![check("entropy_finite", later_finite, "finite for t > 0".into())],
        files: vec![],
    })
}

fn run_exponents(ctx: &mut Ctx) -> Result<Outcome> {
    let e = ctx.cfg.exponents.clone();
    if e.nu_points == 0 {
        return Err(Error::InvalidParam("exponents.nu_points must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..e.nu_points {
        let nu = (i as f64 + 0.5) / e.nu_points as f64;
        let hard = stats::smoothness_exponent_hard(nu)?;
        let mut row = vec![nu, hard];
        for g in &e.gammas {
            if g + nu <= 0.0 {
                row.extend([f64::NAN, f64::NAN]);
                continue;
            }
            let s = stats::smoothness_exponent_soft(*g, nu)?;
            let c = stats::smoothness_exponent_soft_closed(*g, nu)?;
            worst = worst.max((s - c).abs());
            if *g == 0.0 {
                worst = worst.max((s - hard).abs());
            }
            row.extend([s, c]);
        }
        rows.push(row);
    }
    let mut header = vec!["nu".to_string(), "s_hard".to_string()];
    for g in &e.gammas {
        header.push(format!("s_search_g{g}"));
        header.push(format!("s_closed_g{g}"));
    }
    let refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let p = ctx.path("sweeps/exponents.csv");
    io::save_table(&p, &refs, &rows)?;
    Ok(Outcome {
        summary: json!({ "max_abs_gap": worst, "nu_points": e.nu_points }),
        checks: vec![check("closed_forms", worst <= 1e-10, format!("max gap {worst:.3e}"))],
        files: vec![],
    })
}

/// Initial cloud exactly as `simulate` samples it, for comparisons.
pub fn sampled_initial(cfg: &ExperimentConfig) -> Result<Vec<Vec3>> {
    let sim = cfg.sim.sim_config(cfg.seed)?;
    Ok(init_system(&cfg.sim.init.law(), &sim)?.velocities)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.json")
}

//! Monte Carlo checks of samplers, simulators and estimators against
//! analytic references.

use std::f64::consts::{FRAC_PI_2, TAU};

use boltzsim::collision::*;
use boltzsim::sde::*;
use boltzsim::stats::*;
use boltzsim::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut d = || -> f64 { StandardNormal.sample(&mut r) };
            Vec3::new(d(), d(), d())
        })
        .collect()
}

/// Upper 0.05% point of chi-square with `df` degrees of freedom
/// (Wilson-Hilferty).
fn chi2_critical(df: f64) -> f64 {
    let z = 3.29;
    let c = 2.0 / (9.0 * df);
    df * (1.0 - c + z * c.sqrt()).powi(3)
}

/// The same cloud at times 0 and 1, a stationary background on [0, 1].
fn stationary(cloud: Vec<Vec3>) -> Vec<Snapshot> {
    let m = EmpiricalMeasure::uniform(cloud).unwrap();
    vec![Snapshot::new(0.0, m.clone(), &[]).unwrap(), Snapshot::new(1.0, m, &[]).unwrap()]
}

fn chi2(observed: &[f64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(o, e)| (o - e).powi(2) / e).sum()
}

#[test]
fn sample_theta_follows_the_angular_law() {
    let cs = CrossSection::new(0.5, 0.5).unwrap();
    let th_min: f64 = 1e-3;
    // Forward CDF of theta^(-1-nu) on [th_min, pi/2].
    let lo = th_min.powf(-cs.nu);
    let hi = FRAC_PI_2.powf(-cs.nu);
    let cdf = |t: f64| (lo - t.powf(-cs.nu)) / (lo - hi);
    let bins = 50;
    let n = 1_000_000;
    let mut counts = vec![0.0; bins];
    let mut r = rng(1);
    for _ in 0..n {
        let t = sample_theta(&cs, th_min, r.gen()).unwrap();
        let b = ((cdf(t) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let expected = vec![n as f64 / bins as f64; bins];
    let stat = chi2(&counts, &expected);
    assert!(stat < chi2_critical((bins - 1) as f64), "chi2 {stat}");
}

#[test]
fn maxwell_tagged_jump_counts_are_poisson() {
    // gamma = 0: every proposal fires, so the jump count on [0, t] is
    // Poisson(t * 2 pi * int_{theta_min} b).
    let cs = CrossSection::new(0.0, 0.5).unwrap().truncated(10.0).unwrap();
    let kernel = TaggedKernel::new(&cs, 0.05).unwrap();
    let bg = stationary(gaussian(200, 2));
    let lambda = TAU * cs.angular_mass(0.05);
    let paths = 4000;
    let counts: Vec<usize> = (0..paths)
        .map(|p| tagged_path(&bg, Vec3::X, 1.0, 1.0, &kernel, p).unwrap().jumps.len())
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / paths as f64;
    assert!((mean - lambda).abs() < 4.0 * (lambda / paths as f64).sqrt(), "{mean} vs {lambda}");

    // Bins at the Poisson quantiles, merged so each expects >= 50 draws.
    let pmf = |k: usize| (-lambda + k as f64 * lambda.ln() - (1..=k).map(|j| (j as f64).ln()).sum::<f64>()).exp();
    let kmax = (lambda + 10.0 * lambda.sqrt()) as usize;
    let mut edges = vec![0usize];
    let mut acc = 0.0;
    for k in 0..=kmax {
        acc += pmf(k) * paths as f64;
        if acc >= 50.0 {
            edges.push(k + 1);
            acc = 0.0;
        }
    }
    *edges.last_mut().unwrap() = usize::MAX;
    let mut obs = vec![0.0; edges.len() - 1];
    let mut exp = vec![0.0; edges.len() - 1];
    for b in 0..obs.len() {
        let (a, z) = (edges[b], edges[b + 1]);
        obs[b] = counts.iter().filter(|c| **c >= a && **c < z).count() as f64;
        exp[b] = (a..z.min(kmax + 1)).map(pmf).sum::<f64>() * paths as f64;
    }
    let last = exp.len() - 1;
    exp[last] += (1.0 - exp.iter().sum::<f64>() / paths as f64).max(0.0) * paths as f64;
    let stat = chi2(&obs, &exp);
    assert!(stat < chi2_critical((obs.len() - 1) as f64), "chi2 {stat} over {} bins", obs.len());
}

#[test]
fn dirac_background_at_the_start_point_never_moves() {
    let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap();
    let kernel = TaggedKernel::from_truncation(&cs).unwrap();
    let bg = stationary(vec![Vec3::ZERO]);
    for seed in 0..20 {
        let p = tagged_path(&bg, Vec3::ZERO, 1.0, 0.5, &kernel, seed).unwrap();
        assert_eq!(p.v_t, Vec3::ZERO);
        assert_eq!(coupled_freeze(&p, 0.25).unwrap(), (Vec3::ZERO, Vec3::ZERO));
    }
}

#[test]
fn replay_reproduces_the_path_and_zero_eps_is_exact() {
    let cs = CrossSection::new(0.5, 0.5).unwrap().truncated(100.0).unwrap();
    let kernel = TaggedKernel::from_truncation(&cs).unwrap();
    let bg = stationary(gaussian(300, 3));
    for seed in 0..20 {
        let p = tagged_path(&bg, Vec3::new(0.3, 0.1, -0.2), 1.0, 1.0, &kernel, seed).unwrap();
        assert!(!p.jumps.is_empty());
        let fresh = replay_fresh(&p).unwrap();
        assert!((fresh - p.v_t).norm() <= 1e-12 * (1.0 + p.v_t.norm()));
        let (a, b) = coupled_freeze(&p, 0.0).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn kde_of_a_gaussian() {
    let m = EmpiricalMeasure::uniform(gaussian(100_000, 4)).unwrap();
    let g = GridSpec::cube(Vec3::ZERO, 5.0, 48).unwrap();
    let d = kde_density(&m, silverman_bandwidth(&m), g).unwrap();
    assert!((d.mass() - 1.0).abs() < 1e-3, "mass {}", d.mass());
    let phi = |v: Vec3| (-(v.norm2()) / 2.0).exp() / (TAU).powf(1.5);
    let l1 = d.l1_distance(phi);
    // Normal-reference bandwidth bias at this N sits near 0.058.
    assert!(l1 <= 0.065, "L1 {l1}");
}

#[test]
fn second_moment_of_a_gaussian() {
    let m = EmpiricalMeasure::uniform(gaussian(100_000, 5)).unwrap();
    let m2 = moment(&m, 2.0).unwrap();
    assert!((m2 - 3.0).abs() < 0.05, "{m2}");
}

#[test]
fn entropy_reference_values() {
    let mut r = rng(6);
    let cube: Vec<Vec3> = (0..100_000).map(|_| Vec3::new(r.gen(), r.gen(), r.gen())).collect();
    let h = entropy_knn(&EmpiricalMeasure::uniform(cube).unwrap(), 4, 1).unwrap().value;
    assert!(h.abs() <= 0.05, "cube {h}");

    let tiny: Vec<Vec3> = gaussian(20_000, 7).into_iter().map(|v| v * 1e-6).collect();
    let h = entropy_knn(&EmpiricalMeasure::uniform(tiny).unwrap(), 4, 1).unwrap().value;
    assert!(h <= -30.0, "near Dirac {h}");
}

#[test]
fn entropy_is_rotation_invariant() {
    let base = gaussian(50_000, 8);
    let (s, c) = (0.7f64).sin_cos();
    // Rotation about z followed by one about x.
    let rot = |v: Vec3| {
        let a = Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
        Vec3::new(a.x, c * a.y - s * a.z, s * a.y + c * a.z)
    };
    let aniso: Vec<Vec3> = base.iter().map(|v| Vec3::new(v.x * 2.0, v.y, v.z * 0.5)).collect();
    let h0 = entropy_knn(&EmpiricalMeasure::uniform(aniso.clone()).unwrap(), 4, 1).unwrap().value;
    let h1 = entropy_knn(&EmpiricalMeasure::uniform(aniso.into_iter().map(rot).collect()).unwrap(), 4, 1)
        .unwrap()
        .value;
    assert!((h0 - h1).abs() <= 0.02, "{h0} vs {h1}");
}

#[test]
fn besov_differences_are_subadditive_in_the_shift() {
    let m = EmpiricalMeasure::uniform(gaussian(20_000, 9)).unwrap();
    let probe = besov_estimate(&m, &[0.5], &[0.1, 0.2], 0.1).unwrap();
    let h = probe.spacing;
    let e = besov_estimate(&m, &[0.5], &[h, 2.0 * h, 3.0 * h], 0.1).unwrap();
    let d: Vec<f64> = e.table.iter().map(|row| row.2).collect();
    assert_eq!(d.len(), 3);
    assert!(d[1] <= 2.0 * d[0] * (1.0 + 1e-12));
    assert!(d[2] <= (d[0] + d[1]) * (1.0 + 1e-12));
}

#[test]
fn nanbu_energy_is_conserved_on_average() {
    let f0 = InitialLaw::TwoPoint { a: Vec3::X, b: -Vec3::X, p_a: 0.5 };
    let ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let cfg = SimConfig {
                n_particles: 10_000,
                t_end: 1.0,
                dt: 1e-3,
                cross_section: CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap(),
                scheme: Scheme::Nanbu,
                seed,
                snapshot_times: vec![0.0, 1.0],
                moments: vec![],
            };
            let s = simulate(&f0, &cfg).unwrap();
            moment(&s[1].measure, 2.0).unwrap() / moment(&s[0].measure, 2.0).unwrap()
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "{ratios:?}");
}

#[test]
fn simulation_is_reproducible_across_thread_counts() {
    let cfg = SimConfig {
        n_particles: 1000,
        t_end: 0.2,
        dt: 1e-3,
        cross_section: CrossSection::new(0.5, 0.5).unwrap().truncated(10.0).unwrap(),
        scheme: Scheme::Nanbu,
        seed: 11,
        snapshot_times: vec![0.2],
        moments: vec![],
    };
    let f0 = InitialLaw::Gaussian { mean: Vec3::ZERO, sigma: 1.0 };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&f0, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a[0].measure.samples(), b[0].measure.samples());
}

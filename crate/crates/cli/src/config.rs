//! TOML experiment configuration. Every table rejects unknown keys; errors
//! carry the file path and line.

use std::path::{Path, PathBuf};

use boltzsim::sde::TaggedKernel;
use boltzsim::{CrossSection, Error, InitialLaw, Result, Scheme, SimConfig, Vec3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Subcommand {
    Simulate,
    Rates,
    Psi,
    Besov,
    Support,
    Entropy,
    Exponents,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Rates => "rates",
            Subcommand::Psi => "psi",
            Subcommand::Besov => "besov",
            Subcommand::Support => "support",
            Subcommand::Entropy => "entropy",
            Subcommand::Exponents => "exponents",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub subcommand: Option<Subcommand>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sim: SimSection,
    pub rates: RatesSection,
    pub psi: PsiSection,
    pub besov: BesovSection,
    pub support: SupportSection,
    pub entropy: EntropySection,
    pub exponents: ExponentsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            subcommand: None,
            seed: 1,
            output_dir: PathBuf::from("out"),
            sim: SimSection::default(),
            rates: RatesSection::default(),
            psi: PsiSection::default(),
            besov: BesovSection::default(),
            support: SupportSection::default(),
            entropy: EntropySection::default(),
            exponents: ExponentsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Nanbu,
    SymmetricPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub n_particles: usize,
    pub t_end: f64,
    pub dt: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Truncation level of the simulated kernel.
    pub k: f64,
    pub c_b: f64,
    pub scheme: SchemeName,
    pub snapshot_times: Vec<f64>,
    pub moments: Vec<f64>,
    pub init: InitSection,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_particles: 2000,
            t_end: 1.0,
            dt: 1e-3,
            gamma: 0.5,
            nu: 0.5,
            k: 10.0,
            c_b: 1.0,
            scheme: SchemeName::Nanbu,
            snapshot_times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            moments: vec![2.0, 4.0],
            init: InitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    Gaussian { mean: [f64; 3], sigma: f64 },
    TwoPoint { a: [f64; 3], b: [f64; 3], p_a: f64 },
    UniformBall { center: [f64; 3], radius: f64 },
    Pareto { tail: f64, s_min: f64, s_max: f64 },
    Dirac { at: [f64; 3] },
}

impl Default for InitSection {
    fn default() -> Self {
        InitSection::Gaussian { mean: [0.0; 3], sigma: 1.0 }
    }
}

impl InitSection {
    pub fn law(&self) -> InitialLaw {
        let v = Vec3::from_array;
        match self {
            InitSection::Gaussian { mean, sigma } => InitialLaw::Gaussian { mean: v(*mean), sigma: *sigma },
            InitSection::TwoPoint { a, b, p_a } => InitialLaw::TwoPoint { a: v(*a), b: v(*b), p_a: *p_a },
            InitSection::UniformBall { center, radius } => {
                InitialLaw::UniformBall { center: v(*center), radius: *radius }
            }
            InitSection::Pareto { tail, s_min, s_max } => {
                InitialLaw::ParetoSpeeds { tail: *tail, s_min: *s_min, s_max: *s_max }
            }
            InitSection::Dirac { at } => InitialLaw::Dirac(v(*at)),
        }
    }
}

impl SimSection {
    pub fn cross_section(&self) -> Result<CrossSection> {
        CrossSection::with_constants(self.gamma, self.nu, self.c_b, self.c_b, self.c_b, Some(self.k))
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        Ok(SimConfig {
            n_particles: self.n_particles,
            t_end: self.t_end,
            dt: self.dt,
            cross_section: self.cross_section()?,
            scheme: match self.scheme {
                SchemeName::Nanbu => Scheme::Nanbu,
                SchemeName::SymmetricPair => Scheme::SymmetricPair,
            },
            seed,
            snapshot_times: self.snapshot_times.clone(),
            moments: self.moments.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub t: f64,
    pub eps: Vec<f64>,
    pub paths: usize,
    /// Kinetic cap of the tagged kernel.
    pub k: f64,
    /// Angular cutoff of the tagged kernel; `1 / k` when unset.
    pub theta_min: Option<f64>,
    /// Minimum slope accepted by the in-run check, if any.
    pub min_slope: Option<f64>,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            t: 1.0,
            eps: vec![0.4, 0.2, 0.1, 0.05],
            paths: 2000,
            k: 1e4,
            theta_min: None,
            min_slope: None,
        }
    }
}

impl RatesSection {
    pub fn kernel(&self, sim: &SimSection) -> Result<TaggedKernel> {
        let cs = CrossSection::with_constants(sim.gamma, sim.nu, sim.c_b, sim.c_b, sim.c_b, Some(self.k))?;
        match self.theta_min {
            Some(th) => TaggedKernel::new(&cs, th),
            None => TaggedKernel::from_truncation(&cs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsiSection {
    pub eps: f64,
    pub t: f64,
    pub v0: [f64; 3],
    /// `|xi|` values of the coercivity grid, before the `eps^(-1/nu)` scaling.
    pub radii: Vec<f64>,
    pub max_samples: Option<usize>,
}

impl Default for PsiSection {
    fn default() -> Self {
        PsiSection {
            eps: 0.1,
            t: 1.0,
            v0: [0.5, 0.0, 0.0],
            radii: (0..=20).map(|i| 0.1 * 100f64.powf(i as f64 / 20.0)).collect(),
            max_samples: Some(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BesovSection {
    /// Snapshot times analysed; each must be a simulated snapshot time.
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub h: Vec<f64>,
    pub alpha: f64,
}

impl Default for BesovSection {
    fn default() -> Self {
        BesovSection {
            times: vec![0.5, 1.0],
            r: vec![0.2, 0.4],
            h: vec![0.05, 0.1, 0.2],
            alpha: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreadModeName {
    Random,
    Constructive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportSection {
    pub iterations: usize,
    pub samples_per_pair: usize,
    pub pairs_per_iteration: usize,
    pub mode: SpreadModeName,
    /// Radius of the ball whose grid coverage is tracked over snapshots.
    pub coverage_radius: f64,
    pub cell: f64,
    /// Snapshot window `[t0, t1]` for the `q` estimate.
    pub q_window: [f64; 2],
}

impl Default for SupportSection {
    fn default() -> Self {
        SupportSection {
            iterations: 4,
            samples_per_pair: 4,
            pairs_per_iteration: 2000,
            mode: SpreadModeName::Random,
            coverage_radius: 2.0,
            cell: 0.25,
            q_window: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub k_nn: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection { k_nn: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExponentsSection {
    pub nu_points: usize,
    pub gammas: Vec<f64>,
}

impl Default for ExponentsSection {
    fn default() -> Self {
        ExponentsSection { nu_points: 1000, gammas: vec![0.0, -0.25, -0.5] }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        msg: e.message().trim().to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path)
}

impl ExperimentConfig {
    /// Hex SHA-256 of the canonical JSON form. The output directory does not
    /// affect results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = parse_config("", Path::new("x.toml")).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let text = "seed = 3\n\n[sim]\nn_particles = 10\nbogus = 1\n";
        let e = parse_config(text, Path::new("c.toml")).unwrap_err().to_string();
        assert!(e.starts_with("c.toml:5:"), "{e}");
        assert!(e.contains("bogus"), "{e}");
    }

    #[test]
    fn init_kinds() {
        let text = "[sim.init]\nkind = \"two_point\"\na = [1, 0, 0]\nb = [-1, 0, 0]\np_a = 0.5\n";
        let c = parse_config(text, Path::new("c.toml")).unwrap();
        assert!(matches!(c.sim.init.law(), InitialLaw::TwoPoint { .. }));
        let bad = "[sim.init]\nkind = \"gaussian\"\nmean = [0, 0, 0]\nsigma = 1\nextra = 2\n";
        assert!(parse_config(bad, Path::new("c.toml")).is_err());
    }
}

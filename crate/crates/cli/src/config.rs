//! Run configuration (TOML).
//!
//! Every block rejects unknown keys. Parsing checks shape and types;
//! [`RunSpec::parse`] then runs the same preconditions the solver modules
//! enforce, so a bad file fails before any work starts.

use std::path::{Path, PathBuf};

use agetumor::initial::{build_initial, InitialSpec};
use agetumor::params::{validate_assumptions, Table, TabulatedFunctions};
use agetumor::stepper::Tolerances;
use agetumor::{Grid, GridSpec, ParameterSet, Preset, PresetScalars, SimConfig};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Samples for the assumption check run at parse time.
const VALIDATION_SAMPLES: usize = 201;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub grid: GridSpec,
    #[serde(default)]
    pub params: ParamsBlock,
    pub sim: SimBlock,
    #[serde(default)]
    pub initial: InitialBlock,
}

/// Either a named preset with its scalars, or tabulated functions (which
/// use only `p_max` from the scalars). Scalars default to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsBlock {
    pub preset: Preset,
    /// Homeostatic pressure (pressure units).
    pub p_max: f64,
    /// Maximal aging speed (age units per time).
    pub r_max: f64,
    /// Maximal division rate (1/age).
    pub nu_max: f64,
    /// Death rate (1/age).
    pub mu0: f64,
    /// Newborn volume.
    pub v0: f64,
    /// Volume growth rate in the volume-changing presets.
    pub k: f64,
    /// Division onset age and smoothing half-width (age units).
    pub theta_div: f64,
    pub w: f64,
    pub tables: Option<TablesBlock>,
}

impl Default for ParamsBlock {
    fn default() -> Self {
        let PresetScalars {
            p_max,
            r_max,
            nu_max,
            mu0,
            v0,
            k,
            theta_div,
            w,
        } = PresetScalars::default();
        ParamsBlock {
            preset: Preset::Case1,
            p_max,
            r_max,
            nu_max,
            mu0,
            v0,
            k,
            theta_div,
            w,
            tables: None,
        }
    }
}

impl ParamsBlock {
    pub fn scalars(&self) -> PresetScalars {
        PresetScalars {
            p_max: self.p_max,
            r_max: self.r_max,
            nu_max: self.nu_max,
            mu0: self.mu0,
            v0: self.v0,
            k: self.k,
            theta_div: self.theta_div,
            w: self.w,
        }
    }
}

/// Piecewise-linear tables as `[[x, y], ...]`; `ν = division_age · division_pressure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesBlock {
    pub aging: Vec<[f64; 2]>,
    pub division_age: Vec<[f64; 2]>,
    pub division_pressure: Vec<[f64; 2]>,
    pub death: Vec<[f64; 2]>,
    pub volume: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    /// Single-run exponent; `m_values` is used by `sweep`.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub m_values: Option<Vec<f64>>,
    pub t_final: f64,
    #[serde(default = "default_cfl")]
    pub cfl_factor: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub reaction_extra: bool,
    #[serde(default = "default_front_threshold")]
    pub front_threshold: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub output_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Absolute bar for the final sweep defect.
    #[serde(default)]
    pub hs_tol: Option<f64>,
    /// Seed for the optional initial-data perturbation.
    #[serde(default)]
    pub seed: u64,
}

fn default_cfl() -> f64 {
    0.9
}

fn default_front_threshold() -> f64 {
    0.02
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    pub radius: f64,
    pub theta_in: f64,
    pub fraction: f64,
    pub center: [f64; 2],
    pub edge: f64,
    /// Relative amplitude of seeded multiplicative noise on the support.
    pub perturbation: f64,
}

impl Default for InitialBlock {
    fn default() -> Self {
        let InitialSpec {
            radius,
            theta_in,
            fraction,
            center,
            edge,
        } = InitialSpec::default();
        InitialBlock {
            radius,
            theta_in,
            fraction,
            center,
            edge,
            perturbation: 0.0,
        }
    }
}

impl InitialBlock {
    fn spec(&self) -> InitialSpec {
        InitialSpec {
            radius: self.radius,
            theta_in: self.theta_in,
            fraction: self.fraction,
            center: self.center,
            edge: self.edge,
        }
    }
}

/// A parsed and validated configuration with the solver objects it implies.
#[derive(Clone)]
pub struct Setup {
    pub spec: RunSpec,
    /// Source text, stored in snapshots.
    pub echo: String,
    pub grid: Grid,
    pub params: ParameterSet,
}

impl std::fmt::Debug for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Setup")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .finish_non_exhaustive()
    }
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Setup, CliError> {
        let spec = RunSpec::from_toml(text)?;
        let grid = Grid::new(spec.grid)?;
        let params = spec.build_params()?;
        let report = validate_assumptions(&params, VALIDATION_SAMPLES);
        if let Some(check) = report.failures().next() {
            let at = check
                .first_violation
                .as_ref()
                .map_or(String::new(), |v| format!(" at {}", v.location));
            return Err(CliError::Config(format!(
                "parameter assumption `{}` fails{at}",
                check.name
            )));
        }
        spec.validate_sim()?;
        let steps = (params.r_max() * spec.sim.t_final / grid.dtheta() - 1e-9)
            .ceil()
            .max(0.0);
        let reach = spec.initial.theta_in + steps * grid.dtheta();
        if reach > grid.theta_max() * (1.0 + 1e-12) {
            return Err(CliError::Config(format!(
                "age support may reach {reach} = theta_in + r_max T (rounded up to whole age cells), \
                 beyond theta_max = {}",
                grid.theta_max()
            )));
        }
        let setup = Setup {
            spec,
            echo: text.to_string(),
            grid,
            params,
        };
        for m in setup.all_m_values() {
            setup.sim_config(m).validate()?;
        }
        // Building the initial data runs the support and radius checks.
        setup.initial_for(&setup.all_m_values())?;
        Ok(setup)
    }

    pub fn load(path: &Path) -> Result<Setup, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        RunSpec::parse(&text)
    }

    fn build_params(&self) -> Result<ParameterSet, CliError> {
        let block = &self.params;
        let params = match &block.tables {
            None => ParameterSet::from_preset(block.preset, &block.scalars())?,
            Some(t) => {
                let table = |name: &str, pts: &[[f64; 2]]| {
                    let pts: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
                    Table::new(&pts).map_err(|e| CliError::Config(format!("table `{name}`: {e}")))
                };
                ParameterSet::from_tables(TabulatedFunctions {
                    p_max: block.p_max,
                    aging: table("aging", &t.aging)?,
                    division_age: table("division_age", &t.division_age)?,
                    division_pressure: table("division_pressure", &t.division_pressure)?,
                    death: table("death", &t.death)?,
                    volume: table("volume", &t.volume)?,
                })?
            }
        };
        Ok(params)
    }

    fn validate_sim(&self) -> Result<(), CliError> {
        let sim = &self.sim;
        if sim.m.is_none() && sim.m_values.is_none() {
            return Err(CliError::Config("sim needs `m` or `m_values`".into()));
        }
        if let Some(ms) = &sim.m_values {
            if ms.is_empty() {
                return Err(CliError::Config("`m_values` must not be empty".into()));
            }
            if ms.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::Config(
                    "`m_values` must be strictly increasing".into(),
                ));
            }
        }
        if !(sim.front_threshold > 0.0 && sim.front_threshold < self.params.p_max) {
            return Err(CliError::Config(format!(
                "front_threshold must lie in (0, p_max), got {}",
                sim.front_threshold
            )));
        }
        if let Some(tol) = sim.hs_tol {
            if !(tol >= 0.0) {
                return Err(CliError::Config(format!("hs_tol must be >= 0, got {tol}")));
            }
        }
        let a = self.initial.perturbation;
        if !(0.0..1.0).contains(&a) {
            return Err(CliError::Config(format!(
                "perturbation must lie in [0, 1), got {a}"
            )));
        }
        if self.initial.fraction * (1.0 + a) > 1.0 {
            return Err(CliError::Config(format!(
                "fraction * (1 + perturbation) = {} exceeds the density bound",
                self.initial.fraction * (1.0 + a)
            )));
        }
        Ok(())
    }
}

impl Setup {
    /// The single-run exponent (falls back to the first sweep value).
    pub fn run_m(&self) -> f64 {
        self.spec
            .sim
            .m
            .or_else(|| self.spec.sim.m_values.as_ref().map(|v| v[0]))
            .expect("validated")
    }

    pub fn sweep_m_values(&self) -> Vec<f64> {
        self.spec
            .sim
            .m_values
            .clone()
            .unwrap_or_else(|| vec![self.run_m()])
    }

    fn all_m_values(&self) -> Vec<f64> {
        let mut ms = self.sweep_m_values();
        if let Some(m) = self.spec.sim.m {
            ms.push(m);
        }
        ms
    }

    pub fn sim_config(&self, m: f64) -> SimConfig {
        let sim = &self.spec.sim;
        let mut config = SimConfig::new(m, sim.t_final);
        config.cfl_factor = sim.cfl_factor;
        config.tolerances = sim.tolerances.clone();
        config.output_every = sim.output_every;
        config.checkpoint_every = sim.checkpoint_every;
        config.theta_in = Some(self.spec.initial.theta_in);
        config.diagnostics.reaction_extra = sim.reaction_extra;
        config.diagnostics.front_threshold = sim.front_threshold;
        config
    }

    /// Initial data scaled against every exponent in `m_values`, with the
    /// seeded perturbation applied if requested.
    pub fn initial_for(&self, m_values: &[f64]) -> Result<Vec<f64>, CliError> {
        let block = &self.spec.initial;
        let mut n = build_initial(&self.grid, &self.params, &block.spec(), m_values)?;
        if block.perturbation > 0.0 {
            let mut rng = StdRng::seed_from_u64(self.spec.sim.seed);
            for v in n.iter_mut().filter(|v| **v > 0.0) {
                *v *= 1.0 + block.perturbation * rng.gen_range(-1.0..1.0);
            }
        }
        Ok(n)
    }
}

//! Time loop: operator-split steps, runtime invariants and checkpoints.
//!
//! A step covers one age cell at the maximal aging speed, `Δ = dθ / r_max`
//! (shortened to land on `T`). Age transport runs once per step at Courant
//! number `r(p) Δ / dθ <= 1`, so the age support advances by at most one cell
//! and stays sharp. Reaction, renewal and spatial transport, whose stability
//! limit is far smaller at large `m`, are then sub-cycled `K` times with the
//! step `Δ / K <= cfl_factor · min(cfl_age, cfl_space, cfl_diff)`:
//!
//! 1. shift in age with zero inflow (the youngest cell is emptied);
//! 2. per substep: renewal flux `b` from the current state, reaction sinks,
//!    injection of `r(p) dt b / dθ` newborns into the youngest cell, spatial
//!    upwind transport with the pressure frozen over the substep; refresh
//!    `ρ` and `p`.
//!
//! Because newborns are injected after the shift they stay in the youngest
//! cell until the next step moves them on.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    compute_record, default_test_functions, entropy, fill_front_speeds, total_mass, Bump,
    DiagnosticsConfig, DiagnosticsRecord,
};
use crate::error::{Error, Result};
use crate::grid::{
    density_bound, density_into, gradient_into, pressure_into, FaceVelocities, Grid, State,
};
use crate::io::Snapshot;
use crate::kernels::{
    advance_age, advect_active, cfl_dt, check_transport_step, inject_newborns, renew_and_react,
    Active, StepBudget,
};
use crate::params::ParameterSet;
use crate::sum::compensated_sum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Slack on `p <= p_M`.
    pub pressure: f64,
    /// Slack on the density bound.
    pub density: f64,
    /// Relative slack on the L¹ Gronwall bound.
    pub gronwall: f64,
    /// Relative closure of the per-step mass ledger.
    pub mass: f64,
    /// Growth constant of the entropy monitor.
    pub entropy_c: f64,
    /// Values at or below this count as zero for support checks.
    pub support_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pressure: 1e-8,
            density: 1e-8,
            gronwall: 1e-6,
            mass: 1e-12,
            entropy_c: 5.0,
            support_threshold: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Pressure exponent, `m > 2`.
    pub m: f64,
    pub t_final: f64,
    #[serde(default = "default_cfl")]
    pub cfl_factor: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Diagnostics row cadence in steps; the last step is always recorded.
    #[serde(default = "one")]
    pub output_every: u64,
    /// Checkpoint cadence in steps; 0 writes only the final state.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    /// Keep every step's state in [`RunResult::history`].
    #[serde(default)]
    pub keep_history: bool,
    /// Initial age-support bound; inferred from the initial data if absent.
    #[serde(default)]
    pub theta_in: Option<f64>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_cfl() -> f64 {
    0.9
}

fn one() -> u64 {
    1
}

impl SimConfig {
    pub fn new(m: f64, t_final: f64) -> Self {
        SimConfig {
            m,
            t_final,
            cfl_factor: default_cfl(),
            tolerances: Tolerances::default(),
            output_every: 1,
            checkpoint_every: 0,
            checkpoint_path: None,
            keep_history: false,
            theta_in: None,
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::grid::check_exponent(self.m)?;
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::config(format!(
                "final time must be finite and >= 0, got {}",
                self.t_final
            )));
        }
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(Error::config(format!(
                "cfl_factor must lie in (0, 1], got {}",
                self.cfl_factor
            )));
        }
        if self.output_every == 0 {
            return Err(Error::config("output_every must be >= 1"));
        }
        Ok(())
    }
}

/// Total-mass bookkeeping over one step, `∫∫ n dθ dx`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MassLedger {
    pub before: f64,
    pub after: f64,
    /// Reaction increment (nonpositive).
    pub reaction: f64,
    /// Newborn mass injected at age zero.
    pub inflow: f64,
    /// Mass leaving the age domain.
    pub outflow: f64,
}

impl MassLedger {
    pub fn residual(&self) -> f64 {
        (self.after - self.before) - (self.reaction + self.inflow - self.outflow)
    }

    pub fn relative_residual(&self) -> f64 {
        let scale = self.before.abs().max(self.after.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.residual().abs() / scale
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Time covered by the step.
    pub duration: f64,
    pub substeps: usize,
    pub budget: StepBudget,
    pub ledger: MassLedger,
    /// Largest pressure and density seen at any substep.
    pub peak_p: f64,
    pub peak_rho: f64,
}

/// A tolerance exceedance or monitor excursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub step: u64,
    pub t: f64,
    pub value: f64,
    pub limit: f64,
}

/// Per-step invariant data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub step: u64,
    pub t: f64,
    pub duration: f64,
    pub substeps: usize,
    pub peak_p: f64,
    pub peak_rho: f64,
    pub ledger: MassLedger,
    /// Largest `n` in age cells beyond `θ_in + r_max t + dθ`.
    pub age_excess: f64,
    /// `θ_in + r_max t + dθ`.
    pub age_bound: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: State,
    pub records: Vec<DiagnosticsRecord>,
    /// Tolerance exceedances; empty for a valid run.
    pub violations: Vec<Violation>,
    /// Entropy monitor excursions; informational.
    pub monitor: Vec<Violation>,
    pub steps: Vec<StepSummary>,
    /// States after every step, initial included, if requested.
    pub history: Vec<State>,
    pub theta_in: f64,
    pub test_functions: Vec<Bump>,
}

impl RunResult {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Workspace {
    weights: Vec<f64>,
    courant: Vec<f64>,
    inflow: Vec<f64>,
    faces: FaceVelocities,
}

impl Workspace {
    fn new(grid: &Grid, params: &ParameterSet) -> Self {
        Workspace {
            weights: grid.volume_weights(params),
            courant: vec![0.0; grid.n_cells()],
            inflow: vec![0.0; grid.n_cells()],
            faces: FaceVelocities { axes: Vec::new() },
        }
    }
}

fn refresh(state: &mut State, grid: &Grid, ws: &Workspace) -> (f64, f64) {
    density_into(grid, &ws.weights, &state.n, &mut state.rho);
    pressure_into(&state.rho, state.m, &mut state.p);
    let peak_p = state.p.iter().copied().fold(0.0, f64::max);
    let peak_rho = state.rho.iter().copied().fold(0.0, f64::max);
    (peak_p, peak_rho)
}

fn advance(
    state: &mut State,
    grid: &Grid,
    params: &ParameterSet,
    config: &SimConfig,
    ws: &mut Workspace,
) -> Result<StepReport> {
    let budget = cfl_dt(state, grid, params, config.cfl_factor)?;
    let remaining = config.t_final - state.t;
    let mut duration = budget.cfl_age;
    if remaining > 0.0 && remaining < duration {
        duration = remaining;
    }
    if !duration.is_finite() {
        duration = if remaining > 0.0 {
            remaining
        } else {
            budget.dt
        };
    }
    let substeps = ((duration / budget.dt).ceil() as usize).max(1);
    let dt = duration / substeps as f64;
    let t0 = state.t;
    let before = total_mass(&state.n, grid);

    for (c, &p) in ws.courant.iter_mut().zip(&state.p) {
        *c = params.r(p) * duration / grid.dtheta();
    }
    let shift = advance_age(&mut state.n, grid, &ws.courant, None)?;
    let (mut peak_p, mut peak_rho) = refresh(state, grid, ws);
    let mut active = Active::scan(&state.n, &state.rho, grid);

    let mut reaction = Vec::with_capacity(substeps);
    let mut inflow = Vec::with_capacity(substeps);
    for _ in 0..substeps {
        gradient_into(&state.p, grid, &mut ws.faces);
        reaction.push(renew_and_react(
            &mut state.n,
            &state.p,
            grid,
            params,
            dt,
            &mut ws.inflow,
            &active,
        )?);
        inflow.push(inject_newborns(
            &mut state.n,
            &state.p,
            &ws.inflow,
            grid,
            params,
            dt,
        ));
        check_transport_step(grid, params, &ws.faces, state.m, dt)?;
        advect_active(&mut state.n, &ws.faces, grid, dt, &active);
        let (p, rho) = refresh(state, grid, ws);
        active.update_cells(&state.rho);
        peak_p = peak_p.max(p);
        peak_rho = peak_rho.max(rho);
    }
    state.t = t0 + duration;

    let ledger = MassLedger {
        before,
        after: total_mass(&state.n, grid),
        reaction: compensated_sum(reaction),
        inflow: compensated_sum(inflow) + shift.inflow,
        outflow: shift.outflow,
    };
    Ok(StepReport {
        duration,
        substeps,
        budget,
        ledger,
        peak_p,
        peak_rho,
    })
}

/// One step from `state`. `config.t_final` caps the step duration.
pub fn step(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    config: &SimConfig,
) -> Result<(State, StepReport)> {
    let mut ws = Workspace::new(grid, params);
    let mut next = state.clone();
    let report = advance(&mut next, grid, params, config, &mut ws)?;
    Ok((next, report))
}

fn precondition(name: &'static str, detail: String) -> Error {
    Error::Precondition { name, detail }
}

/// Upper edge of the highest age cell holding mass above `threshold`.
pub fn initial_age_extent(n: &[f64], grid: &Grid, threshold: f64) -> f64 {
    let nc = grid.n_cells();
    (0..grid.n_theta())
        .rev()
        .find(|&j| n[j * nc..(j + 1) * nc].iter().any(|&v| v > threshold))
        .map_or(0.0, |j| (j + 1) as f64 * grid.dtheta())
}

fn edge_density(state: &State, grid: &Grid) -> f64 {
    (0..grid.n_cells())
        .filter(|&c| grid.is_edge_cell(c))
        .map(|c| state.rho[c])
        .fold(0.0, f64::max)
}

fn age_excess(state: &State, grid: &Grid, bound: f64) -> f64 {
    let nc = grid.n_cells();
    grid.theta_centers()
        .iter()
        .enumerate()
        .filter(|(_, &theta)| theta > bound)
        .flat_map(|(j, _)| state.n[j * nc..(j + 1) * nc].iter().copied())
        .fold(0.0, f64::max)
}

fn write_checkpoint(
    path: &std::path::Path,
    state: &State,
    grid: &Grid,
    step: u64,
    config: &SimConfig,
) -> Result<()> {
    let echo = serde_json::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
    Snapshot::from_state(state, grid, step, echo).save(path)
}

/// Integrate from `initial` to `config.t_final`.
///
/// Refuses to start if the initial data violate the density bound, touch
/// the box edge, or could reach the end of the age domain before `T`.
/// Negativity, non-finite values and boundary contact abort the run; the
/// remaining invariants are recorded as violations.
pub fn run(
    initial: Vec<f64>,
    grid: &Grid,
    params: &ParameterSet,
    config: &SimConfig,
) -> Result<RunResult> {
    config.validate()?;
    let tol = &config.tolerances;
    if let Some(v) = initial.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(precondition(
            "initial_nonnegative",
            format!("initial n contains {v}"),
        ));
    }
    let mut state = State::new(grid, params, initial, config.m, 0.0)?;
    let rho_cap = density_bound(config.m, params.p_max());
    let rho_max = state.rho.iter().copied().fold(0.0, f64::max);
    if rho_max > rho_cap + tol.density {
        return Err(precondition(
            "initial_density_bound",
            format!("max initial density {rho_max} exceeds ((m-1)/m p_M)^(1/(m-1)) = {rho_cap}"),
        ));
    }
    let edge = edge_density(&state, grid);
    if edge > tol.support_threshold {
        return Err(precondition(
            "initial_support_inside_box",
            format!("initial density {edge} on the box edge"),
        ));
    }
    let theta_in = config
        .theta_in
        .unwrap_or_else(|| initial_age_extent(&state.n, grid, tol.support_threshold));
    let age_steps = (params.r_max() * config.t_final / grid.dtheta() - 1e-9)
        .ceil()
        .max(0.0);
    let reach = theta_in + age_steps * grid.dtheta();
    if reach > grid.theta_max() * (1.0 + 1e-12) {
        return Err(precondition(
            "age_domain_covers_support",
            format!(
                "age support may reach {reach} (θ_in = {theta_in}, r_max T = {}) beyond Θ_max = {}",
                params.r_max() * config.t_final,
                grid.theta_max()
            ),
        ));
    }

    let test_functions = config
        .diagnostics
        .test_functions
        .clone()
        .unwrap_or_else(|| default_test_functions(&state, grid));
    let gronwall = params.gronwall_rate();
    let rho0_l1 = compensated_sum(state.rho.iter().copied()) * grid.cell_volume();
    let entropy0 = entropy(&state, grid);
    let record = |state: &State, step: u64| {
        compute_record(
            state,
            grid,
            params,
            &config.diagnostics,
            &test_functions,
            step,
            tol.support_threshold,
        )
    };

    let mut records = vec![record(&state, 0)];
    let mut history = Vec::new();
    if config.keep_history {
        history.push(state.clone());
    }
    let mut violations = Vec::new();
    let mut monitor = Vec::new();
    let mut steps = Vec::new();
    let mut ws = Workspace::new(grid, params);
    let mut step: u64 = 0;
    let t_end = config.t_final * (1.0 - 1e-14);

    while state.t < t_end {
        let report = advance(&mut state, grid, params, config, &mut ws)?;
        step += 1;
        let t = state.t;
        let fatal = |kind: &'static str, detail: String| Error::InvariantFatal {
            kind,
            step,
            t,
            detail,
        };
        if let Some(v) = state.n.iter().find(|v| !v.is_finite()) {
            return Err(fatal("non_finite", format!("n contains {v}")));
        }
        if let Some(v) = state.n.iter().find(|v| **v < 0.0) {
            return Err(fatal("negativity", format!("n contains {v}")));
        }
        let edge = edge_density(&state, grid);
        if edge > tol.support_threshold {
            return Err(fatal(
                "boundary_contact",
                format!("density {edge} on the box edge"),
            ));
        }

        let mut check = |kind: &str, value: f64, limit: f64| {
            if value > limit {
                violations.push(Violation {
                    kind: kind.to_string(),
                    step,
                    t,
                    value,
                    limit,
                });
            }
        };
        check(
            "pressure_bound",
            report.peak_p,
            params.p_max() + tol.pressure,
        );
        check("density_bound", report.peak_rho, rho_cap + tol.density);
        let rho_l1 = compensated_sum(state.rho.iter().copied()) * grid.cell_volume();
        check(
            "gronwall_l1",
            rho_l1,
            (gronwall * t).exp() * rho0_l1 * (1.0 + tol.gronwall),
        );
        let age_bound = theta_in + params.r_max() * t + grid.dtheta();
        let excess = age_excess(&state, grid, age_bound);
        check("age_support", excess, tol.support_threshold);
        check("mass_ledger", report.ledger.relative_residual(), tol.mass);

        let ent = entropy(&state, grid);
        let ent_limit = (tol.entropy_c * t).exp() * (entropy0 + tol.entropy_c * t);
        if ent > ent_limit {
            monitor.push(Violation {
                kind: "entropy".into(),
                step,
                t,
                value: ent,
                limit: ent_limit,
            });
        }

        steps.push(StepSummary {
            step,
            t,
            duration: report.duration,
            substeps: report.substeps,
            peak_p: report.peak_p,
            peak_rho: report.peak_rho,
            ledger: report.ledger,
            age_excess: excess,
            age_bound,
        });
        let last = state.t >= t_end;
        if step % config.output_every == 0 || last {
            records.push(record(&state, step));
        }
        if config.keep_history {
            history.push(state.clone());
        }
        if let Some(path) = &config.checkpoint_path {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                write_checkpoint(path, &state, grid, step, config)?;
            }
        }
    }
    fill_front_speeds(&mut records);
    if let Some(path) = &config.checkpoint_path {
        write_checkpoint(path, &state, grid, step, config)?;
    }

    Ok(RunResult {
        state,
        records,
        violations,
        monitor,
        steps,
        history,
        theta_in,
        test_functions,
    })
}

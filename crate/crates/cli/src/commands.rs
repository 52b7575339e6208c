//! Subcommands. Each returns its artifacts so tests can inspect them; the
//! binary only prints summaries.

use std::fs;
use std::path::{Path, PathBuf};

use agetumor::diagnostics::{
    compute_record, csv_header, csv_row, csv_table, default_test_functions,
};
use agetumor::io::Snapshot;
use agetumor::sweep::{compare_fields, run_sweep, Norm, SweepPlan, SweepReport};
use agetumor::{Grid, RunResult, State};

use crate::config::{RunSpec, Setup};
use crate::CliError;

pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const STEPS_CSV: &str = "steps.csv";
pub const FINAL_SNAPSHOT: &str = "final.snap";
pub const CHECKPOINT: &str = "checkpoint.snap";
pub const SWEEP_METRICS: &str = "sweep_metrics.csv";
pub const SWEEP_VERDICTS: &str = "sweep_verdicts.toml";

pub struct RunOutcome {
    pub result: RunResult,
    pub snapshot: Snapshot,
    pub snapshot_path: PathBuf,
    pub diagnostics_path: PathBuf,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub metrics_path: PathBuf,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn steps_csv(result: &RunResult) -> String {
    let mut out = String::from("step,t,duration,substeps,peak_p,peak_rho,mass_before,mass_after,reaction,inflow,outflow,ledger_residual,age_excess,age_bound\n");
    for s in &result.steps {
        let l = &s.ledger;
        out.push_str(&format!(
            "{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            s.step,
            s.t,
            s.duration,
            s.substeps,
            s.peak_p,
            s.peak_rho,
            l.before,
            l.after,
            l.reaction,
            l.inflow,
            l.outflow,
            l.relative_residual(),
            s.age_excess,
            s.age_bound
        ));
    }
    out
}

fn check_valid(result: &RunResult) -> Result<(), CliError> {
    match result.violations.first() {
        None => Ok(()),
        Some(v) => Err(CliError::Invalid {
            count: result.violations.len(),
            first: format!(
                "{} at step {} (t = {}): {} > {}",
                v.kind, v.step, v.t, v.value, v.limit
            ),
        }),
    }
}

/// Single run at `sim.m`. Writes the diagnostics table, the per-step table
/// and the final snapshot into `out_dir` (default: the configured one).
/// Artifacts are written before an invariant breach is reported.
pub fn cmd_run(setup: &Setup, out_dir: Option<&Path>) -> Result<RunOutcome, CliError> {
    let dir = out_dir.unwrap_or(&setup.spec.sim.output_dir);
    create_dir(dir)?;
    let m = setup.run_m();
    let mut config = setup.sim_config(m);
    if config.checkpoint_every > 0 {
        config.checkpoint_path = Some(dir.join(CHECKPOINT));
    }
    let initial = setup.initial_for(&[m])?;
    let result = agetumor::run(initial, &setup.grid, &setup.params, &config)?;

    let diagnostics_path = dir.join(DIAGNOSTICS_CSV);
    write(
        &diagnostics_path,
        csv_table(&result.records, config.diagnostics.reaction_extra),
    )?;
    write(&dir.join(STEPS_CSV), steps_csv(&result))?;
    let step = result.steps.last().map_or(0, |s| s.step);
    let snapshot = Snapshot::from_state(&result.state, &setup.grid, step, setup.echo.clone());
    let snapshot_path = dir.join(FINAL_SNAPSHOT);
    snapshot.save(&snapshot_path)?;
    check_valid(&result)?;
    Ok(RunOutcome {
        result,
        snapshot,
        snapshot_path,
        diagnostics_path,
    })
}

/// Run every exponent of `sim.m_values` from initial data scaled against
/// all of them; writes the metrics table, the verdicts and one diagnostics
/// table and final snapshot per exponent.
pub fn cmd_sweep(setup: &Setup, out_dir: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let dir = out_dir.unwrap_or(&setup.spec.sim.output_dir);
    create_dir(dir)?;
    let m_values = setup.sweep_m_values();
    let plan = SweepPlan {
        initial: setup.initial_for(&m_values)?,
        base: setup.sim_config(m_values[0]),
        m_values,
        grid: setup.grid.clone(),
        params: setup.params.clone(),
        hs_tol: setup.spec.sim.hs_tol,
    };
    let report = run_sweep(&plan)?;
    let metrics_path = dir.join(SWEEP_METRICS);
    write(&metrics_path, report.metrics_csv())?;
    let verdicts = toml::to_string(&report.verdicts).map_err(|e| CliError::Io(e.to_string()))?;
    write(&dir.join(SWEEP_VERDICTS), verdicts)?;
    for entry in &report.entries {
        if let Ok(run) = &entry.outcome {
            let result = &run.result;
            let tag = format!("m{}", entry.m);
            write(
                &dir.join(format!("diagnostics_{tag}.csv")),
                csv_table(&result.records, false),
            )?;
            let step = result.steps.last().map_or(0, |s| s.step);
            Snapshot::from_state(&result.state, &setup.grid, step, setup.echo.clone())
                .save(&dir.join(format!("final_{tag}.snap")))?;
        }
    }
    Ok(SweepOutcome {
        report,
        metrics_path,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    pub field: &'static str,
    pub norm: Norm,
    pub value: f64,
}

/// The configuration a snapshot was produced with, unless overridden.
fn snapshot_setup(snapshot: &Snapshot, config: Option<&Path>) -> Result<Setup, CliError> {
    match config {
        Some(path) => RunSpec::load(path),
        None => RunSpec::parse(&snapshot.config_echo).map_err(|e| {
            CliError::Config(format!(
                "snapshot does not embed a usable configuration ({e}); pass --config"
            ))
        }),
    }
}

fn restore(snapshot: &Snapshot, setup: &Setup) -> Result<(Grid, State), CliError> {
    if snapshot.grid != setup.grid.spec() {
        return Err(agetumor::Error::GridMismatch(format!(
            "snapshot grid {:?} differs from configured grid {:?}",
            snapshot.grid,
            setup.grid.spec()
        ))
        .into());
    }
    Ok(snapshot.to_state(&setup.params)?)
}

/// Distances between two snapshots in `n`, `ρ` and `p` under every norm.
/// Coefficients come from `config` or the first snapshot's embedded one.
pub fn cmd_diff(a: &Path, b: &Path, config: Option<&Path>) -> Result<Vec<DiffRow>, CliError> {
    let (sa, sb) = (Snapshot::load(a)?, Snapshot::load(b)?);
    if sa.grid != sb.grid {
        return Err(agetumor::Error::GridMismatch(format!(
            "grids differ: {:?} vs {:?}",
            sa.grid, sb.grid
        ))
        .into());
    }
    let setup = snapshot_setup(&sa, config)?;
    let (grid, xa) = restore(&sa, &setup)?;
    let (_, xb) = restore(&sb, &setup)?;
    let space = grid.cell_volume();
    let fields: [(&'static str, &[f64], &[f64], f64); 3] = [
        ("n", &xa.n, &xb.n, space * grid.dtheta()),
        ("rho", &xa.rho, &xb.rho, space),
        ("p", &xa.p, &xb.p, space),
    ];
    let mut rows = Vec::new();
    for (field, fa, fb, weight) in fields {
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            rows.push(DiffRow {
                field,
                norm,
                value: compare_fields(fa, fb, weight, norm)?,
            });
        }
    }
    Ok(rows)
}

pub fn diff_table(rows: &[DiffRow]) -> String {
    let mut out = String::from("field,norm,value\n");
    for r in rows {
        let norm = match r.norm {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        };
        out.push_str(&format!("{},{norm},{:e}\n", r.field, r.value));
    }
    out
}

/// Recompute the diagnostics row of a snapshot: header plus one row, in
/// the same format as the run's table. `front_speed` needs a time series
/// and is written as 0.
pub fn cmd_diagnose(snapshot: &Path, config: Option<&Path>) -> Result<String, CliError> {
    let snap = Snapshot::load(snapshot)?;
    let setup = snapshot_setup(&snap, config)?;
    let (grid, state) = restore(&snap, &setup)?;
    let run_config = setup.sim_config(snap.m);
    let initial = State::new(
        &grid,
        &setup.params,
        setup.initial_for(&[snap.m])?,
        snap.m,
        0.0,
    )?;
    let test_functions = default_test_functions(&initial, &grid);
    let record = compute_record(
        &state,
        &grid,
        &setup.params,
        &run_config.diagnostics,
        &test_functions,
        snap.step,
        run_config.tolerances.support_threshold,
    );
    let mut out = csv_header(test_functions.len(), run_config.diagnostics.reaction_extra);
    out.push_str(&csv_row(&record));
    Ok(out)
}

//! Runs over an increasing sequence of pressure exponents and the trend
//! metrics comparing them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    complementarity_residual, default_test_functions, hele_shaw_defect, Bump,
};
use crate::error::{Error, Result};
use crate::grid::{density_bound, integrate_density, Grid, State};
use crate::params::ParameterSet;
use crate::stepper::{run, RunResult, SimConfig};

pub const DEFAULT_M_VALUES: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

/// Discrete norm of `a - b` with uniform cell weight `cell_volume`.
pub fn compare_fields(a: &[f64], b: &[f64], cell_volume: f64, norm: Norm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "fields have {} and {} cells",
            a.len(),
            b.len()
        )));
    }
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    Ok(match norm {
        Norm::L1 => crate::sum::compensated_sum(diffs) * cell_volume,
        Norm::L2 => (crate::sum::compensated_sum(diffs.map(|d| d * d)) * cell_volume).sqrt(),
        Norm::Linf => diffs.fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub m_values: Vec<f64>,
    pub grid: Grid,
    pub params: ParameterSet,
    /// Shared run settings; its `m` is replaced per run.
    pub base: SimConfig,
    pub initial: Vec<f64>,
    /// Absolute bar for the final defect, if any.
    pub hs_tol: Option<f64>,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(Error::config("sweep needs at least one exponent"));
        }
        for &m in &self.m_values {
            crate::grid::check_exponent(m)?;
        }
        if self.m_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("sweep exponents must be strictly increasing"));
        }
        let cap = self
            .m_values
            .iter()
            .map(|&m| density_bound(m, self.params.p_max()))
            .fold(f64::INFINITY, f64::min);
        let rho = integrate_density(&self.grid, &self.params, &self.initial);
        let peak = rho.iter().copied().fold(0.0, f64::max);
        if peak > cap + self.base.tolerances.density {
            return Err(Error::Precondition {
                name: "initial_density_bound",
                detail: format!(
                    "max initial density {peak} exceeds the bound {cap} of some exponent"
                ),
            });
        }
        Ok(())
    }
}

/// Final-time observables of one exponent.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub hs_defect: f64,
    /// Residuals with `reaction_extra = 0`.
    pub comp_residual: Vec<f64>,
    /// Residuals with `reaction_extra = 1`, reported without a bar.
    pub comp_residual_extra: Vec<f64>,
    pub result: RunResult,
}

impl SweepRun {
    pub fn p(&self) -> &[f64] {
        &self.result.state.p
    }
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub m: f64,
    pub outcome: std::result::Result<SweepRun, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Adjacent pairs where the defect does not decrease.
    pub non_monotone_pairs: usize,
    /// At most one non-monotone pair.
    pub defect_decreasing: bool,
    /// `hs_defect(last) / hs_defect(first)`.
    pub defect_ratio: f64,
    pub final_below_tol: Option<bool>,
    /// Successive pressure distances strictly decreasing.
    pub distances_decreasing: bool,
    /// Per test function, `|R(last)| / |R(first)|`.
    pub residual_ratios: Vec<f64>,
    pub all_runs_succeeded: bool,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub test_functions: Vec<Bump>,
    /// `‖p_{m_k} - p_{m_{k+1}}‖_{L²}`; `None` if either run failed.
    pub pair_l2: Vec<Option<f64>>,
    pub verdicts: Verdicts,
}

impl SweepReport {
    pub fn defects(&self) -> Vec<Option<f64>> {
        self.entries
            .iter()
            .map(|e| e.outcome.as_ref().ok().map(|r| r.hs_defect))
            .collect()
    }

    /// Comma-separated metrics table, one row per exponent.
    pub fn metrics_csv(&self) -> String {
        let k = self.test_functions.len();
        let mut out = String::from("m,status,hs_defect,l2_to_next");
        for i in 0..k {
            out.push_str(&format!(",comp_residual_{i}"));
        }
        for i in 0..k {
            out.push_str(&format!(",comp_residual_extra_{i}"));
        }
        out.push('\n');
        for (i, e) in self.entries.iter().enumerate() {
            let next = self.pair_l2.get(i).copied().flatten();
            let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:e}"));
            match &e.outcome {
                Ok(r) => {
                    out.push_str(&format!("{:e},ok,{:e},{}", e.m, r.hs_defect, fmt(next)));
                    for v in r.comp_residual.iter().chain(&r.comp_residual_extra) {
                        out.push_str(&format!(",{v:e}"));
                    }
                }
                Err(msg) => {
                    out.push_str(&format!("{:e},failed: {},,", e.m, msg.replace(',', ";")));
                    out.push_str(&",".repeat(2 * k));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn run_one(plan: &SweepPlan, m: f64, test_functions: &[Bump]) -> Result<SweepRun> {
    let mut config = plan.base.clone();
    config.m = m;
    config.diagnostics.test_functions = Some(test_functions.to_vec());
    config.checkpoint_path = plan.base.checkpoint_path.as_ref().map(|p| {
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("checkpoint");
        let ext = p.extension().and_then(|s| s.to_str()).unwrap_or("bin");
        p.with_file_name(format!("{stem}_m{m}.{ext}"))
    });
    let result = run(plan.initial.clone(), &plan.grid, &plan.params, &config)?;
    let state = &result.state;
    Ok(SweepRun {
        hs_defect: hele_shaw_defect(state, &plan.grid),
        comp_residual: complementarity_residual(
            state,
            &plan.grid,
            &plan.params,
            test_functions,
            false,
        ),
        comp_residual_extra: complementarity_residual(
            state,
            &plan.grid,
            &plan.params,
            test_functions,
            true,
        ),
        result,
    })
}

/// Execute every exponent (in parallel) and assemble the trend report.
/// Failed runs become failure entries rather than aborting the sweep.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    let test_functions = match &plan.base.diagnostics.test_functions {
        Some(t) => t.clone(),
        None => {
            let probe = State::new(
                &plan.grid,
                &plan.params,
                plan.initial.clone(),
                plan.m_values[0],
                0.0,
            )?;
            default_test_functions(&probe, &plan.grid)
        }
    };
    let entries: Vec<SweepEntry> = plan
        .m_values
        .par_iter()
        .map(|&m| SweepEntry {
            m,
            outcome: run_one(plan, m, &test_functions).map_err(|e| e.to_string()),
        })
        .collect();

    let volume = plan.grid.cell_volume();
    let pair_l2: Vec<Option<f64>> = entries
        .windows(2)
        .map(|w| match (&w[0].outcome, &w[1].outcome) {
            (Ok(a), Ok(b)) => compare_fields(a.p(), b.p(), volume, Norm::L2).ok(),
            _ => None,
        })
        .collect();
    let verdicts = verdicts(&entries, &pair_l2, plan.hs_tol, test_functions.len());
    Ok(SweepReport {
        entries,
        test_functions,
        pair_l2,
        verdicts,
    })
}

fn verdicts(
    entries: &[SweepEntry],
    pair_l2: &[Option<f64>],
    hs_tol: Option<f64>,
    n_test: usize,
) -> Verdicts {
    let ok: Vec<&SweepRun> = entries
        .iter()
        .filter_map(|e| e.outcome.as_ref().ok())
        .collect();
    let all_runs_succeeded = ok.len() == entries.len();
    let defects: Vec<f64> = ok.iter().map(|r| r.hs_defect).collect();
    let non_monotone_pairs = defects.windows(2).filter(|w| !(w[1] < w[0])).count();
    let ratio = |last: f64, first: f64| {
        if first == 0.0 {
            if last == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            last.abs() / first.abs()
        }
    };
    let (first, last) = (ok.first(), ok.last());
    let defect_ratio = match (first, last) {
        (Some(f), Some(l)) => ratio(l.hs_defect, f.hs_defect),
        _ => f64::NAN,
    };
    let residual_ratios = match (first, last) {
        (Some(f), Some(l)) => (0..n_test)
            .map(|k| ratio(l.comp_residual[k], f.comp_residual[k]))
            .collect(),
        _ => vec![f64::NAN; n_test],
    };
    let distances: Vec<f64> = pair_l2.iter().flatten().copied().collect();
    let distances_decreasing = all_runs_succeeded
        && distances
            .windows(2)
            .all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    Verdicts {
        non_monotone_pairs,
        defect_decreasing: all_runs_succeeded && non_monotone_pairs <= 1,
        defect_ratio,
        final_below_tol: hs_tol.map(|tol| last.is_some_and(|l| l.hs_defect <= tol)),
        distances_decreasing,
        residual_ratios,
        all_runs_succeeded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_examples() {
        let a = [0.5, 1.0, -2.0, 4.0];
        for norm in [Norm::L1, Norm::L2, Norm::Linf] {
            assert_eq!(compare_fields(&a, &a, 0.25, norm).unwrap(), 0.0);
        }
        let b: Vec<f64> = a.iter().map(|v| v - 0.3).collect();
        let l1 = compare_fields(&a, &b, 0.25, Norm::L1).unwrap();
        assert!((l1 - 0.3).abs() < 1e-15);
        assert!(matches!(
            compare_fields(&a, &b[..3], 1.0, Norm::L2),
            Err(Error::GridMismatch(_))
        ));
    }
}

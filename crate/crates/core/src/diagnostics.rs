//! Observables: Hele-Shaw defect, weak complementarity residual, front
//! kinematics, norms, entropy and age-structure summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grid::{gradient_pressure, support_radii, Grid, State};
use crate::params::ParameterSet;
use crate::sum::compensated_sum;

/// Number of rays used for the angular-mean front radius in 2D.
const FRONT_RAYS: usize = 64;

/// Smooth tensor-product bump `Π_a ψ((x_a - c_a)/radius)` with
/// `ψ(s) = exp(1 - 1/(1 - s²))` on `|s| < 1`, so `φ(c) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
}

fn psi(s: f64) -> (f64, f64) {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        return (0.0, 0.0);
    }
    let v = (1.0 - 1.0 / q).exp();
    (v, v * (-2.0 * s / (q * q)))
}

impl Bump {
    pub fn value(&self, x: [f64; 2], d: usize) -> f64 {
        (0..d)
            .map(|a| psi((x[a] - self.center[a]) / self.radius).0)
            .product()
    }

    pub fn gradient(&self, x: [f64; 2], d: usize) -> [f64; 2] {
        let parts: Vec<(f64, f64)> = (0..d)
            .map(|a| psi((x[a] - self.center[a]) / self.radius))
            .collect();
        let mut g = [0.0; 2];
        for a in 0..d {
            let others: f64 = (0..d).filter(|&b| b != a).map(|b| parts[b].0).product();
            g[a] = parts[a].1 / self.radius * others;
        }
        g
    }
}

/// The fixed test-function family: bumps centred on the density centroid with
/// radii `1, 2, 4` times the initial support radius, capped at the box
/// half-width. Computed from the initial state so every run of a sweep uses
/// the same functions.
pub fn default_test_functions(initial: &State, grid: &Grid) -> Vec<Bump> {
    let nc = grid.n_cells();
    let mass = compensated_sum(initial.rho.iter().copied());
    let mut center = [0.0; 2];
    if mass > 0.0 {
        for (a, slot) in center.iter_mut().enumerate().take(grid.d()) {
            *slot = compensated_sum((0..nc).map(|c| grid.position(c)[a] * initial.rho[c])) / mass;
        }
    }
    let r0 = support_radii(initial, grid, 0.0).x_radius;
    let base = if r0.is_finite() && r0 > 0.0 {
        r0
    } else {
        0.25 * grid.half_width()
    };
    [1.0, 2.0, 4.0]
        .iter()
        .map(|s| Bump {
            center,
            radius: (s * base).min(grid.half_width()),
        })
        .collect()
}

/// Settings that shape the recorded observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Subtract an extra `μ V` inside the complementarity source term.
    pub reaction_extra: bool,
    /// Pressure level tracked as the tumor front.
    pub front_threshold: f64,
    /// Cells with `Σ n dθ` at or below this are masked in age summaries.
    pub mask_threshold: f64,
    /// Explicit test functions; `None` selects [`default_test_functions`].
    pub test_functions: Option<Vec<Bump>>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            reaction_extra: false,
            front_threshold: 0.02,
            mask_threshold: 1e-6,
            test_functions: None,
        }
    }
}

/// One row of scalar observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    /// `∫∫ n dθ dx`.
    pub total_mass: f64,
    pub rho_l1: f64,
    pub rho_linf: f64,
    pub p_linf: f64,
    /// `∫∫ n log₊ n dθ dx`.
    pub entropy: f64,
    pub hs_defect: f64,
    pub comp_residual: Vec<f64>,
    /// Right front position in 1D, angular-mean radius in 2D; NaN if absent.
    pub front_position: f64,
    /// Filled from the time series; 0 for a single row.
    pub front_speed: f64,
    pub grad_p_at_front: f64,
    pub x_radius: f64,
    pub theta_extent: f64,
    /// Mass-weighted mean age over the whole tumor.
    pub mean_age: f64,
    /// Mass-weighted proliferating fraction over the whole tumor.
    pub proliferating_fraction: f64,
}

/// `∫ p |1 - min(ρ,1)| dx + ∫ p (ρ-1)₊ dx`.
pub fn hele_shaw_defect(state: &State, grid: &Grid) -> f64 {
    let terms = state
        .p
        .iter()
        .zip(&state.rho)
        .map(|(&p, &rho)| p * (1.0 - rho.min(1.0)).abs() + p * (rho - 1.0).max(0.0));
    compensated_sum(terms) * grid.cell_volume()
}

/// Cell-centred `∇p`, averaging the two adjacent face differences per axis.
pub fn cell_gradient(p: &[f64], grid: &Grid) -> Vec<[f64; 2]> {
    let faces = gradient_pressure(p, grid);
    let nx = grid.n_x();
    (0..grid.n_cells())
        .map(|c| {
            let (ix, iy) = (c % nx, c / nx);
            let mut g = [0.0; 2];
            let ax0 = &faces.axes[0];
            let line = if grid.d() == 1 { 0 } else { iy };
            g[0] = -0.5 * (ax0[line * (nx + 1) + ix] + ax0[line * (nx + 1) + ix + 1]);
            if grid.d() == 2 {
                let ax1 = &faces.axes[1];
                g[1] = -0.5 * (ax1[iy * nx + ix] + ax1[(iy + 1) * nx + ix]);
            }
            g
        })
        .collect()
}

/// Source density `G(x) = Σ_j n (F(θ_j,p) - extra·μ V) dθ`.
pub fn growth_source(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    reaction_extra: bool,
) -> Vec<f64> {
    let nc = grid.n_cells();
    let extra = if reaction_extra { 1.0 } else { 0.0 };
    (0..nc)
        .map(|c| {
            let p = state.p[c];
            let terms = grid.theta_centers().iter().enumerate().map(|(j, &theta)| {
                let n = state.n[j * nc + c];
                if n == 0.0 {
                    0.0
                } else {
                    n * (params.f_clamped(theta, p)
                        - extra * params.mu(theta) * params.volume(theta))
                }
            });
            compensated_sum(terms) * grid.dtheta()
        })
        .collect()
}

/// Weak residual `R(φ) = ∫ [φ(-|∇p|² + pG) - p ∇φ·∇p] dx` per test function.
pub fn complementarity_residual(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    test_functions: &[Bump],
    reaction_extra: bool,
) -> Vec<f64> {
    let grad = cell_gradient(&state.p, grid);
    let source = growth_source(state, grid, params, reaction_extra);
    let d = grid.d();
    test_functions
        .iter()
        .map(|phi| {
            let terms = (0..grid.n_cells()).map(|c| {
                let p = state.p[c];
                if p == 0.0 {
                    return 0.0;
                }
                let x = grid.position(c);
                let g = grad[c];
                let dphi = phi.gradient(x, d);
                let g2 = g[0] * g[0] + g[1] * g[1];
                phi.value(x, d) * (-g2 + p * source[c]) - p * (dphi[0] * g[0] + dphi[1] * g[1])
            });
            compensated_sum(terms) * grid.cell_volume()
        })
        .collect()
}

/// Front location and pressure slope just inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontPoint {
    pub position: f64,
    pub grad_p: f64,
}

/// Outermost crossing of `p = threshold`: the right front in 1D, the mean over
/// rays from the box centre in 2D. `None` if `p` never reaches the level.
pub fn front_point(p: &[f64], grid: &Grid, threshold: f64) -> Option<FrontPoint> {
    match grid.d() {
        1 => front_1d(p, grid, threshold),
        _ => front_2d(p, grid, threshold),
    }
}

fn front_1d(p: &[f64], grid: &Grid, threshold: f64) -> Option<FrontPoint> {
    let nx = grid.n_x();
    let dx = grid.dx();
    let i = (0..nx).rev().find(|&i| p[i] >= threshold)?;
    let x = grid.x_centers();
    let position = if i + 1 < nx {
        x[i] + (p[i] - threshold) / (p[i] - p[i + 1]) * dx
    } else {
        x[i]
    };
    let grad_p = if i >= 1 && i + 1 < nx {
        (p[i + 1] - p[i - 1]).abs() / (2.0 * dx)
    } else {
        0.0
    };
    Some(FrontPoint { position, grad_p })
}

fn bilinear(p: &[f64], grid: &Grid, x: f64, y: f64) -> f64 {
    let nx = grid.n_x();
    let dx = grid.dx();
    let fx = ((x + grid.half_width()) / dx - 0.5).clamp(0.0, (nx - 1) as f64);
    let fy = ((y + grid.half_width()) / dx - 0.5).clamp(0.0, (nx - 1) as f64);
    let (ix, iy) = ((fx as usize).min(nx - 2), (fy as usize).min(nx - 2));
    let (sx, sy) = (fx - ix as f64, fy - iy as f64);
    let at = |i: usize, j: usize| p[j * nx + i];
    (1.0 - sy) * ((1.0 - sx) * at(ix, iy) + sx * at(ix + 1, iy))
        + sy * ((1.0 - sx) * at(ix, iy + 1) + sx * at(ix + 1, iy + 1))
}

fn front_2d(p: &[f64], grid: &Grid, threshold: f64) -> Option<FrontPoint> {
    let h = 0.25 * grid.dx();
    let r_end = grid.half_width() - 0.5 * grid.dx();
    let steps = (r_end / h) as usize;
    let mut radii = Vec::with_capacity(FRONT_RAYS);
    let mut slopes = Vec::with_capacity(FRONT_RAYS);
    for k in 0..FRONT_RAYS {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / FRONT_RAYS as f64;
        let (cx, cy) = (angle.cos(), angle.sin());
        let sample = |r: f64| bilinear(p, grid, r * cx, r * cy);
        let Some(s) = (0..steps)
            .rev()
            .find(|&s| sample(s as f64 * h) >= threshold)
        else {
            continue;
        };
        let (r0, r1) = (s as f64 * h, (s + 1) as f64 * h);
        let (p0, p1) = (sample(r0), sample(r1));
        let radius = if p0 > p1 {
            r0 + (p0 - threshold) / (p0 - p1) * h
        } else {
            r0
        };
        let inner = (radius - grid.dx()).max(0.0);
        let slope = (sample((inner - grid.dx()).max(0.0)) - sample(inner + grid.dx())).abs()
            / (2.0 * grid.dx());
        radii.push(radius);
        slopes.push(slope);
    }
    if radii.is_empty() {
        return None;
    }
    let count = radii.len() as f64;
    Some(FrontPoint {
        position: compensated_sum(radii) / count,
        grad_p: compensated_sum(slopes) / count,
    })
}

/// Front position, speed and slope series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontSample {
    pub t: f64,
    pub position: f64,
    pub speed: f64,
    pub grad_p: f64,
}

/// Centred differences in time (one-sided at the ends, 0 for one sample).
pub fn finite_difference_speeds(times: &[f64], positions: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                return 0.0;
            }
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (positions[b] - positions[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Front series from a state history. Snapshots without a crossing get NaN
/// position and slope.
pub fn front_kinematics(history: &[State], grid: &Grid, threshold: f64) -> Vec<FrontSample> {
    let points: Vec<Option<FrontPoint>> = history
        .iter()
        .map(|s| front_point(&s.p, grid, threshold))
        .collect();
    let times: Vec<f64> = history.iter().map(|s| s.t).collect();
    let positions: Vec<f64> = points
        .iter()
        .map(|f| f.map_or(f64::NAN, |f| f.position))
        .collect();
    let speeds = finite_difference_speeds(&times, &positions);
    points
        .iter()
        .zip(times.iter().zip(positions.iter().zip(speeds)))
        .map(|(f, (&t, (&position, speed)))| FrontSample {
            t,
            position,
            speed,
            grad_p: f.map_or(f64::NAN, |f| f.grad_p),
        })
        .collect()
}

/// Per-cell mean age and proliferating fraction, `None` where masked.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeSummaries {
    pub mean_age: Vec<Option<f64>>,
    pub proliferating_fraction: Vec<Option<f64>>,
}

pub fn age_summaries(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    threshold: f64,
) -> AgeSummaries {
    let nc = grid.n_cells();
    let nu_max = params.nu_max();
    let mut mean_age = Vec::with_capacity(nc);
    let mut fraction = Vec::with_capacity(nc);
    for c in 0..nc {
        let p = state.p[c];
        let column =
            || (0..grid.n_theta()).map(move |j| (grid.theta_centers()[j], state.n[j * nc + c]));
        let count = compensated_sum(column().map(|(_, n)| n)) * grid.dtheta();
        if count <= threshold {
            mean_age.push(None);
            fraction.push(None);
            continue;
        }
        let aged = compensated_sum(column().map(|(theta, n)| theta * n)) * grid.dtheta();
        let dividing =
            compensated_sum(column().map(|(theta, n)| params.nu(theta, p) * n)) * grid.dtheta();
        mean_age.push(Some(aged / count));
        fraction.push(Some(if nu_max > 0.0 {
            dividing / (nu_max * count)
        } else {
            0.0
        }));
    }
    AgeSummaries {
        mean_age,
        proliferating_fraction: fraction,
    }
}

/// `∫∫ n log₊ n dθ dx`.
pub fn entropy(state: &State, grid: &Grid) -> f64 {
    let terms = state
        .n
        .iter()
        .map(|&n| if n > 1.0 { n * n.ln() } else { 0.0 });
    compensated_sum(terms) * grid.dtheta() * grid.cell_volume()
}

pub fn total_mass(n: &[f64], grid: &Grid) -> f64 {
    compensated_sum(n.iter().copied()) * grid.dtheta() * grid.cell_volume()
}

/// Every observable except `front_speed`, which needs the time series.
pub fn compute_record(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    config: &DiagnosticsConfig,
    test_functions: &[Bump],
    step: u64,
    support_threshold: f64,
) -> DiagnosticsRecord {
    let volume = grid.cell_volume();
    let nc = grid.n_cells();
    let support = support_radii(state, grid, support_threshold);
    let front = front_point(&state.p, grid, config.front_threshold);
    let nu_max = params.nu_max();

    let mut counts = Vec::with_capacity(state.n.len());
    let mut aged = Vec::with_capacity(state.n.len());
    let mut dividing = Vec::with_capacity(state.n.len());
    for (j, &theta) in grid.theta_centers().iter().enumerate() {
        for c in 0..nc {
            let n = state.n[j * nc + c];
            if n != 0.0 {
                counts.push(n);
                aged.push(theta * n);
                dividing.push(params.nu(theta, state.p[c]) * n);
            }
        }
    }
    let count = compensated_sum(counts);
    let (mean_age, proliferating_fraction) = if count > 0.0 {
        let frac = if nu_max > 0.0 {
            compensated_sum(dividing) / (nu_max * count)
        } else {
            0.0
        };
        (compensated_sum(aged) / count, frac)
    } else {
        (0.0, 0.0)
    };

    DiagnosticsRecord {
        step,
        t: state.t,
        total_mass: count * grid.dtheta() * volume,
        rho_l1: compensated_sum(state.rho.iter().copied()) * volume,
        rho_linf: state.rho.iter().copied().fold(0.0, f64::max),
        p_linf: state.p.iter().copied().fold(0.0, f64::max),
        entropy: entropy(state, grid),
        hs_defect: hele_shaw_defect(state, grid),
        comp_residual: complementarity_residual(
            state,
            grid,
            params,
            test_functions,
            config.reaction_extra,
        ),
        front_position: front.map_or(f64::NAN, |f| f.position),
        front_speed: 0.0,
        grad_p_at_front: front.map_or(f64::NAN, |f| f.grad_p),
        x_radius: support.x_radius,
        theta_extent: support.theta_extent,
        mean_age,
        proliferating_fraction,
    }
}

/// Recompute `front_speed` over a series of rows.
pub fn fill_front_speeds(records: &mut [DiagnosticsRecord]) {
    let times: Vec<f64> = records.iter().map(|r| r.t).collect();
    let positions: Vec<f64> = records.iter().map(|r| r.front_position).collect();
    for (r, v) in records
        .iter_mut()
        .zip(finite_difference_speeds(&times, &positions))
    {
        r.front_speed = v;
    }
}

const FIXED_COLUMNS: [&str; 15] = [
    "step",
    "t",
    "total_mass",
    "rho_l1",
    "rho_linf",
    "p_linf",
    "entropy",
    "hs_defect",
    "front_position",
    "front_speed",
    "grad_p_at_front",
    "x_radius",
    "theta_extent",
    "mean_age",
    "proliferating_fraction",
];

/// Comment line plus column header for `n_test` residual columns.
pub fn csv_header(n_test: usize, reaction_extra: bool) -> String {
    let mut out = format!(
        "# units: t in model time; masses in cells (x-volume^d); rho dimensionless; \
         p in pressure units; theta in age units; reaction_extra={}\n",
        u8::from(reaction_extra)
    );
    out.push_str(&FIXED_COLUMNS.join(","));
    for k in 0..n_test {
        let _ = write!(out, ",comp_residual_{k}");
    }
    out.push('\n');
    out
}

/// Shortest round-trip formatting, so rows re-parse to identical bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn csv_row(r: &DiagnosticsRecord) -> String {
    let fields = [
        r.t,
        r.total_mass,
        r.rho_l1,
        r.rho_linf,
        r.p_linf,
        r.entropy,
        r.hs_defect,
        r.front_position,
        r.front_speed,
        r.grad_p_at_front,
        r.x_radius,
        r.theta_extent,
        r.mean_age,
        r.proliferating_fraction,
    ];
    let mut out = r.step.to_string();
    for v in fields.iter().chain(&r.comp_residual) {
        out.push(',');
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
    out
}

pub fn csv_table(records: &[DiagnosticsRecord], reaction_extra: bool) -> String {
    let n_test = records.first().map_or(0, |r| r.comp_residual.len());
    let mut out = csv_header(n_test, reaction_extra);
    for r in records {
        out.push_str(&csv_row(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::params::{default_parameters, Preset};

    fn grid_1d(n_theta: usize, n_x: usize, half_width: f64) -> Grid {
        Grid::new(GridSpec {
            d: 1,
            n_theta,
            theta_max: 2.0,
            n_x,
            half_width,
        })
        .unwrap()
    }

    fn raw_state(rho: Vec<f64>, p: Vec<f64>, n: Vec<f64>) -> State {
        State {
            t: 0.0,
            m: 5.0,
            n,
            rho,
            p,
        }
    }

    #[test]
    fn defect_examples() {
        let grid = grid_1d(2, 3, 1.5); // dx = 1
        let zero = raw_state(vec![0.4; 3], vec![0.0; 3], vec![0.0; 6]);
        assert_eq!(hele_shaw_defect(&zero, &grid), 0.0);
        let saturated = raw_state(vec![1.0; 3], vec![0.7; 3], vec![0.0; 6]);
        assert_eq!(hele_shaw_defect(&saturated, &grid), 0.0);
        let p = 1.25 * 0.9f64.powi(4);
        let one = raw_state(vec![0.9, 0.0, 0.0], vec![p, 0.0, 0.0], vec![0.0; 6]);
        let defect = hele_shaw_defect(&one, &grid);
        assert!((defect - 0.08201).abs() < 1e-5, "{defect}");
        assert!((defect - 0.1 * p).abs() < 1e-15);
    }

    #[test]
    fn defect_is_reflection_invariant() {
        let grid = grid_1d(2, 7, 1.0);
        let rho = vec![0.0, 0.3, 0.9, 1.1, 0.8, 0.2, 0.0];
        let p: Vec<f64> = rho.iter().map(|r: &f64| r.powi(3)).collect();
        let a = raw_state(rho.clone(), p.clone(), vec![0.0; 14]);
        let b = raw_state(
            rho.into_iter().rev().collect(),
            p.into_iter().rev().collect(),
            vec![0.0; 14],
        );
        assert_eq!(hele_shaw_defect(&a, &grid), hele_shaw_defect(&b, &grid));
    }

    #[test]
    fn bump_gradient_matches_finite_difference() {
        let bump = Bump {
            center: [0.1, -0.2],
            radius: 0.7,
        };
        let x = [0.3, 0.05];
        let g = bump.gradient(x, 2);
        let h = 1e-6;
        let fd0 = (bump.value([x[0] + h, x[1]], 2) - bump.value([x[0] - h, x[1]], 2)) / (2.0 * h);
        let fd1 = (bump.value([x[0], x[1] + h], 2) - bump.value([x[0], x[1] - h], 2)) / (2.0 * h);
        assert!((g[0] - fd0).abs() < 1e-8 && (g[1] - fd1).abs() < 1e-8);
        assert_eq!(bump.value([0.1, -0.2], 2), 1.0);
        assert_eq!(bump.value([0.9, 0.0], 2), 0.0);
    }

    /// Gaussian pressure and separable n on a small grid.
    fn synthetic(grid: &Grid, params: &ParameterSet) -> State {
        let nc = grid.n_cells();
        let p: Vec<f64> = (0..nc)
            .map(|c| {
                let r = grid.radius(c);
                0.8 * (-4.0 * r * r).exp()
            })
            .collect();
        let n: Vec<f64> = (0..grid.n_len())
            .map(|k| {
                let theta = grid.theta_centers()[k / nc];
                (1.0 - theta / 2.0) * (1.0 + grid.radius(k % nc)).recip()
            })
            .collect();
        let rho = crate::grid::integrate_density(grid, params, &n);
        State {
            t: 0.0,
            m: 5.0,
            n,
            rho,
            p,
        }
    }

    #[test]
    fn residual_matches_brute_force_quadrature() {
        let grid = Grid::new(GridSpec {
            d: 2,
            n_theta: 6,
            theta_max: 2.0,
            n_x: 10,
            half_width: 1.0,
        })
        .unwrap();
        let params = default_parameters(Preset::General);
        let state = synthetic(&grid, &params);
        let bumps = [
            Bump {
                center: [0.05, 0.0],
                radius: 0.6,
            },
            Bump {
                center: [0.0, 0.1],
                radius: 0.9,
            },
        ];
        for extra in [false, true] {
            let fast = complementarity_residual(&state, &grid, &params, &bumps, extra);
            // Straight-line recomputation with explicit neighbour lookups.
            let nx = grid.n_x();
            let dx = grid.dx();
            let p = |ix: isize, iy: isize| {
                if ix < 0 || iy < 0 || ix >= nx as isize || iy >= nx as isize {
                    None
                } else {
                    Some(state.p[iy as usize * nx + ix as usize])
                }
            };
            for (phi, &value) in bumps.iter().zip(&fast) {
                let mut total = 0.0;
                for iy in 0..nx as isize {
                    for ix in 0..nx as isize {
                        let c = iy as usize * nx + ix as usize;
                        let pc = state.p[c];
                        let side = |q: Option<f64>| q.map_or(0.0, |q| q - pc);
                        let gx = (side(p(ix + 1, iy)) - side(p(ix - 1, iy))) / (2.0 * dx);
                        let gy = (side(p(ix, iy + 1)) - side(p(ix, iy - 1))) / (2.0 * dx);
                        let mut g = 0.0;
                        for j in 0..grid.n_theta() {
                            let theta = grid.theta_centers()[j];
                            let mut f = params.f_clamped(theta, pc);
                            if extra {
                                f -= params.mu(theta) * params.volume(theta);
                            }
                            g += state.n[j * grid.n_cells() + c] * f * grid.dtheta();
                        }
                        let x = grid.position(c);
                        let dphi = phi.gradient(x, 2);
                        total += (phi.value(x, 2) * (-(gx * gx + gy * gy) + pc * g)
                            - pc * (dphi[0] * gx + dphi[1] * gy))
                            * dx
                            * dx;
                    }
                }
                assert!((total - value).abs() <= 1e-10, "{total} vs {value}");
            }
        }
    }

    #[test]
    fn residual_vanishes_for_zero_pressure_or_test_function() {
        let grid = grid_1d(4, 12, 1.0);
        let params = default_parameters(Preset::Case1);
        let state = raw_state(vec![0.1; 12], vec![0.0; 12], vec![0.05; 48]);
        let bumps = [Bump {
            center: [0.0, 0.0],
            radius: 0.5,
        }];
        assert_eq!(
            complementarity_residual(&state, &grid, &params, &bumps, false),
            vec![0.0]
        );
        let synthetic = synthetic(&grid, &params);
        let tiny = [Bump {
            center: [5.0, 0.0],
            radius: 0.5,
        }];
        assert_eq!(
            complementarity_residual(&synthetic, &grid, &params, &tiny, false),
            vec![0.0]
        );
    }

    #[test]
    fn residual_is_linear_in_test_function() {
        let grid = Grid::new(GridSpec {
            d: 2,
            n_theta: 4,
            theta_max: 2.0,
            n_x: 16,
            half_width: 1.0,
        })
        .unwrap();
        let params = default_parameters(Preset::General);
        let state = synthetic(&grid, &params);
        // φ1 + 2 φ2 evaluated through the same quadrature via the explicit sum.
        let b1 = Bump {
            center: [0.0, 0.0],
            radius: 0.5,
        };
        let b2 = Bump {
            center: [0.1, 0.0],
            radius: 0.8,
        };
        let r = complementarity_residual(&state, &grid, &params, &[b1, b2], false);
        let grad = cell_gradient(&state.p, &grid);
        let source = growth_source(&state, &grid, &params, false);
        let combined: f64 = (0..grid.n_cells())
            .map(|c| {
                let x = grid.position(c);
                let phi = b1.value(x, 2) + 2.0 * b2.value(x, 2);
                let (g1, g2) = (b1.gradient(x, 2), b2.gradient(x, 2));
                let dphi = [g1[0] + 2.0 * g2[0], g1[1] + 2.0 * g2[1]];
                let g = grad[c];
                let p = state.p[c];
                phi * (-(g[0] * g[0] + g[1] * g[1]) + p * source[c])
                    - p * (dphi[0] * g[0] + dphi[1] * g[1])
            })
            .sum::<f64>()
            * grid.cell_volume();
        assert!((combined - (r[0] + 2.0 * r[1])).abs() < 1e-12 * combined.abs().max(1.0));
    }

    #[test]
    fn front_of_linear_ramp() {
        let grid = grid_1d(2, 20, 1.0);
        // p = 1 - 2|x| clipped at 0: crosses 0.2 at x = 0.4.
        let p: Vec<f64> = grid
            .x_centers()
            .iter()
            .map(|x| (1.0 - 2.0 * x.abs()).max(0.0))
            .collect();
        let f = front_point(&p, &grid, 0.2).unwrap();
        assert!((f.position - 0.4).abs() < 1e-12, "{}", f.position);
        assert!((f.grad_p - 2.0).abs() < 1e-12);
        assert!(front_point(&[0.0; 20], &grid, 0.2).is_none());
    }

    #[test]
    fn front_of_radial_cone_in_2d() {
        let grid = Grid::new(GridSpec {
            d: 2,
            n_theta: 2,
            theta_max: 1.0,
            n_x: 80,
            half_width: 1.0,
        })
        .unwrap();
        let p: Vec<f64> = (0..grid.n_cells())
            .map(|c| (1.0 - 2.0 * grid.radius(c)).max(0.0))
            .collect();
        let f = front_point(&p, &grid, 0.2).unwrap();
        assert!((f.position - 0.4).abs() < 0.01, "{}", f.position);
        assert!((f.grad_p - 2.0).abs() < 0.05, "{}", f.grad_p);
    }

    #[test]
    fn translating_profile_speed() {
        let grid = grid_1d(2, 40, 1.0);
        let params = default_parameters(Preset::Case1);
        let k = 4.0;
        let dt = 0.01;
        let history: Vec<State> = (0..6)
            .map(|s| {
                let shift = s as f64 * grid.dx() / k;
                let p: Vec<f64> = grid
                    .x_centers()
                    .iter()
                    .map(|x| (0.5 - (x - shift)).clamp(0.0, 1.0))
                    .collect();
                let mut state =
                    State::new(&grid, &params, vec![0.0; grid.n_len()], 5.0, s as f64 * dt)
                        .unwrap();
                state.p = p;
                state
            })
            .collect();
        for sample in front_kinematics(&history, &grid, 0.25) {
            assert!(
                (sample.speed - grid.dx() / (k * dt)).abs() < 1e-9,
                "{sample:?}"
            );
        }
        let still: Vec<State> = (0..3)
            .map(|s| State {
                t: s as f64,
                ..history[0].clone()
            })
            .collect();
        assert!(front_kinematics(&still, &grid, 0.25)
            .iter()
            .all(|s| s.speed == 0.0));
    }

    #[test]
    fn age_summary_examples() {
        let grid = grid_1d(5, 3, 1.0);
        let params = default_parameters(Preset::Case1);
        let nc = grid.n_cells();
        let mut n = vec![0.0; grid.n_len()];
        n[2 * nc + 1] = 0.3;
        let state = State::new(&grid, &params, n, 5.0, 0.0).unwrap();
        let s = age_summaries(&state, &grid, &params, 1e-9);
        assert_eq!(s.mean_age[1], Some(grid.theta_centers()[2]));
        assert_eq!(s.mean_age[0], None);
        let none = ParameterSet::from_functions(
            *params.bounds(),
            |p| 1.0 - p,
            |_, _| 0.0,
            |_| 0.1,
            |_| 1.0,
            |_| 0.0,
        );
        let s = age_summaries(&state, &grid, &none, 1e-9);
        assert!(s.proliferating_fraction.iter().flatten().all(|&f| f == 0.0));
    }

    #[test]
    fn csv_rows_round_trip() {
        let record = DiagnosticsRecord {
            step: 3,
            t: 0.1,
            total_mass: 1.0 / 3.0,
            rho_l1: 0.25,
            rho_linf: 0.9,
            p_linf: 0.82,
            entropy: 0.0,
            hs_defect: 1e-20,
            comp_residual: vec![-0.5, 1e300],
            front_position: f64::NAN,
            front_speed: 0.0,
            grad_p_at_front: f64::NAN,
            x_radius: 0.3,
            theta_extent: f64::NEG_INFINITY,
            mean_age: 0.7,
            proliferating_fraction: 0.1,
        };
        let header = csv_header(2, true);
        assert!(header.starts_with("# units"));
        assert!(header.contains("reaction_extra=1"));
        let row = csv_row(&record);
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        assert_eq!(fields.len(), 17);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[16].parse::<f64>().unwrap(), 1e300);
        assert!(fields[8].parse::<f64>().unwrap().is_nan());
    }
}

//! Per-step operators: age transport with renewal inflow, reaction sinks and
//! pressure-driven spatial advection. All schemes are first-order upwind.
//!
//! Each operator comes as a pure function of a [`State`] returning the new
//! distribution, plus an in-place variant used by the stepper that also
//! returns the operator's mass increment.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gradient_pressure, FaceVelocities, Grid, State};
use crate::params::ParameterSet;
use crate::sum::compensated_sum;

/// Values at or below this count as zero when checking supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Relative slack on CFL comparisons, absorbing round-off in `dt` itself.
const CFL_SLACK: f64 = 1e-12;

/// Spatial cell count from which slices are processed in parallel.
const PARALLEL_CELLS: usize = 4096;

const LANES: usize = 8;

/// Where the distribution can be nonzero: age rows that hold mass and the
/// flat cell range spanning the spatial support plus one cell, so that
/// skipping everything else changes nothing.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Active {
    pub rows: Vec<bool>,
    pub cells: std::ops::Range<usize>,
}

impl Active {
    pub fn full(grid: &Grid) -> Self {
        Active {
            rows: vec![true; grid.n_theta()],
            cells: 0..grid.n_cells(),
        }
    }

    /// Rows with any nonzero entry (the newborn row always counts) and the
    /// cell span of `rho > 0`.
    pub fn scan(n: &[f64], rho: &[f64], grid: &Grid) -> Self {
        let nc = grid.n_cells();
        let mut rows: Vec<bool> = n
            .chunks(nc)
            .map(|row| row.iter().any(|&v| v != 0.0))
            .collect();
        rows[0] = true;
        let mut active = Active { rows, cells: 0..0 };
        active.update_cells(rho);
        active
    }

    pub fn update_cells(&mut self, rho: &[f64]) {
        self.cells = match (
            rho.iter().position(|&r| r != 0.0),
            rho.iter().rposition(|&r| r != 0.0),
        ) {
            (Some(lo), Some(hi)) => lo.saturating_sub(1)..(hi + 2).min(rho.len()),
            _ => 0..0,
        };
    }
}

/// Stable time step and the three limits it was derived from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBudget {
    pub dt: f64,
    /// `dθ / r_max`.
    pub cfl_age: f64,
    /// `dx / max |u_face|`, infinite for a quiescent pressure.
    pub cfl_space: f64,
    /// `dx² / (2 d (m-1) p_M)`.
    pub cfl_diff: f64,
}

pub fn cfl_dt(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    cfl_factor: f64,
) -> Result<StepBudget> {
    if cfl_factor > 1.0 || cfl_factor.is_nan() {
        return Err(Error::config(format!(
            "cfl_factor must lie in (0, 1], got {cfl_factor}"
        )));
    }
    let cfl_age = limit(grid.dtheta(), params.r_max());
    let cfl_space = limit(grid.dx(), gradient_pressure(&state.p, grid).max_abs());
    let cfl_diff = diffusion_limit(grid, params, state.m);
    let dt = cfl_factor * cfl_age.min(cfl_space).min(cfl_diff);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::DegenerateStep(dt));
    }
    Ok(StepBudget {
        dt,
        cfl_age,
        cfl_space,
        cfl_diff,
    })
}

fn limit(width: f64, speed: f64) -> f64 {
    if speed > 0.0 {
        width / speed
    } else {
        f64::INFINITY
    }
}

/// A-priori explicit limit of the degenerate diffusion `∇·(ρ∇p)`, using
/// `ρ p'(ρ) = (m-1) p <= (m-1) p_M`.
pub fn diffusion_limit(grid: &Grid, params: &ParameterSet, m: f64) -> f64 {
    grid.dx().powi(2) / (2.0 * grid.d() as f64 * (m - 1.0) * params.p_max())
}

/// Newborn flux at age zero, `b(x) = 2 Σ_j ν(θ_j, p(x)) n(θ_j, x) dθ`.
pub fn renewal_inflow(state: &State, grid: &Grid, params: &ParameterSet) -> Vec<f64> {
    let mut b = vec![0.0; grid.n_cells()];
    renewal_into(&state.n, &state.p, grid, params, &mut b);
    b
}

pub(crate) fn renewal_into(
    n: &[f64],
    p: &[f64],
    grid: &Grid,
    params: &ParameterSet,
    out: &mut [f64],
) {
    let nc = grid.n_cells();
    let scale = 2.0 * grid.dtheta();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &theta) in grid.theta_centers().iter().enumerate() {
        let slice = &n[j * nc..(j + 1) * nc];
        for ((acc, &value), &pc) in out.iter_mut().zip(slice).zip(p) {
            if value != 0.0 {
                *acc += params.nu(theta, pc) * value;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
}

/// Mass moved across the age boundaries by one age-transport update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgeFluxes {
    /// `Σ_x c(x) b(x) dθ dx^d`.
    pub inflow: f64,
    /// Mass leaving through `θ = Θ_max`; zero whenever the support invariant holds.
    pub outflow: f64,
}

/// Upwind age transport at the local speed `r(p(x))` with ghost value `b` at
/// `θ = 0`: `n'_j = n_j - (r dt/dθ)(n_j - n_{j-1})`.
pub fn age_transport(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    inflow: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let courant: Vec<f64> = state
        .p
        .iter()
        .map(|&p| params.r(p) * dt / grid.dtheta())
        .collect();
    let mut n = state.n.clone();
    advance_age(&mut n, grid, &courant, Some(inflow))?;
    Ok(n)
}

/// In-place age upwind step with per-cell Courant numbers `courant[x] <= 1`.
/// `inflow = None` means a zero ghost value.
pub(crate) fn advance_age(
    n: &mut [f64],
    grid: &Grid,
    courant: &[f64],
    inflow: Option<&[f64]>,
) -> Result<AgeFluxes> {
    let nc = grid.n_cells();
    let nt = grid.n_theta();
    let dtheta = grid.dtheta();
    // Reported in Courant units: the limit is one cell per step.
    if let Some(&cn) = courant.iter().find(|&&c| !(c <= 1.0 + CFL_SLACK)) {
        return Err(Error::Cfl {
            kernel: "age_transport",
            dt: cn,
            limit: 1.0,
        });
    }
    let top = &n[(nt - 1) * nc..];
    let mut outflow = Vec::with_capacity(nc);
    for (&value, &c) in top.iter().zip(courant) {
        if c > 0.0 && value > SUPPORT_THRESHOLD {
            return Err(Error::AgeSupport { value });
        }
        outflow.push(c * value * dtheta);
    }
    for j in (1..nt).rev() {
        let (lower, upper) = n.split_at_mut(j * nc);
        let prev = &lower[(j - 1) * nc..];
        for ((cur, &below), &c) in upper[..nc].iter_mut().zip(prev).zip(courant) {
            *cur = (1.0 - c) * *cur + c * below;
        }
    }
    let mut gained = Vec::with_capacity(nc);
    for (x, (cur, &c)) in n[..nc].iter_mut().zip(courant).enumerate() {
        let b = inflow.map_or(0.0, |b| b[x]);
        *cur = (1.0 - c) * *cur + c * b;
        gained.push(c * b * dtheta);
    }
    let volume = grid.cell_volume();
    Ok(AgeFluxes {
        inflow: compensated_sum(gained) * volume,
        outflow: compensated_sum(outflow) * volume,
    })
}

/// Adds the renewal inflow to the youngest age cell over `dt`,
/// `n_0 += r(p) dt/dθ · b`. Returns the injected mass.
pub(crate) fn inject_newborns(
    n: &mut [f64],
    p: &[f64],
    inflow: &[f64],
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
) -> f64 {
    let nc = grid.n_cells();
    let mut added = Vec::with_capacity(nc);
    for ((cur, &pc), &b) in n[..nc].iter_mut().zip(p).zip(inflow) {
        let gain = params.r(pc) * dt * b;
        *cur += gain / grid.dtheta();
        added.push(gain);
    }
    compensated_sum(added) * grid.cell_volume()
}

fn check_reaction_step(params: &ParameterSet, dt: f64) -> Result<()> {
    let worst = dt * (params.r_max() * params.nu_max() + params.mu_max());
    if !(worst < 1.0) {
        return Err(Error::Positivity {
            kernel: "reaction",
            detail: format!("dt (r_max sup ν + μ_max) = {worst} must be < 1"),
        });
    }
    Ok(())
}

/// Division and death sinks, `n' = n (1 - dt (r(p) ν(θ,p) + μ(θ)))`.
pub fn reaction(state: &State, grid: &Grid, params: &ParameterSet, dt: f64) -> Result<Vec<f64>> {
    let mut n = state.n.clone();
    react(&mut n, &state.p, grid, params, dt)?;
    Ok(n)
}

/// In-place reaction; returns the (nonpositive) mass increment.
pub(crate) fn react(
    n: &mut [f64],
    p: &[f64],
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
) -> Result<f64> {
    check_reaction_step(params, dt)?;
    let nc = grid.n_cells();
    let aging: Vec<f64> = p.iter().map(|&pc| params.r(pc)).collect();
    let mut removed = Vec::with_capacity(grid.n_theta());
    for (j, &theta) in grid.theta_centers().iter().enumerate() {
        let mu = params.mu(theta);
        let slice = &mut n[j * nc..(j + 1) * nc];
        let mut lost = 0.0;
        for ((value, &pc), &r) in slice.iter_mut().zip(p).zip(&aging) {
            if *value != 0.0 {
                let rate = dt * (r * params.nu(theta, pc) + mu);
                lost += rate * *value;
                *value *= 1.0 - rate;
            }
        }
        removed.push(lost);
    }
    Ok(-compensated_sum(removed) * grid.dtheta() * grid.cell_volume())
}

/// Renewal flux of the current `n` into `inflow`, followed by the in-place
/// reaction; one pass over `n` with `ν` evaluated once per entry (once per
/// row and cell when the division rate is separable). Returns the reaction
/// mass increment.
pub(crate) fn renew_and_react(
    n: &mut [f64],
    p: &[f64],
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
    inflow: &mut [f64],
    active: &Active,
) -> Result<f64> {
    check_reaction_step(params, dt)?;
    let nc = grid.n_cells();
    let span = active.cells.clone();
    let p = &p[span.clone()];
    let aging: Vec<f64> = p.iter().map(|&pc| params.r(pc)).collect();
    let pressure_factor: Option<Vec<f64>> = params
        .division_factors()
        .map(|(_, q)| p.iter().map(|&pc| q(pc)).collect());
    inflow.iter_mut().for_each(|v| *v = 0.0);
    let mut removed = Vec::with_capacity(grid.n_theta());
    let width = span.len();
    for (j, &theta) in grid.theta_centers().iter().enumerate() {
        if !active.rows[j] || width == 0 {
            removed.push(0.0);
            continue;
        }
        let mu = params.mu(theta);
        let slice = &mut n[j * nc + span.start..j * nc + span.end];
        let inflow = &mut inflow[span.clone()];
        let mut lost = 0.0;
        match (&pressure_factor, params.division_factors()) {
            (Some(q), Some((a, _))) => {
                let a = a(theta);
                if a == 0.0 && mu == 0.0 {
                    removed.push(0.0);
                    continue;
                }
                // Independent partial sums so the loop vectorizes.
                let mut lanes = [0.0; LANES];
                let body = width - width % LANES;
                let cell = |v: f64, acc: &mut f64, qc: f64, r: f64, lane: &mut f64| {
                    let nu = a * qc;
                    *acc += nu * v;
                    let rate = dt * (r * nu + mu);
                    *lane += rate * v;
                    v * (1.0 - rate)
                };
                let chunks = slice[..body]
                    .chunks_exact_mut(LANES)
                    .zip(inflow[..body].chunks_exact_mut(LANES))
                    .zip(q[..body].chunks_exact(LANES))
                    .zip(aging[..body].chunks_exact(LANES));
                for (((values, accs), qs), rs) in chunks {
                    let values: &mut [f64; LANES] = values.try_into().expect("chunk");
                    let accs: &mut [f64; LANES] = accs.try_into().expect("chunk");
                    let qs: &[f64; LANES] = qs.try_into().expect("chunk");
                    let rs: &[f64; LANES] = rs.try_into().expect("chunk");
                    for k in 0..LANES {
                        values[k] = cell(values[k], &mut accs[k], qs[k], rs[k], &mut lanes[k]);
                    }
                }
                for c in body..width {
                    slice[c] = cell(
                        slice[c],
                        &mut inflow[c],
                        q[c],
                        aging[c],
                        &mut lanes[c - body],
                    );
                }
                lost = lanes.iter().sum();
            }
            _ => {
                for (((value, acc), &pc), &r) in
                    slice.iter_mut().zip(inflow.iter_mut()).zip(p).zip(&aging)
                {
                    if *value != 0.0 {
                        let nu = params.nu(theta, pc);
                        *acc += nu * *value;
                        let rate = dt * (r * nu + mu);
                        lost += rate * *value;
                        *value *= 1.0 - rate;
                    }
                }
            }
        }
        removed.push(lost);
    }
    let scale = 2.0 * grid.dtheta();
    inflow.iter_mut().for_each(|v| *v *= scale);
    Ok(-compensated_sum(removed) * grid.dtheta() * grid.cell_volume())
}

/// Conservative upwind advection of every age slice with velocity `-∇p`.
pub fn spatial_advect(
    state: &State,
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
) -> Result<Vec<f64>> {
    let faces = gradient_pressure(&state.p, grid);
    check_transport_step(grid, params, &faces, state.m, dt)?;
    let mut n = state.n.clone();
    advect(&mut n, &faces, grid, dt);
    Ok(n)
}

pub(crate) fn check_transport_step(
    grid: &Grid,
    params: &ParameterSet,
    faces: &FaceVelocities,
    m: f64,
    dt: f64,
) -> Result<()> {
    let cfl_space = limit(grid.dx(), faces.max_abs());
    let cfl_diff = diffusion_limit(grid, params, m);
    let bound = cfl_space.min(cfl_diff);
    if dt > bound * (1.0 + CFL_SLACK) {
        return Err(Error::Cfl {
            kernel: "spatial_advect",
            dt,
            limit: bound,
        });
    }
    Ok(())
}

/// In-place conservative advection; no CFL check.
pub(crate) fn advect(n: &mut [f64], faces: &FaceVelocities, grid: &Grid, dt: f64) {
    advect_active(n, faces, grid, dt, &Active::full(grid));
}

/// [`advect`] restricted to the active rows (and, in 1D, the active span).
pub(crate) fn advect_active(
    n: &mut [f64],
    faces: &FaceVelocities,
    grid: &Grid,
    dt: f64,
    active: &Active,
) {
    let nc = grid.n_cells();
    let lam = dt / grid.dx();
    if grid.d() == 1 {
        let span = active.cells.clone();
        if span.is_empty() {
            return;
        }
        let u = &faces.axes[0][span.start..span.end + 1];
        let mut flux = vec![0.0; span.len() + 1];
        for (row, _) in n.chunks_mut(nc).zip(&active.rows).filter(|(_, &on)| on) {
            advect_line(&mut row[span.clone()], u, lam, &mut flux, None);
        }
        return;
    }
    if nc >= PARALLEL_CELLS {
        n.par_chunks_mut(nc)
            .zip(&active.rows)
            .filter(|(_, &on)| on)
            .for_each_init(
                || (Vec::new(), Vec::new()),
                |(f0, f1), (slice, _)| advect_slice(slice, faces, grid, lam, f0, f1),
            );
    } else {
        let (mut f0, mut f1) = (Vec::new(), Vec::new());
        for (slice, _) in n.chunks_mut(nc).zip(&active.rows).filter(|(_, &on)| on) {
            advect_slice(slice, faces, grid, lam, &mut f0, &mut f1);
        }
    }
}

/// Advect a single spatial field, e.g. a density without age structure.
pub(crate) fn advect_field(field: &mut [f64], faces: &FaceVelocities, grid: &Grid, dt: f64) {
    let (mut f0, mut f1) = (Vec::new(), Vec::new());
    advect_slice(field, faces, grid, dt / grid.dx(), &mut f0, &mut f1);
}

#[inline]
fn upwind(u: f64, left: f64, right: f64) -> f64 {
    if u > 0.0 {
        u * left
    } else {
        u * right
    }
}

fn advect_slice(
    s: &mut [f64],
    faces: &FaceVelocities,
    grid: &Grid,
    lam: f64,
    flux0: &mut Vec<f64>,
    flux1: &mut Vec<f64>,
) {
    let nx = grid.n_x();
    let ax0 = &faces.axes[0];
    flux0.resize(nx + 1, 0.0);
    if grid.d() == 1 {
        advect_line(s, &ax0[..nx + 1], lam, flux0, None);
        return;
    }
    // y-fluxes from the old field first; rows are then updated in place.
    let ax1 = &faces.axes[1];
    flux1.resize((nx + 1) * nx, 0.0);
    for f in 1..nx {
        let (below, above) = (&s[(f - 1) * nx..f * nx], &s[f * nx..(f + 1) * nx]);
        let (u, out) = (&ax1[f * nx..(f + 1) * nx], &mut flux1[f * nx..(f + 1) * nx]);
        for (((o, &u), &b), &a) in out.iter_mut().zip(u).zip(below).zip(above) {
            *o = upwind(u, b, a);
        }
    }
    for line in 0..nx {
        let cross = (
            &flux1[line * nx..(line + 1) * nx],
            &flux1[(line + 1) * nx..(line + 2) * nx],
        );
        let u = &ax0[line * (nx + 1)..(line + 1) * (nx + 1)];
        advect_line(
            &mut s[line * nx..(line + 1) * nx],
            u,
            lam,
            flux0,
            Some(cross),
        );
    }
}

/// In-place update of one line. `u` holds the `len + 1` face velocities (the
/// two boundary faces carry no flux); `cross` adds the divergence of
/// precomputed fluxes of the other axis. `flux` is scratch of length `len + 1`.
#[inline]
fn advect_line(
    row: &mut [f64],
    u: &[f64],
    lam: f64,
    flux: &mut [f64],
    cross: Option<(&[f64], &[f64])>,
) {
    let len = row.len();
    let (flux, u) = (&mut flux[..len + 1], &u[..len + 1]);
    flux[0] = 0.0;
    flux[len] = 0.0;
    for ((f, u), pair) in flux[1..len].iter_mut().zip(&u[1..len]).zip(row.windows(2)) {
        *f = upwind(*u, pair[0], pair[1]);
    }
    let div = flux.windows(2).map(|w| w[1] - w[0]);
    match cross {
        None => row.iter_mut().zip(div).for_each(|(v, d)| *v -= lam * d),
        Some((lo, hi)) => row
            .iter_mut()
            .zip(div)
            .zip(lo.iter().zip(hi))
            .for_each(|((v, d), (l, h))| *v -= lam * (d + (h - l))),
    }
}

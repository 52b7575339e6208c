//! Reference solvers.
//!
//! `classical_*` integrates the density-only porous-medium tumor model
//! `∂_t ρ - div(ρ∇p) = ρ Φ(p)` with the same face fluxes as the main solver,
//! so that in the constant-volume case the age dimension is the only
//! difference. `homogeneous_step` is a deliberately independent,
//! straight-line upwind scheme for the space-homogeneous age model.

use crate::error::{Error, Result};
use crate::grid::{gradient_pressure, pressure_of_density, Grid};
use crate::kernels::{advect_field, diffusion_limit};
use crate::params::ParameterSet;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalState {
    pub t: f64,
    pub rho: Vec<f64>,
    pub m: f64,
}

/// Explicit step `ρ' = ρ + dt [div(ρ∇p) + ρ Φ(p)]`, upwind faces as in the
/// main transport kernel.
pub fn classical_step(
    state: &ClassicalState,
    phi: &dyn Fn(f64) -> f64,
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
) -> Result<ClassicalState> {
    let limit = diffusion_limit(grid, params, state.m);
    if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(Error::Cfl {
            kernel: "classical_step",
            dt,
            limit,
        });
    }
    let p = pressure_of_density(&state.rho, state.m)?;
    let source: Vec<f64> = state
        .rho
        .iter()
        .zip(&p)
        .map(|(&r, &pc)| r * phi(pc))
        .collect();
    let faces = gradient_pressure(&p, grid);
    let mut rho = state.rho.clone();
    advect_field(&mut rho, &faces, grid, dt);
    for (r, s) in rho.iter_mut().zip(&source) {
        *r += dt * s;
    }
    Ok(ClassicalState {
        t: state.t + dt,
        rho,
        m: state.m,
    })
}

/// Run the classical model to `t_final` at a fixed `dt` (the last step is
/// shortened to land on `t_final`).
pub fn classical_run(
    rho0: Vec<f64>,
    m: f64,
    phi: &dyn Fn(f64) -> f64,
    grid: &Grid,
    params: &ParameterSet,
    dt: f64,
    t_final: f64,
) -> Result<ClassicalState> {
    let mut state = ClassicalState {
        t: 0.0,
        rho: rho0,
        m,
    };
    while state.t < t_final * (1.0 - 1e-14) {
        let h = dt.min(t_final - state.t);
        state = classical_step(&state, phi, grid, params, h)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousState {
    pub t: f64,
    pub n: Vec<f64>,
}

impl HomogeneousState {
    /// `Σ n dθ`.
    pub fn total(&self, dtheta: f64) -> f64 {
        crate::sum::compensated_sum(self.n.iter().copied()) * dtheta
    }
}

/// One explicit upwind step of `∂_t n + ∂_θ n = -(β + μ) n` with
/// `n(t, 0) = 2 ∫ β n dθ`, all terms evaluated at the old time level.
pub fn homogeneous_step(
    state: &HomogeneousState,
    beta: &dyn Fn(f64) -> f64,
    mu: &dyn Fn(f64) -> f64,
    dt: f64,
    dtheta: f64,
) -> Result<HomogeneousState> {
    if !(dt > 0.0 && dt <= dtheta * (1.0 + 1e-12)) {
        return Err(Error::Cfl {
            kernel: "homogeneous_step",
            dt,
            limit: dtheta,
        });
    }
    let len = state.n.len();
    let lam = dt / dtheta;
    let mut births = 0.0;
    for j in 0..len {
        let theta = (j as f64 + 0.5) * dtheta;
        births += beta(theta) * state.n[j];
    }
    let inflow = 2.0 * births * dtheta;
    let mut next = vec![0.0; len];
    for j in 0..len {
        let theta = (j as f64 + 0.5) * dtheta;
        let upstream = if j == 0 { inflow } else { state.n[j - 1] };
        next[j] = state.n[j]
            - lam * (state.n[j] - upstream)
            - dt * (beta(theta) + mu(theta)) * state.n[j];
    }
    Ok(HomogeneousState {
        t: state.t + dt,
        n: next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::params::{default_parameters, Preset};

    #[test]
    fn zero_density_stays_zero() {
        let grid = Grid::new(GridSpec {
            d: 1,
            n_theta: 2,
            theta_max: 1.0,
            n_x: 20,
            half_width: 1.0,
        })
        .unwrap();
        let params = default_parameters(Preset::Case1);
        let s = ClassicalState {
            t: 0.0,
            rho: vec![0.0; 20],
            m: 5.0,
        };
        let out = classical_step(&s, &|_| 0.3, &grid, &params, 1e-4).unwrap();
        assert!(out.rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn porous_medium_bump_conserves_mass_and_spreads() {
        let grid = Grid::new(GridSpec {
            d: 1,
            n_theta: 2,
            theta_max: 1.0,
            n_x: 100,
            half_width: 1.0,
        })
        .unwrap();
        let params = default_parameters(Preset::Case1);
        let m = 4.0;
        let rho0: Vec<f64> = grid
            .x_centers()
            .iter()
            .map(|x| (0.8 * (1.0 - (x / 0.3).powi(2))).max(0.0))
            .collect();
        let dt = 0.9 * diffusion_limit(&grid, &params, m);
        let out = classical_run(rho0.clone(), m, &|_| 0.0, &grid, &params, dt, 0.2).unwrap();
        let before: f64 = crate::sum::compensated_sum(rho0.iter().copied());
        let after: f64 = crate::sum::compensated_sum(out.rho.iter().copied());
        assert!((after - before).abs() <= 1e-12 * before);
        let support = |r: &[f64]| r.iter().filter(|&&v| v > 1e-12).count();
        assert!(support(&out.rho) > support(&rho0));
    }

    #[test]
    fn classical_cfl_fault() {
        let grid = Grid::new(GridSpec {
            d: 1,
            n_theta: 2,
            theta_max: 1.0,
            n_x: 20,
            half_width: 1.0,
        })
        .unwrap();
        let params = default_parameters(Preset::Case1);
        let s = ClassicalState {
            t: 0.0,
            rho: vec![0.1; 20],
            m: 5.0,
        };
        assert!(classical_step(&s, &|_| 0.0, &grid, &params, 1.0).is_err());
    }

    #[test]
    fn pure_shift_conserves_mass() {
        let dtheta = 0.01;
        let mut n = vec![0.0; 200];
        n[3] = 1.0;
        n[4] = 0.5;
        let mut s = HomogeneousState { t: 0.0, n };
        for _ in 0..50 {
            s = homogeneous_step(&s, &|_| 0.0, &|_| 0.0, dtheta, dtheta).unwrap();
        }
        assert_eq!(s.n[53], 1.0);
        assert_eq!(s.n[54], 0.5);
        assert!((s.total(dtheta) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn no_renewal_before_reaching_division_ages() {
        let dtheta = 0.01;
        let mut n = vec![0.0; 100];
        n[0] = 2.0;
        let beta = |theta: f64| if theta > 0.5 { 1.0 } else { 0.0 };
        let mut s = HomogeneousState { t: 0.0, n };
        for k in 0..49 {
            s = homogeneous_step(&s, &beta, &|_| 0.0, dtheta, dtheta).unwrap();
            assert_eq!(s.n[0], 0.0, "step {k}");
        }
    }

    #[test]
    fn zeroth_moment_mirrors_renewal_bookkeeping() {
        let dtheta = 0.02;
        let beta = |theta: f64| 0.5 + theta;
        let mu = |_: f64| 0.3;
        let n: Vec<f64> = (0..200)
            .map(|j| (-((j as f64 * dtheta - 0.5) / 0.2).powi(2)).exp())
            .collect();
        let s = HomogeneousState { t: 0.0, n };
        let dt = 0.5 * dtheta;
        let next = homogeneous_step(&s, &beta, &mu, dt, dtheta).unwrap();
        let expected: f64 =
            s.n.iter()
                .enumerate()
                .map(|(j, n)| (beta((j as f64 + 0.5) * dtheta) - 0.3) * n * dtheta)
                .sum::<f64>();
        let outflow = dt * s.n[199];
        let change = (next.total(dtheta) - s.total(dtheta) + outflow) / dt;
        assert!((change - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn cfl_fault_above_unit_speed_limit() {
        let s = HomogeneousState {
            t: 0.0,
            n: vec![0.0; 4],
        };
        assert!(homogeneous_step(&s, &|_| 0.0, &|_| 0.0, 0.2, 0.1).is_err());
    }
}

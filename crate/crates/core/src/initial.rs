//! Initial data: a separable, compactly supported bump in space and age.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{density_bound, integrate_density, Grid};
use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    /// Spatial support radius `R0`, below half the box half-width.
    pub radius: f64,
    /// Age support `[0, θ_in]`.
    pub theta_in: f64,
    /// Peak density as a fraction of the density bound.
    pub fraction: f64,
    pub center: [f64; 2],
    /// Width of the smooth fall-off as a fraction of each support, in (0, 1];
    /// 1 gives a single rounded bump, smaller values a flat top.
    pub edge: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            radius: 1.45,
            theta_in: 1.2,
            fraction: 0.9,
            center: [0.0, 0.0],
            edge: 0.2,
        }
    }
}

/// Smooth (C^∞) transition from 0 at `z <= 0` to 1 at `z >= 1`.
fn transition(z: f64) -> f64 {
    let f = |z: f64| if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
    let (a, b) = (f(z), f(1.0 - z));
    a / (a + b)
}

/// Plateau of value 1 on `[0, 1 - edge]` falling smoothly to 0 at `s = 1`.
fn plateau(s: f64, edge: f64) -> f64 {
    transition((1.0 - s) / edge)
}

/// Build `n0(θ, x) = A · plateau(|x - c| / R0) · plateau(θ / θ_in)` with `A` chosen
/// so that `max ρ0 = fraction · min_m ((m-1)/m p_M)^{1/(m-1)}` over `m_values`.
pub fn build_initial(
    grid: &Grid,
    params: &ParameterSet,
    spec: &InitialSpec,
    m_values: &[f64],
) -> Result<Vec<f64>> {
    let InitialSpec {
        radius,
        theta_in,
        fraction,
        center,
        edge,
    } = *spec;
    if !(edge > 0.0 && edge <= 1.0) {
        return Err(Error::config(format!(
            "edge must lie in (0, 1], got {edge}"
        )));
    }
    if !(radius > 0.0 && radius < 0.5 * grid.half_width()) {
        return Err(Error::config(format!(
            "initial radius {radius} must lie in (0, L/2) with L = {}",
            grid.half_width()
        )));
    }
    let reach = center[..grid.d()]
        .iter()
        .map(|c| c.abs())
        .fold(0.0, f64::max)
        + radius;
    if reach >= grid.half_width() - grid.dx() {
        return Err(Error::config(format!(
            "initial support reaches {reach}, beyond the box interior"
        )));
    }
    if !(theta_in > 0.0 && theta_in < grid.theta_max()) {
        return Err(Error::config(format!(
            "initial age support {theta_in} must lie in (0, Θ_max = {})",
            grid.theta_max()
        )));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if m_values.is_empty() {
        return Err(Error::config(
            "at least one exponent is needed to scale the initial data",
        ));
    }
    for &m in m_values {
        crate::grid::check_exponent(m)?;
    }
    let cap = m_values
        .iter()
        .map(|&m| density_bound(m, params.p_max()))
        .fold(f64::INFINITY, f64::min);

    let nc = grid.n_cells();
    let mut n: Vec<f64> = (0..grid.n_len())
        .map(|k| {
            let theta = grid.theta_centers()[k / nc];
            let [x, y] = grid.position(k % nc);
            let r = (x - center[0]).hypot(if grid.d() == 2 { y - center[1] } else { 0.0 });
            plateau(r / radius, edge) * plateau(theta / theta_in, edge)
        })
        .collect();
    let peak = integrate_density(grid, params, &n)
        .into_iter()
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::config("initial bump is not resolved by the grid"));
    }
    let scale = fraction * cap / peak;
    n.iter_mut().for_each(|v| *v *= scale);
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::params::{default_parameters, Preset};

    fn small() -> InitialSpec {
        InitialSpec {
            radius: 0.3,
            theta_in: 1.0,
            edge: 0.3,
            ..InitialSpec::default()
        }
    }

    fn grid() -> Grid {
        Grid::new(GridSpec {
            d: 1,
            n_theta: 32,
            theta_max: 2.5,
            n_x: 64,
            half_width: 2.0,
        })
        .unwrap()
    }

    #[test]
    fn scaled_to_fraction_of_bound() {
        let grid = grid();
        let params = default_parameters(Preset::Case1);
        let n = build_initial(&grid, &params, &small(), &[20.0]).unwrap();
        let peak = integrate_density(&grid, &params, &n)
            .into_iter()
            .fold(0.0, f64::max);
        let target = 0.9 * density_bound(20.0, 1.0);
        assert!((peak - target).abs() <= 1e-12, "{peak} vs {target}");
        let zero = InitialSpec {
            fraction: 0.0,
            ..small()
        };
        assert!(build_initial(&grid, &params, &zero, &[20.0])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn support_is_inside_requested_box() {
        let grid = grid();
        let params = default_parameters(Preset::General);
        let spec = small();
        let n = build_initial(&grid, &params, &spec, &[5.0, 80.0]).unwrap();
        let nc = grid.n_cells();
        for (k, &v) in n.iter().enumerate() {
            let theta = grid.theta_centers()[k / nc];
            let x = grid.x_centers()[k % nc];
            if theta > spec.theta_in || x.abs() > spec.radius {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn rejects_oversized_support() {
        let grid = grid();
        let params = default_parameters(Preset::Case1);
        let wide = InitialSpec {
            radius: 1.5,
            ..small()
        };
        assert!(build_initial(&grid, &params, &wide, &[5.0]).is_err());
        let old = InitialSpec {
            theta_in: 3.0,
            ..small()
        };
        assert!(build_initial(&grid, &params, &old, &[5.0]).is_err());
    }
}

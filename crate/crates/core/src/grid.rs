//! Age × space tensor grid, solver state and the field reconstruction
//! primitives (density quadrature, pressure law, face velocities).
//!
//! Storage is cell centered. The distribution `n` is laid out age-major: the
//! value for age cell `j` and spatial cell `c` lives at `j * n_cells + c`. In
//! two dimensions the spatial index is `c = iy * n_x + ix`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;

/// Serializable grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Spatial dimension, 1 or 2.
    pub d: usize,
    pub n_theta: usize,
    /// End of the age domain `[0, theta_max]`.
    pub theta_max: f64,
    /// Spatial cells per axis.
    pub n_x: usize,
    /// Half width `L` of the box `[-L, L]^d`.
    pub half_width: f64,
}

impl GridSpec {
    /// The reference 1D grid: 256 cells on `[-3, 3]`, 64 age cells on `[0, 4.4]`.
    pub fn baseline_1d() -> Self {
        GridSpec {
            d: 1,
            n_theta: 64,
            theta_max: 4.4,
            n_x: 256,
            half_width: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    spec: GridSpec,
    dtheta: f64,
    dx: f64,
    theta_centers: Vec<f64>,
    x_centers: Vec<f64>,
}

impl Grid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            d,
            n_theta,
            theta_max,
            n_x,
            half_width,
        } = spec;
        if d != 1 && d != 2 {
            return Err(Error::config(format!(
                "spatial dimension must be 1 or 2, got {d}"
            )));
        }
        if n_theta < 2 || n_x < 3 {
            return Err(Error::config(format!(
                "grid too small: n_theta = {n_theta} (need >= 2), n_x = {n_x} (need >= 3)"
            )));
        }
        if !(theta_max.is_finite() && theta_max > 0.0) {
            return Err(Error::config(format!(
                "theta_max must be finite and > 0, got {theta_max}"
            )));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::config(format!(
                "half_width must be finite and > 0, got {half_width}"
            )));
        }
        let dtheta = theta_max / n_theta as f64;
        let dx = 2.0 * half_width / n_x as f64;
        Ok(Grid {
            spec,
            dtheta,
            dx,
            theta_centers: (0..n_theta).map(|j| (j as f64 + 0.5) * dtheta).collect(),
            x_centers: (0..n_x)
                .map(|i| -half_width + (i as f64 + 0.5) * dx)
                .collect(),
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn n_theta(&self) -> usize {
        self.spec.n_theta
    }

    pub fn theta_max(&self) -> f64 {
        self.spec.theta_max
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn n_x(&self) -> usize {
        self.spec.n_x
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn theta_centers(&self) -> &[f64] {
        &self.theta_centers
    }

    pub fn x_centers(&self) -> &[f64] {
        &self.x_centers
    }

    /// Number of spatial cells, `n_x^d`.
    pub fn n_cells(&self) -> usize {
        self.spec.n_x.pow(self.spec.d as u32)
    }

    /// Spatial cell measure `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.spec.d as i32)
    }

    /// Length of the distribution array.
    pub fn n_len(&self) -> usize {
        self.spec.n_theta * self.n_cells()
    }

    /// Cell-center coordinates of spatial cell `c` (second entry is 0 in 1D).
    pub fn position(&self, c: usize) -> [f64; 2] {
        let nx = self.spec.n_x;
        match self.spec.d {
            1 => [self.x_centers[c], 0.0],
            _ => [self.x_centers[c % nx], self.x_centers[c / nx]],
        }
    }

    pub fn radius(&self, c: usize) -> f64 {
        let [x, y] = self.position(c);
        x.hypot(y)
    }

    /// Whether spatial cell `c` touches the box edge.
    pub fn is_edge_cell(&self, c: usize) -> bool {
        let nx = self.spec.n_x;
        let edge = |i: usize| i == 0 || i == nx - 1;
        match self.spec.d {
            1 => edge(c),
            _ => edge(c % nx) || edge(c / nx),
        }
    }

    /// Quadrature weights `V(θ_j) dθ` of the density integral.
    pub fn volume_weights(&self, params: &ParameterSet) -> Vec<f64> {
        self.theta_centers
            .iter()
            .map(|&t| params.volume(t) * self.dtheta)
            .collect()
    }
}

/// Cell distribution plus derived density and pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    /// Pressure exponent `m > 2`.
    pub m: f64,
    pub n: Vec<f64>,
    pub rho: Vec<f64>,
    pub p: Vec<f64>,
}

impl State {
    /// Build a state and derive `ρ` and `p` from `n`.
    pub fn new(grid: &Grid, params: &ParameterSet, n: Vec<f64>, m: f64, t: f64) -> Result<Self> {
        if n.len() != grid.n_len() {
            return Err(Error::GridMismatch(format!(
                "distribution has {} entries, grid expects {}",
                n.len(),
                grid.n_len()
            )));
        }
        check_exponent(m)?;
        let rho = integrate_density(grid, params, &n);
        let p = pressure_of_density(&rho, m)?;
        Ok(State { t, m, n, rho, p })
    }

    /// Recompute `ρ` and `p` from `n`.
    pub fn refresh(&mut self, grid: &Grid, params: &ParameterSet) {
        let weights = grid.volume_weights(params);
        density_into(grid, &weights, &self.n, &mut self.rho);
        pressure_into(&self.rho, self.m, &mut self.p);
    }

    /// `v = ρ^m`, whose gradient equals `ρ ∇p`.
    pub fn v(&self) -> Vec<f64> {
        self.rho.iter().map(|r| r.powf(self.m)).collect()
    }

    /// Age slice `j` of the distribution.
    pub fn age_slice<'a>(&'a self, grid: &Grid, j: usize) -> &'a [f64] {
        let nc = grid.n_cells();
        &self.n[j * nc..(j + 1) * nc]
    }
}

pub(crate) fn check_exponent(m: f64) -> Result<()> {
    if !(m.is_finite() && m > 2.0) {
        return Err(Error::config(format!(
            "pressure exponent must satisfy m > 2, got m = {m}"
        )));
    }
    Ok(())
}

/// Midpoint quadrature `ρ(x) = Σ_j V(θ_j) n(θ_j, x) dθ`.
pub fn integrate_density(grid: &Grid, params: &ParameterSet, n: &[f64]) -> Vec<f64> {
    let mut rho = vec![0.0; grid.n_cells()];
    density_into(grid, &grid.volume_weights(params), n, &mut rho);
    rho
}

/// Density with precomputed weights, written into `out` in fixed age order.
pub fn density_into(grid: &Grid, weights: &[f64], n: &[f64], out: &mut [f64]) {
    let nc = grid.n_cells();
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &w) in weights.iter().enumerate() {
        let slice = &n[j * nc..(j + 1) * nc];
        for (acc, &value) in out.iter_mut().zip(slice) {
            *acc += w * value;
        }
    }
}

/// Pressure law `p = m/(m-1) ρ^{m-1}`.
pub fn pressure_of_density(rho: &[f64], m: f64) -> Result<Vec<f64>> {
    check_exponent(m)?;
    let mut p = vec![0.0; rho.len()];
    pressure_into(rho, m, &mut p);
    Ok(p)
}

pub(crate) fn pressure_into(rho: &[f64], m: f64, out: &mut [f64]) {
    let scale = m / (m - 1.0);
    for (p, &r) in out.iter_mut().zip(rho) {
        *p = if r > 0.0 {
            scale * r.powf(m - 1.0)
        } else {
            0.0
        };
    }
}

/// Density at which the pressure law reaches `p_M`,
/// `((m-1)/m · p_M)^{1/(m-1)}`.
pub fn density_bound(m: f64, p_max: f64) -> f64 {
    ((m - 1.0) / m * p_max).powf(1.0 / (m - 1.0))
}

/// Transport velocity `-∇p` on cell faces.
///
/// Axis 0 faces of line `iy` are stored at `iy * (n_x + 1) + f`, axis 1
/// faces of column `ix` at `f * n_x + ix`; face `f` separates cells `f - 1`
/// and `f`. Boundary faces carry zero velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocities {
    pub axes: Vec<Vec<f64>>,
}

impl FaceVelocities {
    pub fn max_abs(&self) -> f64 {
        self.axes
            .iter()
            .flatten()
            .fold(0.0, |acc, u| acc.max(u.abs()))
    }
}

pub fn gradient_pressure(p: &[f64], grid: &Grid) -> FaceVelocities {
    let mut faces = FaceVelocities { axes: Vec::new() };
    gradient_into(p, grid, &mut faces);
    faces
}

pub(crate) fn gradient_into(p: &[f64], grid: &Grid, faces: &mut FaceVelocities) {
    let nx = grid.n_x();
    let inv_dx = 1.0 / grid.dx();
    let lines = if grid.d() == 1 { 1 } else { nx };
    faces.axes.resize(grid.d(), Vec::new());

    let ax0 = &mut faces.axes[0];
    ax0.clear();
    ax0.resize(lines * (nx + 1), 0.0);
    for line in 0..lines {
        let row = &p[line * nx..(line + 1) * nx];
        let out = &mut ax0[line * (nx + 1)..(line + 1) * (nx + 1)];
        for f in 1..nx {
            out[f] = -(row[f] - row[f - 1]) * inv_dx;
        }
    }
    if grid.d() == 2 {
        let ax1 = &mut faces.axes[1];
        ax1.clear();
        ax1.resize((nx + 1) * nx, 0.0);
        for f in 1..nx {
            for ix in 0..nx {
                ax1[f * nx + ix] = -(p[f * nx + ix] - p[(f - 1) * nx + ix]) * inv_dx;
            }
        }
    }
}

/// Extent of the support in space and age.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportRadii {
    /// Largest `|x|` with `ρ > threshold`; `-∞` if none.
    pub x_radius: f64,
    /// Largest age-cell center with `max_x n > threshold`; `-∞` if none.
    pub theta_extent: f64,
}

pub fn support_radii(state: &State, grid: &Grid, threshold: f64) -> SupportRadii {
    let x_radius = state
        .rho
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > threshold)
        .map(|(c, _)| grid.radius(c))
        .fold(f64::NEG_INFINITY, f64::max);
    let nc = grid.n_cells();
    let theta_extent = (0..grid.n_theta())
        .rev()
        .find(|&j| state.n[j * nc..(j + 1) * nc].iter().any(|&v| v > threshold))
        .map_or(f64::NEG_INFINITY, |j| grid.theta_centers()[j]);
    SupportRadii {
        x_radius,
        theta_extent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{default_parameters, Preset, PresetScalars};

    fn grid_1d(n_theta: usize, theta_max: f64, n_x: usize) -> Grid {
        Grid::new(GridSpec {
            d: 1,
            n_theta,
            theta_max,
            n_x,
            half_width: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        let ok = GridSpec {
            d: 1,
            n_theta: 4,
            theta_max: 1.0,
            n_x: 8,
            half_width: 1.0,
        };
        assert!(Grid::new(ok).is_ok());
        assert!(Grid::new(GridSpec { d: 3, ..ok }).is_err());
        assert!(Grid::new(GridSpec { n_x: 2, ..ok }).is_err());
        assert!(Grid::new(GridSpec {
            theta_max: -1.0,
            ..ok
        })
        .is_err());
    }

    #[test]
    fn zero_distribution_gives_zero_density() {
        let grid = grid_1d(8, 2.0, 5);
        let params = default_parameters(Preset::General);
        let rho = integrate_density(&grid, &params, &vec![0.0; grid.n_len()]);
        assert!(rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn single_bin_density() {
        let grid = grid_1d(8, 2.0, 5);
        let params = default_parameters(Preset::General);
        let mut n = vec![0.0; grid.n_len()];
        let (j, c, eta) = (3, 2, 0.7);
        n[j * grid.n_cells() + c] = eta;
        let rho = integrate_density(&grid, &params, &n);
        let expected = params.volume(grid.theta_centers()[j]) * eta * grid.dtheta();
        assert_eq!(rho[c], expected);
        assert_eq!(rho.iter().filter(|&&r| r != 0.0).count(), 1);
    }

    #[test]
    fn density_quadrature_is_second_order() {
        // n ≡ 1 on [0, Θ], V = V0 (2 - e^{-kθ}): ρ = V0 (2Θ - (1 - e^{-kΘ})/k).
        let scalars = PresetScalars {
            k: 1.3,
            ..PresetScalars::default()
        };
        let params = crate::params::ParameterSet::from_preset(Preset::General, &scalars).unwrap();
        let theta_end = 2.0;
        let exact = params.v0() * (2.0 * theta_end - (1.0 - (-1.3f64 * theta_end).exp()) / 1.3);
        let mut errors = Vec::new();
        for n_theta in [16, 32, 64, 128] {
            let grid = grid_1d(n_theta, theta_end, 3);
            let rho = integrate_density(&grid, &params, &vec![1.0; grid.n_len()]);
            errors.push((rho[1] - exact).abs());
        }
        for pair in errors.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(
                (order - 2.0).abs() < 0.05,
                "order {order}, errors {errors:?}"
            );
        }
    }

    #[test]
    fn density_brackets_cell_count() {
        let grid = grid_1d(16, 3.0, 4);
        let params = default_parameters(Preset::General);
        let n: Vec<f64> = (0..grid.n_len())
            .map(|i| ((i * 7) % 5) as f64 * 0.1)
            .collect();
        let rho = integrate_density(&grid, &params, &n);
        let nc = grid.n_cells();
        for c in 0..nc {
            let count: f64 = (0..16).map(|j| n[j * nc + c] * grid.dtheta()).sum();
            assert!(rho[c] >= params.v0() * count - 1e-14);
            assert!(rho[c] <= 2.0 * params.v0() * count + 1e-14);
        }
    }

    #[test]
    fn pressure_law_values() {
        assert_eq!(pressure_of_density(&[0.0], 3.0).unwrap(), vec![0.0]);
        assert_eq!(pressure_of_density(&[1.0], 3.0).unwrap(), vec![1.5]);
        let rho = (0.8f64).powf(0.25);
        let p = pressure_of_density(&[rho], 5.0).unwrap()[0];
        assert!((p - 1.0).abs() < 1e-14, "{p}");
        assert!((density_bound(5.0, 1.0) - rho).abs() < 1e-15);
        assert!(matches!(
            pressure_of_density(&[0.5], 2.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_pressure_has_zero_velocity() {
        let grid = grid_1d(2, 1.0, 8);
        let faces = gradient_pressure(&[0.4; 8], &grid);
        assert!(faces.axes[0].iter().all(|&u| u == 0.0));
        assert_eq!(faces.axes[0].len(), 9);
    }

    #[test]
    fn linear_pressure_2d_velocity() {
        let grid = Grid::new(GridSpec {
            d: 2,
            n_theta: 2,
            theta_max: 1.0,
            n_x: 6,
            half_width: 1.5,
        })
        .unwrap();
        let slope = 0.7;
        let p: Vec<f64> = (0..grid.n_cells())
            .map(|c| slope * grid.position(c)[0] + 2.0)
            .collect();
        let faces = gradient_pressure(&p, &grid);
        let nx = grid.n_x();
        for iy in 0..nx {
            for f in 0..=nx {
                let u = faces.axes[0][iy * (nx + 1) + f];
                if f == 0 || f == nx {
                    assert_eq!(u, 0.0);
                } else {
                    assert!((u + slope).abs() < 1e-12, "{u}");
                }
            }
        }
        assert!(faces.axes[1].iter().all(|&u| u.abs() < 1e-12));
    }

    #[test]
    fn face_velocities_match_difference_table() {
        let grid = grid_1d(2, 1.0, 8);
        let p: Vec<f64> = (0..8)
            .map(|i| (0.3 * i as f64).sin() + 0.1 * (i as f64).powi(2))
            .collect();
        let faces = gradient_pressure(&p, &grid);
        // Difference table written out by hand for the 7 interior faces.
        let mut expected = vec![0.0; 9];
        for f in 1..8 {
            expected[f] = (p[f - 1] - p[f]) / grid.dx();
        }
        for (u, e) in faces.axes[0].iter().zip(&expected) {
            assert!((u - e).abs() < 1e-14);
        }
    }

    #[test]
    fn support_of_empty_state_is_sentinel() {
        let grid = grid_1d(4, 1.0, 6);
        let params = default_parameters(Preset::Case1);
        let state = State::new(&grid, &params, vec![0.0; grid.n_len()], 3.0, 0.0).unwrap();
        let s = support_radii(&state, &grid, 1e-12);
        assert_eq!(s.x_radius, f64::NEG_INFINITY);
        assert_eq!(s.theta_extent, f64::NEG_INFINITY);
    }

    #[test]
    fn support_of_box_profile() {
        let grid = Grid::new(GridSpec {
            d: 1,
            n_theta: 20,
            theta_max: 2.0,
            n_x: 40,
            half_width: 2.0,
        })
        .unwrap();
        let params = default_parameters(Preset::Case1);
        let (r0, theta_in) = (0.6, 0.75);
        let nc = grid.n_cells();
        let mut n = vec![0.0; grid.n_len()];
        for j in 0..grid.n_theta() {
            for c in 0..nc {
                if grid.theta_centers()[j] <= theta_in && grid.radius(c) <= r0 {
                    n[j * nc + c] = 0.3;
                }
            }
        }
        let state = State::new(&grid, &params, n, 4.0, 0.0).unwrap();
        let s = support_radii(&state, &grid, 1e-12);
        assert!(s.x_radius <= r0 + grid.dx() && s.x_radius > r0 - grid.dx());
        assert!(s.theta_extent <= theta_in + grid.dtheta());
    }
}

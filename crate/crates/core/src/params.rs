//! Model coefficient functions and scalar bounds.
//!
//! A [`ParameterSet`] bundles the aging speed `r(p)`, the division rate
//! `ν(θ, p)`, the death rate `μ(θ)` and the cell volume `V(θ)` (with its
//! derivative) together with the scalar bounds the solver relies on for step
//! control. Sets come from one of the built-in presets, from tabulated
//! samples, or from arbitrary closures; [`validate_assumptions`] checks any of
//! them by sampling.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type DivisionFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tolerance of the sampled sign and monotonicity checks.
pub const VALIDATION_TOL: f64 = 1e-9;

/// In the volume-preserving preset division is only switched on once
/// `2 V0 - V(θ) <= CASE2_SATURATION_TOL * V0`.
pub const CASE2_SATURATION_TOL: f64 = 1e-9;

/// Sample count used for the sampled constants (`C_F`, Gronwall rate).
const CONSTANT_SAMPLES: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Constant cell volume; growth is driven by division.
    Case1,
    /// Volume-preserving mitosis; growth is driven by cell volume increase.
    Case2,
    /// Age-dependent volume and unrestricted division.
    General,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(Preset::Case1),
            "case2" => Ok(Preset::Case2),
            "general" => Ok(Preset::General),
            other => Err(Error::config(format!(
                "unknown parameter preset `{other}` (expected case1, case2 or general)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Case1 => "case1",
            Preset::Case2 => "case2",
            Preset::General => "general",
        })
    }
}

/// Scalars of the preset families.
///
/// `r(p) = r_max (1 - p/p_M)_+`, `ν(θ,p) = ν_max s(θ) (1 - p/p_M)_+²` with `s`
/// a cubic smoothstep over `[θ_div - w, θ_div + w]`, `μ = μ0`, and either
/// `V = V0` or `V = V0 (2 - e^{-kθ})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetScalars {
    pub p_max: f64,
    pub r_max: f64,
    pub nu_max: f64,
    pub mu0: f64,
    pub v0: f64,
    pub k: f64,
    pub theta_div: f64,
    pub w: f64,
}

impl Default for PresetScalars {
    fn default() -> Self {
        PresetScalars {
            p_max: 1.0,
            r_max: 6.0,
            nu_max: 20.0,
            mu0: 0.0,
            v0: 1.0,
            k: 1.0,
            theta_div: 0.8,
            w: 0.2,
        }
    }
}

impl PresetScalars {
    pub fn check(&self) -> Result<()> {
        let positive = [
            ("p_max", self.p_max),
            ("r_max", self.r_max),
            ("v0", self.v0),
            ("k", self.k),
            ("w", self.w),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        let nonnegative = [("nu_max", self.nu_max), ("mu0", self.mu0)];
        for (name, value) in nonnegative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if !(self.theta_div.is_finite() && self.theta_div - self.w >= 0.0) {
            return Err(Error::config(format!(
                "division ramp [theta_div - w, theta_div + w] must start at a nonnegative age, got theta_div = {}, w = {}",
                self.theta_div, self.w
            )));
        }
        Ok(())
    }
}

/// Scalar bounds that accompany a set of coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// Homeostatic pressure `p_M`.
    pub p_max: f64,
    /// Bound on the aging speed.
    pub r_max: f64,
    /// Bound on the death rate.
    pub mu_max: f64,
    /// Newborn cell volume `V(0)`.
    pub v0: f64,
    /// Bound on the division rate.
    pub nu_max: f64,
    /// End of the age interval sampled by validation and by the sampled constants.
    pub theta_probe: f64,
}

/// Piecewise-linear table over strictly increasing abscissae, constant
/// extrapolation outside the sampled range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::config("a table needs at least two samples"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::config("table samples must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("table abscissae must be strictly increasing"));
        }
        Ok(Table {
            xs: points.iter().map(|p| p.0).collect(),
            ys: points.iter().map(|p| p.1).collect(),
        })
    }

    fn segment(&self, x: f64) -> Option<usize> {
        let last = self.xs.len() - 1;
        if x <= self.xs[0] || x >= self.xs[last] {
            return None;
        }
        // partition_point gives the first abscissa > x; x is strictly inside.
        Some(self.xs.partition_point(|&xi| xi <= x) - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        match self.segment(x) {
            None if x <= self.xs[0] => self.ys[0],
            None => self.ys[last],
            Some(i) => {
                let s = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
                self.ys[i] + s * (self.ys[i + 1] - self.ys[i])
            }
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self.segment(x) {
            None => 0.0,
            Some(i) => (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i]),
        }
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    pub fn y_max(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tabulated coefficient functions. The division rate is separable,
/// `ν(θ, p) = age_factor(θ) · pressure_factor(p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedFunctions {
    pub p_max: f64,
    pub aging: Table,
    pub division_age: Table,
    pub division_pressure: Table,
    pub death: Table,
    pub volume: Table,
}

/// Coefficient functions plus scalar bounds. Immutable once built and cheap
/// to clone (the functions are reference counted).
#[derive(Clone)]
pub struct ParameterSet {
    bounds: Bounds,
    aging: ScalarFn,
    division: DivisionFn,
    /// `(a, q)` with `ν(θ, p) = a(θ) q(p)`, when known.
    division_factors: Option<(ScalarFn, ScalarFn)>,
    death: ScalarFn,
    volume: ScalarFn,
    volume_slope: ScalarFn,
}

impl fmt::Debug for ParameterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterSet")
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

fn smoothstep(lo: f64, hi: f64, x: f64) -> f64 {
    if x <= lo {
        0.0
    } else if x >= hi {
        1.0
    } else {
        let z = (x - lo) / (hi - lo);
        z * z * (3.0 - 2.0 * z)
    }
}

/// Built-in preset with the default scalars.
pub fn default_parameters(preset: Preset) -> ParameterSet {
    ParameterSet::from_preset(preset, &PresetScalars::default())
        .expect("default preset scalars are valid")
}

/// Slow rates (`r_max = ν_max = 1`, `μ0 = 0.1`, `θ_div = 0.5`, `w = 0.25`)
/// for unit tests that want large stable steps.
#[cfg(test)]
pub(crate) fn mild_parameters(preset: Preset) -> ParameterSet {
    let scalars = PresetScalars {
        r_max: 1.0,
        nu_max: 1.0,
        mu0: 0.1,
        theta_div: 0.5,
        w: 0.25,
        ..PresetScalars::default()
    };
    ParameterSet::from_preset(preset, &scalars).unwrap()
}

impl ParameterSet {
    /// Build from arbitrary closures. No assumption checking happens here.
    pub fn from_functions(
        bounds: Bounds,
        aging: impl Fn(f64) -> f64 + Send + Sync + 'static,
        division: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        death: impl Fn(f64) -> f64 + Send + Sync + 'static,
        volume: impl Fn(f64) -> f64 + Send + Sync + 'static,
        volume_slope: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ParameterSet {
            bounds,
            aging: Arc::new(aging),
            division: Arc::new(division),
            division_factors: None,
            death: Arc::new(death),
            volume: Arc::new(volume),
            volume_slope: Arc::new(volume_slope),
        }
    }

    pub fn from_preset(preset: Preset, s: &PresetScalars) -> Result<Self> {
        s.check()?;
        let PresetScalars {
            p_max,
            r_max,
            nu_max,
            mu0,
            v0,
            k,
            theta_div,
            w,
        } = *s;

        let (ramp_lo, ramp_hi) = match preset {
            Preset::Case2 => {
                // 2V0 - V(θ) = V0 e^{-kθ}; division waits until that is negligible.
                let saturated = (1.0 / CASE2_SATURATION_TOL).ln() / k;
                let lo = (theta_div - w).max(saturated);
                (lo, lo + 2.0 * w)
            }
            _ => (theta_div - w, theta_div + w),
        };
        let bounds = Bounds {
            p_max,
            r_max,
            mu_max: mu0,
            v0,
            nu_max,
            theta_probe: 10.0 * theta_div,
        };
        let aging = move |p: f64| r_max * (1.0 - p / p_max).max(0.0);
        let age_factor = move |theta: f64| nu_max * smoothstep(ramp_lo, ramp_hi, theta);
        let pressure_factor = move |p: f64| {
            let q = (1.0 - p / p_max).max(0.0);
            q * q
        };
        let division = move |theta: f64, p: f64| age_factor(theta) * pressure_factor(p);
        let death = move |_theta: f64| mu0;
        let set = match preset {
            Preset::Case1 => {
                ParameterSet::from_functions(bounds, aging, division, death, move |_| v0, |_| 0.0)
            }
            Preset::Case2 | Preset::General => ParameterSet::from_functions(
                bounds,
                aging,
                division,
                death,
                move |theta| v0 * (2.0 - (-k * theta).exp()),
                move |theta| v0 * k * (-k * theta).exp(),
            ),
        };
        Ok(set.with_division_factors(age_factor, pressure_factor))
    }

    pub fn from_tables(tables: TabulatedFunctions) -> Result<Self> {
        let TabulatedFunctions {
            p_max,
            aging,
            division_age,
            division_pressure,
            death,
            volume,
        } = tables;
        if !(p_max.is_finite() && p_max > 0.0) {
            return Err(Error::config(format!(
                "p_max must be finite and > 0, got {p_max}"
            )));
        }
        let v0 = volume.eval(0.0);
        if v0 <= 0.0 {
            return Err(Error::config(format!(
                "tabulated V(0) must be > 0, got {v0}"
            )));
        }
        let theta_probe = division_age.x_max().max(death.x_max()).max(volume.x_max());
        let bounds = Bounds {
            p_max,
            r_max: aging.y_max(),
            mu_max: death.y_max(),
            v0,
            nu_max: division_age.y_max().max(0.0) * division_pressure.y_max().max(0.0),
            theta_probe,
        };
        let volume_slope = volume.clone();
        let (age_table, pressure_table) = (division_age.clone(), division_pressure.clone());
        Ok(ParameterSet::from_functions(
            bounds,
            move |p| aging.eval(p),
            move |theta, p| division_age.eval(theta) * division_pressure.eval(p),
            move |theta| death.eval(theta),
            move |theta| volume.eval(theta),
            move |theta| volume_slope.slope(theta),
        )
        .with_division_factors(
            move |theta| age_table.eval(theta),
            move |p| pressure_table.eval(p),
        ))
    }

    /// Declare `ν(θ, p) = age(θ) · pressure(p)`, letting the kernels evaluate
    /// the two factors once per age row and once per cell. The factors must
    /// reproduce the division closure.
    pub fn with_division_factors(
        mut self,
        age: impl Fn(f64) -> f64 + Send + Sync + 'static,
        pressure: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.division_factors = Some((Arc::new(age), Arc::new(pressure)));
        self
    }

    pub(crate) fn division_factors(&self) -> Option<(&ScalarFn, &ScalarFn)> {
        self.division_factors.as_ref().map(|(a, q)| (a, q))
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn p_max(&self) -> f64 {
        self.bounds.p_max
    }

    pub fn r_max(&self) -> f64 {
        self.bounds.r_max
    }

    pub fn mu_max(&self) -> f64 {
        self.bounds.mu_max
    }

    pub fn nu_max(&self) -> f64 {
        self.bounds.nu_max
    }

    pub fn v0(&self) -> f64 {
        self.bounds.v0
    }

    /// Aging speed `r(p)`.
    #[inline]
    pub fn r(&self, p: f64) -> f64 {
        (self.aging)(p)
    }

    /// Division rate `ν(θ, p)`.
    #[inline]
    pub fn nu(&self, theta: f64, p: f64) -> f64 {
        (self.division)(theta, p)
    }

    /// Death rate `μ(θ)`.
    #[inline]
    pub fn mu(&self, theta: f64) -> f64 {
        (self.death)(theta)
    }

    /// Cell volume `V(θ)`.
    #[inline]
    pub fn volume(&self, theta: f64) -> f64 {
        (self.volume)(theta)
    }

    /// `V'(θ)`.
    #[inline]
    pub fn volume_slope(&self, theta: f64) -> f64 {
        (self.volume_slope)(theta)
    }

    /// Net volume production per cell,
    /// `F(θ,p) = r(p)[V'(θ) + (2V(0) - V(θ)) ν(θ,p)] - μ(θ) V(θ)`.
    pub fn eval_f(&self, theta: f64, p: f64) -> Result<f64> {
        if !(theta >= 0.0) {
            return Err(Error::Domain {
                function: "F",
                detail: format!("age {theta} < 0"),
            });
        }
        if !(0.0..=self.bounds.p_max).contains(&p) {
            return Err(Error::Domain {
                function: "F",
                detail: format!("pressure {p} outside [0, {}]", self.bounds.p_max),
            });
        }
        Ok(self.f_unchecked(theta, p))
    }

    /// `F` with the pressure clamped into `[0, p_M]`; used where a field may
    /// exceed `p_M` by round-off.
    #[inline]
    pub fn f_clamped(&self, theta: f64, p: f64) -> f64 {
        self.f_unchecked(theta, p.clamp(0.0, self.bounds.p_max))
    }

    #[inline]
    fn f_unchecked(&self, theta: f64, p: f64) -> f64 {
        let v0 = self.volume(0.0);
        let v = self.volume(theta);
        self.r(p) * (self.volume_slope(theta) + (2.0 * v0 - v) * self.nu(theta, p))
            - self.mu(theta) * v
    }

    fn theta_samples(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let end = self.bounds.theta_probe;
        (0..n).map(move |i| end * i as f64 / (n - 1) as f64)
    }

    fn p_samples(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let end = self.bounds.p_max;
        (0..n).map(move |i| end * i as f64 / (n - 1) as f64)
    }

    /// `C_F = sup|V'| + V0 sup ν`, so that `F(θ,p) <= C_F r(p)`.
    pub fn growth_constant(&self) -> f64 {
        let slope = self
            .theta_samples(CONSTANT_SAMPLES)
            .map(|t| self.volume_slope(t).abs())
            .fold(0.0, f64::max);
        slope + self.bounds.v0 * self.bounds.nu_max
    }

    /// Sampled `sup F⁺ / V0`: exponential rate bounding the growth of `∫ρ`.
    pub fn gronwall_rate(&self) -> f64 {
        let mut sup = 0.0f64;
        for theta in self.theta_samples(CONSTANT_SAMPLES) {
            for p in self.p_samples(CONSTANT_SAMPLES) {
                sup = sup.max(self.f_unchecked(theta, p));
            }
        }
        sup / self.bounds.v0
    }
}

/// A sample at which an assumption fails.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleViolation {
    pub location: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub first_violation: Option<SampleViolation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    /// Sampled `sup |μ'|`. Reported only; nothing in the solver consumes it.
    pub mu_slope_sup: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct CheckBuilder {
    name: &'static str,
    first: Option<SampleViolation>,
}

impl CheckBuilder {
    fn new(name: &'static str) -> Self {
        CheckBuilder { name, first: None }
    }

    fn require(&mut self, ok: bool, location: impl FnOnce() -> String, value: f64) {
        if !ok && self.first.is_none() {
            self.first = Some(SampleViolation {
                location: location(),
                value,
            });
        }
    }

    fn finish(self) -> AssumptionCheck {
        AssumptionCheck {
            name: self.name,
            passed: self.first.is_none(),
            first_violation: self.first,
        }
    }
}

/// Check the coefficient assumptions by sampling `n_samples` uniform points
/// over `[0, p_M]` and `[0, θ_probe]` (at least two of each).
pub fn validate_assumptions(params: &ParameterSet, n_samples: usize) -> ValidationReport {
    let n = n_samples.max(2);
    let b = *params.bounds();
    let tol = VALIDATION_TOL;
    let ps: Vec<f64> = params.p_samples(n).collect();
    let thetas: Vec<f64> = params.theta_samples(n).collect();

    let mut r_bounds = CheckBuilder::new("r_bounds");
    let mut r_mono = CheckBuilder::new("r_nonincreasing");
    for (i, &p) in ps.iter().enumerate() {
        let r = params.r(p);
        r_bounds.require(r >= -tol && r <= b.r_max + tol, || format!("p = {p}"), r);
        if i > 0 {
            let dr = r - params.r(ps[i - 1]);
            r_mono.require(dr <= tol, || format!("p in [{}, {p}]", ps[i - 1]), dr);
        }
    }
    let mut r_zero = CheckBuilder::new("r_vanishes_at_p_max");
    let r_top = params.r(b.p_max);
    r_zero.require(r_top.abs() <= tol, || format!("p = {}", b.p_max), r_top);

    let mut nu_bounds = CheckBuilder::new("nu_bounds");
    let mut nu_mono = CheckBuilder::new("nu_nonincreasing_in_p");
    let mut nu_zero = CheckBuilder::new("nu_vanishes_at_p_max");
    for &theta in &thetas {
        let mut prev = None;
        for &p in &ps {
            let nu = params.nu(theta, p);
            nu_bounds.require(
                nu >= -tol && nu <= b.nu_max * (1.0 + tol) + tol,
                || format!("theta = {theta}, p = {p}"),
                nu,
            );
            if let Some((p_prev, nu_prev)) = prev {
                let dnu = nu - nu_prev;
                nu_mono.require(
                    dnu <= tol,
                    || format!("theta = {theta}, p in [{p_prev}, {p}]"),
                    dnu,
                );
            }
            prev = Some((p, nu));
        }
        let top = params.nu(theta, b.p_max);
        nu_zero.require(
            top.abs() <= tol,
            || format!("theta = {theta}, p = {}", b.p_max),
            top,
        );
    }

    let mut mu_bounds = CheckBuilder::new("mu_bounds");
    let mut mu_slope = CheckBuilder::new("mu_slope_finite");
    let mut mu_slope_sup = 0.0f64;
    let mut v_zero = CheckBuilder::new("v_at_zero");
    let mut v_mono = CheckBuilder::new("v_nondecreasing");
    let mut v_bounds = CheckBuilder::new("v_bounds");
    let mut v_slope = CheckBuilder::new("v_slope_nonnegative");
    let v_origin = params.volume(0.0);
    v_zero.require(
        (v_origin - b.v0).abs() <= tol * b.v0.max(1.0),
        || "theta = 0".into(),
        v_origin,
    );
    for (i, &theta) in thetas.iter().enumerate() {
        let mu = params.mu(theta);
        mu_bounds.require(
            mu >= -tol && mu <= b.mu_max + tol,
            || format!("theta = {theta}"),
            mu,
        );
        let v = params.volume(theta);
        v_bounds.require(
            v >= b.v0 * (1.0 - tol) && v <= 2.0 * b.v0 * (1.0 + tol),
            || format!("theta = {theta}"),
            v,
        );
        let dv = params.volume_slope(theta);
        v_slope.require(dv >= -tol, || format!("theta = {theta}"), dv);
        if i > 0 {
            let prev = thetas[i - 1];
            let h = theta - prev;
            let dmu = (mu - params.mu(prev)) / h;
            mu_slope.require(
                dmu.is_finite(),
                || format!("theta in [{prev}, {theta}]"),
                dmu,
            );
            if dmu.is_finite() {
                mu_slope_sup = mu_slope_sup.max(dmu.abs());
            }
            let dvol = v - params.volume(prev);
            v_mono.require(dvol >= -tol, || format!("theta in [{prev}, {theta}]"), dvol);
        }
    }

    ValidationReport {
        checks: vec![
            r_bounds.finish(),
            r_mono.finish(),
            r_zero.finish(),
            nu_bounds.finish(),
            nu_mono.finish(),
            nu_zero.finish(),
            mu_bounds.finish(),
            mu_slope.finish(),
            v_zero.finish(),
            v_mono.finish(),
            v_bounds.finish(),
            v_slope.finish(),
        ],
        mu_slope_sup,
    }
}

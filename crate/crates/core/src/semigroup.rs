//! The evolution h-semigroup `T_t` on sampled functions `R_* -> R^n`, the
//! classical evolution semigroup `S_t` of the reparametrized family, the
//! conjugacy `F w = w ∘ mu^{-1}` between them, and a difference quotient for
//! the generator.
//!
//! Functions are sampled on grids that are uniform in mu-coordinates. The
//! shift `s -> s *_h t^{*-1}` is then a translation by `mu(t)`, exact on the
//! grid whenever `mu(t)` is a multiple of the spacing. Off-grid values are
//! linearly interpolated in mu, and functions are extended by zero outside
//! the grid.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::algebra::HPoint;
use crate::error::{Error, Result};
use crate::family::EvolutionFamily;
use crate::growth_rate::{GrowthRate, RateId};

/// Ends of a function without a decay envelope must be below this fraction
/// of its sup norm.
pub const C0_END_FRACTION: f64 = 1e-6;

/// Relative distance to a grid node below which a position snaps onto it.
const SNAP: f64 = 1e-9;

/// Uniform grid `start + i * delta`, `i = 0..len`, in mu-coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuGrid {
    start: f64,
    delta: f64,
    len: usize,
}

impl MuGrid {
    pub fn new(start: f64, delta: f64, len: usize) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() || !start.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid needs finite start and delta > 0, got ({start}, {delta})"
            )));
        }
        Ok(Self { start, delta, len })
    }

    /// Grid from `lo` with spacing `delta` reaching at least `hi`.
    pub fn spanning(lo: f64, hi: f64, delta: f64) -> Result<Self> {
        if !(hi >= lo) {
            return Err(Error::InvalidInterval { lo, hi });
        }
        let cells = ((hi - lo) / delta - SNAP).ceil().max(0.0) as usize;
        Self::new(lo, delta, cells + 1)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.start + i as f64 * self.delta
    }

    pub fn end(&self) -> f64 {
        self.x(self.len.saturating_sub(1))
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.x(i))
    }

    /// Grid with half the spacing over the same span.
    pub fn refined(&self) -> Self {
        Self {
            start: self.start,
            delta: 0.5 * self.delta,
            len: 2 * self.len.max(1) - 1,
        }
    }
}

/// Where a sampled function lives: on `R_*` of a given rate, or on `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionDomain {
    HLine(RateId),
    RealLine,
}

/// Upper bound on `||u(x)||` outside the grid.
pub type DecayEnvelope = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A function `R_* -> R^n` (or `R -> R^n`) sampled on a mu-uniform grid.
#[derive(Clone)]
pub struct SampledFunction {
    grid: MuGrid,
    dim: usize,
    values: Vec<DVector<f64>>,
    decay_envelope: Option<DecayEnvelope>,
    domain: FunctionDomain,
}

impl fmt::Debug for SampledFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledFunction")
            .field("grid", &self.grid)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("has_envelope", &self.decay_envelope.is_some())
            .finish()
    }
}

impl SampledFunction {
    /// Checked constructor: without an envelope the values must vanish at
    /// both grid ends, the numerical stand-in for `C_0` membership.
    pub fn new(grid: MuGrid, values: Vec<DVector<f64>>, domain: FunctionDomain) -> Result<Self> {
        let u = Self::from_parts(grid, values, domain)?;
        if !u.is_c0() {
            return Err(Error::Domain(
                "sampled function does not vanish at the grid ends and has no decay envelope"
                    .into(),
            ));
        }
        Ok(u)
    }

    pub fn from_fn<F>(grid: MuGrid, dim: usize, domain: FunctionDomain, f: F) -> Result<Self>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let mut u = Self::new(grid, grid.points().map(f).collect(), domain)?;
        if grid.is_empty() {
            u.dim = dim;
        } else if u.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: u.dim,
            });
        }
        Ok(u)
    }

    /// Scalar function `x -> phi(x) e`, `e` a fixed vector.
    pub fn scalar_profile<F>(
        grid: MuGrid,
        direction: &DVector<f64>,
        domain: FunctionDomain,
        phi: F,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64,
    {
        Self::from_fn(grid, direction.len(), domain, |x| direction * phi(x))
    }

    pub fn zeros(grid: MuGrid, dim: usize, domain: FunctionDomain) -> Self {
        Self {
            grid,
            dim,
            values: vec![DVector::zeros(dim); grid.len()],
            decay_envelope: None,
            domain,
        }
    }

    /// Unchecked apart from shapes; used for operator outputs.
    pub(crate) fn from_parts(
        grid: MuGrid,
        values: Vec<DVector<f64>>,
        domain: FunctionDomain,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        let dim = values.first().map_or(0, |v| v.len());
        if let Some(v) = values.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        Ok(Self {
            grid,
            dim,
            values,
            decay_envelope: None,
            domain,
        })
    }

    pub fn with_envelope(mut self, envelope: DecayEnvelope) -> Self {
        self.decay_envelope = Some(envelope);
        self
    }

    pub fn decay_envelope(&self) -> Option<&DecayEnvelope> {
        self.decay_envelope.as_ref()
    }

    pub fn grid(&self) -> &MuGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> FunctionDomain {
        self.domain
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Values at both grid ends are negligible, or an envelope is attached.
    pub fn is_c0(&self) -> bool {
        if self.decay_envelope.is_some() || self.values.is_empty() {
            return true;
        }
        let peak = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let first = self.values[0].norm();
        let last = self.values[self.values.len() - 1].norm();
        first.max(last) <= C0_END_FRACTION * peak
    }

    /// `sup_x ||u(x)||` over the grid.
    pub fn sup_norm(&self) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(self.values.iter().map(|v| v.norm()).fold(0.0, f64::max))
    }

    /// Linear interpolation in mu; zero outside the grid.
    pub fn value_at(&self, x: f64) -> DVector<f64> {
        let n = self.grid.len();
        if n == 0 {
            return DVector::zeros(self.dim);
        }
        let f = (x - self.grid.start) / self.grid.delta;
        let nearest = f.round();
        if (f - nearest).abs() <= SNAP {
            return if nearest >= 0.0 && (nearest as usize) < n {
                self.values[nearest as usize].clone()
            } else {
                DVector::zeros(self.dim)
            };
        }
        if f < 0.0 || f > (n - 1) as f64 {
            return DVector::zeros(self.dim);
        }
        let i = f.floor() as usize;
        let theta = f - i as f64;
        &self.values[i] * (1.0 - theta) + &self.values[i + 1] * theta
    }

    fn check_compatible(&self, other: &SampledFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter(
                "sampled functions live on different grids".into(),
            ));
        }
        if self.domain != other.domain {
            return Err(Error::IncompatibleRate);
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// `a self + b other`.
    pub fn linear_combination(
        &self,
        a: f64,
        other: &SampledFunction,
        b: f64,
    ) -> Result<SampledFunction> {
        self.check_compatible(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(u, v)| u * a + v * b)
            .collect();
        Ok(Self {
            values,
            decay_envelope: None,
            ..self.clone()
        })
    }

    pub fn sub(&self, other: &SampledFunction) -> Result<SampledFunction> {
        self.linear_combination(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> SampledFunction {
        let values = self.values.iter().map(|v| v * a).collect();
        Self {
            values,
            decay_envelope: None,
            ..self.clone()
        }
    }

    /// Pointwise map over `(x, u(x))`.
    pub fn map_values<F>(&self, f: F) -> Result<SampledFunction>
    where
        F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Sync,
    {
        let values = (0..self.grid.len())
            .into_par_iter()
            .map(|i| f(self.grid.x(i), &self.values[i]))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(self.grid, values, self.domain)
    }

    /// Indices of the first and last node where `u` is nonzero.
    pub fn support_indices(&self) -> Option<(usize, usize)> {
        let first = self.values.iter().position(|v| v.amax() > 0.0)?;
        let last = self.values.iter().rposition(|v| v.amax() > 0.0)?;
        Some((first, last))
    }

    /// CSV with columns `mu,coord,v_1..v_n`. The coordinate is
    /// `mu^{-1}(x)` for functions on `R_*` (pass their rate) and `x` on `R`.
    pub fn write_csv<W: Write + ?Sized>(
        &self,
        rate: Option<&GrowthRate>,
        out: &mut W,
    ) -> io::Result<()> {
        let mut header = String::from("mu,coord");
        for k in 1..=self.dim {
            header.push_str(&format!(",v_{k}"));
        }
        writeln!(out, "{header}")?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.x(i);
            let coord = match (self.domain, rate) {
                (FunctionDomain::HLine(_), Some(r)) => r.lh_inv(x).unwrap_or(f64::NAN),
                _ => x,
            };
            write!(out, "{x},{coord}")?;
            for c in v.iter() {
                write!(out, ",{c}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `sup_{s} ||u(s)||`.
pub fn sup_norm(u: &SampledFunction) -> Result<f64> {
    u.sup_norm()
}

/// The relabeling `F w = w ∘ mu^{-1}` and its inverse `F^{-1} v = v ∘ mu`.
///
/// On mu-uniform grids both are exact: only the domain tag changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConjugacyMap {
    rate: RateId,
}

impl ConjugacyMap {
    pub fn new(rate: &GrowthRate) -> Self {
        Self { rate: rate.id() }
    }

    pub fn forward(&self, w: &SampledFunction) -> Result<SampledFunction> {
        if w.domain != FunctionDomain::HLine(self.rate) {
            return Err(Error::IncompatibleRate);
        }
        Ok(SampledFunction {
            domain: FunctionDomain::RealLine,
            ..w.clone()
        })
    }

    pub fn inverse(&self, v: &SampledFunction) -> Result<SampledFunction> {
        if v.domain != FunctionDomain::RealLine {
            return Err(Error::IncompatibleRate);
        }
        Ok(SampledFunction {
            domain: FunctionDomain::HLine(self.rate),
            ..v.clone()
        })
    }
}

fn check_function_on(
    u: &SampledFunction,
    family: &EvolutionFamily,
    domain: FunctionDomain,
) -> Result<()> {
    if u.domain != domain {
        return Err(Error::IncompatibleRate);
    }
    if u.dim != family.dim() {
        return Err(Error::DimensionMismatch {
            expected: family.dim(),
            found: u.dim,
        });
    }
    Ok(())
}

fn inside_grid(grid: &MuGrid, x: f64) -> bool {
    let lo = grid.start() - SNAP * grid.delta();
    let hi = grid.end() + SNAP * grid.delta();
    x >= lo && x <= hi
}

/// `(T_{t0} u)(s) = U(s, s *_h t0^{*-1}) u(s *_h t0^{*-1})`.
pub fn apply_t(
    family: &EvolutionFamily,
    t0: &HPoint,
    u: &SampledFunction,
) -> Result<SampledFunction> {
    let rate = family.rate();
    check_function_on(u, family, FunctionDomain::HLine(rate.id()))?;
    if t0.rate_id() != rate.id() {
        return Err(Error::IncompatibleRate);
    }
    if t0.mu < 0.0 {
        return Err(Error::Domain(format!(
            "T_t is defined only for t >= e_* (mu(t) = {})",
            t0.mu
        )));
    }
    let back = rate.star_inv(t0)?;
    let grid = u.grid;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.x(i);
            let source = x - t0.mu;
            if !inside_grid(&grid, source) {
                return Ok(DVector::zeros(u.dim));
            }
            let s = rate.from_mu(x)?;
            let r = rate.star(&s, &back)?;
            Ok(family.evaluate(&s, &r)? * u.value_at(r.mu))
        })
        .collect::<Result<Vec<_>>>()?;
    SampledFunction::from_parts(grid, values, u.domain)
}

/// `(S_t v)(x) = V(x, x - t) v(x - t)` for a family on `R` (mu = identity).
pub fn apply_s(v_family: &EvolutionFamily, t: f64, v: &SampledFunction) -> Result<SampledFunction> {
    check_function_on(v, v_family, FunctionDomain::RealLine)?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "S_t is defined only for t >= 0, got {t}"
        )));
    }
    let grid = v.grid;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.x(i);
            let y = x - t;
            if !inside_grid(&grid, y) {
                return Ok(DVector::zeros(v.dim));
            }
            Ok(v_family.eval_mu(x, y)? * v.value_at(y))
        })
        .collect::<Result<Vec<_>>>()?;
    SampledFunction::from_parts(grid, values, v.domain)
}

/// `sup ||T_{t0} u - F^{-1} S_{mu(t0)} F u||`.
pub fn conjugate_check(family: &EvolutionFamily, t0: &HPoint, u: &SampledFunction) -> Result<f64> {
    let conj = ConjugacyMap::new(family.rate());
    let v_family = family.reparametrize_to_v();
    let lhs = apply_t(family, t0, u)?;
    let rhs = conj.inverse(&apply_s(&v_family, t0.mu, &conj.forward(u)?)?)?;
    lhs.sub(&rhs)?.sup_norm()
}

/// `sup ||T_{t0 *_h s0} u - T_{t0} T_{s0} u||`.
pub fn semigroup_law_residual(
    family: &EvolutionFamily,
    t0: &HPoint,
    s0: &HPoint,
    u: &SampledFunction,
) -> Result<f64> {
    let rate = family.rate();
    let direct = apply_t(family, &rate.star(t0, s0)?, u)?;
    let composed = apply_t(family, t0, &apply_t(family, s0, u)?)?;
    direct.sub(&composed)?.sup_norm()
}

/// `sup ||T_{mu^{-1}(delta)} u - u||` for each `delta` in `mu_steps`.
pub fn strong_continuity_modulus(
    family: &EvolutionFamily,
    u: &SampledFunction,
    mu_steps: &[f64],
) -> Result<Vec<f64>> {
    if mu_steps.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter("mu steps must be positive".into()));
    }
    if mu_steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "mu steps must be strictly decreasing".into(),
        ));
    }
    let rate = family.rate();
    mu_steps
        .iter()
        .map(|&d| apply_t(family, &rate.from_mu(d)?, u)?.sub(u)?.sup_norm())
        .collect()
}

/// Default quotient step for the generator on a grid of spacing `delta`.
pub fn default_generator_step(grid: &MuGrid) -> f64 {
    grid.delta().max(1e-5)
}

/// `(T_{mu^{-1}(delta)} u - u) / delta`, an `O(delta) + O(Delta^2 / delta)`
/// approximation of `B_h u`.
pub fn apply_generator_fd(
    family: &EvolutionFamily,
    u: &SampledFunction,
    delta_mu: f64,
) -> Result<SampledFunction> {
    if !(delta_mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "generator step {delta_mu} must be positive"
        )));
    }
    let shifted = apply_t(family, &family.rate().from_mu(delta_mu)?, u)?;
    Ok(shifted.sub(u)?.scale(1.0 / delta_mu))
}

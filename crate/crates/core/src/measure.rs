//! The invariant measure `mu_*` on `R_*`, with density `h'/h`.
//!
//! Integrals against `mu_*` are always substituted to mu-coordinates,
//! `∫ f dmu_* = ∫ f(mu^{-1}(x)) dx`, where the density is identically one.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::algebra::{HInterval, HPoint};
use crate::error::{Error, Result};
use crate::growth_rate::GrowthRate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    /// Only the measure of intervals; no integrand is evaluated.
    ClosedForm,
    /// Composite Simpson on a uniform mu-grid, doubled until two successive
    /// estimates agree.
    CompositeSimpsonInMu,
    /// Adaptive Simpson with Richardson correction.
    Adaptive,
}

/// Quadrature policy for integrals against `mu_*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuQuadratureSpec {
    pub method: QuadratureMethod,
    pub tol: f64,
    pub max_subdivisions: usize,
}

impl Default for MuQuadratureSpec {
    fn default() -> Self {
        Self {
            method: QuadratureMethod::CompositeSimpsonInMu,
            tol: 1e-8,
            max_subdivisions: 1 << 20,
        }
    }
}

impl MuQuadratureSpec {
    pub fn new(method: QuadratureMethod, tol: f64, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            method,
            tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "quadrature tol {} must be positive",
                self.tol
            )));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::InvalidParameter(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `mu_*([a, b]) = mu(b) - mu(a)`.
pub fn mu_measure_interval(rate: &GrowthRate, a: &HPoint, b: &HPoint) -> Result<f64> {
    Ok(measure_of(&rate.interval(a, b)?))
}

pub fn measure_of(interval: &HInterval) -> f64 {
    interval.hi.mu - interval.lo.mu
}

/// `∫_{[a,b]} f dmu_*` for a vector-valued `f` on `R_*`.
pub fn integrate_mu<F>(
    rate: &GrowthRate,
    f: F,
    a: &HPoint,
    b: &HPoint,
    spec: &MuQuadratureSpec,
) -> Result<DVector<f64>>
where
    F: Fn(&HPoint) -> Result<DVector<f64>>,
{
    let iv = rate.interval(a, b)?;
    integrate_in_mu(|x| f(&rate.from_mu(x)?), iv.lo.mu, iv.hi.mu, spec)
}

/// `∫_{x_a}^{x_b} g(x) dx` in mu-coordinates.
pub fn integrate_in_mu<G>(g: G, x_a: f64, x_b: f64, spec: &MuQuadratureSpec) -> Result<DVector<f64>>
where
    G: Fn(f64) -> Result<DVector<f64>>,
{
    spec.validate()?;
    if !(x_a <= x_b) {
        return Err(Error::InvalidInterval { lo: x_a, hi: x_b });
    }
    match spec.method {
        QuadratureMethod::ClosedForm => Err(Error::Unsupported(
            "closed-form quadrature applies to interval measures only".into(),
        )),
        QuadratureMethod::CompositeSimpsonInMu => composite_simpson(&g, x_a, x_b, spec),
        QuadratureMethod::Adaptive => adaptive_simpson(&g, x_a, x_b, spec),
    }
}

/// The same integral taken in raw time, `∫_a^b f(tau) h'(tau)/h(tau) dtau`.
///
/// Only meaningful where the density is well scaled; it exists to cross-check
/// the mu-space route.
pub fn integrate_raw_time<F>(
    rate: &GrowthRate,
    f: F,
    a: &HPoint,
    b: &HPoint,
    spec: &MuQuadratureSpec,
) -> Result<DVector<f64>>
where
    F: Fn(&HPoint) -> Result<DVector<f64>>,
{
    let iv = rate.interval(a, b)?;
    let g = |tau: f64| -> Result<DVector<f64>> {
        let p = rate.point(tau)?;
        Ok(f(&p)? * rate.log_derivative(tau)?)
    };
    integrate_in_mu(g, iv.lo.coord, iv.hi.coord, spec)
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn composite_simpson<G>(g: &G, a: f64, b: f64, spec: &MuQuadratureSpec) -> Result<DVector<f64>>
where
    G: Fn(f64) -> Result<DVector<f64>>,
{
    let width = b - a;
    let fa = g(a)?;
    if width == 0.0 {
        return Ok(fa * 0.0);
    }
    let fb = g(b)?;
    // ends + interior sums, split by Simpson weight class
    let ends = &fa + &fb;
    let mut even = fa.clone() * 0.0;
    let mut odd = g(a + 0.5 * width)?;
    let mut panels = 2usize;
    let mut estimate = (&ends + &odd * 4.0) * (width / 6.0);
    while panels < spec.max_subdivisions {
        let next = panels * 2;
        let h = width / next as f64;
        even += &odd;
        let mut fresh = even.clone() * 0.0;
        for i in (1..next).step_by(2) {
            fresh += g(a + i as f64 * h)?;
        }
        odd = fresh;
        let refined = (&ends + &odd * 4.0 + &even * 2.0) * (h / 3.0);
        let diff = max_abs_diff(&refined, &estimate);
        estimate = refined;
        panels = next;
        if diff <= spec.tol && panels >= 8 {
            return Ok(estimate);
        }
    }
    Err(Error::QuadratureFailure {
        estimate: estimate.iter().copied().collect(),
        subdivisions: panels,
    })
}

struct Segment {
    a: f64,
    b: f64,
    fa: DVector<f64>,
    fm: DVector<f64>,
    fb: DVector<f64>,
    whole: DVector<f64>,
    tol: f64,
    depth: u32,
}

const ADAPTIVE_MIN_DEPTH: u32 = 3;
const ADAPTIVE_MAX_DEPTH: u32 = 60;

fn simpson(
    a: f64,
    b: f64,
    fa: &DVector<f64>,
    fm: &DVector<f64>,
    fb: &DVector<f64>,
) -> DVector<f64> {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

fn adaptive_simpson<G>(g: &G, a: f64, b: f64, spec: &MuQuadratureSpec) -> Result<DVector<f64>>
where
    G: Fn(f64) -> Result<DVector<f64>>,
{
    let fa = g(a)?;
    if a == b {
        return Ok(fa * 0.0);
    }
    let fb = g(b)?;
    let m = 0.5 * (a + b);
    let fm = g(m)?;
    let whole = simpson(a, b, &fa, &fm, &fb);
    let mut total = whole.clone() * 0.0;
    let mut stack = vec![Segment {
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol: spec.tol,
        depth: 0,
    }];
    let mut subdivisions = 1usize;
    while let Some(seg) = stack.pop() {
        let m = 0.5 * (seg.a + seg.b);
        let lm = 0.5 * (seg.a + m);
        let rm = 0.5 * (m + seg.b);
        let flm = g(lm)?;
        let frm = g(rm)?;
        let left = simpson(seg.a, m, &seg.fa, &flm, &seg.fm);
        let right = simpson(m, seg.b, &seg.fm, &frm, &seg.fb);
        let sum = &left + &right;
        let err = max_abs_diff(&sum, &seg.whole);
        let converged = seg.depth >= ADAPTIVE_MIN_DEPTH && err <= 15.0 * seg.tol;
        if converged || seg.depth >= ADAPTIVE_MAX_DEPTH || m <= seg.a || m >= seg.b {
            if !converged {
                let partial = &total + &sum;
                return Err(Error::QuadratureFailure {
                    estimate: partial.iter().copied().collect(),
                    subdivisions,
                });
            }
            total += &sum + (&sum - &seg.whole) / 15.0;
            continue;
        }
        subdivisions += 1;
        if subdivisions > spec.max_subdivisions {
            let partial = &total + &sum;
            return Err(Error::QuadratureFailure {
                estimate: partial.iter().copied().collect(),
                subdivisions,
            });
        }
        let half = 0.5 * seg.tol;
        stack.push(Segment {
            a: m,
            b: seg.b,
            fa: seg.fm.clone(),
            fm: frm,
            fb: seg.fb,
            whole: right,
            tol: half,
            depth: seg.depth + 1,
        });
        stack.push(Segment {
            a: seg.a,
            b: m,
            fa: seg.fa,
            fm: flm,
            fb: seg.fm,
            whole: left,
            tol: half,
            depth: seg.depth + 1,
        });
    }
    Ok(total)
}

//! Growth rates `h: R -> (0, inf)` and the scalar maps derived from them.
//!
//! A rate is always handled through its logarithm `lh = ln h` (the
//! "mu-coordinate"). Raw `h` values overflow an `f64` quickly (the cubic rate
//! `exp((t-2)^3)` is out of range for `t > 10.9`), so every other module does
//! its arithmetic on `lh` values and only [`GrowthRate::eval_h`] ever
//! exponentiates.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// A real scalar map shared between threads.
pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Largest `|lh|` accepted by the default valid intervals.
pub const LH_LIMIT: f64 = 700.0;

/// Below this value of `lh'` Newton steps are not attempted.
const NEWTON_MIN_SLOPE: f64 = 1e-12;

const MAX_INVERSION_STEPS: usize = 4000;

static NEXT_RATE_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a constructed rate. Clones share it; independent
/// constructions never do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RateId(u64);

/// Built-in families of growth rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    /// `h(t) = e^t`.
    Exponential,
    /// `h(t) = exp((t - t0)^n)` with `n` odd; params `[t0, n]`.
    ShiftedOddPowerExp,
    /// `h(t) = t + sqrt(t^2 + 1)`.
    Algebraic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKind {
    Exponential,
    ShiftedOddPowerExp { shift: f64, power: u32 },
    Algebraic,
    Custom,
}

struct RateInner {
    id: RateId,
    kind: RateKind,
    params: Vec<f64>,
    lh: ScalarMap,
    lh_inv: Option<ScalarMap>,
    lh_prime: Option<ScalarMap>,
    valid: (f64, f64),
    mu_range: (f64, f64),
}

/// A strictly increasing homeomorphism `h: R -> (0, inf)`, stored as
/// `lh = ln h`, its inverse and `lh' = h'/h`.
#[derive(Clone)]
pub struct GrowthRate {
    inner: Arc<RateInner>,
}

impl fmt::Debug for GrowthRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GrowthRate")
            .field("id", &self.inner.id)
            .field("kind", &self.inner.kind)
            .field("params", &self.inner.params)
            .field("valid", &self.inner.valid)
            .finish()
    }
}

fn next_id() -> RateId {
    RateId(NEXT_RATE_ID.fetch_add(1, Ordering::Relaxed))
}

impl GrowthRate {
    /// Builds one of the closed-form rates.
    pub fn make_builtin(kind: BuiltinKind, params: &[f64]) -> Result<Self> {
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite parameter {p}")));
        }
        match kind {
            BuiltinKind::Exponential => Ok(Self::exponential()),
            BuiltinKind::Algebraic => Ok(Self::algebraic()),
            BuiltinKind::ShiftedOddPowerExp => {
                let [shift, n] = params else {
                    return Err(Error::InvalidParameter(format!(
                        "shifted-odd-power-exp takes [t0, n], got {} parameters",
                        params.len()
                    )));
                };
                if n.fract() != 0.0 || *n < 1.0 || *n > 99.0 {
                    return Err(Error::InvalidParameter(format!(
                        "exponent n = {n} must be a positive odd integer"
                    )));
                }
                Self::shifted_odd_power_exp(*shift, *n as u32)
            }
        }
    }

    pub fn exponential() -> Self {
        Self::from_parts(
            RateKind::Exponential,
            Vec::new(),
            Arc::new(|t| t),
            Some(Arc::new(|x| x)),
            Some(Arc::new(|_| 1.0)),
            (-LH_LIMIT, LH_LIMIT),
        )
    }

    /// `h(t) = exp((t - shift)^power)`, `power` odd.
    pub fn shifted_odd_power_exp(shift: f64, power: u32) -> Result<Self> {
        if power == 0 || power.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "exponent n = {power} must be a positive odd integer"
            )));
        }
        if !shift.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "shift {shift} is not finite"
            )));
        }
        let n = power as i32;
        let inv_n = 1.0 / power as f64;
        let lh: ScalarMap = Arc::new(move |t| (t - shift).powi(n));
        let lh_inv: ScalarMap = if power == 3 {
            Arc::new(move |x: f64| shift + x.cbrt())
        } else {
            Arc::new(move |x: f64| shift + x.signum() * x.abs().powf(inv_n))
        };
        let lh_prime: ScalarMap = Arc::new(move |t| n as f64 * (t - shift).powi(n - 1));
        let radius = LH_LIMIT.powf(inv_n);
        Ok(Self::from_parts(
            RateKind::ShiftedOddPowerExp { shift, power },
            vec![shift, power as f64],
            lh,
            Some(lh_inv),
            Some(lh_prime),
            (shift - radius, shift + radius),
        ))
    }

    /// `h(t) = t + sqrt(t^2 + 1)`, so `lh = asinh`.
    pub fn algebraic() -> Self {
        Self::from_parts(
            RateKind::Algebraic,
            Vec::new(),
            Arc::new(f64::asinh),
            Some(Arc::new(f64::sinh)),
            Some(Arc::new(|t: f64| 1.0 / t.hypot(1.0))),
            (-1e150, 1e150),
        )
    }

    /// A user-supplied rate given by its logarithm `lh` on `valid`.
    ///
    /// Only `lh` is accepted, never `h` itself. The inverse is computed
    /// numerically by [`GrowthRate::invert_numeric`].
    pub fn custom(lh: ScalarMap, lh_prime: Option<ScalarMap>, valid: (f64, f64)) -> Result<Self> {
        let (lo, hi) = valid;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "valid interval [{lo}, {hi}] must be finite and non-empty"
            )));
        }
        const PROBES: usize = 257;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..PROBES {
            let t = lo + (hi - lo) * i as f64 / (PROBES - 1) as f64;
            let v = lh(t);
            if !v.is_finite() || v <= prev {
                return Err(Error::InvalidParameter(format!(
                    "lh is not finite and strictly increasing near t = {t}"
                )));
            }
            prev = v;
        }
        Ok(Self::from_parts(
            RateKind::Custom,
            Vec::new(),
            lh,
            None,
            lh_prime,
            valid,
        ))
    }

    fn from_parts(
        kind: RateKind,
        params: Vec<f64>,
        lh: ScalarMap,
        lh_inv: Option<ScalarMap>,
        lh_prime: Option<ScalarMap>,
        valid: (f64, f64),
    ) -> Self {
        let mu_range = (lh(valid.0), lh(valid.1));
        Self {
            inner: Arc::new(RateInner {
                id: next_id(),
                kind,
                params,
                lh,
                lh_inv,
                lh_prime,
                valid,
                mu_range,
            }),
        }
    }

    pub fn id(&self) -> RateId {
        self.inner.id
    }

    pub fn kind(&self) -> RateKind {
        self.inner.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.inner.params
    }

    /// Interval of `t` on which evaluations are trusted.
    pub fn valid_interval(&self) -> (f64, f64) {
        self.inner.valid
    }

    /// Image of the valid interval under `lh`.
    pub fn mu_range(&self) -> (f64, f64) {
        self.inner.mu_range
    }

    pub fn has_derivative(&self) -> bool {
        self.inner.lh_prime.is_some()
    }

    fn check_t(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.inner.valid;
        if t >= lo && t <= hi {
            Ok(())
        } else {
            Err(Error::OutsideValidInterval { t, lo, hi })
        }
    }

    pub(crate) fn check_mu(&self, mu: f64) -> Result<()> {
        let (lo, hi) = self.inner.mu_range;
        if mu >= lo && mu <= hi {
            Ok(())
        } else {
            Err(Error::Range { mu, lo, hi })
        }
    }

    /// `mu(t) = ln h(t)`.
    pub fn lh(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        Ok((self.inner.lh)(t))
    }

    /// `mu^{-1}(x)`: closed form when available, numeric otherwise.
    pub fn lh_inv(&self, mu: f64) -> Result<f64> {
        self.check_mu(mu)?;
        match &self.inner.lh_inv {
            Some(inv) => Ok(inv(mu)),
            None => self.solve_lh(mu, 4.0 * f64::EPSILON * (1.0 + mu.abs())),
        }
    }

    /// `h'(t)/h(t)`, the density of the invariant measure.
    pub fn log_derivative(&self, t: f64) -> Result<f64> {
        self.check_t(t)?;
        match &self.inner.lh_prime {
            Some(d) => Ok(d(t)),
            None => Err(Error::Unsupported(
                "custom rate was constructed without a derivative".into(),
            )),
        }
    }

    /// `h(t) = exp(lh(t))`, refusing to overflow or underflow to zero.
    pub fn eval_h(&self, t: f64) -> Result<f64> {
        let lh = self.lh(t)?;
        let h = lh.exp();
        if h.is_finite() && h > 0.0 {
            Ok(h)
        } else {
            Err(Error::Overflow { t, lh })
        }
    }

    /// Solves `h(t) = y` for `t` to within `tol` in mu-coordinates.
    pub fn invert_numeric(&self, y: f64, tol: f64) -> Result<f64> {
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!(
                "h^-1 is defined only for y > 0, got {y}"
            )));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {tol} must be positive"
            )));
        }
        self.solve_lh(y.ln(), tol)
    }

    /// Bracketing bisection on `lh(t) = target` with Newton polishing
    /// wherever `lh'` is available and not vanishing.
    fn solve_lh(&self, target: f64, tol: f64) -> Result<f64> {
        let lh = &self.inner.lh;
        let (mut a, mut b) = self.inner.valid;
        let (lo, hi) = self.inner.mu_range;
        if !(target >= lo && target <= hi) {
            return Err(Error::Range { mu: target, lo, hi });
        }
        let mut t = 0.5 * (a + b);
        for _ in 0..MAX_INVERSION_STEPS {
            let f = lh(t) - target;
            if f.abs() <= tol {
                return Ok(t);
            }
            if f < 0.0 {
                a = t;
            } else {
                b = t;
            }
            if b - a <= f64::EPSILON * a.abs().max(b.abs()) {
                return Ok(t);
            }
            if let Some(d) = &self.inner.lh_prime {
                let slope = d(t);
                if slope >= NEWTON_MIN_SLOPE {
                    let candidate = t - f / slope;
                    if candidate > a && candidate < b {
                        t = candidate;
                        continue;
                    }
                }
            }
            t = 0.5 * (a + b);
        }
        Ok(t)
    }
}

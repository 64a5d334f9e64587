//! h-evolution families `U(t, s)`, `t >= s`, on `X = R^n`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::HPoint;
use crate::error::{Error, Result};
use crate::fit;
use crate::growth_rate::GrowthRate;
use crate::linalg::spectral_norm;
use crate::ode::{CoefficientFn, OdePropagator};

/// Closed-form family `(t, s) -> U(t, s)`.
pub type MatrixKernel = Arc<dyn Fn(&HPoint, &HPoint) -> DMatrix<f64> + Send + Sync>;

pub const DEFAULT_COCYCLE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilySource {
    ClosedForm,
    OdeIntegrated,
}

/// Audit settings applied when a closed-form family is constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyOptions {
    /// Window in mu-coordinates from which audit triples are drawn.
    pub audit_window_mu: (f64, f64),
    pub cocycle_tol: f64,
    pub audit_samples: usize,
    pub seed: u64,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        Self {
            audit_window_mu: (-5.0, 5.0),
            cocycle_tol: DEFAULT_COCYCLE_TOL,
            audit_samples: 100,
            seed: 42,
        }
    }
}

#[derive(Clone)]
enum Kernel {
    Closed(MatrixKernel),
    Ode(Arc<OdePropagator>),
    /// `V(x, y) = U(mu^{-1}(x), mu^{-1}(y))`.
    Reparametrized(Arc<EvolutionFamily>),
    /// `exp(-lambda (mu(t) - mu(s))) U(t, s)`.
    Shifted {
        inner: Arc<EvolutionFamily>,
        lambda: f64,
    },
}

/// A two-parameter family `U(t, s)` of `n x n` matrices with `U(t, t) = I`
/// and `U(t, tau) U(tau, s) = U(t, s)`.
#[derive(Clone)]
pub struct EvolutionFamily {
    dim: usize,
    rate: GrowthRate,
    source: FamilySource,
    kernel: Kernel,
}

impl fmt::Debug for EvolutionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kernel = match &self.kernel {
            Kernel::Closed(_) => "closed",
            Kernel::Ode(_) => "ode",
            Kernel::Reparametrized(_) => "reparametrized",
            Kernel::Shifted { .. } => "shifted",
        };
        f.debug_struct("EvolutionFamily")
            .field("dim", &self.dim)
            .field("rate", &self.rate)
            .field("source", &self.source)
            .field("kernel", &kernel)
            .finish()
    }
}

/// Constants `(K, alpha)` with `||U(t,s)|| <= K (h(t)/h(s))^alpha` on the
/// audited samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HBoundCertificate {
    #[serde(rename = "K")]
    pub k: f64,
    pub alpha: f64,
    pub max_violation: f64,
    pub samples_used: usize,
}

impl HBoundCertificate {
    pub fn bound(&self, delta_mu: f64) -> f64 {
        self.k * (self.alpha * delta_mu).exp()
    }
}

/// Draws `(x_t, x_s)` with `x_t - x_s` uniform on `[0, hi - lo]`.
pub(crate) fn sample_ordered_pairs(
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    n: usize,
) -> Vec<(f64, f64)> {
    let len = hi - lo;
    (0..n)
        .map(|_| {
            let gap = rng.gen::<f64>() * len;
            let s = lo + rng.gen::<f64>() * (len - gap);
            (s + gap, s)
        })
        .collect()
}

impl EvolutionFamily {
    /// Wraps a closed-form family and audits its cocycle law on 100 random
    /// triples.
    pub fn from_closed_form(dim: usize, formula: MatrixKernel, rate: GrowthRate) -> Result<Self> {
        Self::from_closed_form_with(dim, formula, rate, &FamilyOptions::default())
    }

    pub fn from_closed_form_with(
        dim: usize,
        formula: MatrixKernel,
        rate: GrowthRate,
        options: &FamilyOptions,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let family = Self {
            dim,
            rate,
            source: FamilySource::ClosedForm,
            kernel: Kernel::Closed(formula),
        };
        let (worst, triple) =
            family.audit_cocycle(options.audit_window_mu, options.audit_samples, options.seed)?;
        if !(worst <= options.cocycle_tol) {
            return Err(Error::CocycleViolation {
                t: triple[0],
                tau: triple[1],
                s: triple[2],
                residual: worst,
            });
        }
        Ok(family)
    }

    /// Family generated by `dW/dx = coeff_mu(x) W` in mu-time.
    pub fn from_ode(
        dim: usize,
        coeff_mu: CoefficientFn,
        rate: GrowthRate,
        step_tol: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let prop = OdePropagator::new(dim, coeff_mu, step_tol)?;
        Ok(Self {
            dim,
            rate,
            source: FamilySource::OdeIntegrated,
            kernel: Kernel::Ode(Arc::new(prop)),
        })
    }

    /// `U = I`.
    pub fn identity(dim: usize, rate: GrowthRate) -> Result<Self> {
        let id = DMatrix::identity(dim, dim);
        Self::from_closed_form(dim, Arc::new(move |_, _| id.clone()), rate)
    }

    /// `U(t, s) = diag(exp(a_i (mu(t) - mu(s))))`. The stable scalar family
    /// `h(s)/h(t)` is `exponents = [-1]`.
    pub fn diagonal(exponents: &[f64], rate: GrowthRate) -> Result<Self> {
        let exps = DVector::from_column_slice(exponents);
        let kernel: MatrixKernel = Arc::new(move |t, s| {
            let d = t.mu - s.mu;
            DMatrix::from_diagonal(&exps.map(|a| (a * d).exp()))
        });
        Self::from_closed_form(exponents.len(), kernel, rate)
    }

    /// ODE family with a constant mu-time coefficient.
    pub fn constant_coefficient(
        matrix: DMatrix<f64>,
        rate: GrowthRate,
        step_tol: f64,
    ) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidParameter(
                "coefficient matrix must be square".into(),
            ));
        }
        let dim = matrix.nrows();
        Self::from_ode(dim, Arc::new(move |_| matrix.clone()), rate, step_tol)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> &GrowthRate {
        &self.rate
    }

    pub fn source(&self) -> FamilySource {
        self.source
    }

    /// `U(t, s)` for `t >= s`.
    pub fn evaluate(&self, t: &HPoint, s: &HPoint) -> Result<DMatrix<f64>> {
        if t.rate_id() != self.rate.id() || s.rate_id() != self.rate.id() {
            return Err(Error::IncompatibleRate);
        }
        if t.mu < s.mu {
            return Err(Error::Domain(format!(
                "U(t, s) is defined for t >= s only (mu(t) = {}, mu(s) = {})",
                t.mu, s.mu
            )));
        }
        if t.mu == s.mu {
            return Ok(DMatrix::identity(self.dim, self.dim));
        }
        let m = match &self.kernel {
            Kernel::Closed(f) => f(t, s),
            Kernel::Ode(p) => p.propagate(t.mu, s.mu)?,
            Kernel::Reparametrized(inner) => inner.eval_mu(t.mu, s.mu)?,
            Kernel::Shifted { inner, lambda } => {
                inner.evaluate(t, s)? * (-lambda * (t.mu - s.mu)).exp()
            }
        };
        if m.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: m.nrows(),
            });
        }
        Ok(m)
    }

    /// `U(mu^{-1}(x_t), mu^{-1}(x_s))`.
    pub fn eval_mu(&self, x_t: f64, x_s: f64) -> Result<DMatrix<f64>> {
        self.evaluate(&self.rate.from_mu(x_t)?, &self.rate.from_mu(x_s)?)
    }

    /// `||U(t,tau) U(tau,s) - U(t,s)|| / max(1, ||U(t,tau)|| ||U(tau,s)||)`
    /// for mu-coordinates `x_t >= x_tau >= x_s`.
    pub fn cocycle_residual(&self, x_t: f64, x_tau: f64, x_s: f64) -> Result<f64> {
        let a = self.eval_mu(x_t, x_tau)?;
        let b = self.eval_mu(x_tau, x_s)?;
        let direct = self.eval_mu(x_t, x_s)?;
        let scale = (spectral_norm(&a) * spectral_norm(&b)).max(1.0);
        Ok(spectral_norm(&(&a * &b - direct)) / scale)
    }

    /// Worst cocycle residual over random ordered triples in `window_mu`,
    /// together with the triple attaining it.
    pub fn audit_cocycle(
        &self,
        window_mu: (f64, f64),
        samples: usize,
        seed: u64,
    ) -> Result<(f64, [f64; 3])> {
        let (lo, hi) = self.clip_window(window_mu)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = (0.0, [lo, lo, lo]);
        let id_defect =
            spectral_norm(&(self.eval_mu(lo, lo)? - DMatrix::identity(self.dim, self.dim)));
        if id_defect > worst.0 {
            worst = (id_defect, [lo, lo, lo]);
        }
        for _ in 0..samples {
            let mut xs = [
                lo + rng.gen::<f64>() * (hi - lo),
                lo + rng.gen::<f64>() * (hi - lo),
                lo + rng.gen::<f64>() * (hi - lo),
            ];
            xs.sort_by(|a, b| b.total_cmp(a));
            let r = self.cocycle_residual(xs[0], xs[1], xs[2])?;
            if !(r <= worst.0) {
                worst = (r, xs);
            }
        }
        Ok(worst)
    }

    fn clip_window(&self, (lo, hi): (f64, f64)) -> Result<(f64, f64)> {
        let (rlo, rhi) = self.rate.mu_range();
        let (lo, hi) = (lo.max(rlo), hi.min(rhi));
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "empty audit window [{lo}, {hi}]"
            )));
        }
        Ok((lo, hi))
    }

    /// The classical family `V(x, y) = U(mu^{-1}(x), mu^{-1}(y))` on `R`,
    /// carried by the exponential rate (for which mu is the identity).
    pub fn reparametrize_to_v(&self) -> EvolutionFamily {
        EvolutionFamily {
            dim: self.dim,
            rate: GrowthRate::exponential(),
            source: self.source,
            kernel: Kernel::Reparametrized(Arc::new(self.clone())),
        }
    }

    /// `exp(-lambda (mu(t) - mu(s))) U(t, s)`, same rate.
    pub fn shifted(&self, lambda: f64) -> EvolutionFamily {
        EvolutionFamily {
            dim: self.dim,
            rate: self.rate.clone(),
            source: self.source,
            kernel: Kernel::Shifted {
                inner: Arc::new(self.clone()),
                lambda,
            },
        }
    }

    /// Samples `(mu(t) - mu(s), ln ||U(t,s)||)` over random ordered pairs.
    pub fn log_norm_cloud(
        &self,
        window_mu: (f64, f64),
        n_samples: usize,
        seed: u64,
    ) -> Result<Vec<(f64, f64)>> {
        let (lo, hi) = self.clip_window(window_mu)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_ordered_pairs(&mut rng, lo, hi, n_samples)
            .into_iter()
            .map(|(xt, xs)| {
                let norm = spectral_norm(&self.eval_mu(xt, xs)?);
                if norm == 0.0 {
                    return Err(Error::DegenerateFamily { t: xt, s: xs });
                }
                Ok((xt - xs, norm.ln()))
            })
            .collect()
    }

    /// Fits `ln ||U(t,s)|| <= ln K + alpha (mu(t) - mu(s))` with `alpha >= 0`,
    /// `K >= 1` over random pairs with both ends in `window`.
    pub fn estimate_h_bound(
        &self,
        window: (&HPoint, &HPoint),
        n_samples: usize,
        seed: u64,
    ) -> Result<HBoundCertificate> {
        if n_samples < 10 {
            return Err(Error::InvalidParameter(format!(
                "need at least 10 samples, got {n_samples}"
            )));
        }
        let (a, b) = window;
        let iv = self.rate.interval(a, b)?;
        let cloud = self.log_norm_cloud((iv.lo.mu, iv.hi.mu), n_samples, seed)?;
        Ok(h_bound_from_cloud(&cloud))
    }
}

/// Envelope fit on a `(delta_mu, ln ||U||)` cloud; `(0, 0)` is always
/// included because `U(t, t) = I`.
pub fn h_bound_from_cloud(cloud: &[(f64, f64)]) -> HBoundCertificate {
    let mut pts = Vec::with_capacity(cloud.len() + 1);
    pts.push((0.0, 0.0));
    pts.extend_from_slice(cloud);
    let alpha = fit::upper_hull_slope(&pts).unwrap_or(0.0).max(0.0);
    let ln_k = fit::lift_intercept(&pts, alpha).max(0.0);
    let k = ln_k.exp();
    let max_violation = cloud
        .iter()
        .map(|(d, y)| y.exp() - k * (alpha * d).exp())
        .fold(0.0, f64::max);
    HBoundCertificate {
        k,
        alpha,
        max_violation,
        samples_used: cloud.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> GrowthRate {
        GrowthRate::shifted_odd_power_exp(2.0, 3).unwrap()
    }

    fn stable_scalar(rate: GrowthRate) -> EvolutionFamily {
        let kernel: MatrixKernel =
            Arc::new(|t, s| DMatrix::from_element(1, 1, (s.mu - t.mu).exp()));
        EvolutionFamily::from_closed_form(1, kernel, rate).unwrap()
    }

    #[test]
    fn closed_form_examples_pass_audit() {
        let u = stable_scalar(cubic());
        let (worst, _) = u.audit_cocycle((-5.0, 5.0), 100, 1).unwrap();
        assert!(worst < 1e-15);
        assert!(EvolutionFamily::identity(3, cubic()).is_ok());
    }

    #[test]
    fn broken_family_is_rejected() {
        // I + (mu(t) - mu(s))^2 E_12: the product picks up 2 a b E_12.
        let kernel: MatrixKernel = Arc::new(|t, s| {
            let d = t.mu - s.mu;
            DMatrix::from_row_slice(2, 2, &[1.0, d * d, 0.0, 1.0])
        });
        match EvolutionFamily::from_closed_form(2, kernel, cubic()) {
            Err(Error::CocycleViolation {
                t,
                tau,
                s,
                residual,
            }) => {
                let oracle = 2.0 * (t - tau) * (tau - s);
                let a = (t - tau) * (t - tau);
                let b = (tau - s) * (tau - s);
                let na = spectral_norm(&DMatrix::from_row_slice(2, 2, &[1.0, a, 0.0, 1.0]));
                let nb = spectral_norm(&DMatrix::from_row_slice(2, 2, &[1.0, b, 0.0, 1.0]));
                assert!((residual - oracle / (na * nb).max(1.0)).abs() < 1e-9 * (1.0 + oracle));
            }
            other => panic!("expected cocycle violation, got {other:?}"),
        }
    }

    #[test]
    fn ode_examples() {
        let c = cubic();
        let u = EvolutionFamily::constant_coefficient(
            DMatrix::from_element(1, 1, -1.0),
            c.clone(),
            1e-11,
        )
        .unwrap();
        for (t, s) in [(3.0, 2.0), (4.1, -0.5), (2.5, 2.4)] {
            let (pt, ps) = (c.point(t).unwrap(), c.point(s).unwrap());
            let got = u.evaluate(&pt, &ps).unwrap()[(0, 0)];
            let expected = (ps.mu - pt.mu).exp();
            assert!((got - expected).abs() < 1e-8);
        }

        let zero =
            EvolutionFamily::constant_coefficient(DMatrix::zeros(2, 2), c.clone(), 1e-11).unwrap();
        let m = zero.eval_mu(3.3, -1.2).unwrap();
        assert!((m - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);

        let saddle = EvolutionFamily::constant_coefficient(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
            c.clone(),
            1e-11,
        )
        .unwrap();
        let (pt, ps) = (c.point(2.9).unwrap(), c.point(1.8).unwrap());
        let m = saddle.evaluate(&pt, &ps).unwrap();
        let d = pt.mu - ps.mu;
        assert!((m[(0, 0)] - (-d).exp()).abs() < 1e-8);
        assert!((m[(1, 1)] - d.exp()).abs() < 1e-8 * d.exp());
        assert!(m[(0, 1)].abs() < 1e-12 && m[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn evaluation_requires_forward_order_and_matching_rate() {
        let c = cubic();
        let u = stable_scalar(c.clone());
        assert!(matches!(u.eval_mu(0.0, 1.0), Err(Error::Domain(_))));
        let other = GrowthRate::exponential();
        let p = other.point(0.0).unwrap();
        assert_eq!(u.evaluate(&p, &p), Err(Error::IncompatibleRate));
        let t = c.point(3.1).unwrap();
        assert_eq!(u.evaluate(&t, &t).unwrap(), DMatrix::identity(1, 1));
    }

    #[test]
    fn h_bound_examples() {
        let c = cubic();
        let window = (c.from_mu(-8.0).unwrap(), c.from_mu(8.0).unwrap());
        let cert = stable_scalar(c.clone())
            .estimate_h_bound((&window.0, &window.1), 200, 3)
            .unwrap();
        assert_eq!((cert.k, cert.alpha), (1.0, 0.0));
        assert_eq!(cert.max_violation, 0.0);

        let saddle = EvolutionFamily::diagonal(&[-1.0, 1.0], c.clone()).unwrap();
        let cert = saddle
            .estimate_h_bound((&window.0, &window.1), 200, 3)
            .unwrap();
        assert!((cert.alpha - 1.0).abs() < 1e-12);
        assert!((cert.k - 1.0).abs() < 1e-12);

        let id = EvolutionFamily::identity(2, c.clone()).unwrap();
        let cert = id.estimate_h_bound((&window.0, &window.1), 50, 3).unwrap();
        assert_eq!((cert.k, cert.alpha), (1.0, 0.0));
        assert!(id.estimate_h_bound((&window.0, &window.1), 5, 3).is_err());
    }

    #[test]
    fn degenerate_family_detected() {
        let c = cubic();
        let kernel: MatrixKernel = Arc::new(|t, s| {
            if t.mu == s.mu {
                DMatrix::identity(1, 1)
            } else {
                DMatrix::zeros(1, 1)
            }
        });
        let opts = FamilyOptions {
            cocycle_tol: f64::INFINITY,
            ..Default::default()
        };
        let u = EvolutionFamily::from_closed_form_with(1, kernel, c.clone(), &opts).unwrap();
        let (a, b) = (c.from_mu(-1.0).unwrap(), c.from_mu(1.0).unwrap());
        assert!(matches!(
            u.estimate_h_bound((&a, &b), 20, 1),
            Err(Error::DegenerateFamily { .. })
        ));
    }

    #[test]
    fn v_family_examples() {
        let c = cubic();
        let v = stable_scalar(c.clone()).reparametrize_to_v();
        for (x, y) in [(1.0, 0.0), (5.0, -2.5), (0.3, 0.3)] {
            let m = v.eval_mu(x, y).unwrap();
            assert!((m[(0, 0)] - (y - x).exp()).abs() < 1e-15);
        }
        let saddle = EvolutionFamily::diagonal(&[-1.0, 1.0], c)
            .unwrap()
            .reparametrize_to_v();
        let m = saddle.eval_mu(2.0, 0.5).unwrap();
        assert!((spectral_norm(&m) - 1.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn shifted_family_scales() {
        let c = cubic();
        let u = EvolutionFamily::diagonal(&[-1.0], c).unwrap();
        let s = u.shifted(0.5);
        assert!((s.eval_mu(2.0, 0.0).unwrap()[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
    }
}

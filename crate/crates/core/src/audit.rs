//! Randomized audits of the growth-rate algebra and of the evolution
//! h-semigroup.
//!
//! Algebra residuals are measured on mu-values recomputed from the
//! coordinates, `lh(coord)`, so they see the rounding of `lh^{-1}` rather
//! than the exact mu-space arithmetic.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algebra::HPoint;
use crate::error::Result;
use crate::family::EvolutionFamily;
use crate::growth_rate::GrowthRate;
use crate::semigroup::{self, FunctionDomain, MuGrid, SampledFunction};

/// Largest `|mu|` of random points.
pub const AUDIT_MU_RADIUS: f64 = 50.0;

/// Largest `|alpha|` of random scalars.
pub const AUDIT_SCALAR_RADIUS: f64 = 2.0;

pub const AUDIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgebraAudit {
    pub checks: usize,
    pub max_residual: f64,
    /// Failed order and equivalence checks.
    pub order_violations: usize,
    pub residual_by_axiom: BTreeMap<&'static str, f64>,
    pub passed: bool,
}

struct Auditor<'a> {
    rate: &'a GrowthRate,
    checks: usize,
    violations: usize,
    worst: BTreeMap<&'static str, f64>,
}

impl Auditor<'_> {
    fn mu(&self, p: &HPoint) -> Result<f64> {
        self.rate.lh(p.coord)
    }

    fn record(&mut self, axiom: &'static str, r: f64) {
        self.checks += 1;
        let e = self.worst.entry(axiom).or_insert(0.0);
        if !(r <= *e) {
            *e = r;
        }
    }

    fn equal(&mut self, axiom: &'static str, a: &HPoint, b: &HPoint) -> Result<()> {
        let (x, y) = (self.mu(a)?, self.mu(b)?);
        self.record(axiom, (x - y).abs() / (1.0 + x.abs().max(y.abs())));
        Ok(())
    }

    /// `a <= b` up to the audit tolerance; the residual is the excess.
    fn at_most(&mut self, axiom: &'static str, a: &HPoint, b: &HPoint) -> Result<()> {
        let (x, y) = (self.mu(a)?, self.mu(b)?);
        self.record(axiom, ((x - y) / (1.0 + x.abs().max(y.abs()))).max(0.0));
        Ok(())
    }

    fn holds(&mut self, axiom: &'static str, ok: bool) {
        self.record(axiom, 0.0);
        if !ok {
            self.violations += 1;
        }
    }
}

fn le(a: &HPoint, b: &HPoint) -> bool {
    a.coord <= b.coord
}

/// Near-ties are excluded from order checks.
fn separated(a: &HPoint, b: &HPoint) -> bool {
    (a.mu - b.mu).abs() > 1e-6 * (1.0 + a.mu.abs().max(b.mu.abs()))
}

/// Runs rounds of group, vector-space, norm, order and metric checks until
/// at least `n_checks` individual checks have been made.
pub fn algebra_audit(rate: &GrowthRate, n_checks: usize, seed: u64) -> Result<AlgebraAudit> {
    let (rlo, rhi) = rate.mu_range();
    let radius = AUDIT_MU_RADIUS.min(rhi / 4.0).min(-rlo / 4.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Auditor {
        rate,
        checks: 0,
        violations: 0,
        worst: BTreeMap::new(),
    };
    let e = rate.neutral();
    while a.checks < n_checks {
        let mut pt = || rate.from_mu(rng.gen_range(-radius..=radius));
        let (t, s, r) = (pt()?, pt()?, pt()?);
        let alpha = rng.gen_range(-AUDIT_SCALAR_RADIUS..=AUDIT_SCALAR_RADIUS);
        let beta = rng.gen_range(-AUDIT_SCALAR_RADIUS..=AUDIT_SCALAR_RADIUS);

        // group
        a.equal(
            "associativity",
            &rate.star(&rate.star(&t, &s)?, &r)?,
            &rate.star(&t, &rate.star(&s, &r)?)?,
        )?;
        a.equal("commutativity", &rate.star(&t, &s)?, &rate.star(&s, &t)?)?;
        a.equal("identity", &rate.star(&t, &e)?, &t)?;
        a.equal("inverse", &rate.star(&t, &rate.star_inv(&t)?)?, &e)?;

        // vector space
        a.equal(
            "scalar_distributivity",
            &rate.odot(alpha + beta, &t)?,
            &rate.star(&rate.odot(alpha, &t)?, &rate.odot(beta, &t)?)?,
        )?;
        a.equal(
            "vector_distributivity",
            &rate.odot(alpha, &rate.star(&t, &s)?)?,
            &rate.star(&rate.odot(alpha, &t)?, &rate.odot(alpha, &s)?)?,
        )?;
        a.equal(
            "scalar_compatibility",
            &rate.odot(alpha * beta, &t)?,
            &rate.odot(alpha, &rate.odot(beta, &t)?)?,
        )?;
        a.equal("unit_scalar", &rate.odot(1.0, &t)?, &t)?;
        a.equal(
            "negative_scalar",
            &rate.star_inv(&rate.odot(alpha, &t)?)?,
            &rate.odot(-alpha, &t)?,
        )?;

        // order under scaling
        let (lo, hi) = if le(&t, &s) { (t, s) } else { (s, t) };
        if separated(&lo, &hi) && alpha.abs() > 1e-3 {
            let (x, y) = (rate.odot(alpha, &lo)?, rate.odot(alpha, &hi)?);
            a.holds(
                "scaling_order",
                if alpha > 0.0 { le(&x, &y) } else { le(&y, &x) },
            );
        }

        // norm
        a.equal(
            "norm_homogeneity",
            &rate.habs(&rate.odot(alpha, &t)?)?,
            &rate.odot(alpha.abs(), &rate.habs(&t)?)?,
        )?;
        a.at_most(
            "norm_triangle",
            &rate.habs(&rate.star(&t, &s)?)?,
            &rate.star(&rate.habs(&t)?, &rate.habs(&s)?)?,
        )?;
        a.at_most("norm_nonnegative", &e, &rate.habs(&t)?)?;

        // order characterizations
        if separated(&t, &s) {
            let diff = rate.star(&t, &rate.star_inv(&s)?)?;
            a.holds("order_by_difference", le(&s, &t) == le(&e, &diff));
        }
        let l = rate.habs(&r)?;
        if separated(&rate.habs(&t)?, &l) {
            let inside = le(&rate.star_inv(&l)?, &t) && le(&t, &l);
            a.holds("norm_bound_window", le(&rate.habs(&t)?, &l) == inside);
        }

        // metric
        a.equal(
            "metric_symmetry",
            &rate.hdist(&t, &s)?,
            &rate.hdist(&s, &t)?,
        )?;
        a.equal("metric_zero", &rate.hdist(&t, &t)?, &e)?;
        a.at_most(
            "metric_triangle",
            &rate.hdist(&t, &r)?,
            &rate.star(&rate.hdist(&t, &s)?, &rate.hdist(&s, &r)?)?,
        )?;

        // h(t^{*-1}) h(t) = 1, where h is representable
        if t.mu.abs() < 600.0 {
            let prod = rate.eval_h(rate.star_inv(&t)?.coord)? * rate.eval_h(t.coord)?;
            a.record("exponential_identity", (prod - 1.0).abs());
        }
    }
    let max_residual = a.worst.values().copied().fold(0.0, f64::max);
    Ok(AlgebraAudit {
        checks: a.checks,
        max_residual,
        order_violations: a.violations,
        passed: max_residual <= AUDIT_TOL && a.violations == 0,
        residual_by_axiom: a.worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemigroupAudit {
    pub grid_delta: f64,
    /// `sup ||T_{e_*} u - u||`.
    pub identity_residual: f64,
    /// Semigroup-law residual at spacing `grid_delta`, off-grid shifts.
    pub law_residual: f64,
    /// Residual ratio between spacings `grid_delta` and `grid_delta / 2`.
    pub law_order_ratio: f64,
    /// Conjugacy residual for a grid-aligned shift.
    pub conjugacy_residual: f64,
    pub h_bound_k: f64,
    pub h_bound_alpha: f64,
    /// `max (||T_{t0} u|| - K h(t0)^alpha ||u||)` over the audited shifts.
    pub norm_bound_excess: f64,
    pub modulus_steps: Vec<f64>,
    pub modulus: Vec<f64>,
    pub passed: bool,
}

/// Gaussian `exp(-x^2)` along the normalized diagonal of `R^n`.
pub fn gaussian_probe(family: &EvolutionFamily, grid: MuGrid) -> Result<SampledFunction> {
    let n = family.dim();
    let dir = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    SampledFunction::scalar_profile(grid, &dir, FunctionDomain::HLine(family.rate().id()), |x| {
        (-x * x).exp()
    })
}

/// Semigroup-law residual with shifts `a = b = (m + 1/3) delta`, where the
/// offsets from the grid stay at one or two thirds of a cell under halving.
pub fn law_residual_at(family: &EvolutionFamily, delta: f64, shift_mu: f64) -> Result<f64> {
    let grid = MuGrid::spanning(-8.0, 8.0, delta)?;
    let u = gaussian_probe(family, grid)?;
    let a = ((shift_mu / delta).round() + 1.0 / 3.0) * delta;
    let rate = family.rate();
    let t = rate.from_mu(a)?;
    semigroup::semigroup_law_residual(family, &t, &t, &u)
}

pub const MODULUS_STEPS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

pub fn semigroup_audit(
    family: &EvolutionFamily,
    grid_delta: f64,
    seed: u64,
) -> Result<SemigroupAudit> {
    let rate = family.rate();
    let grid = MuGrid::spanning(-8.0, 8.0, grid_delta)?;
    let u = gaussian_probe(family, grid)?;
    let u_norm = u.sup_norm()?;

    let identity_residual = semigroup::apply_t(family, &rate.neutral(), &u)?
        .sub(&u)?
        .sup_norm()?;
    let law_residual = law_residual_at(family, grid_delta, 0.5)?;
    let law_fine = law_residual_at(family, 0.5 * grid_delta, 0.5)?;
    let law_order_ratio = law_residual / law_fine;
    let aligned = rate.from_mu((0.75 / grid_delta).round() * grid_delta)?;
    let conjugacy_residual = semigroup::conjugate_check(family, &aligned, &u)?;

    let (lo, hi) = (rate.from_mu(-10.0)?, rate.from_mu(10.0)?);
    let cert = family.estimate_h_bound((&lo, &hi), 200, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norm_bound_excess = f64::NEG_INFINITY;
    for _ in 0..10 {
        let t0 = rate.from_mu(rng.gen_range(0.0..4.0))?;
        let lhs = semigroup::apply_t(family, &t0, &u)?.sup_norm()?;
        norm_bound_excess = norm_bound_excess.max(lhs - cert.bound(t0.mu) * u_norm);
    }

    let modulus = semigroup::strong_continuity_modulus(family, &u, &MODULUS_STEPS)?;
    let decreasing = modulus.windows(2).all(|w| w[1] < w[0]);
    let passed = identity_residual == 0.0
        && (3.5..=4.5).contains(&law_order_ratio)
        && conjugacy_residual <= 1e-8
        && norm_bound_excess <= 1e-12 * u_norm
        && decreasing
        && modulus[modulus.len() - 1] <= 1e-5;
    Ok(SemigroupAudit {
        grid_delta,
        identity_residual,
        law_residual,
        law_order_ratio,
        conjugacy_residual,
        h_bound_k: cert.k,
        h_bound_alpha: cert.alpha,
        norm_bound_excess,
        modulus_steps: MODULUS_STEPS.to_vec(),
        modulus,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rates_pass_small_audit() {
        for rate in [
            GrowthRate::exponential(),
            GrowthRate::shifted_odd_power_exp(2.0, 3).unwrap(),
            GrowthRate::algebraic(),
        ] {
            let r = algebra_audit(&rate, 500, 11).unwrap();
            assert!(r.passed, "{:?} {r:?}", rate.kind());
            assert!(r.checks >= 500);
        }
    }

    #[test]
    fn stable_scalar_semigroup_audit() {
        let c = GrowthRate::shifted_odd_power_exp(2.0, 3).unwrap();
        let fam = EvolutionFamily::diagonal(&[-1.0], c).unwrap();
        let r = semigroup_audit(&fam, 0.01, 42).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

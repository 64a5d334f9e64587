//! Green kernel of a dichotomic family and the inverse of the generator,
//! `w = -∫ Gamma(., s) g(s) dmu_*(s)`.

use nalgebra::{DMatrix, DVector};

use crate::algebra::HPoint;
use crate::dichotomy::{self, DichotomyConfig, ProjectionFamily};
use crate::error::{Error, Result};
use crate::family::EvolutionFamily;
use crate::measure::MuQuadratureSpec;
use crate::semigroup::{apply_generator_fd, FunctionDomain, MuGrid, SampledFunction};

/// Fraction of `tol` below which the kernel envelope is truncated.
pub const TRUNCATION_FRACTION: f64 = 1e-2;

/// Longest sub-panel, in mu, of the cell-wise rule.
pub const MAX_PANEL: f64 = 0.25;

const GL3_NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

#[derive(Debug, Clone)]
pub struct GreenKernel {
    family: EvolutionFamily,
    projection: ProjectionFamily,
    n: f64,
    nu: f64,
}

impl GreenKernel {
    pub fn new(
        family: EvolutionFamily,
        projection: ProjectionFamily,
        n: f64,
        nu: f64,
    ) -> Result<Self> {
        if !(nu > 0.0) || !(n >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need nu > 0 and N >= 1, got nu = {nu}, N = {n}"
            )));
        }
        if projection.rate().id() != family.rate().id() {
            return Err(Error::IncompatibleRate);
        }
        if projection.dim() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                found: projection.dim(),
            });
        }
        Ok(Self {
            family,
            projection,
            n,
            nu,
        })
    }

    /// Detected projections with fitted and verified constants.
    pub fn detect(family: &EvolutionFamily, config: &DichotomyConfig) -> Result<Self> {
        let p = dichotomy::detect_projection(family, config.window_mu)?;
        let c = dichotomy::estimate_constants(family, &p, config)?;
        let cert = dichotomy::verify_h_dichotomy(family, &p, c.n, c.nu, config)?;
        if !cert.verdict {
            return Err(Error::NoDichotomy(format!(
                "fitted constants fail verification (residuals {:e}, {:e})",
                cert.worst_stable_residual, cert.worst_unstable_residual
            )));
        }
        Self::new(family.clone(), p, c.n, c.nu)
    }

    pub fn family(&self) -> &EvolutionFamily {
        &self.family
    }

    pub fn projection(&self) -> &ProjectionFamily {
        &self.projection
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `N exp(-nu |d|)`.
    pub fn envelope(&self, d: f64) -> f64 {
        self.n * (-self.nu * d.abs()).exp()
    }

    /// `U(t0,s0) P(s0)` above the diagonal, `-U_Q(s0,t0)^{-1} Q(s0)` below.
    pub fn gamma(&self, t0: &HPoint, s0: &HPoint) -> Result<DMatrix<f64>> {
        let id = self.family.rate().id();
        if t0.rate_id() != id || s0.rate_id() != id {
            return Err(Error::IncompatibleRate);
        }
        self.gamma_mu(t0.mu, s0.mu)
    }

    pub fn gamma_mu(&self, x_t: f64, x_s: f64) -> Result<DMatrix<f64>> {
        if x_t == x_s {
            return Err(Error::Diagonal);
        }
        if x_t > x_s {
            self.stable_branch(x_t, x_s)
        } else {
            Ok(-self.unstable_branch(x_t, x_s)?)
        }
    }

    /// `U(x_t, x_s) P(x_s)` for `x_t >= x_s`, including the diagonal limit.
    fn stable_branch(&self, x_t: f64, x_s: f64) -> Result<DMatrix<f64>> {
        dichotomy::stable_evolution(&self.family, &self.projection, x_t, x_s)
    }

    /// `U_Q(x_s, x_t)^{-1} Q(x_s)` for `x_t <= x_s`, including the diagonal
    /// limit.
    fn unstable_branch(&self, x_t: f64, x_s: f64) -> Result<DMatrix<f64>> {
        dichotomy::unstable_inverse(&self.family, &self.projection, x_s, x_t)
    }

    /// Radius in mu beyond which `N exp(-nu r) ||g|| < tol * 1e-2`.
    pub fn truncation_radius(&self, g_norm: f64, tol: f64) -> f64 {
        ((self.n * g_norm / (tol * TRUNCATION_FRACTION)).ln() / self.nu).max(0.0)
    }
}

/// `[lo, hi]` outside which `g` vanishes, in mu.
fn numerical_support(g: &SampledFunction) -> Option<(f64, f64)> {
    let grid = g.grid();
    if g.decay_envelope().is_some() {
        return Some((grid.start(), grid.end()));
    }
    let (first, last) = g.support_indices()?;
    let lo = grid.x(first.saturating_sub(1));
    let hi = grid.x((last + 1).min(grid.len() - 1));
    Some((lo, hi))
}

/// `∫_a^b f` split at the nodes of `grid`, three-point Gauss-Legendre per
/// piece. Sampled data is linear between nodes, so each piece is smooth.
fn integrate_cells<F>(f: F, a: f64, b: f64, grid: &MuGrid, dim: usize) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let mut acc = DVector::zeros(dim);
    if !(a < b) {
        return Ok(acc);
    }
    let (x0, d) = (grid.start(), grid.delta());
    let first = ((a - x0) / d).floor() as i64 + 1;
    let mut cuts = vec![a];
    let mut k = first;
    loop {
        let node = x0 + k as f64 * d;
        if node >= b - 1e-12 * d {
            break;
        }
        if node > a + 1e-12 * d {
            cuts.push(node);
        }
        k += 1;
    }
    cuts.push(b);
    for w in cuts.windows(2) {
        let pieces = ((w[1] - w[0]) / MAX_PANEL).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / pieces as f64;
        for j in 0..pieces {
            let mid = w[0] + (j as f64 + 0.5) * h;
            for (node, weight) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
                acc += f(mid + 0.5 * h * node)? * (0.5 * h * weight);
            }
        }
    }
    Ok(acc)
}

/// `(B_h^{-1} g)(t0) = -∫ Gamma(t0, s) g(s) dmu_*(s)` at every grid point.
///
/// Both halves of the integral are swept along the grid with the cocycle:
/// the stable part forward, `S(x') = U(x', x) P(x) S(x) + ∫_x^x'`, the
/// unstable part backward through the restricted inverse. Each step only
/// adds one cell integral, split at the nodes where the data has kinks.
pub fn apply_resolvent_inverse(
    k: &GreenKernel,
    g: &SampledFunction,
    spec: &MuQuadratureSpec,
) -> Result<SampledFunction> {
    let rate = k.family.rate();
    if !rate.has_derivative() {
        return Err(Error::Unsupported(
            "the resolvent formula needs a differentiable growth rate".into(),
        ));
    }
    if g.domain() != FunctionDomain::HLine(rate.id()) {
        return Err(Error::IncompatibleRate);
    }
    if g.dim() != k.family.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.family.dim(),
            found: g.dim(),
        });
    }
    spec.validate()?;
    let grid = *g.grid();
    let dim = g.dim();
    let Some((s_lo, s_hi)) = numerical_support(g) else {
        return Ok(SampledFunction::zeros(grid, dim, g.domain()));
    };
    let n = grid.len();
    let xs: Vec<f64> = grid.points().collect();
    let is_zero = |v: &DVector<f64>| v.iter().all(|c| *c == 0.0);

    let mut below = vec![DVector::zeros(dim); n];
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (xs[i], xs[i + 1]);
        let mut next = if is_zero(&below[i]) {
            DVector::zeros(dim)
        } else {
            k.stable_branch(b, a)? * &below[i]
        };
        if b > s_lo && a < s_hi {
            next += integrate_cells(
                |y| Ok(k.stable_branch(b, y)? * g.value_at(y)),
                a.max(s_lo),
                b.min(s_hi),
                &grid,
                dim,
            )?;
        }
        below[i + 1] = next;
    }

    let mut above = vec![DVector::zeros(dim); n];
    for i in (0..n.saturating_sub(1)).rev() {
        let (a, b) = (xs[i], xs[i + 1]);
        let mut next = if is_zero(&above[i + 1]) {
            DVector::zeros(dim)
        } else {
            k.unstable_branch(a, b)? * &above[i + 1]
        };
        if b > s_lo && a < s_hi {
            next += integrate_cells(
                |y| Ok(k.unstable_branch(a, y)? * g.value_at(y)),
                a.max(s_lo),
                b.min(s_hi),
                &grid,
                dim,
            )?;
        }
        above[i] = next;
    }

    let values = above.into_iter().zip(below).map(|(u, s)| u - s).collect();
    SampledFunction::from_parts(grid, values, g.domain())
}

/// `sup ||(T_delta w - w)/delta - g||` over grid points whose stencil stays
/// on the grid and that lie at least `2 delta` from the edges of the support
/// of `g`.
pub fn resolvent_residual(
    family: &EvolutionFamily,
    w: &SampledFunction,
    g: &SampledFunction,
    delta_mu: f64,
) -> Result<f64> {
    let quotient = apply_generator_fd(family, w, delta_mu)?;
    let diff = quotient.sub(g)?;
    let grid = *w.grid();
    let support = numerical_support(g);
    let near_edge = |x: f64| match support {
        Some((lo, hi)) => (x - lo).abs() < 2.0 * delta_mu || (x - hi).abs() < 2.0 * delta_mu,
        None => false,
    };
    let off_stencil = |x: f64| x - delta_mu < grid.start() - 1e-9 * grid.delta();
    let mut worst = 0.0f64;
    for (i, v) in diff.values().iter().enumerate() {
        let x = grid.x(i);
        if near_edge(x) || off_stencil(x) {
            continue;
        }
        worst = worst.max(v.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth_rate::GrowthRate;
    use crate::measure::QuadratureMethod;
    use crate::semigroup::MuGrid;

    fn cubic() -> GrowthRate {
        GrowthRate::shifted_odd_power_exp(2.0, 3).unwrap()
    }

    fn hat(x: f64) -> f64 {
        (1.0 - x.abs()).max(0.0)
    }

    fn adaptive(tol: f64) -> MuQuadratureSpec {
        MuQuadratureSpec::new(QuadratureMethod::Adaptive, tol, 1 << 22).unwrap()
    }

    fn saddle_kernel(c: &GrowthRate) -> GreenKernel {
        let fam = EvolutionFamily::diagonal(&[-1.0, 1.0], c.clone()).unwrap();
        let p = ProjectionFamily::constant(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), c)
            .unwrap();
        GreenKernel::new(fam, p, 1.0, 1.0).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let c = cubic();
        let scalar = EvolutionFamily::diagonal(&[-1.0], c.clone()).unwrap();
        let one = ProjectionFamily::constant(DMatrix::identity(1, 1), &c).unwrap();
        let k = GreenKernel::new(scalar, one, 1.0, 1.0).unwrap();
        let (t0, s0) = (c.point(3.1).unwrap(), c.point(2.4).unwrap());
        let expected = (s0.mu - t0.mu).exp();
        assert!((k.gamma(&t0, &s0).unwrap()[(0, 0)] - expected).abs() < 1e-15);
        assert_eq!(k.gamma(&s0, &t0).unwrap()[(0, 0)], 0.0);
        assert_eq!(k.gamma(&t0, &t0), Err(Error::Diagonal));

        let k = saddle_kernel(&c);
        let g = k.gamma(&s0, &t0).unwrap();
        assert!(g[(0, 0)].abs() < 1e-15);
        assert!((g[(1, 1)] + (s0.mu - t0.mu).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero() {
        let c = cubic();
        let k = saddle_kernel(&c);
        let grid = MuGrid::spanning(-3.0, 3.0, 0.01).unwrap();
        let g = SampledFunction::zeros(grid, 2, FunctionDomain::HLine(c.id()));
        let w = apply_resolvent_inverse(&k, &g, &adaptive(1e-10)).unwrap();
        assert_eq!(w.sup_norm().unwrap(), 0.0);
        assert_eq!(resolvent_residual(k.family(), &w, &g, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn stable_scalar_hat_matches_closed_form() {
        // w(x) = -∫_{-inf}^x e^{-(x-y)} hat(y) dy, integrated by hand
        let exact = |x: f64| -> f64 {
            let piece = |a: f64, b: f64, up: bool| -> f64 {
                // ∫_a^b e^{-(x-y)} (1 ± y) dy with the sign picked by `up`
                let s = if up { 1.0 } else { -1.0 };
                let prim = |y: f64| (-(x - y)).exp() * (1.0 + s * y - s);
                prim(b) - prim(a)
            };
            if x <= -1.0 {
                0.0
            } else if x <= 0.0 {
                -piece(-1.0, x, true)
            } else if x <= 1.0 {
                -(piece(-1.0, 0.0, true) + piece(0.0, x, false))
            } else {
                -(piece(-1.0, 0.0, true) + piece(0.0, 1.0, false))
            }
        };
        let c = cubic();
        let scalar = EvolutionFamily::diagonal(&[-1.0], c.clone()).unwrap();
        let one = ProjectionFamily::constant(DMatrix::identity(1, 1), &c).unwrap();
        let k = GreenKernel::new(scalar, one, 1.0, 1.0).unwrap();
        let grid = MuGrid::spanning(-3.0, 6.0, 0.01).unwrap();
        let g = SampledFunction::scalar_profile(
            grid,
            &DVector::from_element(1, 1.0),
            FunctionDomain::HLine(c.id()),
            hat,
        )
        .unwrap();
        let w = apply_resolvent_inverse(&k, &g, &adaptive(1e-10)).unwrap();
        for (i, v) in w.values().iter().enumerate() {
            let x = grid.x(i);
            assert!(
                (v[0] - exact(x)).abs() < 1e-8,
                "x = {x}: {} vs {}",
                v[0],
                exact(x)
            );
        }
    }

    #[test]
    fn requires_differentiable_rate() {
        let r = GrowthRate::custom(std::sync::Arc::new(|t| t), None, (-10.0, 10.0)).unwrap();
        let fam = EvolutionFamily::diagonal(&[-1.0], r.clone()).unwrap();
        let one = ProjectionFamily::constant(DMatrix::identity(1, 1), &r).unwrap();
        let k = GreenKernel::new(fam, one, 1.0, 1.0).unwrap();
        let grid = MuGrid::spanning(-3.0, 3.0, 0.1).unwrap();
        let g = SampledFunction::scalar_profile(
            grid,
            &DVector::from_element(1, 1.0),
            FunctionDomain::HLine(r.id()),
            hat,
        )
        .unwrap();
        assert!(matches!(
            apply_resolvent_inverse(&k, &g, &adaptive(1e-8)),
            Err(Error::Unsupported(_))
        ));
    }
}

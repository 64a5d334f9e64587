//! h-dichotomies: projection families, constant estimation and
//! verification, hyperbolicity of the evolution h-semigroup, the shifted
//! dichotomy-spectrum scan, and the three-way equivalence report.
//!
//! Long-range products `U(t,s) P(s)` and inverses `U_Q(t,s)^{-1} Q(t)` are
//! evaluated as chains of short pieces between points of a unit mu-lattice.
//! Each piece re-projects, so the error of a detected projection is not
//! amplified by the exponential growth of the unstable part.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::HPoint;
use crate::error::{Error, Result};
use crate::family::{sample_ordered_pairs, EvolutionFamily, HBoundCertificate};
use crate::fit;
use crate::growth_rate::GrowthRate;
use crate::linalg::{idempotency_defect, restricted_inverse, spectral_norm, MAX_CONDITION};
use crate::semigroup::{FunctionDomain, MuGrid, SampledFunction};

/// Singular values at most `10^-1.5` over a detection window count as
/// contracting, at least `10^1.5` as expanding: a three-decade split.
pub const SPLIT_DECADES: f64 = 1.5;

/// Fitted decay rates at or below this value mean "no decay".
pub const NU_MIN: f64 = 1e-2;

/// Slack on the dichotomy inequalities.
pub const VERDICT_SLACK: f64 = 1e-6;

/// Lattice spacing (in mu) of detection anchors and of the chained products.
pub const ANCHOR_SPACING: f64 = 1.0;

/// Constant fits ignore pairs closer than this in mu.
/// Relative lift of the fitted `N` so that pairs outside the fitting sample
/// are still covered.
pub const N_MARGIN: f64 = 1e-5;
pub const FIT_MIN_GAP: f64 = 0.5;

/// Pointwise projector as a function of the point.
pub type ProjectionFn = Arc<dyn Fn(&HPoint) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum ProjSource {
    Constant(DMatrix<f64>),
    Function(ProjectionFn),
    Detected(Arc<Detector>),
}

/// `t -> P_h(t)`, a family of projections on `R^n`.
#[derive(Clone)]
pub struct ProjectionFamily {
    dim: usize,
    rate: GrowthRate,
    source: ProjSource,
}

impl fmt::Debug for ProjectionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let source = match &self.source {
            ProjSource::Constant(m) => format!("constant {m:?}"),
            ProjSource::Function(_) => "function".to_string(),
            ProjSource::Detected(_) => "detected".to_string(),
        };
        f.debug_struct("ProjectionFamily")
            .field("dim", &self.dim)
            .field("rate", &self.rate.id())
            .field("source", &source)
            .finish()
    }
}

impl ProjectionFamily {
    /// `P(t) = p` for all `t`; `p` must be idempotent.
    pub fn constant(p: DMatrix<f64>, rate: &GrowthRate) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::InvalidParameter("projection must be square".into()));
        }
        let defect = idempotency_defect(&p);
        if defect > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "matrix is not a projection (||P^2 - P|| = {defect:e})"
            )));
        }
        Ok(Self {
            dim: p.nrows(),
            rate: rate.clone(),
            source: ProjSource::Constant(p),
        })
    }

    pub fn from_fn(dim: usize, f: ProjectionFn, rate: &GrowthRate) -> Self {
        Self {
            dim,
            rate: rate.clone(),
            source: ProjSource::Function(f),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rate(&self) -> &GrowthRate {
        &self.rate
    }

    pub fn is_detected(&self) -> bool {
        matches!(self.source, ProjSource::Detected(_))
    }

    pub fn evaluate(&self, t: &HPoint) -> Result<DMatrix<f64>> {
        if t.rate_id() != self.rate.id() {
            return Err(Error::IncompatibleRate);
        }
        match &self.source {
            ProjSource::Constant(p) => Ok(p.clone()),
            ProjSource::Function(f) => {
                let p = f(t);
                if p.shape() != (self.dim, self.dim) {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: p.nrows(),
                    });
                }
                Ok(p)
            }
            ProjSource::Detected(d) => d.at(t.mu),
        }
    }

    pub fn eval_mu(&self, x: f64) -> Result<DMatrix<f64>> {
        match &self.source {
            ProjSource::Constant(p) => Ok(p.clone()),
            ProjSource::Detected(d) => d.at(x),
            ProjSource::Function(_) => self.evaluate(&self.rate.from_mu(x)?),
        }
    }

    /// `Q(x) = I - P(x)`.
    pub fn complement_mu(&self, x: f64) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.dim, self.dim) - self.eval_mu(x)?)
    }

    pub fn rank(&self, x: f64) -> Result<usize> {
        Ok(self.eval_mu(x)?.trace().round().max(0.0) as usize)
    }

    /// Worst idempotency defect, relative intertwining residual
    /// `||P(t)U(t,s) - U(t,s)P(s)|| / max(1, ||U(t,s)||)` and `sup ||P||` over
    /// random pairs with `mu(t) - mu(s) <= max_gap`.
    pub fn audit(
        &self,
        family: &EvolutionFamily,
        window_mu: (f64, f64),
        max_gap: f64,
        samples: usize,
        seed: u64,
    ) -> Result<ProjectionAudit> {
        let (lo, hi) = window_mu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut audit = ProjectionAudit::default();
        for (xt, xs) in sample_ordered_pairs(&mut rng, lo, hi, samples) {
            let xt = xs + (xt - xs).min(max_gap);
            let (pt, ps) = (self.eval_mu(xt)?, self.eval_mu(xs)?);
            let u = family.eval_mu(xt, xs)?;
            let r = spectral_norm(&(&pt * &u - &u * &ps)) / spectral_norm(&u).max(1.0);
            audit.intertwining = audit.intertwining.max(r);
            audit.idempotency = audit
                .idempotency
                .max(idempotency_defect(&pt))
                .max(idempotency_defect(&ps));
            audit.sup_norm = audit
                .sup_norm
                .max(spectral_norm(&pt))
                .max(spectral_norm(&ps));
        }
        Ok(audit)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ProjectionAudit {
    pub idempotency: f64,
    pub intertwining: f64,
    pub sup_norm: f64,
}

/// Stable and unstable subspaces at one point, as orthonormal bases.
struct Split {
    stable: DMatrix<f64>,
    unstable: DMatrix<f64>,
}

fn column_subset(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Forward products whose condition exceeds this are not trusted for their
/// small singular values.
const SVD_RELIABLE: f64 = 1e12;

/// Segment endpoints covering `[x, x + w]` with pieces of length at most one.
fn segments(x: f64, w: f64) -> Vec<(f64, f64)> {
    let pieces = (w / ANCHOR_SPACING).ceil().max(1.0) as usize;
    let h = w / pieces as f64;
    (0..pieces)
        .map(|k| {
            (
                x + k as f64 * h,
                if k + 1 == pieces {
                    x + w
                } else {
                    x + (k + 1) as f64 * h
                },
            )
        })
        .collect()
}

/// Discrete QR method: pushes a generic orthonormal frame through `warmup`
/// and then through `pieces`, returning the final frame with the log growth
/// of each column accumulated over `pieces` only. The warm-up aligns the
/// frame so that growth is not polluted by the start.
fn graded_frame(
    n: usize,
    warmup: Vec<DMatrix<f64>>,
    pieces: Vec<DMatrix<f64>>,
) -> (DMatrix<f64>, Vec<f64>) {
    // fixed generic start so that no column sits in an invariant subspace
    let start = DMatrix::from_fn(n, n, |i, j| {
        ((i * n + j + 1) as f64 * 0.618_033_988_749_895).fract() - 0.5
            + if i == j { 1.0 } else { 0.0 }
    });
    let mut q = start.qr().q();
    for a in warmup {
        q = (a * &q).qr().q();
    }
    let mut growth = vec![0.0; n];
    for a in pieces {
        let qr = (a * &q).qr();
        let r = qr.r();
        for (i, g) in growth.iter_mut().enumerate() {
            *g += r[(i, i)].abs().ln();
        }
        q = qr.q();
    }
    (q, growth)
}

fn leading_columns(q: &DMatrix<f64>, growth: &[f64], min_log: f64) -> DMatrix<f64> {
    let k = growth.iter().take_while(|&&g| g >= min_log).count();
    q.columns(0, k).into_owned()
}

/// Stable directions at `x`: right singular vectors of `U(x + w, x)` whose
/// singular values are at most `10^-SPLIT_DECADES`.
fn stable_directions(family: &EvolutionFamily, x: f64, w: f64) -> Result<DMatrix<f64>> {
    let svd = family.eval_mu(x + w, x)?.svd(false, true);
    let sv = &svd.singular_values;
    if sv.min() * SVD_RELIABLE < sv.max() {
        let inverses = |x0: f64| -> Result<Option<Vec<DMatrix<f64>>>> {
            segments(x0, w)
                .iter()
                .rev()
                .map(|&(a, b)| family.eval_mu(b, a).map(|m| m.try_inverse()))
                .collect()
        };
        if let (Some(warmup), Some(pieces)) = (inverses(x + w)?, inverses(x)?) {
            let (q, growth) = graded_frame(family.dim(), warmup, pieces);
            return Ok(leading_columns(
                &q,
                &growth,
                SPLIT_DECADES * std::f64::consts::LN_10,
            ));
        }
    }
    let v_t = svd.v_t.expect("right singular vectors requested");
    let cut = 10f64.powf(-SPLIT_DECADES);
    let cols: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= cut).collect();
    Ok(column_subset(&v_t.transpose(), &cols))
}

/// Unstable directions at `x`: left singular vectors of `U(x, x - w)` whose
/// singular values are at least `10^SPLIT_DECADES`.
fn unstable_directions(family: &EvolutionFamily, x: f64, w: f64) -> Result<DMatrix<f64>> {
    let svd = family.eval_mu(x, x - w)?.svd(true, false);
    let sv = &svd.singular_values;
    if sv.min() * SVD_RELIABLE < sv.max() {
        let forward = |x0: f64| {
            segments(x0, w)
                .iter()
                .map(|&(a, b)| family.eval_mu(b, a))
                .collect::<Result<Vec<_>>>()
        };
        let (q, growth) = graded_frame(family.dim(), forward(x - 2.0 * w)?, forward(x - w)?);
        return Ok(leading_columns(
            &q,
            &growth,
            SPLIT_DECADES * std::f64::consts::LN_10,
        ));
    }
    let u = svd.u.expect("left singular vectors requested");
    let cut = 10f64.powf(SPLIT_DECADES);
    let cols: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] >= cut).collect();
    Ok(column_subset(&u, &cols))
}

fn split_at(family: &EvolutionFamily, x: f64, w: f64) -> Result<Split> {
    let stable = stable_directions(family, x, w)?;
    let unstable = unstable_directions(family, x, w)?;
    if stable.ncols() + unstable.ncols() != family.dim() {
        let svd = family.eval_mu(x + w, x)?.svd(false, false);
        return Err(Error::UndetectableSplitting {
            mu: x,
            singular_values: svd.singular_values.iter().copied().collect(),
        });
    }
    Ok(Split { stable, unstable })
}

/// Projection onto `span(stable)` along `span(unstable)`.
fn projection_from_split(split: &Split, mu: f64) -> Result<DMatrix<f64>> {
    let n = split.stable.nrows();
    let k = split.stable.ncols();
    if k == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    if k == n {
        return Ok(DMatrix::identity(n, n));
    }
    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, k).copy_from(&split.stable);
    basis.columns_mut(k, n - k).copy_from(&split.unstable);
    let sv = basis.clone().svd(false, false).singular_values;
    if sv.min() * MAX_CONDITION < sv.max() {
        return Err(Error::UndetectableSplitting {
            mu,
            singular_values: sv.iter().copied().collect(),
        });
    }
    let inv = basis
        .clone()
        .try_inverse()
        .ok_or(Error::UndetectableSplitting {
            mu,
            singular_values: sv.iter().copied().collect(),
        })?;
    let mut select = DMatrix::zeros(n, n);
    for i in 0..k {
        select[(i, i)] = 1.0;
    }
    Ok(&basis * select * inv)
}

struct Detector {
    family: EvolutionFamily,
    window: f64,
    anchors: RwLock<HashMap<i64, DMatrix<f64>>>,
}

impl Detector {
    fn raw(&self, x: f64) -> Result<DMatrix<f64>> {
        projection_from_split(&split_at(&self.family, x, self.window)?, x)
    }

    fn anchor(&self, k: i64) -> Result<DMatrix<f64>> {
        if let Some(p) = self.anchors.read().expect("anchor lock poisoned").get(&k) {
            return Ok(p.clone());
        }
        let p = self.raw(k as f64 * ANCHOR_SPACING)?;
        self.anchors
            .write()
            .expect("anchor lock poisoned")
            .entry(k)
            .or_insert_with(|| p.clone());
        Ok(p)
    }

    /// `P(x) = U(x,a) P(a) U(x,a)^{-1}` from the anchor `a <= x`, or a fresh
    /// detection when `U(x,a)` is badly conditioned.
    fn at(&self, x: f64) -> Result<DMatrix<f64>> {
        let k = (x / ANCHOR_SPACING).floor() as i64;
        let a = k as f64 * ANCHOR_SPACING;
        let pa = self.anchor(k)?;
        if x == a {
            return Ok(pa);
        }
        let m = self.family.eval_mu(x, a)?;
        let sv = m.clone().svd(false, false).singular_values;
        if sv.min() * MAX_CONDITION >= sv.max() {
            if let Some(inv) = m.clone().try_inverse() {
                return Ok(&m * pa * inv);
            }
        }
        self.raw(x)
    }
}

/// Detects the dichotomy projections of `family` from singular value splits
/// of `U` over windows of length `window_mu`, on a unit anchor lattice.
///
/// Detection at `mu = 0` is done eagerly so that a missing splitting is
/// reported here rather than at first use.
pub fn detect_projection(family: &EvolutionFamily, window_mu: f64) -> Result<ProjectionFamily> {
    if !(window_mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "detection window {window_mu} must be positive"
        )));
    }
    let det = Detector {
        family: family.clone(),
        window: window_mu,
        anchors: RwLock::new(HashMap::new()),
    };
    det.anchor(0)?;
    Ok(ProjectionFamily {
        dim: family.dim(),
        rate: family.rate().clone(),
        source: ProjSource::Detected(Arc::new(det)),
    })
}

/// Orthogonal projection onto the contracting directions at `mu = 0`; a
/// witness projection for families without a detectable splitting.
pub fn contracting_projection(
    family: &EvolutionFamily,
    window_mu: f64,
) -> Result<ProjectionFamily> {
    let s = stable_directions(family, 0.0, window_mu)?;
    ProjectionFamily::constant(&s * s.transpose(), family.rate())
}

/// Breakpoints `x_s = b_0 < b_1 < ... < b_m = x_t` on the anchor lattice.
fn breakpoints(x_s: f64, x_t: f64) -> Vec<f64> {
    let mut pts = vec![x_s];
    let mut k = (x_s / ANCHOR_SPACING).floor() as i64 + 1;
    loop {
        let b = k as f64 * ANCHOR_SPACING;
        if b >= x_t - 1e-12 {
            break;
        }
        if b > x_s + 1e-12 {
            pts.push(b);
        }
        k += 1;
    }
    pts.push(x_t);
    pts
}

/// `U(t,s) P(s)` in mu-coordinates, `x_t >= x_s`.
pub fn stable_evolution(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    x_t: f64,
    x_s: f64,
) -> Result<DMatrix<f64>> {
    if !p.is_detected() {
        return Ok(family.eval_mu(x_t, x_s)? * p.eval_mu(x_s)?);
    }
    let pts = breakpoints(x_s, x_t);
    let mut acc = p.eval_mu(x_s)?;
    for w in pts.windows(2) {
        acc = p.eval_mu(w[1])? * family.eval_mu(w[1], w[0])? * acc;
    }
    Ok(acc)
}

/// `U_Q(t,s)^{-1} Q(t)`: the inverse of `U(t,s)` restricted to
/// `range Q(s) -> range Q(t)`, composed with `Q(t)`.
pub fn unstable_inverse(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    x_t: f64,
    x_s: f64,
) -> Result<DMatrix<f64>> {
    if !p.is_detected() {
        let direct = restricted_inverse(
            &family.eval_mu(x_t, x_s)?,
            &p.complement_mu(x_s)?,
            &p.complement_mu(x_t)?,
        );
        if !matches!(direct, Err(Error::RestrictedInversion { .. })) {
            return direct;
        }
    }
    let pts = breakpoints(x_s, x_t);
    let n = family.dim();
    let mut acc = DMatrix::identity(n, n);
    for w in pts.windows(2) {
        let piece = restricted_inverse(
            &family.eval_mu(w[1], w[0])?,
            &p.complement_mu(w[0])?,
            &p.complement_mu(w[1])?,
        )?;
        acc *= piece;
    }
    Ok(acc)
}

/// Sampling design shared by estimation and verification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DichotomyConfig {
    /// Largest `mu(t) - mu(s)` sampled, and the detection window.
    pub window_mu: f64,
    /// Pairs are drawn with both ends in `center_mu +- window_mu / 2`.
    pub center_mu: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DichotomyConfig {
    fn default() -> Self {
        Self {
            window_mu: 20.0,
            center_mu: 0.0,
            samples: 200,
            seed: 42,
        }
    }
}

impl DichotomyConfig {
    fn pairs(&self, rate: &GrowthRate, seed: u64) -> Result<Vec<(f64, f64)>> {
        if !(self.window_mu > 0.0) || self.samples == 0 {
            return Err(Error::InvalidParameter(
                "dichotomy sampling needs window_mu > 0 and samples > 0".into(),
            ));
        }
        let (rlo, rhi) = rate.mu_range();
        let lo = (self.center_mu - 0.5 * self.window_mu).max(rlo);
        let hi = (self.center_mu + 0.5 * self.window_mu).min(rhi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sample_ordered_pairs(&mut rng, lo, hi, self.samples))
    }
}

/// `(mu(t) - mu(s), ln ||.||)` samples for both sides of a dichotomy.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DecayClouds {
    pub stable: Vec<(f64, f64)>,
    pub unstable: Vec<(f64, f64)>,
}

pub fn decay_clouds(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    config: &DichotomyConfig,
) -> Result<DecayClouds> {
    let mut clouds = DecayClouds::default();
    for (xt, xs) in config.pairs(family.rate(), config.seed)? {
        let d = xt - xs;
        let ns = spectral_norm(&stable_evolution(family, p, xt, xs)?);
        if ns > 0.0 {
            clouds.stable.push((d, ns.ln()));
        }
        let nu = spectral_norm(&unstable_inverse(family, p, xt, xs)?);
        if nu > 0.0 {
            clouds.unstable.push((d, nu.ln()));
        }
    }
    Ok(clouds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DichotomyConstants {
    #[serde(rename = "N")]
    pub n: f64,
    pub nu: f64,
    pub nu_stable: Option<f64>,
    pub nu_unstable: Option<f64>,
}

fn side_rate(cloud: &[(f64, f64)], side: &str) -> Result<Option<f64>> {
    let far: Vec<(f64, f64)> = cloud
        .iter()
        .copied()
        .filter(|(d, _)| *d >= FIT_MIN_GAP)
        .collect();
    if far.is_empty() {
        return Ok(None);
    }
    let slope = fit::upper_hull_slope(&far).unwrap_or(0.0);
    let nu = -slope;
    if !(nu > NU_MIN) {
        return Err(Error::NoDichotomy(format!(
            "{side} side fitted slope {slope:.4} shows no decay"
        )));
    }
    Ok(Some(nu))
}

/// Binding `(N, nu)` from decay clouds: slopes fitted on the upper hull for
/// `mu(t) - mu(s) >= 0.5`, `N` lifted over every sample.
pub fn fit_constants(clouds: &DecayClouds) -> Result<DichotomyConstants> {
    let nu_stable = side_rate(&clouds.stable, "stable")?;
    let nu_unstable = side_rate(&clouds.unstable, "unstable")?;
    let nu = match (nu_stable, nu_unstable) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => {
            return Err(Error::NoDichotomy(
                "no usable samples on either side".into(),
            ))
        }
    };
    let all: Vec<(f64, f64)> = clouds
        .stable
        .iter()
        .chain(&clouds.unstable)
        .copied()
        .collect();
    let ln_n = fit::lift_intercept(&all, -nu).max(0.0);
    Ok(DichotomyConstants {
        n: ln_n.exp() * (1.0 + N_MARGIN),
        nu,
        nu_stable,
        nu_unstable,
    })
}

pub fn estimate_constants(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    config: &DichotomyConfig,
) -> Result<DichotomyConstants> {
    fit_constants(&decay_clouds(family, p, config)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DichotomyCertificate {
    #[serde(rename = "N")]
    pub n: f64,
    pub nu: f64,
    pub worst_stable_residual: f64,
    pub worst_unstable_residual: f64,
    pub verdict: bool,
}

/// Checks both dichotomy inequalities on fresh random pairs (seed offset by
/// one from the estimation draw).
pub fn verify_h_dichotomy(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    n: f64,
    nu: f64,
    config: &DichotomyConfig,
) -> Result<DichotomyCertificate> {
    if !(nu > 0.0) || !(n >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need nu > 0 and N >= 1, got nu = {nu}, N = {n}"
        )));
    }
    let mut ws = f64::NEG_INFINITY;
    let mut wu = f64::NEG_INFINITY;
    for (xt, xs) in config.pairs(family.rate(), config.seed.wrapping_add(1))? {
        let bound = n * (-nu * (xt - xs)).exp();
        ws = ws.max(spectral_norm(&stable_evolution(family, p, xt, xs)?) - bound);
        wu = wu.max(spectral_norm(&unstable_inverse(family, p, xt, xs)?) - bound);
    }
    Ok(DichotomyCertificate {
        n,
        nu,
        worst_stable_residual: ws,
        worst_unstable_residual: wu,
        verdict: ws <= VERDICT_SLACK && wu <= VERDICT_SLACK,
    })
}

/// `(T_{t0} P u)(x) = U(x, x - mu(t0)) P(x - mu(t0)) u(x - mu(t0))`.
fn projected_forward(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    t0_mu: f64,
    u: &SampledFunction,
) -> Result<SampledFunction> {
    let g = *u.grid();
    let values = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.x(i);
            let src = u.value_at(x - t0_mu);
            if src.amax() == 0.0 {
                return Ok(DVector::zeros(u.dim()));
            }
            Ok(stable_evolution(family, p, x, x - t0_mu)? * src)
        })
        .collect::<Result<Vec<_>>>()?;
    SampledFunction::from_parts(g, values, u.domain())
}

/// `((T_{t0})_Q^{-1} Q u)(x) = U_Q(x + mu(t0), x)^{-1} Q(x + mu(t0)) u(x + mu(t0))`.
fn projected_backward(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    t0_mu: f64,
    u: &SampledFunction,
) -> Result<SampledFunction> {
    let g = *u.grid();
    let values = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let x = g.x(i);
            let src = u.value_at(x + t0_mu);
            if src.amax() == 0.0 {
                return Ok(DVector::zeros(u.dim()));
            }
            Ok(unstable_inverse(family, p, x + t0_mu, x)? * src)
        })
        .collect::<Result<Vec<_>>>()?;
    SampledFunction::from_parts(g, values, u.domain())
}

/// Per-`t0` ratios `||T_{t0} P u|| / ||u||` and `||(T_{t0})_Q^{-1} Q u|| / ||u||`,
/// maximized over probes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemigroupDecay {
    pub t0_mu: Vec<f64>,
    pub stable_ratio: Vec<f64>,
    pub unstable_ratio: Vec<f64>,
}

pub fn semigroup_decay(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    probes: &[SampledFunction],
    t0_list: &[HPoint],
) -> Result<SemigroupDecay> {
    if probes.is_empty() || t0_list.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one probe and one t0".into(),
        ));
    }
    let mut out = SemigroupDecay {
        t0_mu: Vec::new(),
        stable_ratio: Vec::new(),
        unstable_ratio: Vec::new(),
    };
    for t0 in t0_list {
        if t0.rate_id() != family.rate().id() {
            return Err(Error::IncompatibleRate);
        }
        if t0.mu < 0.0 {
            return Err(Error::Domain(format!(
                "T_t needs t >= e_*, got mu = {}",
                t0.mu
            )));
        }
        let (mut s, mut q) = (0.0f64, 0.0f64);
        for u in probes {
            if u.domain() != FunctionDomain::HLine(family.rate().id()) {
                return Err(Error::IncompatibleRate);
            }
            let norm = u.sup_norm()?;
            if norm == 0.0 {
                continue;
            }
            s = s.max(projected_forward(family, p, t0.mu, u)?.sup_norm()? / norm);
            q = q.max(projected_backward(family, p, t0.mu, u)?.sup_norm()? / norm);
        }
        out.t0_mu.push(t0.mu);
        out.stable_ratio.push(s);
        out.unstable_ratio.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityReport {
    pub passed: bool,
    pub worst_stable_residual: f64,
    pub worst_unstable_residual: f64,
}

/// Checks `||T_{t0} P u|| <= N h(t0)^{-nu} ||u||` and the analogous bound for
/// the inverse on the unstable part, for every probe and `t0`.
pub fn hyperbolicity_test(
    family: &EvolutionFamily,
    p: &ProjectionFamily,
    probes: &[SampledFunction],
    t0_list: &[HPoint],
    n: f64,
    nu: f64,
) -> Result<HyperbolicityReport> {
    let decay = semigroup_decay(family, p, probes, t0_list)?;
    Ok(hyperbolicity_from_decay(&decay, n, nu))
}

fn hyperbolicity_from_decay(decay: &SemigroupDecay, n: f64, nu: f64) -> HyperbolicityReport {
    let mut ws = f64::NEG_INFINITY;
    let mut wu = f64::NEG_INFINITY;
    for ((x, s), q) in decay
        .t0_mu
        .iter()
        .zip(&decay.stable_ratio)
        .zip(&decay.unstable_ratio)
    {
        let bound = n * (-nu * x).exp();
        ws = ws.max(s - bound);
        wu = wu.max(q - bound);
    }
    let passed = nu > 0.0 && ws <= VERDICT_SLACK && wu <= VERDICT_SLACK;
    HyperbolicityReport {
        passed,
        worst_stable_residual: ws,
        worst_unstable_residual: wu,
    }
}

/// Operator-level constants: the same hull fit as [`fit_constants`], on
/// `(mu(t0), ln ratio)` points.
pub fn fit_semigroup_constants(decay: &SemigroupDecay) -> Result<DichotomyConstants> {
    let to_cloud = |r: &[f64]| -> Vec<(f64, f64)> {
        decay
            .t0_mu
            .iter()
            .zip(r)
            .filter(|(_, v)| **v > 0.0)
            .map(|(x, v)| (*x, v.ln()))
            .collect()
    };
    fit_constants(&DecayClouds {
        stable: to_cloud(&decay.stable_ratio),
        unstable: to_cloud(&decay.unstable_ratio),
    })
}

/// Gaussian bumps `exp(-(x-c)^2)` along each coordinate axis and along the
/// diagonal, centred at `-2, 0, 2`.
pub fn default_probes(family: &EvolutionFamily, grid: MuGrid) -> Result<Vec<SampledFunction>> {
    let n = family.dim();
    let mut directions: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            e
        })
        .collect();
    if n > 1 {
        directions.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let dom = FunctionDomain::HLine(family.rate().id());
    let mut probes = Vec::new();
    for c in [-2.0, 0.0, 2.0] {
        for e in &directions {
            probes.push(SampledFunction::scalar_profile(grid, e, dom, |x| {
                (-(x - c) * (x - c)).exp()
            })?);
        }
    }
    Ok(probes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumScan {
    pub lambda_grid: Vec<f64>,
    pub has_dichotomy: Vec<bool>,
    pub gap_around_zero: bool,
    pub window_mu: f64,
}

impl SpectrumScan {
    pub fn in_spectrum(&self) -> impl Iterator<Item = (f64, bool)> + '_ {
        self.lambda_grid
            .iter()
            .zip(&self.has_dichotomy)
            .map(|(l, h)| (*l, !h))
    }
}

/// Whether `family` has a detectable, verified dichotomy.
pub fn has_dichotomy(family: &EvolutionFamily, config: &DichotomyConfig) -> bool {
    let run = || -> Result<bool> {
        let p = detect_projection(family, config.window_mu)?;
        let c = estimate_constants(family, &p, config)?;
        Ok(verify_h_dichotomy(family, &p, c.n, c.nu, config)?.verdict)
    };
    run().unwrap_or(false)
}

/// Scans `lambda` for dichotomies of `exp(-lambda (mu(t) - mu(s))) U(t,s)`.
pub fn dichotomy_spectrum(
    family: &EvolutionFamily,
    lambda_lo: f64,
    lambda_hi: f64,
    n_lambda: usize,
    config: &DichotomyConfig,
) -> Result<SpectrumScan> {
    if !(lambda_lo < lambda_hi) {
        return Err(Error::InvalidInterval {
            lo: lambda_lo,
            hi: lambda_hi,
        });
    }
    if n_lambda < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 lambda values, got {n_lambda}"
        )));
    }
    let step = (lambda_hi - lambda_lo) / (n_lambda - 1) as f64;
    let lambda_grid: Vec<f64> = (0..n_lambda)
        .map(|i| {
            let l = lambda_lo + i as f64 * step;
            if l.abs() < 1e-9 * step {
                0.0
            } else {
                // strip accumulation noise so grid values print cleanly
                (l * 1e12).round() / 1e12
            }
        })
        .collect();
    let has: Vec<bool> = lambda_grid
        .par_iter()
        .map(|&l| has_dichotomy(&family.shifted(l), config))
        .collect();
    let gap_around_zero = match lambda_grid.iter().position(|&l| l == 0.0) {
        Some(i) => has[i],
        None => has_dichotomy(family, config),
    };
    Ok(SpectrumScan {
        lambda_grid,
        has_dichotomy: has,
        gap_around_zero,
        window_mu: config.window_mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdicts {
    pub hyperbolic: bool,
    pub dichotomy: bool,
    pub spectral_gap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportConstants {
    #[serde(rename = "N")]
    pub n: Option<f64>,
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub lambda: f64,
    pub in_spectrum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub verdicts: Verdicts,
    pub constants: ReportConstants,
    pub spectrum: Vec<SpectrumPoint>,
    pub agree: bool,
    pub h_bound: HBoundCertificate,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceConfig {
    pub dichotomy: DichotomyConfig,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub n_lambda: usize,
    /// Grid for the semigroup probes.
    pub probe_grid: MuGrid,
    /// `mu(t0)` values for the semigroup checks.
    pub t0_mu: Vec<f64>,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            dichotomy: DichotomyConfig::default(),
            lambda_lo: -2.0,
            lambda_hi: 2.0,
            n_lambda: 21,
            probe_grid: MuGrid::new(-12.0, 0.05, 481).expect("valid grid"),
            t0_mu: vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 6.0],
        }
    }
}

/// Runs the semigroup, pointwise and spectral characterizations side by
/// side. The semigroup verdict uses constants fitted on operator norms of
/// `T_{t0}`, independently of the pairwise fit.
pub fn equivalence_report(
    family: &EvolutionFamily,
    config: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    let dc = &config.dichotomy;
    let mut warnings = Vec::new();
    let rate = family.rate();
    let (rlo, rhi) = rate.mu_range();
    let half = 0.5 * dc.window_mu;
    let h_bound = family.estimate_h_bound(
        (
            &rate.from_mu((dc.center_mu - half).max(rlo))?,
            &rate.from_mu((dc.center_mu + half).min(rhi))?,
        ),
        dc.samples.max(10),
        dc.seed,
    )?;

    let p = match detect_projection(family, dc.window_mu) {
        Ok(p) => p,
        Err(e @ Error::UndetectableSplitting { .. }) => {
            warnings.push(format!(
                "{e}; semigroup check uses the contracting-subspace projection"
            ));
            contracting_projection(family, dc.window_mu)?
        }
        Err(e) => return Err(e),
    };

    let mut constants = ReportConstants { n: None, nu: None };
    let dichotomy = match estimate_constants(family, &p, dc) {
        Ok(c) => {
            constants = ReportConstants {
                n: Some(c.n),
                nu: Some(c.nu),
            };
            verify_h_dichotomy(family, &p, c.n, c.nu, dc)?.verdict
        }
        Err(Error::NoDichotomy(msg)) => {
            warnings.push(format!("pairwise fit: {msg}"));
            false
        }
        Err(e) => return Err(e),
    };

    let probes = default_probes(family, config.probe_grid)?;
    let t0: Vec<HPoint> = config
        .t0_mu
        .iter()
        .map(|&x| rate.from_mu(x))
        .collect::<Result<_>>()?;
    let decay = semigroup_decay(family, &p, &probes, &t0)?;
    let hyperbolic = match fit_semigroup_constants(&decay) {
        Ok(c) => hyperbolicity_from_decay(&decay, c.n, c.nu).passed,
        Err(Error::NoDichotomy(msg)) => {
            warnings.push(format!("semigroup fit: {msg}"));
            false
        }
        Err(e) => return Err(e),
    };

    let scan = dichotomy_spectrum(
        family,
        config.lambda_lo,
        config.lambda_hi,
        config.n_lambda,
        dc,
    )?;
    let verdicts = Verdicts {
        hyperbolic,
        dichotomy,
        spectral_gap: scan.gap_around_zero,
    };
    let agree =
        verdicts.hyperbolic == verdicts.dichotomy && verdicts.dichotomy == verdicts.spectral_gap;
    if !agree {
        warnings.push(format!(
            "verdicts disagree (hyperbolic {}, dichotomy {}, spectral gap {}); likely a numerical-resolution effect",
            hyperbolic, dichotomy, scan.gap_around_zero
        ));
    }
    let spectrum = scan
        .in_spectrum()
        .map(|(lambda, in_spectrum)| SpectrumPoint {
            lambda,
            in_spectrum,
        })
        .collect();
    Ok(EquivalenceReport {
        verdicts,
        constants,
        spectrum,
        agree,
        h_bound,
        warnings,
    })
}

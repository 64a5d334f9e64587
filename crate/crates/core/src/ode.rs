//! Dormand–Prince 5(4) integration of the matrix ODE `W' = A(x) W`.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Coefficient `x -> A(x)` of a linear ODE posed in mu-time.
pub type CoefficientFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Spacing of the mu-lattice on which segment propagators are cached.
pub const CHECKPOINT_SPACING: f64 = 0.1;

const MAX_STEPS: usize = 1_000_000;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last row of A (FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Propagates `W' = A(x) W` from `x0` to `x1 >= x0` starting at `w0`,
/// with mixed absolute/relative local tolerance `tol`.
pub fn integrate_matrix(
    coeff: &CoefficientFn,
    w0: DMatrix<f64>,
    x0: f64,
    x1: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let span = x1 - x0;
    if span <= 0.0 {
        return Ok(w0);
    }
    let mut x = x0;
    let mut w = w0;
    let mut h = span.min(0.05);
    let h_min = 1e-14 * (1.0 + x0.abs().max(x1.abs()));
    let mut k: Vec<DMatrix<f64>> = Vec::with_capacity(7);
    for _ in 0..MAX_STEPS {
        let remaining = x1 - x;
        if remaining <= 0.0 {
            return Ok(w);
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        k.clear();
        for stage in 0..7 {
            let mut arg = w.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    arg += kj * (h * a);
                }
            }
            k.push(coeff(x + C[stage] * h) * arg);
        }
        let mut next = w.clone();
        let mut err = DMatrix::zeros(w.nrows(), w.ncols());
        for stage in 0..7 {
            if B5[stage] != 0.0 {
                next += &k[stage] * (h * B5[stage]);
            }
            err += &k[stage] * (h * (B5[stage] - B4[stage]));
        }
        let scale = tol * (1.0 + w.amax().max(next.amax()));
        let ratio = err.amax() / scale;
        if !ratio.is_finite() {
            return Err(Error::Stiffness { x, step: h });
        }
        if ratio <= 1.0 {
            x = if last { x1 } else { x + h };
            w = next;
        }
        let factor = if ratio == 0.0 {
            5.0
        } else {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        };
        let proposed = h * factor;
        if ratio > 1.0 && proposed < h_min && remaining > h_min {
            return Err(Error::Stiffness { x, step: proposed });
        }
        h = proposed.max(h_min);
    }
    Err(Error::Stiffness { x, step: h })
}

/// Propagator of a matrix ODE with segments cached on a uniform mu-lattice.
///
/// The cache is insert-only and guarded by a read-write lock, so concurrent
/// readers never block each other once a segment has been computed.
pub struct OdePropagator {
    dim: usize,
    coeff: CoefficientFn,
    step_tol: f64,
    spacing: f64,
    cache: RwLock<HashMap<i64, DMatrix<f64>>>,
}

impl OdePropagator {
    pub fn new(dim: usize, coeff: CoefficientFn, step_tol: f64) -> Result<Self> {
        if !(step_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "step tolerance {step_tol} must be positive"
            )));
        }
        let probe = coeff(0.0);
        if probe.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: probe.nrows(),
            });
        }
        Ok(Self {
            dim,
            coeff,
            step_tol,
            spacing: CHECKPOINT_SPACING,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn lattice(&self, k: i64) -> f64 {
        k as f64 * self.spacing
    }

    fn segment(&self, k: i64) -> Result<DMatrix<f64>> {
        if let Some(m) = self.cache.read().expect("cache lock poisoned").get(&k) {
            return Ok(m.clone());
        }
        let m = self.integrate(self.lattice(k), self.lattice(k + 1))?;
        self.cache
            .write()
            .expect("cache lock poisoned")
            .entry(k)
            .or_insert_with(|| m.clone());
        Ok(m)
    }

    fn integrate(&self, x0: f64, x1: f64) -> Result<DMatrix<f64>> {
        integrate_matrix(
            &self.coeff,
            DMatrix::identity(self.dim, self.dim),
            x0,
            x1,
            self.step_tol,
        )
    }

    /// `W(x_t, x_s)` for `x_t >= x_s`.
    pub fn propagate(&self, x_t: f64, x_s: f64) -> Result<DMatrix<f64>> {
        if x_t < x_s {
            return Err(Error::Domain(format!(
                "propagator needs x_t >= x_s, got ({x_t}, {x_s})"
            )));
        }
        let first = (x_s / self.spacing).ceil() as i64;
        let last = (x_t / self.spacing).floor() as i64;
        if first > last {
            return self.integrate(x_s, x_t);
        }
        let mut w = self.integrate(x_s, self.lattice(first))?;
        for k in first..last {
            w = self.segment(k)? * w;
        }
        Ok(self.integrate(self.lattice(last), x_t)? * w)
    }
}

//! The normed vector space `(R, *_h, ⊙, |.|_*)` induced by a growth rate.
//!
//! Points carry their mu-value as the canonical representation, so every
//! group identity reduces to exact `f64` addition in mu-space and the only
//! rounding comes from reconstructing the coordinate through `lh^{-1}`.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::growth_rate::{GrowthRate, RateId};

/// Relative tolerance used by [`HPoint::approx_eq`].
pub const POINT_EQ_TOL: f64 = 1e-9;

/// An element of `R_*`: a real coordinate together with `mu = ln h(coord)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HPoint {
    pub coord: f64,
    pub mu: f64,
    #[serde(skip)]
    rate: RateId,
}

impl HPoint {
    pub fn rate_id(&self) -> RateId {
        self.rate
    }

    /// Equality up to `|dmu| <= 1e-9 (1 + |mu|)`.
    pub fn approx_eq(&self, other: &HPoint) -> Result<bool> {
        self.same_rate(other)?;
        Ok((self.mu - other.mu).abs() <= POINT_EQ_TOL * (1.0 + self.mu.abs().max(other.mu.abs())))
    }

    /// Order of `R_*`; it agrees with the order of the coordinates.
    pub fn compare(&self, other: &HPoint) -> Result<Ordering> {
        self.same_rate(other)?;
        Ok(self.mu.total_cmp(&other.mu))
    }

    fn same_rate(&self, other: &HPoint) -> Result<()> {
        if self.rate == other.rate {
            Ok(())
        } else {
            Err(Error::IncompatibleRate)
        }
    }
}

/// Closed interval `[lo, hi]` of `R_*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HInterval {
    pub lo: HPoint,
    pub hi: HPoint,
}

impl GrowthRate {
    /// The point with coordinate `t`.
    pub fn point(&self, t: f64) -> Result<HPoint> {
        let mu = self.lh(t)?;
        Ok(HPoint {
            coord: t,
            mu,
            rate: self.id(),
        })
    }

    /// The point whose mu-value is `mu`; `mu` is stored exactly.
    pub fn from_mu(&self, mu: f64) -> Result<HPoint> {
        let coord = self.lh_inv(mu)?;
        Ok(HPoint {
            coord,
            mu,
            rate: self.id(),
        })
    }

    /// Neutral element `e_* = h^{-1}(1)`.
    pub fn neutral(&self) -> HPoint {
        self.from_mu(0.0)
            .expect("every growth rate takes the value 1")
    }

    fn own(&self, p: &HPoint) -> Result<()> {
        if p.rate == self.id() {
            Ok(())
        } else {
            Err(Error::IncompatibleRate)
        }
    }

    /// `t *_h s = h^{-1}(h(t) h(s))`.
    pub fn star(&self, t: &HPoint, s: &HPoint) -> Result<HPoint> {
        self.own(t)?;
        self.own(s)?;
        self.from_mu(t.mu + s.mu)
    }

    /// `t^{*-1} = h^{-1}(1 / h(t))`.
    pub fn star_inv(&self, t: &HPoint) -> Result<HPoint> {
        self.own(t)?;
        self.from_mu(-t.mu)
    }

    /// `alpha ⊙ t = h^{-1}(h(t)^alpha)`.
    pub fn odot(&self, alpha: f64, t: &HPoint) -> Result<HPoint> {
        self.own(t)?;
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scalar {alpha} is not finite"
            )));
        }
        self.from_mu(alpha * t.mu)
    }

    /// `|t|_*`: `t` when `t >= e_*`, otherwise `t^{*-1}`.
    pub fn habs(&self, t: &HPoint) -> Result<HPoint> {
        self.own(t)?;
        if t.mu >= 0.0 {
            Ok(*t)
        } else {
            self.star_inv(t)
        }
    }

    /// `d(t, s) = |t *_h s^{*-1}|_*`.
    pub fn hdist(&self, t: &HPoint, s: &HPoint) -> Result<HPoint> {
        self.own(t)?;
        self.own(s)?;
        self.from_mu((t.mu - s.mu).abs())
    }

    /// Intervals `[k ⊙ gamma, (k+1) ⊙ gamma]` for `k_lo <= k <= k_hi`.
    ///
    /// Each interval has invariant measure `mu(gamma)`; consecutive intervals
    /// share endpoints.
    pub fn partition(&self, gamma: &HPoint, k_lo: i64, k_hi: i64) -> Result<Vec<HInterval>> {
        self.own(gamma)?;
        if !(gamma.mu > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "partition generator must exceed e_* (mu = {})",
                gamma.mu
            )));
        }
        if k_lo > k_hi {
            return Err(Error::InvalidParameter(format!(
                "empty index range {k_lo}..={k_hi}"
            )));
        }
        let mut out = Vec::with_capacity((k_hi - k_lo + 1) as usize);
        let mut lo = self.odot(k_lo as f64, gamma)?;
        for k in k_lo..=k_hi {
            let hi = self.odot((k + 1) as f64, gamma)?;
            out.push(HInterval { lo, hi });
            lo = hi;
        }
        Ok(out)
    }

    /// Interval `[a, b]` of this rate; `a <= b` is required.
    pub fn interval(&self, a: &HPoint, b: &HPoint) -> Result<HInterval> {
        self.own(a)?;
        self.own(b)?;
        if a.mu > b.mu {
            return Err(Error::InvalidInterval { lo: a.mu, hi: b.mu });
        }
        Ok(HInterval { lo: *a, hi: *b })
    }
}

//! Small statistical helpers shared across stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value with its one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

impl Measured {
    pub const ZERO: Measured = Measured { value: 0.0, error: 0.0 };

    pub fn new(value: f64, error: f64) -> Measured {
        Measured { value, error }
    }

    pub fn exact(value: f64) -> Measured {
        Measured { value, error: 0.0 }
    }

    /// Difference with uncertainties added in quadrature.
    pub fn minus(self, other: Measured) -> Measured {
        Measured::new(self.value - other.value, self.error.hypot(other.error))
    }

    pub fn plus(self, other: Measured) -> Measured {
        Measured::new(self.value + other.value, self.error.hypot(other.error))
    }

    pub fn scale(self, k: f64) -> Measured {
        Measured::new(self.value * k, self.error * k.abs())
    }

    /// Adds a relative systematic in quadrature.
    pub fn with_relative_systematic(self, fraction: f64) -> Measured {
        Measured::new(self.value, self.error.hypot(self.value * fraction))
    }

    /// `(self − other) / σ_combined`; `None` when both errors vanish.
    pub fn pull(self, other: Measured) -> Option<f64> {
        let s = self.error.hypot(other.error);
        (s > 0.0).then(|| (self.value - other.value) / s)
    }
}

/// Ratio `k / n` with binomial error.
pub fn binomial_fraction(k: u64, n: u64) -> Result<Measured> {
    if n == 0 {
        return Err(Error::InvalidArgument("binomial fraction needs n > 0".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    let p = k as f64 / n as f64;
    Ok(Measured::new(p, (p * (1.0 - p) / n as f64).sqrt()))
}

/// Rate from `k` of `n` generated primaries over `livetime`, binomial error.
pub fn binomial_rate(k: u64, n: u64, livetime: f64) -> Measured {
    if n == 0 || livetime <= 0.0 {
        return Measured::ZERO;
    }
    let kf = k as f64;
    let var = kf * (1.0 - kf / n as f64);
    Measured::new(kf / livetime, var.max(0.0).sqrt() / livetime)
}

/// Rate from a Poisson count.
pub fn poisson_rate(k: u64, livetime: f64) -> Measured {
    if livetime <= 0.0 {
        return Measured::ZERO;
    }
    Measured::new(k as f64 / livetime, (k as f64).sqrt() / livetime)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Median absolute deviation scaled to σ for Gaussian data.
pub fn robust_sigma(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    let med = median_in_place(&mut s);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    1.482_602_218_505_602 * median_in_place(&mut dev)
}

pub fn median_in_place(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if v.len() % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

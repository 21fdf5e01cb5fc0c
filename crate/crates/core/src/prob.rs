//! Exact finite-distribution arithmetic: entropies, divergences, smoothing.
//!
//! All entropies and divergences are in nats. KL handles zero mass in the
//! reference by lifting entries below a configurable floor and
//! renormalizing, which keeps it finite and bit-for-bit reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// A normalized probability vector over a finite label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    /// Validates non-negativity, normalization within 1e-9, and k >= 2.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDist(format!(
                "need k >= 2, got k = {}",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidDist("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDist(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Builds from non-negative weights, dividing by their sum.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidDist("weights must be non-negative with positive sum".into()));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![1.0 / k as f64; k])
    }

    /// Point mass on `label` over a space of size `k`.
    pub fn point_mass(label: usize, k: usize) -> Result<Self> {
        if label >= k {
            return Err(Error::InvalidDist(format!("label {label} out of range {k}")));
        }
        let mut p = vec![0.0; k];
        p[label] = 1.0;
        Self::new(p)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

/// Which divergence to use for sensitivity and the bound harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Kl,
    Js,
    Tv,
}

/// Floor applied to the KL reference distribution before taking logs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothingPolicy {
    pub floor: f64,
}

impl Default for SmoothingPolicy {
    fn default() -> Self {
        Self { floor: 1e-10 }
    }
}

impl SmoothingPolicy {
    pub fn new(floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1e-3) {
            return Err(Error::Contract(format!("floor {floor} outside (0, 1e-3)")));
        }
        Ok(Self { floor })
    }
}

/// Shannon entropy in nats. Zero-mass terms contribute exactly 0.
pub fn entropy(p: &Dist) -> f64 {
    p.as_slice()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum()
}

fn check_dims(p: &Dist, q: &Dist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// KL divergence D(p || q) in nats.
///
/// Entries of q below the policy floor are lifted to the floor and the
/// whole vector renormalized before evaluation; p is used as-is.
pub fn kl(p: &Dist, q: &Dist, policy: SmoothingPolicy) -> Result<f64> {
    check_dims(p, q)?;
    if p == q {
        return Ok(0.0);
    }
    let lifted: Vec<f64> = q.as_slice().iter().map(|&x| x.max(policy.floor)).collect();
    let z: f64 = lifted.iter().sum();
    let mut out = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(&lifted) {
        if pi > 0.0 {
            out += pi * (pi / (qi / z)).ln();
        }
    }
    Ok(out)
}

/// Jensen-Shannon divergence in nats, bounded by ln 2.
///
/// No smoothing: the mixture m = (p+q)/2 has support wherever p does.
pub fn js(p: &Dist, q: &Dist) -> Result<f64> {
    check_dims(p, q)?;
    let mut out = 0.0;
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            out += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            out += 0.5 * qi * (qi / m).ln();
        }
    }
    Ok(out.max(0.0))
}

/// Total variation distance, in [0, 1].
pub fn tv(p: &Dist, q: &Dist) -> Result<f64> {
    check_dims(p, q)?;
    Ok(0.5
        * p.as_slice()
            .iter()
            .zip(q.as_slice())
            .map(|(&a, &b)| (a - b).abs())
            .sum::<f64>())
}

/// Mixes p with the uniform distribution: (1 - gamma) p + gamma / k.
pub fn smooth(p: &Dist, gamma: f64) -> Result<Dist> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma {gamma} outside [0, 1]")));
    }
    let k = p.len() as f64;
    Dist::new(
        p.as_slice()
            .iter()
            .map(|&x| (1.0 - gamma) * x + gamma / k)
            .collect(),
    )
}

/// Dispatch over the three divergences.
pub fn divergence(kind: DivergenceKind, p: &Dist, q: &Dist, policy: SmoothingPolicy) -> Result<f64> {
    match kind {
        DivergenceKind::Kl => kl(p, q, policy),
        DivergenceKind::Js => js(p, q),
        DivergenceKind::Tv => tv(p, q),
    }
}

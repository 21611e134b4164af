use std::cmp::Ordering;
use std::fmt;

use crate::measure::GridMeasure;

/// Value of the barrier functional: a real or the `+inf` sentinel, which
/// orders above every real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AValue {
    Finite(f64),
    Infinite,
}

impl AValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::Infinite => None,
        }
    }

    /// The value as an `f64`, `+inf` standing in for the sentinel.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl PartialOrd for AValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Self::Finite(a), Self::Finite(b)) => a.partial_cmp(b),
            (Self::Infinite, Self::Infinite) => Some(Ordering::Equal),
            (Self::Infinite, _) => Some(Ordering::Greater),
            (_, Self::Infinite) => Some(Ordering::Less),
        }
    }
}

impl fmt::Display for AValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

/// `a(t) = t^2 + 1/t`.
pub fn barrier_integrand(t: f64) -> f64 {
    t * t + 1.0 / t
}

/// `a'(t) = 2t - 1/t^2`.
pub fn barrier_derivative(t: f64) -> f64 {
    2.0 * t - 1.0 / (t * t)
}

/// `A(m) = sum_i a(density_i) * cell_volume`; infinite as soon as a node
/// carries no mass.
pub fn eval_a(m: &GridMeasure) -> AValue {
    let vol = m.spec().cell_volume();
    if m.weights().iter().any(|&w| w <= 0.0) {
        return AValue::Infinite;
    }
    AValue::Finite(m.weights().iter().map(|w| barrier_integrand(w / vol)).sum::<f64>() * vol)
}

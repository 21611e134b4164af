use crate::measure::GridMeasure;

use super::FunctionalError;

/// Convex integrand `f` of `F(mu) = int f(u)`, with `f(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalFunctional {
    /// `f = 0`.
    Zero,
    /// `f(t) = kappa t^2 / 2`.
    Quadratic { kappa: f64 },
    /// `f(t) = t^m / m`, `m > 1`.
    Power { exponent: f64 },
}

impl LocalFunctional {
    /// `f(t) = t^2 / 2`.
    pub fn half_square() -> Self {
        Self::Quadratic { kappa: 1.0 }
    }

    pub fn validated(self) -> Result<Self, FunctionalError> {
        match self {
            Self::Zero => Ok(self),
            Self::Quadratic { kappa } if kappa > 0.0 && kappa.is_finite() => Ok(self),
            Self::Power { exponent } if exponent > 1.0 && exponent.is_finite() => Ok(self),
            other => Err(FunctionalError::InvalidParameter(format!(
                "local functional parameters out of range: {other:?}"
            ))),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Quadratic { kappa } => 0.5 * kappa * t * t,
            Self::Power { exponent } => t.powf(exponent) / exponent,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Quadratic { kappa } => kappa * t,
            Self::Power { exponent } => t.powf(exponent - 1.0),
        }
    }

    /// Smallest `t >= 0` with `f'(t) >= s`; infinite for `Zero` when `s > 0`.
    pub fn derivative_inverse(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match *self {
            Self::Zero => f64::INFINITY,
            Self::Quadratic { kappa } => s / kappa,
            Self::Power { exponent } => s.powf(1.0 / (exponent - 1.0)),
        }
    }

    /// Positive second derivative wherever the density is positive.
    pub fn is_strictly_convex(&self) -> bool {
        !matches!(self, Self::Zero)
    }

    /// Midpoint convexity on `[0, upper]`, sampled at `samples` points.
    pub fn check_convexity(&self, upper: f64, samples: usize) -> bool {
        let n = samples.max(2);
        (0..n).all(|a| {
            (a..n).all(|b| {
                let x = upper * a as f64 / (n - 1) as f64;
                let y = upper * b as f64 / (n - 1) as f64;
                let mid = self.value(0.5 * (x + y));
                mid <= 0.5 * (self.value(x) + self.value(y)) + 1e-12 * (1.0 + mid.abs())
            })
        })
    }
}

/// `F(m) = sum_i f(density_i) * cell_volume`.
pub fn eval_f(m: &GridMeasure, local: &LocalFunctional) -> f64 {
    let vol = m.spec().cell_volume();
    m.weights().iter().map(|w| local.value(w / vol)).sum::<f64>() * vol
}

/// First variation of `F` in the weights: `f'(density_i)`.
pub fn local_potential(m: &GridMeasure, local: &LocalFunctional) -> Vec<f64> {
    let vol = m.spec().cell_volume();
    m.weights().iter().map(|w| local.derivative(w / vol)).collect()
}

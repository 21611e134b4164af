use crate::measure::{squared_distance, GridMeasure, GridSpec};

use super::FunctionalError;

/// Node counts above this evaluate the kernel lazily instead of caching the
/// dense matrix.
pub const DENSE_KERNEL_LIMIT: usize = 4096;

const SAMPLES: usize = 1024;

/// Profile `s -> V(s)` of a radial interaction, `s` a squared distance.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelProfile {
    /// `V(s) = lambda * s / 2`.
    Quadratic { lambda: f64 },
    /// `V(s) = (lambda / 2) * s^q`, `q >= 1`.
    Power { lambda: f64, q: f64 },
    /// Monotone cubic interpolation of `(s, V)` samples, constant slope
    /// extrapolation past the last sample.
    Tabulated(MonotoneCubic),
}

impl KernelProfile {
    pub fn value(&self, s: f64) -> f64 {
        match self {
            Self::Quadratic { lambda } => 0.5 * lambda * s,
            Self::Power { lambda, q } => 0.5 * lambda * s.powf(*q),
            Self::Tabulated(t) => t.value(s),
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            Self::Quadratic { lambda } => 0.5 * lambda,
            Self::Power { lambda, q } => 0.5 * lambda * q * s.powf(q - 1.0),
            Self::Tabulated(t) => t.derivative(s),
        }
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        match self {
            Self::Quadratic { .. } => 0.0,
            Self::Power { lambda, q } => {
                if *q == 1.0 {
                    0.0
                } else {
                    0.5 * lambda * q * (q - 1.0) * s.powf(q - 2.0)
                }
            }
            Self::Tabulated(t) => t.second_derivative(s),
        }
    }

    /// Interaction strength for the polynomial profiles.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            Self::Quadratic { lambda } | Self::Power { lambda, .. } => Some(*lambda),
            Self::Tabulated(_) => None,
        }
    }
}

/// Fritsch-Carlson monotone cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, FunctionalError> {
        if points.len() < 2 {
            return Err(FunctionalError::InvalidParameter(
                "a tabulated kernel needs at least two samples".into(),
            ));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(FunctionalError::InvalidParameter("non-finite kernel sample".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FunctionalError::InvalidParameter(
                "kernel sample abscissae must be strictly increasing".into(),
            ));
        }
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            slopes[k] = if secants[k - 1] * secants[k] <= 0.0 {
                0.0
            } else {
                0.5 * (secants[k - 1] + secants[k])
            };
        }
        for k in 0..n - 1 {
            if secants[k] == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / secants[k];
            let b = slopes[k + 1] / secants[k];
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                slopes[k] = t * a * secants[k];
                slopes[k + 1] = t * b * secants[k];
            }
        }
        Ok(Self { xs, ys, slopes })
    }

    fn locate(&self, s: f64) -> usize {
        match self.xs.partition_point(|&x| x <= s) {
            0 => 0,
            k => (k - 1).min(self.xs.len() - 2),
        }
    }

    /// Hermite basis coefficients on the interval containing `s`.
    fn segment(&self, s: f64) -> (f64, f64, f64, f64, f64, f64) {
        let k = self.locate(s);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (s - self.xs[k]) / h;
        (t, h, self.ys[k], self.ys[k + 1], self.slopes[k], self.slopes[k + 1])
    }

    pub fn value(&self, s: f64) -> f64 {
        let last = self.xs.len() - 1;
        if s <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (s - self.xs[0]);
        }
        if s >= self.xs[last] {
            return self.ys[last] + self.slopes[last] * (s - self.xs[last]);
        }
        let (t, h, y0, y1, m0, m1) = self.segment(s);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let last = self.xs.len() - 1;
        if s <= self.xs[0] {
            return self.slopes[0];
        }
        if s >= self.xs[last] {
            return self.slopes[last];
        }
        let (t, h, y0, y1, m0, m1) = self.segment(s);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * y0 + (-6.0 * t2 + 6.0 * t) * y1) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (3.0 * t2 - 2.0 * t) * m1
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        let last = self.xs.len() - 1;
        if s <= self.xs[0] || s >= self.xs[last] {
            return 0.0;
        }
        let (t, h, y0, y1, m0, m1) = self.segment(s);
        ((12.0 * t - 6.0) * (y0 - y1)) / (h * h) + ((6.0 * t - 4.0) * m0 + (6.0 * t - 2.0) * m1) / h
    }
}

/// Interaction `G(nu) = sum_ij V(|x_i - x_j|^2) w_i w_j` bound to a grid.
#[derive(Debug, Clone)]
pub struct InteractionKernel {
    profile: KernelProfile,
    spec: GridSpec,
    matrix: Option<Vec<f64>>,
    c2_norm: f64,
}

impl InteractionKernel {
    /// Validates the profile on `[0, D^2]` and caches the kernel matrix.
    pub fn new(profile: KernelProfile, spec: &GridSpec) -> Result<Self, FunctionalError> {
        match &profile {
            KernelProfile::Quadratic { lambda } | KernelProfile::Power { lambda, .. } => {
                if !(*lambda > 0.0 && lambda.is_finite()) {
                    return Err(FunctionalError::InvalidParameter(format!(
                        "interaction strength must be positive, got {lambda}"
                    )));
                }
            }
            KernelProfile::Tabulated(_) => {}
        }
        if let KernelProfile::Power { q, .. } = &profile {
            if !(*q >= 1.0 && q.is_finite()) {
                return Err(FunctionalError::InvalidParameter(format!(
                    "power kernel exponent must be >= 1, got {q}"
                )));
            }
        }
        let d2 = spec.diameter().powi(2);
        for k in 0..=SAMPLES {
            let s = d2 * k as f64 / SAMPLES as f64;
            let v = profile.value(s);
            if !v.is_finite() || v < 0.0 {
                return Err(FunctionalError::NegativeKernel { s, value: v });
            }
            // V'(0) may vanish for power profiles; positivity is required on
            // (0, D^2].
            if k > 0 {
                let dv = profile.derivative(s);
                if !(dv > 0.0) {
                    return Err(FunctionalError::NonIncreasingKernel { s, derivative: dv });
                }
            }
        }
        let n = spec.len();
        let matrix = (n <= DENSE_KERNEL_LIMIT).then(|| {
            let nodes = spec.nodes();
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = profile.value(squared_distance(&nodes[i], &nodes[j]));
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        });
        let mut kernel = Self {
            profile,
            spec: spec.clone(),
            matrix,
            c2_norm: 0.0,
        };
        kernel.c2_norm = c2_bound(&kernel, spec);
        Ok(kernel)
    }

    pub fn quadratic(lambda: f64, spec: &GridSpec) -> Result<Self, FunctionalError> {
        Self::new(KernelProfile::Quadratic { lambda }, spec)
    }

    pub fn power(lambda: f64, q: f64, spec: &GridSpec) -> Result<Self, FunctionalError> {
        Self::new(KernelProfile::Power { lambda, q }, spec)
    }

    pub fn tabulated(points: &[(f64, f64)], spec: &GridSpec) -> Result<Self, FunctionalError> {
        Self::new(KernelProfile::Tabulated(MonotoneCubic::new(points)?), spec)
    }

    /// Same profile on another grid.
    pub fn rebind(&self, spec: &GridSpec) -> Result<Self, FunctionalError> {
        Self::new(self.profile.clone(), spec)
    }

    pub fn profile(&self) -> &KernelProfile {
        &self.profile
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.profile, KernelProfile::Quadratic { .. })
    }

    pub fn is_cached(&self) -> bool {
        self.matrix.is_some()
    }

    /// `V(0)`, the interaction energy of a single atom.
    pub fn v0(&self) -> f64 {
        self.profile.value(0.0)
    }

    /// Chain-rule bound on `x -> V(|x - y|^2)` and its derivatives over the
    /// kernel's own grid.
    pub fn c2_norm(&self) -> f64 {
        self.c2_norm
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.matrix {
            Some(m) => m[i * self.spec.len() + j],
            None => self
                .profile
                .value(squared_distance(&self.spec.node(i), &self.spec.node(j))),
        }
    }

    /// `K[:, j]`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let n = self.spec.len();
        match &self.matrix {
            Some(m) => m[j * n..(j + 1) * n].to_vec(),
            None => (0..n).map(|i| self.entry(i, j)).collect(),
        }
    }

    /// `out += alpha * K[:, j]`.
    pub fn add_scaled_column(&self, out: &mut [f64], j: usize, alpha: f64) {
        let n = self.spec.len();
        match &self.matrix {
            Some(m) => out
                .iter_mut()
                .zip(&m[j * n..(j + 1) * n])
                .for_each(|(o, k)| *o += alpha * k),
            None => {
                let y = self.spec.node(j);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += alpha * self.profile.value(squared_distance(&self.spec.node(i), &y));
                }
            }
        }
    }

    /// `K w`.
    pub fn apply(&self, weights: &[f64]) -> Vec<f64> {
        let n = self.spec.len();
        assert_eq!(weights.len(), n, "weights do not match the kernel grid");
        match &self.matrix {
            Some(m) => (0..n)
                .map(|i| m[i * n..(i + 1) * n].iter().zip(weights).map(|(k, w)| k * w).sum())
                .collect(),
            None => {
                let nodes = self.spec.nodes();
                (0..n)
                    .map(|i| {
                        nodes
                            .iter()
                            .zip(weights)
                            .map(|(y, w)| self.profile.value(squared_distance(&nodes[i], y)) * w)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// `w^T K w`.
    pub fn energy(&self, weights: &[f64]) -> f64 {
        self.apply(weights).iter().zip(weights).map(|(k, w)| k * w).sum()
    }
}

/// `sup_s max(|V(s)|, 2|V'(s)| D, |2V'(s) + 4 s V''(s)|)` over 1024 samples of
/// `[0, D^2]`, `D` the diameter of `spec`.
pub fn c2_bound(kernel: &InteractionKernel, spec: &GridSpec) -> f64 {
    let d = spec.diameter();
    let p = &kernel.profile;
    (0..SAMPLES)
        .map(|k| {
            let s = d * d * k as f64 / (SAMPLES - 1) as f64;
            let v = p.value(s).abs();
            let grad = 2.0 * p.derivative(s).abs() * d;
            let hess = (2.0 * p.derivative(s) + 4.0 * s * p.second_derivative(s)).abs();
            v.max(grad).max(hess)
        })
        .fold(0.0, f64::max)
}

/// `G(m) = w^T K w`.
pub fn eval_g(m: &GridMeasure, kernel: &InteractionKernel) -> f64 {
    kernel.energy(m.weights())
}

/// `T[i] = 2 sum_j K[i, j] w_j`, the first variation of `G`.
pub fn interaction_potential(m: &GridMeasure, kernel: &InteractionKernel) -> Vec<f64> {
    kernel.apply(m.weights()).into_iter().map(|v| 2.0 * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> GridSpec {
        GridSpec::from_nodes_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn two_atom_energy() {
        let g = line(3);
        let k = InteractionKernel::quadratic(1.0, &g).unwrap();
        let m = GridMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(eval_g(&m, &k), 1.0);
        let atom = GridMeasure::point_mass(&g, 1).unwrap();
        assert_eq!(eval_g(&atom, &k), k.v0());
        let t = interaction_potential(&atom, &k);
        for (i, ti) in t.iter().enumerate() {
            assert_eq!(*ti, 2.0 * k.profile().value((i as f64 - 1.0).powi(2)));
        }
    }

    #[test]
    fn quadratic_potential_formula() {
        let g = GridSpec::interval(-1.0, 2.0, 17).unwrap();
        let lambda = 0.7;
        let k = InteractionKernel::quadratic(lambda, &g).unwrap();
        let m = GridMeasure::build_from_density(&g, |x| (x[0] + 1.5).powi(2)).unwrap();
        let b = m.barycenter()[0];
        let s2 = m.second_moment();
        for (i, t) in interaction_potential(&m, &k).iter().enumerate() {
            let x = g.node(i)[0];
            let expected = lambda * x * x - 2.0 * lambda * x * b + lambda * s2;
            assert!((t - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn c2_of_quadratic_kernel() {
        for (upper, lambda) in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.25)] {
            let g = GridSpec::interval(0.0, upper, 5).unwrap();
            let k = InteractionKernel::quadratic(lambda, &g).unwrap();
            let d = upper;
            let expected = (0.5 * lambda * d * d).max(lambda * d).max(lambda);
            assert!((k.c2_norm() - expected).abs() < 1e-12 * expected);
            let k2 = InteractionKernel::quadratic(2.0 * lambda, &g).unwrap();
            assert!((k2.c2_norm() - 2.0 * k.c2_norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_flat_and_bad_profiles() {
        let g = line(4);
        let flat = [(0.0, 1.0), (100.0, 1.0)];
        assert!(matches!(
            InteractionKernel::tabulated(&flat, &g),
            Err(FunctionalError::NonIncreasingKernel { .. })
        ));
        assert!(InteractionKernel::quadratic(0.0, &g).is_err());
        assert!(InteractionKernel::power(1.0, 0.5, &g).is_err());
        assert!(InteractionKernel::power(1.0, 2.0, &g).is_ok());
    }

    #[test]
    fn tabulated_reproduces_linear_profile() {
        let g = line(5);
        let pts: Vec<(f64, f64)> = (0..=20).map(|k| (k as f64, 0.5 * k as f64)).collect();
        let tab = InteractionKernel::tabulated(&pts, &g).unwrap();
        let quad = InteractionKernel::quadratic(1.0, &g).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((tab.entry(i, j) - quad.entry(i, j)).abs() < 1e-12);
            }
        }
        let curve = MonotoneCubic::new(&[(0.0, 0.0), (1.0, 0.1), (2.0, 3.0), (3.0, 3.1)]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=300 {
            let v = curve.value(k as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn lazy_path_matches_cache() {
        let g = line(6);
        let k = InteractionKernel::power(0.3, 1.5, &g).unwrap();
        let lazy = InteractionKernel {
            matrix: None,
            ..k.clone()
        };
        let m = GridMeasure::build_from_density(&g, |x| 1.0 + x[0]).unwrap();
        assert!((eval_g(&m, &k) - eval_g(&m, &lazy)).abs() < 1e-12);
        assert_eq!(k.column(2), lazy.column(2));
    }
}

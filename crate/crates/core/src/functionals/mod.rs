//! Energies on grid measures: the local functional `F`, the interaction
//! energy `G`, the barrier `A`, and their first variations.

mod barrier;
mod kernel;
mod local;

use thiserror::Error;

pub use barrier::{barrier_derivative, barrier_integrand, eval_a, AValue};
pub use kernel::{
    c2_bound, eval_g, interaction_potential, InteractionKernel, KernelProfile, MonotoneCubic, DENSE_KERNEL_LIMIT,
};
pub use local::{eval_f, local_potential, LocalFunctional};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("kernel must be increasing: V'({s}) = {derivative}")]
    NonIncreasingKernel { s: f64, derivative: f64 },
    #[error("kernel must be nonnegative and finite: V({s}) = {value}")]
    NegativeKernel { s: f64, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{GridMeasure, GridSpec};
    use proptest::prelude::*;

    fn measure_on(spec: &GridSpec, raw: &[f64]) -> GridMeasure {
        GridMeasure::from_weights(spec.clone(), raw.to_vec()).unwrap()
    }

    fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, n).prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
    }

    fn spec_2d() -> GridSpec {
        GridSpec::rectangle([-1.0, 0.0], [1.0, 1.5], [4, 3]).unwrap()
    }

    fn kernels(spec: &GridSpec) -> Vec<InteractionKernel> {
        vec![
            InteractionKernel::quadratic(0.8, spec).unwrap(),
            InteractionKernel::power(0.5, 1.5, spec).unwrap(),
            InteractionKernel::tabulated(&[(0.0, 0.2), (1.0, 0.5), (4.0, 2.0), (20.0, 3.0)], spec).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn first_variation_matches_finite_differences(a in weights(12), b in weights(12)) {
            let spec = spec_2d();
            let m = measure_on(&spec, &a);
            let m1 = measure_on(&spec, &b);
            let dir: Vec<f64> = m1.weights().iter().zip(m.weights()).map(|(x, y)| x - y).collect();
            for k in kernels(&spec) {
                let t = interaction_potential(&m, &k);
                let linear: f64 = t.iter().zip(&dir).map(|(t, d)| t * d).sum();
                let step = 1e-5;
                let at = |s: f64| {
                    let w: Vec<f64> = m.weights().iter().zip(&dir).map(|(w, d)| w + s * d).collect();
                    k.energy(&w)
                };
                let fd = (at(step) - at(-step)) / (2.0 * step);
                prop_assert!((fd - linear).abs() <= 1e-6 * (1.0 + linear.abs()), "{fd} vs {linear}");
            }
        }

        #[test]
        fn quadratic_closed_form(a in weights(12), lambda in 0.05..5.0f64) {
            let spec = spec_2d();
            let m = measure_on(&spec, &a);
            let k = InteractionKernel::quadratic(lambda, &spec).unwrap();
            let b = m.barycenter();
            let closed = lambda * (m.second_moment() - b.iter().map(|x| x * x).sum::<f64>());
            let g = eval_g(&m, &k);
            prop_assert!((g - closed).abs() <= 1e-12 * (1.0 + closed.abs()), "{g} vs {closed}");
        }

        #[test]
        fn local_functional_is_midpoint_convex(a in weights(10), b in weights(10)) {
            let spec = GridSpec::interval(0.0, 2.0, 10).unwrap();
            let m1 = measure_on(&spec, &a);
            let m2 = measure_on(&spec, &b);
            let mid = m1.mix(&m2, 0.5);
            for f in [LocalFunctional::half_square(), LocalFunctional::Power { exponent: 2.5 }] {
                prop_assert!(eval_f(&mid, &f) <= 0.5 * eval_f(&m1, &f) + 0.5 * eval_f(&m2, &f) + 1e-12);
            }
        }

        #[test]
        fn interaction_is_minimal_on_atoms(a in weights(12)) {
            let spec = spec_2d();
            let m = measure_on(&spec, &a);
            let atoms = m.weights().iter().filter(|&&w| w > 0.0).count();
            for k in kernels(&spec) {
                let g = eval_g(&m, &k);
                prop_assert!(g >= k.v0() - 1e-15);
                if atoms > 1 {
                    prop_assert!(g > k.v0());
                }
            }
            let atom = GridMeasure::point_mass(&spec, atoms % 12).unwrap();
            for k in kernels(&spec) {
                prop_assert_eq!(eval_g(&atom, &k), k.v0());
            }
        }

        #[test]
        fn contraction_toward_a_point_does_not_raise_interaction(a in weights(15), c in 0usize..15, theta in 0.0..1.0f64) {
            let spec = GridSpec::interval(-1.0, 2.0, 15).unwrap();
            let m = measure_on(&spec, &a);
            let h = spec.max_spacing();
            let xc = spec.node(c)[0];
            let map = |i: usize| {
                let x = spec.node(i)[0];
                spec.nearest_node(&[xc + theta * (x - xc)])
            };
            let pushed = m.pushforward(map);
            let d = spec.diameter();
            for k in kernels(&spec) {
                let lip = (0..=256)
                    .map(|s| k.profile().derivative(d * d * s as f64 / 256.0))
                    .fold(0.0, f64::max)
                    * 2.0
                    * d;
                let slack = lip * 2.0 * h * d;
                prop_assert!(eval_g(&pushed, &k) <= eval_g(&m, &k) + slack);
            }
        }
    }
}

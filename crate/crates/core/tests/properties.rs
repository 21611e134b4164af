//! Property suites for grid measures and transport.

mod common;

use otconc::measure::{GridMeasure, GridSpec};
use otconc::transport::{c_transform, solve_exact, wasserstein, CostMatrix, Direction, TransportMethod};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], n).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-3)
}

fn grid_1d() -> GridSpec {
    GridSpec::interval(-1.0, 2.0, 9).unwrap()
}

fn grid_2d() -> GridSpec {
    GridSpec::rectangle([0.0, -1.0], [1.0, 1.0], [3, 4]).unwrap()
}

fn unit_mass(m: &GridMeasure) -> bool {
    (m.total_mass() - 1.0).abs() <= 1e-12 && m.weights().iter().all(|&w| w >= 0.0)
}

#[test]
fn brute_force_oracle_on_the_two_by_two_polytope() {
    let g = GridSpec::from_nodes_1d(0.0, 1.0, 4).unwrap();
    let cost = CostMatrix::half_squared(&g, &g).unwrap();
    let v = common::brute_force_cost(&[0.5, 0.0, 0.5, 0.0], &[0.0, 0.5, 0.0, 0.5], &cost);
    assert!((v - 0.5).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructors_and_updates_keep_unit_mass(a in weights(9), b in weights(9), t in 0.0..1.0f64, shift in 0usize..9) {
        let g = grid_1d();
        let m = GridMeasure::from_weights(g.clone(), a).unwrap();
        let n = GridMeasure::from_weights(g.clone(), b).unwrap();
        prop_assert!(unit_mass(&m));
        prop_assert!(unit_mass(&m.mix(&n, t)));
        prop_assert!(unit_mass(&m.pushforward(|i| (i + shift) % 9)));
        prop_assert!(unit_mass(&GridMeasure::uniform(&g)));
        prop_assert!(unit_mass(&GridMeasure::point_mass_at(&g, &[t])));
        let dens = GridMeasure::build_from_density(&g, |x| (x[0] * t).exp()).unwrap();
        prop_assert!(unit_mass(&dens));
        let mut bytes = Vec::new();
        m.write_csv(&mut bytes).unwrap();
        let back = GridMeasure::read_csv(bytes.as_slice()).unwrap();
        prop_assert!(unit_mass(&back));
        prop_assert!(back.l1_distance(&m) <= 1e-15);
    }

    #[test]
    fn negative_weights_are_rejected(a in weights(9), k in 0usize..9) {
        let mut w = a;
        w[k] = -1e-3;
        prop_assert!(GridMeasure::from_weights(grid_1d(), w).is_err());
    }

    #[test]
    fn symmetric_patterns_keep_the_barycenter_at_the_centre(half in prop::collection::vec(0.0..1.0f64, 4), mid in 0.0..1.0f64) {
        // Weights mirrored about the middle node of a 9-node grid.
        prop_assume!(half.iter().sum::<f64>() + mid > 1e-3);
        let mut w = half.clone();
        w.push(mid);
        w.extend(half.iter().rev());
        let g = grid_1d();
        let c = g.node(4)[0];
        let m = GridMeasure::from_weights(g.clone(), w.clone()).unwrap();
        prop_assert!((m.barycenter()[0] - c).abs() <= 1e-12);
        let doubled: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        let m2 = GridMeasure::from_weights(g, doubled).unwrap();
        prop_assert!((m2.barycenter()[0] - c).abs() <= 1e-12);
        prop_assert!((m2.second_moment() - m.second_moment()).abs() <= 1e-12);
    }

    #[test]
    fn strong_duality_holds(a in weights(12), b in weights(12)) {
        let g = grid_2d();
        let mu = GridMeasure::from_weights(g.clone(), a).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), b).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, duals) = solve_exact(&mu, &nu, &cost).unwrap();
        let primal = plan.cost_value();
        let dual = duals.dual_value(mu.weights(), nu.weights());
        prop_assert!((primal - dual).abs() <= 1e-8 * (1.0 + primal.abs()), "{primal} vs {dual}");
        prop_assert!(duals.feasibility_violation(&cost) <= 1e-12);
        prop_assert!(plan.marginal_error(mu.weights(), nu.weights()) <= 1e-12);
    }

    #[test]
    fn wasserstein_is_a_metric(a in weights(12), b in weights(12), c in weights(12), p in prop_oneof![Just(1.0), Just(2.0)]) {
        let g = grid_2d();
        let x = GridMeasure::from_weights(g.clone(), a).unwrap();
        let y = GridMeasure::from_weights(g.clone(), b).unwrap();
        let z = GridMeasure::from_weights(g.clone(), c).unwrap();
        let w = |m: &GridMeasure, n: &GridMeasure| wasserstein(m, n, p, TransportMethod::Exact).unwrap();
        prop_assert!((w(&x, &y) - w(&y, &x)).abs() <= 1e-10);
        prop_assert!(w(&x, &z) <= w(&x, &y) + w(&y, &z) + 1e-8);
        prop_assert!(w(&x, &x) <= 1e-10);
        if x.l1_distance(&y) > 1e-9 {
            prop_assert!(w(&x, &y) > 0.0);
        }
    }

    #[test]
    fn c_transform_is_idempotent_from_the_second_application(values in prop::collection::vec(-3.0..3.0f64, 9)) {
        let g = grid_1d();
        let h = GridSpec::rectangle([0.0, 0.0], [1.0, 2.0], [3, 3]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let once = c_transform(&values, &cost, Direction::SourceToTarget);
        let twice = c_transform(&once, &cost, Direction::TargetToSource);
        let thrice = c_transform(&twice, &cost, Direction::SourceToTarget);
        prop_assert!(once.iter().zip(&thrice).all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + a.abs())));
        prop_assert!(twice.iter().zip(&values).all(|(t, v)| t >= &(v - 1e-14)));
        let square = CostMatrix::half_squared(&h, &h).unwrap();
        let once = c_transform(&values, &square, Direction::TargetToSource);
        let twice = c_transform(&once, &square, Direction::SourceToTarget);
        let thrice = c_transform(&twice, &square, Direction::TargetToSource);
        prop_assert!(once.iter().zip(&thrice).all(|(a, b)| (a - b).abs() <= 1e-14 * (1.0 + a.abs())));
    }

    #[test]
    fn kantorovich_potentials_are_lipschitz(a in weights(12), b in weights(12)) {
        let g = grid_2d();
        let mu = GridMeasure::from_weights(g.clone(), a).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), b).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (_, duals) = solve_exact(&mu, &nu, &cost).unwrap();
        let bound = 2.0 * g.diameter() + g.max_spacing();
        for i in 0..g.len() {
            for j in 0..i {
                let d = otconc::measure::squared_distance(&g.node(i), &g.node(j)).sqrt();
                prop_assert!((duals.psi[i] - duals.psi[j]).abs() <= bound * d + 1e-12);
            }
        }
    }
}

/// Up to six atoms split between the two sides, random grid or random
/// matrix costs; exact cost against the vertex enumeration.
#[test]
fn exact_solver_matches_vertex_enumeration() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        check_small_instance(&mut rng, seed);
    }
}

fn check_small_instance(rng: &mut ChaCha8Rng, seed: u64) {
    use rand::Rng;
    let m = rng.gen_range(1..=5usize);
    let n = rng.gen_range(1..=(6 - m));
    let a: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let width = rng.gen_range(0.5..3.0);
    let pairs = [
        (
            GridSpec::rectangle([0.0, 0.0], [width, 1.0], [m, 1]).unwrap(),
            GridSpec::rectangle([-1.0, 0.0], [1.0, 2.0], [1, n]).unwrap(),
        ),
        (GridSpec::interval(0.0, width, m).unwrap(), GridSpec::interval(-1.0, 1.0, n).unwrap()),
    ];
    let random: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.0..5.0)).collect();
    for (gm, gn) in pairs {
        let mu = GridMeasure::from_weights(gm.clone(), a.clone()).unwrap();
        let nu = GridMeasure::from_weights(gn.clone(), b.clone()).unwrap();
        let costs = [
            CostMatrix::half_squared(&gm, &gn).unwrap(),
            CostMatrix::from_entries(m, n, random.clone()).unwrap(),
        ];
        for cost in costs {
            let exact = solve_exact(&mu, &nu, &cost).unwrap().0.cost_value();
            let oracle = common::brute_force_cost(mu.weights(), nu.weights(), &cost);
            assert!(
                (exact - oracle).abs() <= 1e-10 * oracle.abs(),
                "seed {seed}: {exact} vs {oracle}"
            );
        }
    }
}

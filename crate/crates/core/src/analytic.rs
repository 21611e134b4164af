//! Closed-form minimizer for the quadratic interaction `V(s) = lambda s / 2`
//! paired with the congestion `F(mu) = ||u||^2 / 2`.
//!
//! For an interior support the optimal density of `mu` is the truncated
//! parabola `u(x) = lambda / (2 lambda + 1) (r^2 - |x - x0|^2)^+`, and `nu` is
//! the image of `mu` under the homothety of center `x0` and ratio
//! `1 / (2 lambda + 1)`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::measure::{squared_distance, GridMeasure, GridSpec, MeasureError};
use crate::solver::HomothetyFit;
use crate::transport::{solve_exact, CostMatrix, TransportError};

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("support ball of radius {radius} around {center:?} leaves the domain")]
    SupportTouchesBoundary { center: Vec<f64>, radius: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Radius `r` making the parabola `u` a probability density in dimension `dim`.
pub fn radius_from_mass(lambda: f64, dim: usize) -> Result<f64, AnalyticError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(AnalyticError::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let k = 2.0 * lambda + 1.0;
    match dim {
        1 => Ok((3.0 * k / (4.0 * lambda)).cbrt()),
        2 => Ok((2.0 * k / (PI * lambda)).powf(0.25)),
        _ => Err(AnalyticError::InvalidParameter(format!("dimension must be 1 or 2, got {dim}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub lambda: f64,
    pub spec: GridSpec,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Peak value of `u`, `lambda r^2 / (2 lambda + 1)`.
    pub normalization: f64,
}

impl QuadraticInstance {
    /// Instance centered in the domain.
    pub fn centered(lambda: f64, spec: &GridSpec) -> Result<Self, AnalyticError> {
        Self::new(lambda, spec, &spec.center())
    }

    pub fn new(lambda: f64, spec: &GridSpec, center: &[f64]) -> Result<Self, AnalyticError> {
        let d = spec.dim();
        if center.len() != d {
            return Err(AnalyticError::InvalidParameter(format!(
                "center has {} coordinates on a {d}-dimensional grid",
                center.len()
            )));
        }
        let radius = radius_from_mass(lambda, d)?;
        let inside = (0..d).all(|a| center[a] - radius >= spec.lower()[a] && center[a] + radius <= spec.upper()[a]);
        if !inside {
            return Err(AnalyticError::SupportTouchesBoundary {
                center: center.to_vec(),
                radius,
            });
        }
        Ok(Self {
            lambda,
            spec: spec.clone(),
            center: center.to_vec(),
            radius,
            normalization: lambda * radius * radius / (2.0 * lambda + 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Homothety ratio `1 / (2 lambda + 1)`.
    pub fn ratio(&self) -> f64 {
        1.0 / (2.0 * self.lambda + 1.0)
    }

    /// Quadratic coefficient `lambda / (2 lambda + 1)` of `u`.
    pub fn coefficient(&self) -> f64 {
        self.lambda * self.ratio()
    }

    fn dist2(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum()
    }

    pub fn mu_density(&self, x: &[f64]) -> f64 {
        self.coefficient() * (self.radius * self.radius - self.dist2(x)).max(0.0)
    }

    pub fn nu_density(&self, x: &[f64]) -> f64 {
        let jac = (2.0 * self.lambda + 1.0).powi(self.dim() as i32);
        jac * self.mu_density(&self.from_nu(x))
    }

    /// Map carrying `mu` to `nu`.
    pub fn to_nu(&self, x: &[f64]) -> Vec<f64> {
        let q = self.ratio();
        x.iter().zip(&self.center).map(|(x, c)| c + q * (x - c)).collect()
    }

    /// Map carrying `nu` back to `mu`.
    pub fn from_nu(&self, y: &[f64]) -> Vec<f64> {
        let k = 2.0 * self.lambda + 1.0;
        y.iter().zip(&self.center).map(|(y, c)| c + k * (y - c)).collect()
    }

    /// Support radius of `nu`.
    pub fn nu_radius(&self) -> f64 {
        self.radius * self.ratio()
    }

    /// `u` sampled at the nodes of `spec`, normalized to unit mass.
    pub fn sample_mu(&self, spec: &GridSpec) -> Result<GridMeasure, AnalyticError> {
        Ok(GridMeasure::build_from_density(spec, |x| self.mu_density(x))?)
    }

    /// Density of `nu` sampled at the nodes of `spec`, normalized. Falls back
    /// to the nearest atom when the support is narrower than the grid.
    pub fn sample_nu(&self, spec: &GridSpec) -> Result<GridMeasure, AnalyticError> {
        match GridMeasure::build_from_density(spec, |x| self.nu_density(x)) {
            Err(MeasureError::AllZeroDensity) => Ok(GridMeasure::point_mass_at(spec, &self.center)),
            other => Ok(other?),
        }
    }

    /// Lipschitz diagnostics of `u` on the instance grid.
    pub fn lipschitz_bound_check(&self) -> Result<LipschitzCheck, AnalyticError> {
        let mu = self.sample_mu(&self.spec)?;
        let k = 2.0 * self.lambda + 1.0;
        let slope = 2.0 * self.lambda / k;
        let inf_u = mu.min_density();
        // A boundary-touching solution would put positive density on the
        // boundary, whose homothetic image is where nu jumps.
        let boundary = (0..self.dim()).any(|a| {
            let lo = (self.center[a] - self.spec.lower()[a]).abs();
            let hi = (self.spec.upper()[a] - self.center[a]).abs();
            lo < self.radius || hi < self.radius
        });
        Ok(LipschitzCheck {
            lip_constant: discrete_lipschitz(&mu),
            bound: slope * self.radius,
            global_bound: slope * self.spec.diameter(),
            inf_u,
            remark_inequality: 1.0 <= (inf_u + slope * self.spec.diameter()) * self.spec.volume() * (1.0 + 1e-12),
            discontinuity_flag: boundary,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    /// Largest difference quotient of the sampled density between axis
    /// neighbours.
    pub lip_constant: f64,
    /// `2 lambda r / (2 lambda + 1)`, the slope of `u` at the rim.
    pub bound: f64,
    /// `2 lambda D / (2 lambda + 1)`.
    pub global_bound: f64,
    pub inf_u: f64,
    /// `1 <= (inf u + 2 lambda D / (2 lambda + 1)) |domain|`.
    pub remark_inequality: bool,
    pub discontinuity_flag: bool,
}

/// Largest `|u_i - u_j| / |x_i - x_j|` over axis-neighbour node pairs.
pub fn discrete_lipschitz(measure: &GridMeasure) -> f64 {
    let spec = measure.spec();
    let mut lip = 0.0f64;
    for i in 0..spec.len() {
        for j in spec.forward_neighbours(i) {
            let dist = squared_distance(&spec.node(i), &spec.node(j)).sqrt();
            lip = lip.max((measure.density(i) - measure.density(j)).abs() / dist);
        }
    }
    lip
}

/// Least-squares fit of `T(x) - bar(nu) = ratio (x - bar(mu))`, where `T` is
/// the barycentric map of the optimal plan from `mu` to `nu`.
pub fn fit_homothety(mu: &GridMeasure, nu: &GridMeasure) -> Result<HomothetyFit, TransportError> {
    let cost = CostMatrix::half_squared(mu.spec(), nu.spec())?;
    let (plan, _) = solve_exact(mu, nu, &cost)?;
    let d = mu.spec().dim();
    let mut image = vec![[0.0; 2]; mu.len()];
    let mut row_mass = vec![0.0; mu.len()];
    for &(i, j, m) in plan.entries() {
        let y = nu.spec().node(j);
        image[i][0] += m * y[0];
        image[i][1] += m * y[1];
        row_mass[i] += m;
    }
    let bm = mu.barycenter();
    let bn = nu.barycenter();
    let (mut num, mut den) = (0.0, 0.0);
    let mut offsets = Vec::new();
    for i in 0..mu.len() {
        if row_mass[i] <= 0.0 {
            continue;
        }
        let x = mu.spec().node(i);
        let dx: Vec<f64> = (0..d).map(|a| x[a] - bm[a]).collect();
        let dy: Vec<f64> = (0..d).map(|a| image[i][a] / row_mass[i] - bn[a]).collect();
        num += row_mass[i] * dx.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        den += row_mass[i] * dx.iter().map(|a| a * a).sum::<f64>();
        offsets.push((row_mass[i], dx, dy));
    }
    let ratio = if den > 0.0 { num / den } else { 0.0 };
    let misfit: f64 = offsets
        .iter()
        .map(|(m, dx, dy)| m * dx.iter().zip(dy).map(|(a, b)| (b - ratio * a).powi(2)).sum::<f64>())
        .sum();
    let spread = |m: &GridMeasure, b: &[f64]| -> f64 {
        (0..m.len())
            .map(|i| {
                let x = m.spec().node(i);
                m.weights()[i] * (0..d).map(|a| (x[a] - b[a]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
    };
    let var_mu = spread(mu, &bm);
    Ok(HomothetyFit {
        ratio,
        residual: misfit.sqrt(),
        spread_ratio: if var_mu > 0.0 { (spread(nu, &bn) / var_mu).sqrt() } else { 0.0 },
    })
}

/// Least-squares parabola `p0 + p1 x + p2 x^2` through the density of a
/// one-dimensional measure on nodes with density above `relative_cut` times
/// the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaFit {
    /// `-p2`, the opening coefficient of a downward parabola.
    pub curvature: f64,
    /// Abscissa of the vertex.
    pub vertex: f64,
    pub points: usize,
}

pub fn fit_parabola(measure: &GridMeasure, relative_cut: f64) -> Option<ParabolaFit> {
    let spec = measure.spec();
    if spec.dim() != 1 {
        return None;
    }
    let peak = measure.linf_density();
    let pts: Vec<(f64, f64)> = (0..spec.len())
        .filter(|&i| measure.density(i) > relative_cut * peak)
        .map(|i| (spec.node(i)[0], measure.density(i)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    // Center abscissae for conditioning.
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for &(x, y) in &pts {
        let basis = [1.0, x - xm, (x - xm).powi(2)];
        for r in 0..3 {
            b[r] += basis[r] * y;
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
        }
    }
    let p = solve3(a, b)?;
    if p[2] == 0.0 {
        return None;
    }
    Some(ParabolaFit {
        curvature: -p[2],
        vertex: xm - p[1] / (2.0 * p[2]),
        points: pts.len(),
    })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `h * sum |u_i - target(x_i)|`, the L1 distance between the density of
/// `measure` and a reference density.
pub fn density_l1<F: Fn(&[f64]) -> f64>(measure: &GridMeasure, target: F) -> f64 {
    let spec = measure.spec();
    let d = spec.dim();
    (0..spec.len())
        .map(|i| (measure.density(i) - target(&spec.node(i)[..d])).abs())
        .sum::<f64>()
        * spec.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{eval_f, eval_g, InteractionKernel, LocalFunctional};
    use crate::solver::joint_objective;
    use crate::transport::{transport_cost, wasserstein, TransportMethod};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radius_matches_quadrature() {
        assert!((radius_from_mass(0.5, 1).unwrap() - 3f64.cbrt()).abs() < 1e-14);
        for (lambda, d) in [(0.5, 1), (2.0, 1), (1.0, 2), (0.3, 2)] {
            let r = radius_from_mass(lambda, d).unwrap();
            let half = r * 1.01;
            let n = if d == 1 { 2000 } else { 600 };
            let spec = if d == 1 {
                GridSpec::interval(-half, half, n).unwrap()
            } else {
                GridSpec::rectangle([-half, -half], [half, half], [n, n]).unwrap()
            };
            let inst = QuadraticInstance::centered(lambda, &spec).unwrap();
            let mass: f64 = (0..spec.len()).map(|i| inst.mu_density(&spec.node(i)[..d])).sum::<f64>() * spec.cell_volume();
            let tol = if d == 1 { 1e-6 } else { 1e-4 };
            assert!((mass - 1.0).abs() < tol, "lambda {lambda} d {d}: mass {mass}");
        }
    }

    #[test]
    fn large_lambda_limit() {
        let r = radius_from_mass(1e6, 1).unwrap();
        assert!((r - 1.5f64.cbrt()).abs() < 1e-6);
        let spec = GridSpec::interval(-1.2, 1.2, 2000).unwrap();
        let inst = QuadraticInstance::centered(1e6, &spec).unwrap();
        assert!((inst.coefficient() - 0.5).abs() < 1e-6);
        let mass: f64 = (0..spec.len()).map(|i| inst.mu_density(&spec.node(i)[..1])).sum::<f64>() * spec.cell_volume();
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_values() {
        let spec = GridSpec::interval(-3.0, 3.0, 10).unwrap();
        let inst = QuadraticInstance::centered(0.5, &spec).unwrap();
        assert_eq!(inst.coefficient(), 0.25);
        assert!((inst.mu_density(&[0.0]) - 0.25 * inst.radius.powi(2)).abs() < 1e-15);
        assert_eq!(inst.mu_density(&[inst.radius]), 0.0);
        assert_eq!(inst.mu_density(&[2.9]), 0.0);
        assert!((inst.nu_density(&[0.0]) - 2.0 * inst.normalization).abs() < 1e-15);
        assert_eq!(inst.nu_density(&[inst.nu_radius() * 1.0001]), 0.0);
        assert!(inst.nu_density(&[inst.nu_radius() * 0.999]) > 0.0);
    }

    #[test]
    fn boundary_contact_is_refused() {
        let spec = GridSpec::interval(-1.0, 1.0, 10).unwrap();
        assert!(matches!(
            QuadraticInstance::centered(0.5, &spec),
            Err(AnalyticError::SupportTouchesBoundary { .. })
        ));
        let spec = GridSpec::interval(-3.0, 3.0, 10).unwrap();
        assert!(QuadraticInstance::new(0.5, &spec, &[2.0]).is_err());
    }

    #[test]
    fn maps_invert_and_fix_center() {
        let spec = GridSpec::rectangle([-3.0, -2.0], [3.0, 4.0], [4, 4]).unwrap();
        let inst = QuadraticInstance::new(1.3, &spec, &[0.2, 1.0]).unwrap();
        assert_eq!(inst.to_nu(&inst.center), inst.center);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..4.0)];
            let back = inst.from_nu(&inst.to_nu(&x));
            assert!((back[0] - x[0]).abs() < 1e-14 && (back[1] - x[1]).abs() < 1e-14);
            // Change of variables: v(s(x)) / jacobian = u(x).
            let jac = (2.0 * inst.lambda + 1.0).powi(2);
            let lhs = inst.nu_density(&inst.to_nu(&x)) / jac;
            assert!((lhs - inst.mu_density(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_matches_sampled_nu() {
        for lambda in [0.5, 1.0, 2.0] {
            let spec = GridSpec::interval(-2.0, 2.0, 200).unwrap();
            let h = spec.max_spacing();
            let inst = QuadraticInstance::centered(lambda, &spec).unwrap();
            let mu = inst.sample_mu(&spec).unwrap();
            let pushed = mu.pushforward(|i| spec.nearest_node(&inst.to_nu(&spec.node_vec(i))));
            let nu = inst.sample_nu(&spec).unwrap();
            let w1 = wasserstein(&pushed, &nu, 1.0, TransportMethod::Exact).unwrap();
            assert!(w1 <= 4.0 * h, "lambda {lambda}: W1 {w1}");
        }
    }

    #[test]
    fn barycenters_coincide() {
        let spec = GridSpec::interval(-2.0, 2.0, 301).unwrap();
        let inst = QuadraticInstance::new(1.0, &spec, &[0.3]).unwrap();
        let mu = inst.sample_mu(&spec).unwrap();
        let nu = inst.sample_nu(&spec).unwrap();
        let h = spec.max_spacing();
        assert!((mu.barycenter()[0] - 0.3).abs() < h * h);
        assert!((nu.barycenter()[0] - 0.3).abs() < h);
    }

    #[test]
    fn lipschitz_diagnostics() {
        let spec = GridSpec::interval(-2.0, 2.0, 400).unwrap();
        let h = spec.max_spacing();
        for lambda in [0.5, 1.0, 3.0] {
            let inst = QuadraticInstance::centered(lambda, &spec).unwrap();
            let check = inst.lipschitz_bound_check().unwrap();
            assert!(check.lip_constant <= check.bound * (1.0 + h), "{check:?}");
            assert!(check.remark_inequality);
            assert!(!check.discontinuity_flag);
            assert_eq!(check.inf_u, 0.0);
        }
        assert_eq!(discrete_lipschitz(&GridMeasure::uniform(&spec)), 0.0);
    }

    #[test]
    fn homothety_fit_is_exact_for_scaled_atoms() {
        let spec = GridSpec::interval(-2.0, 2.0, 41).unwrap();
        // mu on nodes 10, 20, 30; nu on 15, 20, 25: ratio one half.
        let mut a = vec![0.0; 41];
        let mut b = vec![0.0; 41];
        for (k, w) in [(10, 0.2), (20, 0.5), (30, 0.3)] {
            a[k] = w;
            b[(20 + (k as i64 - 20) / 2) as usize] = w;
        }
        let mu = GridMeasure::from_weights(spec.clone(), a).unwrap();
        let nu = GridMeasure::from_weights(spec, b).unwrap();
        let fit = fit_homothety(&mu, &nu).unwrap();
        assert!((fit.ratio - 0.5).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!((fit.spread_ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn parabola_fit_recovers_coefficient() {
        let spec = GridSpec::interval(-2.0, 2.0, 400).unwrap();
        let inst = QuadraticInstance::new(0.5, &spec, &[0.1]).unwrap();
        let fit = fit_parabola(&inst.sample_mu(&spec).unwrap(), 0.1).unwrap();
        assert!((fit.curvature - 0.25).abs() < 1e-3);
        assert!((fit.vertex - 0.1).abs() < 1e-6);
    }

    #[test]
    fn sampled_oracle_beats_perturbations() {
        let spec = GridSpec::interval(-2.0, 2.0, 60).unwrap();
        let h = spec.max_spacing();
        let lambda = 1.0;
        let inst = QuadraticInstance::centered(lambda, &spec).unwrap();
        let kernel = InteractionKernel::quadratic(lambda, &spec).unwrap();
        let local = LocalFunctional::half_square();
        let mu = inst.sample_mu(&spec).unwrap();
        let nu = inst.sample_nu(&spec).unwrap();
        let base = joint_objective(&mu, &nu, &kernel, &local).unwrap();
        let cost = CostMatrix::half_squared(&spec, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t_mu = rng.gen_range(0.0..0.1);
            let t_nu = rng.gen_range(0.0..0.1);
            let dir = |rng: &mut ChaCha8Rng| {
                let w: Vec<f64> = (0..spec.len()).map(|_| rng.gen::<f64>()).collect();
                GridMeasure::from_weights(spec.clone(), w).unwrap()
            };
            let pm = mu.mix(&dir(&mut rng), t_mu);
            let pn = nu.mix(&dir(&mut rng), t_nu);
            let value = transport_cost(&pm, &pn, &cost).unwrap() + eval_f(&pm, &local) + eval_g(&pn, &kernel);
            assert!(value >= base - h, "perturbed {value} below oracle {base}");
        }
    }
}

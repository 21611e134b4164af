use crate::measure::Point;

use super::TransportPlan;

/// Barycentric projection of a plan onto its source nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMap {
    /// Image of each source node; `None` for rows without mass.
    pub targets: Vec<Option<Point>>,
    /// Every row with mass sends it to a single target node.
    pub is_pure: bool,
}

impl DisplacementMap {
    /// `(source index, image)` for every row with mass.
    pub fn defined(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|p| (i, p)))
    }
}

pub fn displacement_map(plan: &TransportPlan) -> DisplacementMap {
    let mut sums = vec![[0.0; 2]; plan.rows()];
    let mut mass = vec![0.0; plan.rows()];
    let mut count = vec![0usize; plan.rows()];
    for &(i, j, m) in plan.entries() {
        let y = plan.target_spec().node(j);
        sums[i][0] += m * y[0];
        sums[i][1] += m * y[1];
        mass[i] += m;
        count[i] += 1;
    }
    let targets = (0..plan.rows())
        .map(|i| (mass[i] > 0.0).then(|| [sums[i][0] / mass[i], sums[i][1] / mass[i]]))
        .collect();
    DisplacementMap {
        targets,
        is_pure: count.iter().all(|&k| k <= 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{GridMeasure, GridSpec};
    use crate::transport::{solve_exact, CostMatrix};

    #[test]
    fn two_by_two_map() {
        let g = GridSpec::from_nodes_1d(0.0, 1.0, 4).unwrap();
        let mu = GridMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, _) = solve_exact(&mu, &nu, &cost).unwrap();
        let t = displacement_map(&plan);
        assert!(t.is_pure);
        assert_eq!(t.targets[0].unwrap()[0], 1.0);
        assert_eq!(t.targets[2].unwrap()[0], 3.0);
        assert!(t.targets[1].is_none() && t.targets[3].is_none());
    }

    #[test]
    fn identity_plan() {
        let g = GridSpec::rectangle([0.0, 0.0], [1.0, 1.0], [3, 2]).unwrap();
        let mu = GridMeasure::uniform(&g);
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, _) = solve_exact(&mu, &mu, &cost).unwrap();
        let t = displacement_map(&plan);
        assert!(t.is_pure);
        for (i, p) in t.defined() {
            assert_eq!(p, g.node(i));
        }
    }

    #[test]
    fn split_row_is_impure() {
        let g = GridSpec::from_nodes_1d(0.0, 1.0, 3).unwrap();
        let mu = GridMeasure::point_mass(&g, 1).unwrap();
        let nu = GridMeasure::from_weights(g.clone(), vec![0.5, 0.0, 0.5]).unwrap();
        let cost = CostMatrix::half_squared(&g, &g).unwrap();
        let (plan, _) = solve_exact(&mu, &nu, &cost).unwrap();
        let t = displacement_map(&plan);
        assert!(!t.is_pure);
        assert_eq!(t.targets[1].unwrap()[0], 1.0);
    }
}

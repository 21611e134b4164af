//! Probability measures on regular cell-centered grids over boxes in one or
//! two dimensions.
//!
//! A [`GridMeasure`] stores mass per node. Densities are always derived as
//! `weight / cell_volume`. Every constructor enforces nonnegativity and unit
//! total mass.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::g17;

/// Absolute tolerance on total mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A node coordinate. In one dimension the second component is zero, which
/// leaves inner products and squared distances unchanged.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("density vanishes at every grid node")]
    AllZeroDensity,
    #[error("negative density {value} at node {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("expected {expected} weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("node index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("malformed measure csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for MeasureError {
    fn from(e: csv::Error) -> Self {
        MeasureError::Csv(e.to_string())
    }
}

/// Regular cell-centered grid on the box `[lower, upper]`.
///
/// Node `k` along an axis sits at `lower + (k + 1/2) * spacing`, so no node
/// lies on the boundary. In two dimensions the flat index is
/// `i0 * n1 + i1` (first axis slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points_per_axis: Vec<usize>,
}

impl GridSpec {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        points_per_axis: Vec<usize>,
    ) -> Result<Self, MeasureError> {
        let d = lower.len();
        if d == 0 || d > 2 {
            return Err(MeasureError::InvalidGrid(format!(
                "dimension must be 1 or 2, got {d}"
            )));
        }
        if upper.len() != d || points_per_axis.len() != d {
            return Err(MeasureError::InvalidGrid(
                "lower, upper and points_per_axis must have equal length".into(),
            ));
        }
        for axis in 0..d {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) {
                return Err(MeasureError::InvalidGrid("non-finite box corner".into()));
            }
            if upper[axis] <= lower[axis] {
                return Err(MeasureError::InvalidGrid(format!(
                    "upper[{axis}] = {} must exceed lower[{axis}] = {}",
                    upper[axis], lower[axis]
                )));
            }
            if points_per_axis[axis] == 0 {
                return Err(MeasureError::InvalidGrid(format!(
                    "axis {axis} has no grid points"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            points_per_axis,
        })
    }

    pub fn interval(lower: f64, upper: f64, n: usize) -> Result<Self, MeasureError> {
        Self::new(vec![lower], vec![upper], vec![n])
    }

    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self, MeasureError> {
        Self::new(lower.to_vec(), upper.to_vec(), n.to_vec())
    }

    /// Grid whose nodes are exactly `start, start + step, ...` (`n` of them).
    pub fn from_nodes_1d(start: f64, step: f64, n: usize) -> Result<Self, MeasureError> {
        Self::interval(start - 0.5 * step, start + (n as f64 - 0.5) * step, n)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.points_per_axis[axis] as f64
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Diameter `|upper - lower|` of the box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|a| (self.upper[a] - self.lower[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| 0.5 * (self.lower[a] + self.upper[a]))
            .collect()
    }

    pub fn multi_index(&self, index: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [index, 0]
        } else {
            let n1 = self.points_per_axis[1];
            [index / n1, index % n1]
        }
    }

    pub fn flat_index(&self, multi: [usize; 2]) -> usize {
        if self.dim() == 1 {
            multi[0]
        } else {
            multi[0] * self.points_per_axis[1] + multi[1]
        }
    }

    pub fn node(&self, index: usize) -> Point {
        let m = self.multi_index(index);
        let mut p = [0.0; 2];
        for (axis, slot) in p.iter_mut().enumerate().take(self.dim()) {
            *slot = self.lower[axis] + (m[axis] as f64 + 0.5) * self.spacing(axis);
        }
        p
    }

    /// Coordinates of node `index` as a d-vector.
    pub fn node_vec(&self, index: usize) -> Vec<f64> {
        self.node(index)[..self.dim()].to_vec()
    }

    pub fn nodes(&self) -> Vec<Point> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Node closest to `point` (clamped into the box).
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let mut m = [0usize; 2];
        for axis in 0..self.dim() {
            let h = self.spacing(axis);
            let k = ((point[axis] - self.lower[axis]) / h - 0.5).round();
            let max = (self.points_per_axis[axis] - 1) as f64;
            m[axis] = k.clamp(0.0, max) as usize;
        }
        self.flat_index(m)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        (0..self.dim()).all(|a| point[a] >= self.lower[a] && point[a] <= self.upper[a])
    }

    /// Flat indices of the axis neighbours (+1 along each axis) of `index`.
    pub fn forward_neighbours(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.multi_index(index);
        (0..self.dim()).filter_map(move |axis| {
            if m[axis] + 1 < self.points_per_axis[axis] {
                let mut n = m;
                n[axis] += 1;
                Some(self.flat_index(n))
            } else {
                None
            }
        })
    }
}

pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Nonnegative unit-mass weights on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    spec: GridSpec,
    weights: Vec<f64>,
}

impl GridMeasure {
    /// Validates and normalizes raw weights. Negative or non-finite entries are
    /// rejected; a total mass off by more than [`MASS_TOLERANCE`] is rescaled.
    pub fn from_weights(spec: GridSpec, mut weights: Vec<f64>) -> Result<Self, MeasureError> {
        if weights.len() != spec.len() {
            return Err(MeasureError::LengthMismatch {
                expected: spec.len(),
                got: weights.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(MeasureError::NonFinite { index });
            }
            if w < 0.0 {
                return Err(MeasureError::NegativeDensity { index, value: w });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(MeasureError::AllZeroDensity);
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { spec, weights })
    }

    /// Samples `density_fn` at every node, multiplies by the cell volume and
    /// renormalizes.
    pub fn build_from_density<F>(spec: &GridSpec, density_fn: F) -> Result<Self, MeasureError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let vol = spec.cell_volume();
        let d = spec.dim();
        let mut weights = Vec::with_capacity(spec.len());
        for index in 0..spec.len() {
            let p = spec.node(index);
            let value = density_fn(&p[..d]);
            if !value.is_finite() {
                return Err(MeasureError::NonFinite { index });
            }
            if value < 0.0 {
                return Err(MeasureError::NegativeDensity { index, value });
            }
            weights.push(value * vol);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(MeasureError::AllZeroDensity);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            spec: spec.clone(),
            weights,
        })
    }

    pub fn uniform(spec: &GridSpec) -> Self {
        let n = spec.len();
        Self {
            spec: spec.clone(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(spec: &GridSpec, index: usize) -> Result<Self, MeasureError> {
        if index >= spec.len() {
            return Err(MeasureError::IndexOutOfRange {
                index,
                len: spec.len(),
            });
        }
        let mut weights = vec![0.0; spec.len()];
        weights[index] = 1.0;
        Ok(Self {
            spec: spec.clone(),
            weights,
        })
    }

    /// Single atom at the node nearest to `point`.
    pub fn point_mass_at(spec: &GridSpec, point: &[f64]) -> Self {
        let index = spec.nearest_node(point);
        Self::point_mass(spec, index).expect("nearest node is in range")
    }

    /// Measure from weights known to be a valid convex combination of valid
    /// measures; only rounding noise is removed.
    pub(crate) fn from_combination(spec: GridSpec, mut weights: Vec<f64>) -> Self {
        for w in weights.iter_mut() {
            if *w < 0.0 {
                debug_assert!(*w > -1e-12, "combination produced weight {w}");
                *w = 0.0;
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Self { spec, weights }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn density(&self, index: usize) -> f64 {
        self.weights[index] / self.spec.cell_volume()
    }

    pub fn densities(&self) -> Vec<f64> {
        let vol = self.spec.cell_volume();
        self.weights.iter().map(|w| w / vol).collect()
    }

    pub fn barycenter(&self) -> Vec<f64> {
        let mut b = [0.0; 2];
        for (i, &w) in self.weights.iter().enumerate() {
            let p = self.spec.node(i);
            b[0] += w * p[0];
            b[1] += w * p[1];
        }
        b[..self.spec.dim()].to_vec()
    }

    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let p = self.spec.node(i);
                w * (p[0] * p[0] + p[1] * p[1])
            })
            .sum()
    }

    /// Largest nodal density.
    pub fn linf_density(&self) -> f64 {
        self.weights.iter().fold(0.0, |m: f64, &w| m.max(w)) / self.spec.cell_volume()
    }

    pub fn min_density(&self) -> f64 {
        self.weights.iter().fold(f64::INFINITY, |m: f64, &w| m.min(w)) / self.spec.cell_volume()
    }

    /// Nodes whose weight exceeds `relative_threshold * max weight`.
    pub fn support(&self, relative_threshold: f64) -> Vec<usize> {
        let max = self.weights.iter().fold(0.0, |m: f64, &w| m.max(w));
        let cut = relative_threshold * max;
        (0..self.len()).filter(|&i| self.weights[i] > cut).collect()
    }

    /// `(1 - t) * self + t * other`.
    pub fn mix(&self, other: &GridMeasure, t: f64) -> GridMeasure {
        debug_assert_eq!(self.len(), other.len());
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Self::from_combination(self.spec.clone(), weights)
    }

    /// Pushes every node's mass to `map(index)`.
    pub fn pushforward<F: Fn(usize) -> usize>(&self, map: F) -> GridMeasure {
        let mut weights = vec![0.0; self.len()];
        for (i, &w) in self.weights.iter().enumerate() {
            weights[map(i)] += w;
        }
        Self::from_combination(self.spec.clone(), weights)
    }

    /// Total variation style distance `sum_i |a_i - b_i|`.
    pub fn l1_distance(&self, other: &GridMeasure) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MeasureError> {
        let mut w = csv::Writer::from_writer(writer);
        let vol = self.spec.cell_volume();
        if self.spec.dim() == 1 {
            w.write_record(["index", "x", "weight", "density"])?;
        } else {
            w.write_record(["index", "x", "y", "weight", "density"])?;
        }
        for (i, &weight) in self.weights.iter().enumerate() {
            let p = self.spec.node(i);
            let mut rec = vec![i.to_string(), g17(p[0])];
            if self.spec.dim() == 2 {
                rec.push(g17(p[1]));
            }
            rec.push(g17(weight));
            rec.push(g17(weight / vol));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), MeasureError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a measure written by [`GridMeasure::write_csv`]. The grid is
    /// reconstructed from the node coordinates, which must be affine in the
    /// node indices.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MeasureError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().map(str::trim).collect();
        let dim = match cols.as_slice() {
            ["index", "x", "weight", "density"] => 1,
            ["index", "x", "y", "weight", "density"] => 2,
            _ => return Err(MeasureError::Csv(format!("unexpected header {cols:?}"))),
        };
        let mut rows: Vec<(usize, Point, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64, MeasureError> {
                rec.get(k)
                    .ok_or_else(|| MeasureError::Csv("short record".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| MeasureError::Csv(e.to_string()))
            };
            let index: usize = rec
                .get(0)
                .ok_or_else(|| MeasureError::Csv("short record".into()))?
                .trim()
                .parse()
                .map_err(|e: std::num::ParseIntError| MeasureError::Csv(e.to_string()))?;
            let x = field(1)?;
            let y = if dim == 2 { field(2)? } else { 0.0 };
            rows.push((index, [x, y], field(dim + 1)?, field(dim + 2)?));
        }
        if rows.is_empty() {
            return Err(MeasureError::Csv("no nodes".into()));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.0 != k {
                return Err(MeasureError::Csv(format!(
                    "row {k} carries index {}, expected consecutive indices",
                    row.0
                )));
            }
        }
        let spec = infer_spec(dim, &rows.iter().map(|r| r.1).collect::<Vec<_>>())?;
        let vol = spec.cell_volume();
        for (k, &(_, p, weight, density)) in rows.iter().enumerate() {
            let expect = spec.node(k);
            let scale = 1.0 + expect[0].abs() + expect[1].abs();
            if squared_distance(&p, &expect).sqrt() > 1e-9 * scale {
                return Err(MeasureError::Csv(format!(
                    "node {k} is not on a regular grid"
                )));
            }
            if (weight / vol - density).abs() > 1e-9 * (1.0 + density.abs()) {
                return Err(MeasureError::Csv(format!(
                    "node {k}: density {density} inconsistent with weight {weight}"
                )));
            }
        }
        Self::from_weights(spec, rows.iter().map(|r| r.2).collect())
    }

    pub fn load_csv(path: &Path) -> Result<Self, MeasureError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn infer_axis(values: &mut Vec<f64>) -> Result<(f64, f64, usize), MeasureError> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    let n = values.len();
    if n == 1 {
        return Err(MeasureError::Csv(
            "cannot infer spacing from a single node per axis".into(),
        ));
    }
    let h = (values[n - 1] - values[0]) / (n - 1) as f64;
    Ok((values[0] - 0.5 * h, values[n - 1] + 0.5 * h, n))
}

fn infer_spec(dim: usize, points: &[Point]) -> Result<GridSpec, MeasureError> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut counts = Vec::new();
    for axis in 0..dim {
        let mut vals: Vec<f64> = points.iter().map(|p| p[axis]).collect();
        let (lo, hi, n) = infer_axis(&mut vals)?;
        lower.push(lo);
        upper.push(hi);
        counts.push(n);
    }
    let spec = GridSpec::new(lower, upper, counts)?;
    if spec.len() != points.len() {
        return Err(MeasureError::Csv(format!(
            "{} rows do not fill a {:?} grid",
            points.len(),
            spec.points_per_axis()
        )));
    }
    Ok(spec)
}

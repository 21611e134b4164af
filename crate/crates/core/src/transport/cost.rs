use crate::measure::{squared_distance, GridSpec, Point};

use super::TransportError;

/// Ground cost family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `c(x, y) = |x - y|^2 / 2`.
    HalfSquared,
    /// `c(x, y) = |x - y|^p`, `p >= 1`.
    Power(f64),
    /// Arbitrary nonnegative entries.
    Custom,
}

/// Dense source-by-target cost matrix.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    kind: CostKind,
    entries: Vec<f64>,
    monotone_1d: bool,
}

impl CostMatrix {
    pub fn half_squared(source: &GridSpec, target: &GridSpec) -> Result<Self, TransportError> {
        Self::from_grids(source, target, CostKind::HalfSquared)
    }

    pub fn power(source: &GridSpec, target: &GridSpec, p: f64) -> Result<Self, TransportError> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(TransportError::InvalidParameter(format!(
                "cost exponent must be >= 1, got {p}"
            )));
        }
        Self::from_grids(source, target, CostKind::Power(p))
    }

    fn from_grids(source: &GridSpec, target: &GridSpec, kind: CostKind) -> Result<Self, TransportError> {
        if source.dim() != target.dim() {
            return Err(TransportError::DimensionMismatch(format!(
                "source grid is {}-d, target grid is {}-d",
                source.dim(),
                target.dim()
            )));
        }
        let xs = source.nodes();
        let ys = target.nodes();
        let cell = |x: &Point, y: &Point| {
            let s = squared_distance(x, y);
            match kind {
                CostKind::HalfSquared => 0.5 * s,
                CostKind::Power(p) if p == 2.0 => s,
                CostKind::Power(p) if p == 1.0 => s.sqrt(),
                CostKind::Power(p) => s.powf(0.5 * p),
                CostKind::Custom => unreachable!(),
            }
        };
        let mut entries = Vec::with_capacity(xs.len() * ys.len());
        for x in &xs {
            entries.extend(ys.iter().map(|y| cell(x, y)));
        }
        Ok(Self {
            rows: xs.len(),
            cols: ys.len(),
            kind,
            entries,
            monotone_1d: source.dim() == 1,
        })
    }

    /// Custom row-major cost; entries must be finite and nonnegative.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, TransportError> {
        if entries.len() != rows * cols {
            return Err(TransportError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} cost",
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(TransportError::InvalidParameter(format!(
                "cost entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            kind: CostKind::Custom,
            entries,
            monotone_1d: false,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    /// True when both grids are one-dimensional and the cost is a convex
    /// function of `x - y`; the monotone coupling is then optimal.
    pub fn is_monotone_1d(&self) -> bool {
        self.monotone_1d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |m: f64, &c| m.max(c))
    }

    pub fn transpose(&self) -> CostMatrix {
        let mut entries = vec![0.0; self.entries.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                entries[j * self.rows + i] = self.get(i, j);
            }
        }
        CostMatrix {
            rows: self.cols,
            cols: self.rows,
            kind: self.kind,
            entries,
            monotone_1d: self.monotone_1d,
        }
    }
}

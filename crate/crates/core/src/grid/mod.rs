//! Tensor-grid discretization of the domain: node layout, Dirichlet masks,
//! fields, the elliptic operator, linear solves, and bubble projections.

pub mod io;
pub mod operator;
pub mod potential;
pub mod projection;
pub mod solver;

pub use operator::EllipticOperator;
pub use potential::Potential;
pub use projection::{ProjectedBubble, ProjectionOptions};
pub use solver::SolverOptions;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dirichlet mask shape carried by the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// The full box; boundary nodes are the box faces.
    Box,
    /// The ball inscribed in the box; outside nodes are masked to zero.
    Ball,
}

/// Requested grid geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub spacing: Vec<f64>,
    pub mask: MaskKind,
    pub max_nodes: usize,
}

impl GridSpec {
    /// Grid from per-axis spacing; the spacing must divide each axis length.
    pub fn with_spacing(bounds: Vec<(f64, f64)>, spacing: Vec<f64>, mask: MaskKind) -> Self {
        Self {
            bounds,
            spacing,
            mask,
            max_nodes: 4_000_000,
        }
    }

    /// Grid from node counts per axis (counts include both boundary nodes).
    pub fn with_nodes(bounds: Vec<(f64, f64)>, nodes: &[usize], mask: MaskKind) -> Result<Self> {
        if nodes.len() != bounds.len() || nodes.iter().any(|&m| m < 3) {
            return Err(Error::InvalidInput(
                "need at least 3 nodes per axis and matching lengths".into(),
            ));
        }
        let spacing = bounds
            .iter()
            .zip(nodes)
            .map(|(&(lo, hi), &m)| (hi - lo) / (m - 1) as f64)
            .collect();
        Ok(Self {
            bounds,
            spacing,
            mask,
            max_nodes: 4_000_000,
        })
    }
}

/// A realized tensor grid with its interior mask.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    pub bounds: Vec<(f64, f64)>,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub mask: MaskKind,
    strides: Vec<usize>,
    interior: Vec<bool>,
    total: usize,
    interior_count: usize,
    cell_volume: f64,
}

/// Builds the grid, validating divisibility and the node-count cap.
pub fn build_grid(spec: &GridSpec) -> Result<DomainGrid> {
    let n = spec.bounds.len();
    if n == 0 || spec.spacing.len() != n {
        return Err(Error::InvalidInput(
            "bounds and spacing must be non-empty and of equal length".into(),
        ));
    }
    let mut dims = Vec::with_capacity(n);
    for (k, (&(lo, hi), &h)) in spec.bounds.iter().zip(&spec.spacing).enumerate() {
        if !(hi > lo) || !(h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "degenerate bounds or spacing on axis {k}"
            )));
        }
        let steps = (hi - lo) / h;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 * steps.max(1.0) || rounded < 2.0 {
            return Err(Error::InvalidInput(format!(
                "spacing {h} does not divide axis {k} of length {}",
                hi - lo
            )));
        }
        dims.push(rounded as usize + 1);
    }
    let total: usize = dims.iter().product();
    if total > spec.max_nodes {
        return Err(Error::InvalidInput(format!(
            "grid has {total} nodes, above the configured cap {}",
            spec.max_nodes
        )));
    }
    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let center: Vec<f64> = spec.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let radius = spec
        .bounds
        .iter()
        .map(|&(lo, hi)| 0.5 * (hi - lo))
        .fold(f64::INFINITY, f64::min);
    let mut interior = vec![false; total];
    let mut interior_count = 0usize;
    let mut idx = vec![0usize; n];
    for (flat, slot) in interior.iter_mut().enumerate() {
        let mut rem = flat;
        for k in 0..n {
            idx[k] = rem / strides[k];
            rem %= strides[k];
        }
        let on_face = idx
            .iter()
            .zip(&dims)
            .any(|(&i, &m)| i == 0 || i == m - 1);
        let inside = if on_face {
            false
        } else {
            match spec.mask {
                MaskKind::Box => true,
                MaskKind::Ball => {
                    let mut r2 = 0.0;
                    for k in 0..n {
                        let x = spec.bounds[k].0 + idx[k] as f64 * spec.spacing[k];
                        r2 += (x - center[k]) * (x - center[k]);
                    }
                    r2 < radius * radius
                }
            }
        };
        *slot = inside;
        interior_count += usize::from(inside);
    }
    Ok(DomainGrid {
        bounds: spec.bounds.clone(),
        dims,
        spacing: spec.spacing.clone(),
        mask: spec.mask,
        strides,
        interior,
        total,
        interior_count,
        cell_volume: spec.spacing.iter().product(),
    })
}

impl DomainGrid {
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn node_count(&self) -> usize {
        self.total
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().fold(0.0f64, |m, &h| m.max(h))
    }

    #[inline]
    pub fn is_interior(&self, flat: usize) -> bool {
        self.interior[flat]
    }

    pub(crate) fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub(crate) fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Physical coordinates of a flat node index.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            x.push(self.bounds[k].0 + i as f64 * self.spacing[k]);
        }
        x
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        (0..self.dim())
            .map(|k| {
                let i = rem / self.strides[k];
                rem %= self.strides[k];
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Distance from a point to the domain boundary (box faces, or the
    /// inscribed sphere for ball masks). Negative outside.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self.mask {
            MaskKind::Box => x
                .iter()
                .zip(&self.bounds)
                .map(|(xi, &(lo, hi))| (xi - lo).min(hi - xi))
                .fold(f64::INFINITY, f64::min),
            MaskKind::Ball => {
                let radius = self
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| 0.5 * (hi - lo))
                    .fold(f64::INFINITY, f64::min);
                let r2: f64 = x
                    .iter()
                    .zip(&self.bounds)
                    .map(|(xi, &(lo, hi))| {
                        let c = 0.5 * (lo + hi);
                        (xi - c) * (xi - c)
                    })
                    .sum();
                radius - r2.sqrt()
            }
        }
    }

    /// Default interior margin scale: 10% of the smallest box half-width.
    pub fn default_d0(&self) -> f64 {
        0.1 * self
            .bounds
            .iter()
            .map(|&(lo, hi)| 0.5 * (hi - lo))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A scalar field on the grid; values vanish identically off the interior.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub(crate) values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: &DomainGrid) -> Self {
        Self {
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Samples a function at interior nodes, zero elsewhere.
    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(grid: &DomainGrid, f: F) -> Self {
        use rayon::prelude::*;
        let mut values = vec![0.0; grid.node_count()];
        values.par_iter_mut().enumerate().for_each(|(i, v)| {
            if grid.is_interior(i) {
                *v = f(&grid.coords(i));
            }
        });
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn set(&mut self, grid: &DomainGrid, flat: usize, v: f64) {
        if grid.is_interior(flat) {
            self.values[flat] = v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// self += s * other
    pub fn axpy(&mut self, s: f64, other: &GridField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// Minimum over interior nodes only.
    pub fn interior_min(&self, grid: &DomainGrid) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| grid.is_interior(*i))
            .fold(f64::INFINITY, |m, (_, &v)| m.min(v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_interior_nodes() {
        let spec =
            GridSpec::with_spacing(vec![(0.0, 1.0), (0.0, 1.0)], vec![0.5, 0.5], MaskKind::Box);
        let g = build_grid(&spec).unwrap();
        assert_eq!(g.interior_count(), 1);
        let spec = GridSpec::with_spacing(vec![(-1.0, 1.0); 3], vec![0.25; 3], MaskKind::Box);
        let g = build_grid(&spec).unwrap();
        assert_eq!(g.interior_count(), 343);
    }

    #[test]
    fn rejects_non_dividing_spacing() {
        let spec = GridSpec::with_spacing(vec![(0.0, 1.0)], vec![0.3], MaskKind::Box);
        assert!(build_grid(&spec).is_err());
    }

    #[test]
    fn rejects_excessive_node_count() {
        let mut spec = GridSpec::with_spacing(vec![(0.0, 1.0); 2], vec![0.001; 2], MaskKind::Box);
        spec.max_nodes = 1000;
        assert!(build_grid(&spec).is_err());
    }

    #[test]
    fn ball_mask_is_smaller_than_box() {
        let h = 1.0 / 32.0;
        let spec_box = GridSpec::with_spacing(vec![(-1.0, 1.0); 2], vec![h; 2], MaskKind::Box);
        let spec_ball = GridSpec::with_spacing(vec![(-1.0, 1.0); 2], vec![h; 2], MaskKind::Ball);
        let gb = build_grid(&spec_box).unwrap();
        let gs = build_grid(&spec_ball).unwrap();
        assert!(gs.interior_count() < gb.interior_count());
        // ratio approximates pi/4 on a fine-ish grid
        let ratio = gs.interior_count() as f64 / gb.interior_count() as f64;
        assert!((ratio - std::f64::consts::FRAC_PI_4).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn coords_round_trip() {
        let spec =
            GridSpec::with_spacing(vec![(0.0, 1.0), (-1.0, 1.0)], vec![0.25, 0.5], MaskKind::Box);
        let g = build_grid(&spec).unwrap();
        for flat in [0usize, 3, 7, g.node_count() - 1] {
            let idx = g.multi_index(flat);
            assert_eq!(g.flat_index(&idx), flat);
        }
        let x = g.coords(g.flat_index(&[1, 2]));
        assert_eq!(x, vec![0.25, 0.0]);
    }
}

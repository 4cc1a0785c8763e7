//! The discrete operator -Laplace + V with zero Dirichlet data, inner
//! products, the energy functional, and gradient pairings.
//!
//! All reductions run over fixed-size chunks whose partial sums are combined
//! in index order, so results are bit-identical regardless of thread count.

use super::{DomainGrid, GridField, Potential};
use crate::analytic::critical_exponent;
use crate::error::{Error, Result};
use rayon::prelude::*;

const REDUCE_CHUNK: usize = 1 << 13;

/// Deterministic parallel sum of f(i) over all node indices.
pub(crate) fn indexed_sum<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = len.div_ceil(REDUCE_CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(len);
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// The operator -Laplace + V on a fixed grid, with the potential sampled
/// once at the nodes.
pub struct EllipticOperator<'g> {
    pub grid: &'g DomainGrid,
    v: Vec<f64>,
}

impl<'g> EllipticOperator<'g> {
    /// Samples the potential on the grid; rejects non-positive potentials.
    pub fn new(grid: &'g DomainGrid, potential: &Potential) -> Result<Self> {
        if potential.dim() != grid.dim() {
            return Err(Error::InvalidInput(
                "potential dimension does not match the grid".into(),
            ));
        }
        let v: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .map(|i| potential.value(&grid.coords(i)))
            .collect();
        if let Some((i, &bad)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "potential must be positive on the closed domain; V = {bad} at node {:?}",
                grid.coords(i)
            )));
        }
        Ok(Self { grid, v })
    }

    pub fn potential_values(&self) -> &[f64] {
        &self.v
    }

    /// (2n+1)-point second-order stencil for -Laplace plus the diagonal V.
    pub fn apply(&self, u: &GridField) -> GridField {
        let grid = self.grid;
        let n = grid.dim();
        let strides = grid.strides().to_vec();
        let inv_h2: Vec<f64> = grid.spacing.iter().map(|h| 1.0 / (h * h)).collect();
        let interior = grid.interior_mask();
        let uv = &u.values;
        let mut out = vec![0.0; grid.node_count()];
        out.par_chunks_mut(REDUCE_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * REDUCE_CHUNK;
                for (off, slot) in chunk.iter_mut().enumerate() {
                    let i = base + off;
                    if !interior[i] {
                        continue;
                    }
                    let ui = uv[i];
                    let mut acc = self.v[i] * ui;
                    for k in 0..n {
                        // interior nodes always have both axis neighbors in the box
                        let s = strides[k];
                        acc += (2.0 * ui - uv[i - s] - uv[i + s]) * inv_h2[k];
                    }
                    *slot = acc;
                }
            });
        GridField { values: out }
    }

    /// Scalar product int grad u . grad w + int V u w, assembled from
    /// forward differences so that it matches the stencil exactly
    /// (summation by parts) for fields vanishing off the interior.
    pub fn inner_product(&self, u: &GridField, w: &GridField) -> f64 {
        let grid = self.grid;
        let n = grid.dim();
        let strides = grid.strides();
        let dims = &grid.dims;
        let uv = &u.values;
        let wv = &w.values;
        let total = grid.node_count();
        let grad_part = {
            let inv_h2: Vec<f64> = grid.spacing.iter().map(|h| 1.0 / (h * h)).collect();
            indexed_sum(total, |i| {
                let mut acc = 0.0;
                let mut rem = i;
                for k in 0..n {
                    let idx_k = rem / strides[k];
                    rem %= strides[k];
                    if idx_k + 1 < dims[k] {
                        let j = i + strides[k];
                        let du = uv[j] - uv[i];
                        let dw = wv[j] - wv[i];
                        acc += du * dw * inv_h2[k];
                    }
                }
                acc
            })
        };
        let v = &self.v;
        let mass_part = indexed_sum(total, |i| v[i] * uv[i] * wv[i]);
        (grad_part + mass_part) * grid.cell_volume()
    }

    pub fn norm(&self, u: &GridField) -> f64 {
        self.inner_product(u, u).max(0.0).sqrt()
    }

    /// Euler-Lagrange functional (1/2)||u||^2 - (p+1-eps)^{-1} int |u|^{p+1-eps}.
    pub fn functional(&self, eps: f64, u: &GridField) -> f64 {
        let n = self.grid.dim();
        let q = critical_exponent(n) + 1.0 - eps;
        let uv = &u.values;
        let nonlinear = indexed_sum(self.grid.node_count(), |i| uv[i].abs().powf(q));
        0.5 * self.inner_product(u, u) - nonlinear * self.grid.cell_volume() / q
    }

    /// Pairing <u, phi> - int |u|^{p-1-eps} u phi: the directional derivative
    /// of the functional at u in direction phi.
    pub fn pairing(&self, eps: f64, u: &GridField, phi: &GridField) -> f64 {
        let n = self.grid.dim();
        let q = critical_exponent(n) - 1.0 - eps;
        let uv = &u.values;
        let pv = &phi.values;
        let nonlinear = indexed_sum(self.grid.node_count(), |i| {
            if uv[i] == 0.0 {
                0.0
            } else {
                uv[i].abs().powf(q) * uv[i] * pv[i]
            }
        });
        self.inner_product(u, phi) - nonlinear * self.grid.cell_volume()
    }

    /// L2 norm sqrt(sum u_i^2 h^n).
    pub fn l2_norm(&self, u: &GridField) -> f64 {
        let uv = &u.values;
        (indexed_sum(self.grid.node_count(), |i| uv[i] * uv[i]) * self.grid.cell_volume()).sqrt()
    }

    /// Plain nodal quadrature sum f_i h^n.
    pub fn integrate(&self, u: &GridField) -> f64 {
        let uv = &u.values;
        indexed_sum(self.grid.node_count(), |i| uv[i]) * self.grid.cell_volume()
    }
}

/// Euclidean dot product of raw node values (used by the Krylov solvers).
pub(crate) fn dot(u: &GridField, w: &GridField) -> f64 {
    let uv = &u.values;
    let wv = &w.values;
    indexed_sum(uv.len(), |i| uv[i] * wv[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, MaskKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_box(n: usize, nodes: usize) -> DomainGrid {
        let spec = GridSpec::with_nodes(vec![(0.0, 1.0); n], &vec![nodes; n], MaskKind::Box).unwrap();
        build_grid(&spec).unwrap()
    }

    fn product_sine(grid: &DomainGrid) -> GridField {
        GridField::from_fn(grid, |x| x.iter().map(|xi| (PI * xi).sin()).product())
    }

    #[test]
    fn zero_maps_to_zero() {
        let grid = unit_box(2, 9);
        let op = EllipticOperator::new(&grid, &Potential::constant(2, 1.0)).unwrap();
        let z = GridField::zeros(&grid);
        assert_eq!(op.apply(&z).max_abs(), 0.0);
    }

    #[test]
    fn manufactured_solution_second_order() {
        // u = prod sin(pi x_k), V = 1: (-Lap + V) u = (n pi^2 + 1) u.
        let n = 3;
        let mut errors = Vec::new();
        for nodes in [9, 17] {
            let grid = unit_box(n, nodes);
            let op = EllipticOperator::new(&grid, &Potential::constant(n, 1.0)).unwrap();
            let u = product_sine(&grid);
            let au = op.apply(&u);
            let factor = n as f64 * PI * PI + 1.0;
            let mut err = 0.0f64;
            for i in 0..grid.node_count() {
                if grid.is_interior(i) {
                    err = err.max((au.get(i) - factor * u.get(i)).abs());
                }
            }
            errors.push(err);
        }
        let ratio = errors[0] / errors[1];
        assert!((ratio - 4.0).abs() < 0.4, "convergence ratio {ratio}");
    }

    #[test]
    fn operator_is_linear() {
        let grid = unit_box(2, 17);
        let op = EllipticOperator::new(&grid, &Potential::constant(2, 1.5)).unwrap();
        let u = GridField::from_fn(&grid, |x| (x[0] - 0.3) * x[1]);
        let w = GridField::from_fn(&grid, |x| (x[1] * PI).cos() * x[0]);
        let mut combo = u.clone();
        combo.scale(2.0);
        combo.axpy(-3.0, &w);
        let lhs = op.apply(&combo);
        let mut rhs = op.apply(&u);
        rhs.scale(2.0);
        rhs.axpy(-3.0, &op.apply(&w));
        for i in 0..grid.node_count() {
            assert_relative_eq!(lhs.get(i), rhs.get(i), epsilon = 1e-10);
        }
    }

    #[test]
    fn summation_by_parts_exactness() {
        let grid = unit_box(3, 9);
        let pot = Potential::quadratic(2.0, &[-1.0, 0.5, 0.5]);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let u = product_sine(&grid);
        let w = GridField::from_fn(&grid, |x| x[0] * (1.0 - x[0]) * x[1] * x[2]);
        let ip = op.inner_product(&u, &w);
        let au = op.apply(&u);
        let via_operator = dot(&au, &w) * grid.cell_volume();
        assert_relative_eq!(ip, via_operator, max_relative = 1e-12);
        // symmetry
        assert_relative_eq!(ip, op.inner_product(&w, &u), max_relative = 1e-12);
    }

    #[test]
    fn norm_is_positive_definite() {
        let grid = unit_box(2, 9);
        let op = EllipticOperator::new(&grid, &Potential::constant(2, 1.0)).unwrap();
        let z = GridField::zeros(&grid);
        assert_eq!(op.norm(&z), 0.0);
        let u = product_sine(&grid);
        assert!(op.norm(&u) > 0.0);
    }

    #[test]
    fn functional_derivative_matches_pairing() {
        let grid = unit_box(3, 11);
        let pot = Potential::constant(3, 2.0);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let u = product_sine(&grid);
        let phi = GridField::from_fn(&grid, |x| {
            x.iter().map(|xi| (2.0 * PI * xi).sin()).sum::<f64>() * x[0]
        });
        let eps = 0.07;
        let pairing = op.pairing(eps, &u, &phi);
        let t = 1e-5;
        let mut up = u.clone();
        up.axpy(t, &phi);
        let mut um = u.clone();
        um.axpy(-t, &phi);
        let fd = (op.functional(eps, &up) - op.functional(eps, &um)) / (2.0 * t);
        assert_relative_eq!(pairing, fd, max_relative = 1e-5);
    }

    #[test]
    fn functional_even_in_u() {
        let grid = unit_box(2, 9);
        let op = EllipticOperator::new(&grid, &Potential::constant(2, 1.0)).unwrap();
        let u = product_sine(&grid);
        let mut neg = u.clone();
        neg.scale(-1.0);
        assert_relative_eq!(
            op.functional(0.03, &u),
            op.functional(0.03, &neg),
            max_relative = 1e-14
        );
    }

    #[test]
    fn rejects_nonpositive_potential() {
        let grid = unit_box(2, 9);
        assert!(EllipticOperator::new(&grid, &Potential::constant(2, 0.0)).is_err());
        // saddle potential dipping negative inside the box
        let pot = Potential::quadratic(0.2, &[-1.0, 0.1]);
        assert!(EllipticOperator::new(&grid, &pot).is_err());
    }
}

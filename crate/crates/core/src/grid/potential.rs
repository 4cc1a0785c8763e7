//! Potential specifications with exact first and second derivatives.
//!
//! Potentials are restricted to polynomial and radial-profile forms so that
//! gradients and Hessians at anchor points are exact rather than numerical.

use super::DomainGrid;
use crate::cluster::HessianAnchor;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// One monomial: coeff * prod_k x_k^{powers[k]}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Evaluator for V(x), grad V, D^2 V.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    Polynomial { terms: Vec<PolyTerm> },
    /// V(x) = sum_k coeffs[k] (|x - center|^2)^k
    Radial { center: Vec<f64>, coeffs: Vec<f64> },
}

impl Potential {
    /// The constant potential V = c in dimension n.
    pub fn constant(n: usize, c: f64) -> Self {
        Potential::Polynomial {
            terms: vec![PolyTerm {
                coeff: c,
                powers: vec![0; n],
            }],
        }
    }

    /// V(x) = v0 + sum_k q_k x_k^2.
    pub fn quadratic(v0: f64, q: &[f64]) -> Self {
        let n = q.len();
        let mut terms = vec![PolyTerm {
            coeff: v0,
            powers: vec![0; n],
        }];
        for (k, &qk) in q.iter().enumerate() {
            let mut powers = vec![0; n];
            powers[k] = 2;
            terms.push(PolyTerm { coeff: qk, powers });
        }
        Potential::Polynomial { terms }
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Polynomial { terms } => terms.first().map_or(0, |t| t.powers.len()),
            Potential::Radial { center, .. } => center.len(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Polynomial { terms } => terms
                .iter()
                .map(|t| {
                    t.coeff
                        * t.powers
                            .iter()
                            .zip(x)
                            .map(|(&p, xi)| xi.powi(p as i32))
                            .product::<f64>()
                })
                .sum(),
            Potential::Radial { center, coeffs } => {
                let s: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, c)| (xi - c) * (xi - c))
                    .sum();
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c * s.powi(k as i32))
                    .sum()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self {
            Potential::Polynomial { terms } => {
                let mut g = vec![0.0; n];
                for t in terms {
                    for j in 0..n {
                        if t.powers[j] == 0 {
                            continue;
                        }
                        let mut d = t.coeff * t.powers[j] as f64;
                        for (k, (&p, xi)) in t.powers.iter().zip(x).enumerate() {
                            let q = if k == j { p - 1 } else { p };
                            d *= xi.powi(q as i32);
                        }
                        g[j] += d;
                    }
                }
                g
            }
            Potential::Radial { center, coeffs } => {
                let s: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, c)| (xi - c) * (xi - c))
                    .sum();
                // dV/ds
                let dv: f64 = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &c)| c * k as f64 * s.powi(k as i32 - 1))
                    .sum();
                x.iter()
                    .zip(center)
                    .map(|(xi, c)| 2.0 * dv * (xi - c))
                    .collect()
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut h = DMatrix::zeros(n, n);
        match self {
            Potential::Polynomial { terms } => {
                for t in terms {
                    for j in 0..n {
                        for l in j..n {
                            let (pj, pl) = (t.powers[j], t.powers[l]);
                            let factor = if j == l {
                                if pj < 2 {
                                    continue;
                                }
                                (pj * (pj - 1)) as f64
                            } else {
                                if pj == 0 || pl == 0 {
                                    continue;
                                }
                                (pj * pl) as f64
                            };
                            let mut d = t.coeff * factor;
                            for (k, (&p, xi)) in t.powers.iter().zip(x).enumerate() {
                                let mut q = p;
                                if k == j {
                                    q -= 1;
                                }
                                if k == l {
                                    q -= 1;
                                }
                                d *= xi.powi(q as i32);
                            }
                            h[(j, l)] += d;
                            if j != l {
                                h[(l, j)] += d;
                            }
                        }
                    }
                }
            }
            Potential::Radial { center, coeffs } => {
                let s: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, c)| (xi - c) * (xi - c))
                    .sum();
                let dv: f64 = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, &c)| c * k as f64 * s.powi(k as i32 - 1))
                    .sum();
                let d2v: f64 = coeffs
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, &c)| c * (k * (k - 1)) as f64 * s.powi(k as i32 - 2))
                    .sum();
                for j in 0..n {
                    for l in 0..n {
                        let wj = x[j] - center[j];
                        let wl = x[l] - center[l];
                        h[(j, l)] = 4.0 * d2v * wj * wl;
                        if j == l {
                            h[(j, l)] += 2.0 * dv;
                        }
                    }
                }
            }
        }
        h
    }

    /// Validates that V is strictly positive at every unmasked grid node.
    pub fn validate_positive(&self, grid: &DomainGrid) -> Result<()> {
        for flat in 0..grid.node_count() {
            let x = grid.coords(flat);
            let v = self.value(&x);
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "potential is not positive at node {x:?} (V = {v})"
                )));
            }
        }
        Ok(())
    }

    /// Checks that `b` is a critical point of V with invertible Hessian and
    /// positive value, and returns the anchor data.
    pub fn anchor(&self, b: &[f64], grad_tol: f64) -> Result<HessianAnchor> {
        let g = self.gradient(b);
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm >= grad_tol {
            return Err(Error::InvalidInput(format!(
                "anchor gradient norm {gnorm:.3e} exceeds tolerance {grad_tol:.1e}"
            )));
        }
        if !(self.value(b) > 0.0) {
            return Err(Error::InvalidInput(
                "potential must be positive at the anchor".into(),
            ));
        }
        HessianAnchor::new(b.to_vec(), self.hessian(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn saddle() -> Potential {
        // V = 2 - x1^2 + (x2^2 + x3^2 + x4^2)/2
        Potential::quadratic(2.0, &[-1.0, 0.5, 0.5, 0.5])
    }

    #[test]
    fn values_and_derivatives() {
        let v = saddle();
        let x = [0.3, -0.2, 0.5, 0.1];
        assert_relative_eq!(
            v.value(&x),
            2.0 - 0.09 + 0.5 * (0.04 + 0.25 + 0.01),
            epsilon = 1e-14
        );
        let g = v.gradient(&x);
        assert_relative_eq!(g[0], -0.6, epsilon = 1e-14);
        assert_relative_eq!(g[1], -0.2, epsilon = 1e-14);
        let h = v.hessian(&x);
        assert_relative_eq!(h[(0, 0)], -2.0, epsilon = 1e-14);
        assert_relative_eq!(h[(1, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(h[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = Potential::Polynomial {
            terms: vec![
                PolyTerm { coeff: 1.5, powers: vec![2, 1, 0] },
                PolyTerm { coeff: -0.7, powers: vec![1, 1, 1] },
                PolyTerm { coeff: 3.0, powers: vec![0, 0, 0] },
            ],
        };
        let x = [0.4, -0.8, 0.6];
        let g = v.gradient(&x);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (v.value(&xp) - v.value(&xm)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn radial_profile_derivatives() {
        let v = Potential::Radial {
            center: vec![0.5, 0.0],
            coeffs: vec![1.0, 2.0, -0.3],
        };
        let x = [0.9, -0.4];
        let h = 1e-6;
        let g = v.gradient(&x);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (v.value(&xp) - v.value(&xm)) / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-7);
        }
        let hess = v.hessian(&x);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let gp = v.gradient(&xp);
            let gm = v.gradient(&xm);
            for l in 0..2 {
                let fd = (gp[l] - gm[l]) / (2.0 * h);
                assert_relative_eq!(hess[(j, l)], fd, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn anchor_validation() {
        let v = saddle();
        let anchor = v.anchor(&[0.0; 4], 1e-10).unwrap();
        assert_relative_eq!(anchor.hessian[(0, 0)], -2.0, epsilon = 1e-14);
        assert!(v.anchor(&[0.1, 0.0, 0.0, 0.0], 1e-10).is_err());
    }
}

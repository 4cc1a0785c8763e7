//! Matrix-free Krylov solvers: conjugate gradients for the definite
//! operator, MINRES for the symmetric indefinite linearizations met during
//! Newton continuation.

use super::operator::dot;
use super::{EllipticOperator, GridField};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative residual target.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 5000,
        }
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients on a symmetric positive definite operator.
pub fn conjugate_gradient<A>(
    apply: A,
    rhs: &GridField,
    opts: &SolverOptions,
) -> Result<(GridField, SolveStats)>
where
    A: Fn(&GridField) -> GridField,
{
    let bnorm = dot(rhs, rhs).sqrt();
    let mut x = GridField {
        values: vec![0.0; rhs.len()],
    };
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    for it in 0..opts.max_iter {
        let rel = rs.sqrt() / bnorm;
        if rel <= opts.tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                iterations: it,
                achieved: rel,
                target: opts.tol,
            });
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        // p = r + beta p
        for (pi, ri) in p.values.iter_mut().zip(&r.values) {
            *pi = ri + beta * *pi;
        }
    }
    let rel = rs.sqrt() / bnorm;
    if rel <= opts.tol {
        Ok((
            x,
            SolveStats {
                iterations: opts.max_iter,
                relative_residual: rel,
            },
        ))
    } else {
        Err(Error::LinearSolve {
            iterations: opts.max_iter,
            achieved: rel,
            target: opts.tol,
        })
    }
}

/// MINRES for symmetric, possibly indefinite operators (Paige-Saunders).
pub fn minres<A>(apply: A, rhs: &GridField, opts: &SolverOptions) -> Result<(GridField, SolveStats)>
where
    A: Fn(&GridField) -> GridField,
{
    let n = rhs.len();
    let bnorm = dot(rhs, rhs).sqrt();
    let mut x = GridField {
        values: vec![0.0; n],
    };
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut v_prev = GridField {
        values: vec![0.0; n],
    };
    let mut v = rhs.clone();
    let mut beta = bnorm;
    v.scale(1.0 / beta);
    let mut eta = beta;
    let (mut c_old, mut c_cur) = (1.0f64, 1.0f64);
    let (mut s_old, mut s_cur) = (0.0f64, 0.0f64);
    let mut w_old = GridField {
        values: vec![0.0; n],
    };
    let mut w_cur = GridField {
        values: vec![0.0; n],
    };
    let mut rel = 1.0;
    for it in 0..opts.max_iter {
        // Lanczos step
        let mut av = apply(&v);
        let alpha = dot(&v, &av);
        av.axpy(-alpha, &v);
        av.axpy(-beta, &v_prev);
        let beta_new = dot(&av, &av).sqrt();
        // Givens rotations
        let delta = c_cur * alpha - c_old * s_cur * beta;
        let rho1 = (delta * delta + beta_new * beta_new).sqrt();
        let rho2 = s_cur * alpha + c_old * c_cur * beta;
        let rho3 = s_old * beta;
        if rho1 == 0.0 {
            break;
        }
        let c_new = delta / rho1;
        let s_new = beta_new / rho1;
        // w_new = (v - rho3 w_old - rho2 w_cur)/rho1
        let mut w_new = v.clone();
        w_new.axpy(-rho3, &w_old);
        w_new.axpy(-rho2, &w_cur);
        w_new.scale(1.0 / rho1);
        x.axpy(c_new * eta, &w_new);
        rel = (s_new * eta).abs() / bnorm;
        eta *= -s_new;
        w_old = w_cur;
        w_cur = w_new;
        c_old = c_cur;
        c_cur = c_new;
        s_old = s_cur;
        s_cur = s_new;
        if rel <= opts.tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: rel,
                },
            ));
        }
        if beta_new == 0.0 {
            break;
        }
        av.scale(1.0 / beta_new);
        v_prev = v;
        v = av;
        beta = beta_new;
    }
    if rel <= opts.tol {
        Ok((
            x,
            SolveStats {
                iterations: opts.max_iter,
                relative_residual: rel,
            },
        ))
    } else {
        Err(Error::LinearSolve {
            iterations: opts.max_iter,
            achieved: rel,
            target: opts.tol,
        })
    }
}

/// Solves (-Laplace + V) u = rhs with zero Dirichlet data by CG.
pub fn solve_linear(
    op: &EllipticOperator,
    rhs: &GridField,
    opts: &SolverOptions,
) -> Result<(GridField, SolveStats)> {
    conjugate_gradient(|u| op.apply(u), rhs, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridField, GridSpec, MaskKind, Potential};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn setup(n: usize, nodes: usize) -> (crate::grid::DomainGrid, Potential) {
        let spec =
            GridSpec::with_nodes(vec![(0.0, 1.0); n], &vec![nodes; n], MaskKind::Box).unwrap();
        (build_grid(&spec).unwrap(), Potential::constant(n, 1.0))
    }

    #[test]
    fn cg_inverts_the_operator() {
        let (grid, pot) = setup(3, 13);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let u = GridField::from_fn(&grid, |x| {
            x.iter().map(|xi| (PI * xi).sin()).product::<f64>() + x[0] * (1.0 - x[0]) * x[1]
        });
        let rhs = op.apply(&u);
        let (sol, stats) = solve_linear(&op, &rhs, &SolverOptions::default()).unwrap();
        assert!(stats.relative_residual <= 1e-10);
        for i in 0..grid.node_count() {
            assert_relative_eq!(sol.get(i), u.get(i), epsilon = 1e-7);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (grid, pot) = setup(2, 9);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let rhs = GridField::zeros(&grid);
        let (sol, stats) = solve_linear(&op, &rhs, &SolverOptions::default()).unwrap();
        assert_eq!(sol.max_abs(), 0.0);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn discrete_maximum_principle() {
        // nonnegative rhs, not identically zero -> strictly positive solution
        let (grid, pot) = setup(2, 17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let rhs = GridField::from_fn(&grid, |x| {
            if (x[0] - 0.5).abs() < 0.2 && (x[1] - 0.5).abs() < 0.2 {
                1.0
            } else {
                0.0
            }
        });
        let (sol, _) = solve_linear(&op, &rhs, &SolverOptions::default()).unwrap();
        assert!(sol.interior_min(&grid) > 0.0);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let (grid, pot) = setup(3, 17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let rhs = GridField::from_fn(&grid, |_| 1.0);
        let out = solve_linear(
            &op,
            &rhs,
            &SolverOptions {
                tol: 1e-14,
                max_iter: 3,
            },
        );
        match out {
            Err(crate::error::Error::LinearSolve {
                iterations,
                achieved,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert!(achieved > 1e-14);
            }
            other => panic!("expected a linear-solve failure, got {other:?}"),
        }
    }

    #[test]
    fn minres_agrees_with_cg_on_spd_systems() {
        let (grid, pot) = setup(2, 17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let rhs = GridField::from_fn(&grid, |x| (PI * x[0]).sin() * x[1]);
        let (a, _) = solve_linear(&op, &rhs, &SolverOptions::default()).unwrap();
        let (b, _) = minres(|u| op.apply(u), &rhs, &SolverOptions::default()).unwrap();
        for i in 0..grid.node_count() {
            assert_relative_eq!(a.get(i), b.get(i), epsilon = 1e-7);
        }
    }

    #[test]
    fn minres_handles_indefinite_shifts() {
        // (-Lap + V - s) with s inside the spectrum: indefinite but symmetric
        let (grid, pot) = setup(2, 17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let shift = 60.0;
        let apply = |u: &GridField| {
            let mut out = op.apply(u);
            for (o, ui) in out.values.iter_mut().zip(u.values()) {
                *o -= shift * ui;
            }
            out
        };
        let u_true = GridField::from_fn(&grid, |x| x[0] * (1.0 - x[0]) * (x[1] + 0.2));
        let rhs = apply(&u_true);
        let (sol, stats) = minres(
            apply,
            &rhs,
            &SolverOptions {
                tol: 1e-11,
                max_iter: 2000,
            },
        )
        .unwrap();
        assert!(stats.relative_residual <= 1e-11);
        for i in 0..grid.node_count() {
            assert_relative_eq!(sol.get(i), u_true.get(i), epsilon = 1e-6);
        }
    }
}

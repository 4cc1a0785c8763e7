//! Bubble projections: solutions of (-Laplace + V) w = delta^{(n+2)/(n-2)}
//! with zero Dirichlet data, their parameter derivatives, and the sampled
//! right-hand sides.

use super::operator::EllipticOperator;
use super::solver::{solve_linear, SolveStats, SolverOptions};
use super::{DomainGrid, GridField};
use crate::analytic::{critical_exponent, Bubble};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProjectionOptions {
    /// Refuse bubbles with rate * max-spacing above this cap (aliasing guard
    /// for the analytically sampled right-hand side).
    pub lambda_h_cap: f64,
    /// Interior margin d0; `None` uses 10% of the smallest half-width.
    pub d0: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            lambda_h_cap: 0.5,
            d0: None,
            solver: SolverOptions::default(),
        }
    }
}

/// A projected bubble with its boundary/potential correction.
#[derive(Debug, Clone)]
pub struct ProjectedBubble {
    pub bubble: Bubble,
    pub pi_delta: GridField,
    /// Sampled bubble minus the projection; nonnegative up to solver error.
    pub theta: GridField,
    /// Largest violation of 0 <= pi_delta <= delta observed on the nodes.
    pub ordering_violation: f64,
    pub stats: SolveStats,
}

/// Samples the bubble profile at interior nodes.
pub fn sample_bubble(grid: &DomainGrid, bubble: &Bubble) -> GridField {
    GridField::from_fn(grid, |x| bubble.eval(x))
}

/// Samples delta^{(n+2)/(n-2)} analytically.
pub fn sample_bubble_power(grid: &DomainGrid, bubble: &Bubble) -> GridField {
    let p = critical_exponent(grid.dim());
    GridField::from_fn(grid, |x| bubble.eval(x).powf(p))
}

/// Samples lambda d/d lambda of delta^p: p delta^{p-1} (lambda d delta/d lambda).
pub fn sample_power_rate_derivative(grid: &DomainGrid, bubble: &Bubble) -> GridField {
    let p = critical_exponent(grid.dim());
    GridField::from_fn(grid, |x| {
        let d = bubble.derivatives(x);
        p * d.value.powf(p - 1.0) * d.rate
    })
}

/// Samples lambda^{-1} d/d a_j of delta^p.
pub fn sample_power_center_derivative(grid: &DomainGrid, bubble: &Bubble, j: usize) -> GridField {
    let p = critical_exponent(grid.dim());
    GridField::from_fn(grid, |x| {
        let d = bubble.derivatives(x);
        p * d.value.powf(p - 1.0) * d.center[j]
    })
}

pub(crate) fn check_resolution(grid: &DomainGrid, bubble: &Bubble, cap: f64) -> Result<()> {
    let h = grid.max_spacing();
    if bubble.rate * h > cap {
        return Err(Error::Resolution {
            lambda: bubble.rate,
            h,
            cap,
        });
    }
    Ok(())
}

fn check_interior(grid: &DomainGrid, bubble: &Bubble, d0: f64) -> Result<()> {
    let dist = grid.boundary_distance(&bubble.center);
    if dist <= 2.0 * d0 {
        return Err(Error::Admissibility(format!(
            "bubble center at boundary distance {dist:.4}, need > 2*d0 = {:.4}",
            2.0 * d0
        )));
    }
    Ok(())
}

/// Solves the projection equation for one bubble and reports the ordering
/// diagnostics (the maximum principle gives 0 <= pi delta <= delta).
pub fn project_bubble(
    op: &EllipticOperator,
    bubble: &Bubble,
    opts: &ProjectionOptions,
) -> Result<ProjectedBubble> {
    let grid = op.grid;
    if bubble.dim() != grid.dim() {
        return Err(Error::InvalidInput("bubble/grid dimension mismatch".into()));
    }
    check_resolution(grid, bubble, opts.lambda_h_cap)?;
    check_interior(grid, bubble, opts.d0.unwrap_or_else(|| grid.default_d0()))?;
    let rhs = sample_bubble_power(grid, bubble);
    let (pi_delta, stats) = solve_linear(op, &rhs, &opts.solver)?;
    let delta = sample_bubble(grid, bubble);
    let mut theta = delta;
    theta.axpy(-1.0, &pi_delta);
    let mut violation = 0.0f64;
    for i in 0..grid.node_count() {
        if grid.is_interior(i) {
            violation = violation.max(-pi_delta.get(i)).max(-theta.get(i));
        }
    }
    Ok(ProjectedBubble {
        bubble: bubble.clone(),
        pi_delta,
        theta,
        ordering_violation: violation,
        stats,
    })
}

/// The spanning fields of the reduction: the projection itself, its scaled
/// rate derivative, and its scaled center derivatives, each obtained by
/// solving the projection equation with the differentiated right-hand side.
pub fn basis_fields(
    op: &EllipticOperator,
    bubble: &Bubble,
    opts: &ProjectionOptions,
) -> Result<Vec<GridField>> {
    let grid = op.grid;
    check_resolution(grid, bubble, opts.lambda_h_cap)?;
    check_interior(grid, bubble, opts.d0.unwrap_or_else(|| grid.default_d0()))?;
    let n = grid.dim();
    let mut fields = Vec::with_capacity(n + 2);
    let (pi, _) = solve_linear(op, &sample_bubble_power(grid, bubble), &opts.solver)?;
    fields.push(pi);
    let (dl, _) = solve_linear(op, &sample_power_rate_derivative(grid, bubble), &opts.solver)?;
    fields.push(dl);
    for j in 0..n {
        let (da, _) = solve_linear(
            op,
            &sample_power_center_derivative(grid, bubble, j),
            &opts.solver,
        )?;
        fields.push(da);
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, MaskKind, Potential};
    use approx::assert_relative_eq;

    fn setup(nodes: usize) -> (DomainGrid, Potential) {
        let spec =
            GridSpec::with_nodes(vec![(-1.0, 1.0); 3], &vec![nodes; 3], MaskKind::Box).unwrap();
        (
            build_grid(&spec).unwrap(),
            Potential::quadratic(2.0, &[-1.0, 0.5, 0.5]),
        )
    }

    #[test]
    fn ordering_holds_nodewise() {
        let (grid, pot) = setup(17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let bubble = Bubble::new(vec![0.0; 3], 3.0).unwrap();
        let proj = project_bubble(&op, &bubble, &ProjectionOptions::default()).unwrap();
        assert!(
            proj.ordering_violation <= 10.0 * proj.stats.relative_residual.max(1e-12),
            "violation {}",
            proj.ordering_violation
        );
    }

    #[test]
    fn projection_norm_identity() {
        // ||pi delta||^2 = int delta^p (pi delta) up to solver tolerance
        let (grid, pot) = setup(17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let bubble = Bubble::new(vec![0.1, 0.0, -0.1], 4.0).unwrap();
        let proj = project_bubble(&op, &bubble, &ProjectionOptions::default()).unwrap();
        let norm2 = op.inner_product(&proj.pi_delta, &proj.pi_delta);
        let rhs = sample_bubble_power(&grid, &bubble);
        let mut integrand = GridField::zeros(&grid);
        for i in 0..grid.node_count() {
            if grid.is_interior(i) {
                integrand.set(&grid, i, rhs.get(i) * proj.pi_delta.get(i));
            }
        }
        let integral = op.integrate(&integrand);
        assert_relative_eq!(norm2, integral, max_relative = 1e-8);
    }

    #[test]
    fn refuses_unresolvable_rate() {
        let (grid, pot) = setup(9);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let bubble = Bubble::new(vec![0.0; 3], 50.0).unwrap();
        match project_bubble(&op, &bubble, &ProjectionOptions::default()) {
            Err(Error::Resolution { .. }) => {}
            other => panic!("expected resolution refusal, got {other:?}"),
        }
    }

    #[test]
    fn refuses_near_boundary_center() {
        let (grid, pot) = setup(17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let bubble = Bubble::new(vec![0.9, 0.0, 0.0], 3.0).unwrap();
        match project_bubble(&op, &bubble, &ProjectionOptions::default()) {
            Err(Error::Admissibility(_)) => {}
            other => panic!("expected admissibility refusal, got {other:?}"),
        }
    }

    #[test]
    fn theta_pointwise_bound_with_stable_constant() {
        // theta <= c R^1 delta on the interior region, c stable across rates
        let (grid, pot) = setup(33);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let d0 = grid.default_d0();
        let mut fitted = Vec::new();
        for rate in [4.0, 8.0] {
            let bubble = Bubble::new(vec![0.0; 3], rate).unwrap();
            let proj = project_bubble(&op, &bubble, &ProjectionOptions::default()).unwrap();
            let mut c_fit = 0.0f64;
            for i in 0..grid.node_count() {
                if !grid.is_interior(i) {
                    continue;
                }
                let x = grid.coords(i);
                if grid.boundary_distance(&x) < d0 {
                    continue;
                }
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                // sigma_n = 0 for n = 3
                let r1 = 1.0 / (rate * rate) + r * r;
                let delta = bubble.eval(&x);
                c_fit = c_fit.max(proj.theta.get(i) / (r1 * delta));
            }
            fitted.push(c_fit);
        }
        let ratio = fitted[0] / fitted[1];
        assert!(
            (0.33..3.0).contains(&ratio),
            "fitted constants {fitted:?} drifted (ratio {ratio})"
        );
    }

    #[test]
    fn basis_fields_match_finite_difference_projections() {
        // lambda d(pi delta)/d lambda via differentiated rhs vs central
        // differences of the projection in lambda
        let (grid, pot) = setup(17);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let rate = 3.0;
        let bubble = Bubble::new(vec![0.0; 3], rate).unwrap();
        let opts = ProjectionOptions::default();
        let fields = basis_fields(&op, &bubble, &opts).unwrap();
        let dl = 1e-4 * rate;
        let plus = project_bubble(&op, &Bubble::new(vec![0.0; 3], rate + dl).unwrap(), &opts)
            .unwrap()
            .pi_delta;
        let minus = project_bubble(&op, &Bubble::new(vec![0.0; 3], rate - dl).unwrap(), &opts)
            .unwrap()
            .pi_delta;
        let mut fd = plus;
        fd.axpy(-1.0, &minus);
        fd.scale(rate / (2.0 * dl));
        let mut diff = fd.clone();
        diff.axpy(-1.0, &fields[1]);
        assert!(
            diff.max_abs() <= 1e-4 * fields[1].max_abs().max(1.0),
            "rate-derivative field mismatch {}",
            diff.max_abs()
        );
    }
}

//! The discrete nonlinear solve for -Delta u + V u = u_+^{p-eps}, peak
//! extraction from computed solutions, continuation sweeps in eps, and
//! least-squares fits of the concentration laws.

use crate::analytic::{bubble_c0, critical_exponent, eta_scale, Bubble};
use crate::cluster::{Certificate, HessianAnchor};
use crate::construct::{predicted_parameters, PredictedSolution};
use crate::error::{Error, Result};
use crate::expansion::Which;
use crate::grid::operator::{indexed_sum, EllipticOperator};
use crate::grid::projection::project_bubble;
use crate::grid::solver::{minres, SolverOptions};
use crate::grid::{GridField, Potential, ProjectionOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Options for the discrete Newton solve.
#[derive(Debug, Clone)]
pub struct PdeNewtonOptions {
    /// Absolute tolerance on the discrete L2 norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    pub linear: SolverOptions,
}

impl Default for PdeNewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 30,
            linear: SolverOptions {
                tol: 1e-9,
                max_iter: 20_000,
            },
        }
    }
}

/// Distinct terminal states of the Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Diverged,
    Stalled,
}

/// Outcome of one nonlinear solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: GridField,
    pub eps: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Discrete L2 norm of the final residual.
    pub residual: f64,
    /// Residual norms per iteration, starting with the initial one.
    pub history: Vec<f64>,
    /// u > 0 at every interior node.
    pub positive: bool,
    /// The zero branch: |u| negligibly small everywhere.
    pub trivial: bool,
}

fn positive_part_power(op: &EllipticOperator, u: &GridField, q: f64) -> GridField {
    let interior = op.grid.interior_mask();
    let mut out = GridField::zeros(op.grid);
    out.values
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| {
            let v = u.get(i);
            if interior[i] && v > 0.0 {
                *o = v.powf(q);
            }
        });
    out
}

/// G(u) = (-Lap + V) u - u_+^{p-eps} - f.
pub fn pde_residual(
    op: &EllipticOperator,
    eps: f64,
    u: &GridField,
    source: Option<&GridField>,
) -> GridField {
    let p = critical_exponent(op.grid.dim());
    let mut g = op.apply(u);
    let nl = positive_part_power(op, u, p - eps);
    g.axpy(-1.0, &nl);
    if let Some(f) = source {
        g.axpy(-1.0, f);
    }
    g
}

/// Rescales a candidate solution so the discrete weight balance holds:
/// t ||u||^2 = t^{p-eps} int u_+^{p+1-eps}. Keeps an assembled ansatz off
/// the trivial branch before the full Newton iteration.
pub fn amplitude_correct(op: &EllipticOperator, eps: f64, u: &GridField) -> GridField {
    let p = critical_exponent(op.grid.dim());
    let norm2 = op.inner_product(u, u);
    let nl = positive_part_power(op, u, p + 1.0 - eps);
    let nlv = nl.values();
    let integral = indexed_sum(nlv.len(), |i| nlv[i]) * op.grid.cell_volume();
    if !(norm2 > 0.0) || !(integral > 0.0) {
        return u.clone();
    }
    let t = (norm2 / integral).powf(1.0 / (p - 1.0 - eps));
    let mut out = u.clone();
    out.scale(t);
    out
}

/// Newton iteration with the linearization -Lap + V - (p-eps) u_+^{p-1-eps}
/// and a backtracking line search on the residual norm.
pub fn newton_solve(
    op: &EllipticOperator,
    eps: f64,
    u0: &GridField,
    source: Option<&GridField>,
    opts: &PdeNewtonOptions,
) -> Result<SolveReport> {
    if !u0.is_finite() {
        return Err(Error::InvalidInput("initial iterate is not finite".into()));
    }
    let grid = op.grid;
    let p = critical_exponent(grid.dim());
    let vol = grid.cell_volume();
    let l2 = |g: &GridField| {
        let gv = g.values();
        (indexed_sum(gv.len(), |i| gv[i] * gv[i]) * vol).sqrt()
    };
    let mut u = u0.clone();
    let mut g = pde_residual(op, eps, &u, source);
    let mut norm = l2(&g);
    let initial_norm = norm;
    let mut history = vec![norm];
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        if norm <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let weight = positive_part_power(op, &u, p - 1.0 - eps);
        let apply_jac = |w: &GridField| {
            let mut out = op.apply(w);
            out.values
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, o)| {
                    *o -= (p - eps) * weight.get(i) * w.get(i);
                });
            out
        };
        let mut rhs = g.clone();
        rhs.scale(-1.0);
        let step = match minres(apply_jac, &rhs, &opts.linear) {
            Ok((s, _)) => s,
            Err(Error::LinearSolve { .. }) => {
                status = SolveStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-8 {
            let mut trial = u.clone();
            trial.axpy(t, &step);
            let tg = pde_residual(op, eps, &trial, source);
            let tnorm = l2(&tg);
            if tnorm.is_finite() && (tnorm < norm * (1.0 - 1e-4 * t) || tnorm <= opts.tol) {
                u = trial;
                g = tg;
                norm = tnorm;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(norm);
        if !accepted {
            status = SolveStatus::Stalled;
            break;
        }
        if !norm.is_finite() || norm > 1e8 * initial_norm.max(1.0) {
            status = SolveStatus::Diverged;
            break;
        }
    }
    if norm <= opts.tol {
        status = SolveStatus::Converged;
    }
    let max_abs = u.max_abs();
    let trivial = max_abs < 1e-10;
    let positive = !trivial && u.interior_min(grid) > 0.0;
    Ok(SolveReport {
        u,
        eps,
        status,
        iterations,
        residual: norm,
        history,
        positive,
        trivial,
    })
}

/// Solves the unmodified problem by continuation from an ansatz: the
/// residual of the start is ramped off as an artificial source, so the
/// iteration follows the solution branch connected to the ansatz instead of
/// falling onto the trivial branch or overshooting. Step control is
/// adaptive; a vanishing step reports the inner failure.
pub fn solve_from_ansatz(
    op: &EllipticOperator,
    eps: f64,
    u0: &GridField,
    source: Option<&GridField>,
    opts: &PdeNewtonOptions,
) -> Result<SolveReport> {
    let g0 = pde_residual(op, eps, u0, source);
    let mut u = u0.clone();
    let mut theta = 0.0_f64;
    let mut dtheta = 1.0_f64;
    let mut total_iterations = 0;
    let mut history = Vec::new();
    let inner_opts = PdeNewtonOptions {
        max_iter: 12,
        ..opts.clone()
    };
    loop {
        let target = (theta + dtheta).min(1.0);
        let mut shifted = g0.clone();
        shifted.scale(1.0 - target);
        if let Some(f) = source {
            shifted.axpy(1.0, f);
        }
        let report = newton_solve(op, eps, &u, Some(&shifted), &inner_opts)?;
        total_iterations += report.iterations;
        if report.status == SolveStatus::Converged {
            u = report.u;
            history.extend(report.history);
            theta = target;
            if theta >= 1.0 {
                let max_abs = u.max_abs();
                let trivial = max_abs < 1e-10;
                let positive = !trivial && u.interior_min(op.grid) > 0.0;
                return Ok(SolveReport {
                    u,
                    eps,
                    status: SolveStatus::Converged,
                    iterations: total_iterations,
                    residual: *history.last().unwrap_or(&0.0),
                    history,
                    positive,
                    trivial,
                });
            }
            dtheta = (2.0 * dtheta).min(1.0 - theta);
        } else {
            dtheta *= 0.5;
            if dtheta < 1e-4 {
                // hand back the failed inner attempt with the totals
                return Ok(SolveReport {
                    iterations: total_iterations,
                    ..report
                });
            }
        }
    }
}

/// Options for the split (reduced) solve.
#[derive(Debug, Clone)]
pub struct SplitSolveOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub linear: SolverOptions,
    pub projection_solver: SolverOptions,
    /// Rate cap lambda * max spacing for every realized bubble.
    pub assembly_cap: f64,
}

impl Default for SplitSolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_outer: 40,
            linear: SolverOptions {
                tol: 1e-9,
                max_iter: 20_000,
            },
            projection_solver: SolverOptions::default(),
            assembly_cap: 1.25,
        }
    }
}

/// Result of a split solve: the discrete solution report plus the final
/// concentration state and the remaining soft-pairing residual.
#[derive(Debug, Clone)]
pub struct SplitReport {
    pub report: SolveReport,
    pub rv: crate::construct::ReducedVariables,
    pub outer_iterations: usize,
    pub soft_residual: f64,
}

struct SoftFrame {
    bubbles: Vec<(f64, Bubble)>,
    /// basis fields per bubble: projection, rate derivative, center derivatives
    fields: Vec<Vec<GridField>>,
    /// l2-orthonormalized span of all basis fields
    ortho: Vec<GridField>,
    /// weighted sum of the projections (the manifold point)
    ubar: GridField,
    rates: Vec<f64>,
    alphas: Vec<f64>,
}

impl SoftFrame {
    /// Removes the soft-span components of a field.
    fn project_out(&self, g: &GridField) -> GridField {
        let mut out = g.clone();
        for q in &self.ortho {
            let c = dotn(q, &out);
            out.axpy(-c, q);
        }
        out
    }
}

fn build_frame(
    op: &EllipticOperator,
    sys: &crate::construct::BalanceSystem,
    rv: &crate::construct::ReducedVariables,
    proj_opts: &ProjectionOptions,
    cap: f64,
) -> Result<SoftFrame> {
    let h = op.grid.max_spacing();
    let pred = sys.realize(rv)?;
    let mut bubbles = Vec::with_capacity(pred.alpha.len());
    for ((a, c), r) in pred
        .alpha
        .iter()
        .zip(pred.centers.iter())
        .zip(&pred.rates)
    {
        if r * h > cap {
            return Err(Error::Resolution {
                lambda: *r,
                h,
                cap,
            });
        }
        bubbles.push((*a, Bubble::new(c.clone(), *r)?));
    }
    let mut fields = Vec::with_capacity(bubbles.len());
    let mut ubar = GridField::zeros(op.grid);
    for (a, b) in &bubbles {
        let f = crate::grid::projection::basis_fields(op, b, proj_opts)?;
        ubar.axpy(*a, &f[0]);
        fields.push(f);
    }
    // orthonormalize the soft span (modified Gram-Schmidt in l2)
    let mut ortho: Vec<GridField> = Vec::new();
    for f in &fields {
        for phi in f {
            let mut e = phi.clone();
            for q in &ortho {
                let c = dotn(q, &e);
                e.axpy(-c, q);
            }
            let nn = dotn(&e, &e).sqrt();
            if nn > 1e-12 {
                e.scale(1.0 / nn);
                ortho.push(e);
            }
        }
    }
    Ok(SoftFrame {
        bubbles,
        fields,
        ortho,
        ubar,
        rates: pred.rates,
        alphas: pred.alpha,
    })
}

/// Measured soft residual: pairings of the state with the basis fields,
/// scaled blockwise to the reduced coordinates.
fn measure_soft(
    op: &EllipticOperator,
    sys: &crate::construct::BalanceSystem,
    eps: f64,
    u: &GridField,
    frame: &SoftFrame,
) -> nalgebra::DVector<f64> {
    let n = op.grid.dim();
    let count = frame.bubbles.len();
    let mut out = nalgebra::DVector::zeros(2 * count + count * n);
    for i in 0..count {
        let li = frame.rates[i];
        let log_pow = if n == 4 { li.ln() } else { 1.0 };
        out[i] = op.pairing(eps, u, &frame.fields[i][0]) / (frame.alphas[i] * sys.constants.s_n);
        out[count + i] = op.pairing(eps, u, &frame.fields[i][1]) / eps;
        let center_scale =
            sys.constants.c2_of_n * log_pow / (li * li * li) * sys.eta() * sys.sigma();
        for k in 0..n {
            out[2 * count + i * n + k] =
                op.pairing(eps, u, &frame.fields[i][2 + k]) / center_scale;
        }
    }
    out
}

/// Solves the discrete problem near a bubble cluster by splitting the
/// iteration: transverse Newton steps with the soft concentration
/// directions (weight, dilation, translation of each bubble) spectrally
/// shifted out of the Jacobian, alternated with quasi-Newton updates of the
/// concentration parameters driven by the measured soft pairings and the
/// analytic balancing Jacobian. Plain Newton stalls here because the
/// Jacobian is nearly singular along those directions.
pub fn split_newton_solve(
    op: &EllipticOperator,
    sys: &crate::construct::BalanceSystem,
    rv0: &crate::construct::ReducedVariables,
    opts: &SplitSolveOptions,
) -> Result<SplitReport> {
    let grid = op.grid;
    let n = grid.dim();
    let p = critical_exponent(n);
    let eps = sys.eps;
    let count = sys.count();
    let m = 2 * count + count * n;
    let vol = grid.cell_volume();
    let l2 = |g: &GridField| {
        let gv = g.values();
        (indexed_sum(gv.len(), |i| gv[i] * gv[i]) * vol).sqrt()
    };
    let trace = std::env::var_os("BUBBLECLUSTER_TRACE").is_some();
    let proj_opts = ProjectionOptions {
        lambda_h_cap: opts.assembly_cap,
        d0: None,
        solver: opts.projection_solver.clone(),
    };
    // start on the manifold; the weight block of the concentration step
    // owns the amplitude adjustment
    let mut rv = rv0.clone();
    let mut frame = build_frame(op, sys, &rv, &proj_opts, opts.assembly_cap)?;
    let mut u = frame.ubar.clone();
    let mut g = pde_residual(op, eps, &u, None);
    let mut norm = l2(&g);
    let mut history = vec![norm];
    let mut total_inner = 0usize;
    let mut status = SolveStatus::MaxIter;
    let mut outer = 0;

    // finite-difference seed of the reduced Jacobian of the measured map
    let fd_jacobian = |rv: &crate::construct::ReducedVariables,
                       u: &GridField,
                       frame: &SoftFrame,
                       soft: &nalgebra::DVector<f64>|
     -> Result<nalgebra::DMatrix<f64>> {
        let fd_step = 1e-4;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(m, m);
        for col in 0..m {
            let mut delta = nalgebra::DVector::zeros(m);
            delta[col] = 1.0;
            let trial_rv = add_reduced(rv, &delta, fd_step, count, n);
            let trial = build_frame(op, sys, &trial_rv, &proj_opts, opts.assembly_cap)?;
            let mut trial_u = u.clone();
            trial_u.axpy(-1.0, &frame.ubar);
            trial_u.axpy(1.0, &trial.ubar);
            let soft_t = measure_soft(op, sys, eps, &trial_u, &trial);
            jac.set_column(col, &((soft_t - soft) / fd_step));
        }
        Ok(jac)
    };

    let mut soft = measure_soft(op, sys, eps, &u, &frame);
    let mut soft_norm = soft.norm();
    let mut jac_q = fd_jacobian(&rv, &u, &frame, &soft)?;
    let mut jac_fresh = true;
    // damping scale relative to the stencil magnitude
    let op_scale: f64 =
        4.0 * grid.spacing.iter().map(|h| 1.0 / (h * h)).sum::<f64>();
    let mut damping: f64 = 1e-4;

    while outer < opts.max_outer {
        outer += 1;
        // ---- inner transverse steps: clean the hard residual ----
        // Levenberg-style damping guards against state-dependent near-null
        // modes of the linearization that live outside the analytic span.
        let mut v_progress = false;
        for _ in 0..10 {
            let pg = frame.project_out(&g);
            let pnorm = l2(&pg);
            if pnorm <= 0.25 * opts.tol {
                break;
            }
            let weight = positive_part_power(op, &u, p - 1.0 - eps);
            let shift = damping * op_scale;
            let apply_projected = |w: &GridField| {
                let pw = frame.project_out(w);
                let mut out = op.apply(&pw);
                out.values.par_iter_mut().enumerate().for_each(|(i, o)| {
                    *o -= ((p - eps) * weight.get(i) - shift) * pw.get(i);
                });
                frame.project_out(&out)
            };
            let mut rhs = pg.clone();
            rhs.scale(-1.0);
            let step = match minres(apply_projected, &rhs, &opts.linear) {
                Ok((s, _)) => frame.project_out(&s),
                Err(e) => {
                    if trace {
                        eprintln!("  v-step: linear solve failed: {e}");
                    }
                    damping = (damping * 8.0).min(1.0);
                    continue;
                }
            };
            let mut t = 1.0;
            let mut accepted = false;
            while t >= 1e-4 {
                let mut trial = u.clone();
                trial.axpy(t, &step);
                let tg = pde_residual(op, eps, &trial, None);
                let tpnorm = l2(&frame.project_out(&tg));
                total_inner += 1;
                if tpnorm.is_finite() && tpnorm < pnorm * (1.0 - 1e-4 * t) {
                    u = trial;
                    g = tg;
                    accepted = true;
                    v_progress = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                damping = (damping * 0.3).max(1e-9);
            } else {
                if trace {
                    eprintln!(
                        "  v-step: rejected at damping {damping:.1e} (|PG| {pnorm:.3e}, |s| {:.2e})",
                        step.max_abs()
                    );
                }
                if damping >= 0.99 {
                    break;
                }
                damping = (damping * 8.0).min(1.0);
            }
        }
        norm = l2(&g);
        history.push(norm);
        if norm <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        // ---- concentration step on the measured soft residual ----
        soft = measure_soft(op, sys, eps, &u, &frame);
        soft_norm = soft.norm();
        let mut q_accepted = false;
        'qstep: for attempt in 0..2 {
            if let Some(full) = jac_q.clone().lu().solve(&(-&soft)) {
                // blockwise trust clamp
                let mut clamp: f64 = 1.0;
                for i in 0..count {
                    clamp = clamp
                        .min(0.3 / full[i].abs().max(1e-12))
                        .min(0.3 / full[count + i].abs().max(1e-12));
                    for k in 0..n {
                        clamp = clamp.min(0.5 / full[2 * count + i * n + k].abs().max(1e-12));
                    }
                }
                let clamp = clamp.min(1.0);
                let mut t_q = 1.0_f64;
                while t_q >= 0.03 {
                    let trial_rv = add_reduced(&rv, &full, t_q * clamp, count, n);
                    let trial = match build_frame(op, sys, &trial_rv, &proj_opts, opts.assembly_cap)
                    {
                        Ok(f) => f,
                        Err(_) => {
                            t_q *= 0.5;
                            continue;
                        }
                    };
                    // carry the transverse part, re-projected into the new
                    // complement so soft junk cannot accumulate
                    let mut v_part = u.clone();
                    v_part.axpy(-1.0, &frame.ubar);
                    let v_new = trial.project_out(&v_part);
                    let mut trial_u = trial.ubar.clone();
                    trial_u.axpy(1.0, &v_new);
                    let soft_t = measure_soft(op, sys, eps, &trial_u, &trial);
                    total_inner += 1;
                    if soft_t.norm() < soft_norm * (1.0 - 0.05 * t_q) {
                        let dq = (t_q * clamp) * &full;
                        let dr = &soft_t - &soft;
                        let denom = dq.dot(&dq);
                        if denom > 0.0 {
                            jac_q += (&dr - &jac_q * &dq) * dq.transpose() / denom;
                        }
                        rv = trial_rv;
                        frame = trial;
                        u = trial_u;
                        g = pde_residual(op, eps, &u, None);
                        soft = soft_t;
                        soft_norm = soft.norm();
                        jac_fresh = false;
                        q_accepted = true;
                        break 'qstep;
                    }
                    t_q *= 0.5;
                }
            }
            // a stale quasi-Newton Jacobian may block progress: reseed once
            if attempt == 0 && !jac_fresh {
                jac_q = fd_jacobian(&rv, &u, &frame, &soft)?;
                jac_fresh = true;
            } else {
                break;
            }
        }
        norm = l2(&g);
        if trace {
            eprintln!(
                "split outer {outer}: |G| {norm:.3e} proj {:.3e} soft {soft_norm:.3e} q {q_accepted} v {v_progress} rates {:?}",
                l2(&frame.project_out(&g)),
                frame
                    .rates
                    .iter()
                    .map(|r| (r * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()
            );
        }
        if norm <= opts.tol {
            history.push(norm);
            status = SolveStatus::Converged;
            break;
        }
        if !q_accepted && !v_progress {
            status = SolveStatus::Stalled;
            break;
        }
    }
    if norm <= opts.tol {
        status = SolveStatus::Converged;
    }
    let max_abs = u.max_abs();
    let trivial = max_abs < 1e-10;
    let positive = !trivial && u.interior_min(grid) > 0.0;
    Ok(SplitReport {
        report: SolveReport {
            u,
            eps,
            status,
            iterations: total_inner,
            residual: norm,
            history,
            positive,
            trivial,
        },
        rv,
        outer_iterations: outer,
        soft_residual: soft_norm,
    })
}

fn dotn(a: &GridField, b: &GridField) -> f64 {
    let av = a.values();
    let bv = b.values();
    indexed_sum(av.len(), |i| av[i] * bv[i])
}

fn add_reduced(
    rv: &crate::construct::ReducedVariables,
    delta: &nalgebra::DVector<f64>,
    t: f64,
    count: usize,
    dim: usize,
) -> crate::construct::ReducedVariables {
    let mut out = rv.clone();
    for i in 0..count {
        out.beta[i] += t * delta[i];
        out.shift[i] += t * delta[count + i];
        for k in 0..dim {
            out.drift[i][k] += t * delta[2 * count + i * dim + k];
        }
    }
    out
}

/// Options for peak extraction.
#[derive(Debug, Clone)]
pub struct PeakOptions {
    /// Keep only maxima above this fraction of the global maximum.
    pub prominence: f64,
    /// Merge maxima closer than this distance (the higher one wins).
    pub min_separation: f64,
    /// Neighborhood radius, in cells, for the profile regression.
    pub fit_radius_cells: usize,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            prominence: 0.05,
            min_separation: 0.0,
            fit_radius_cells: 3,
        }
    }
}

/// A located concentration peak.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakEstimate {
    /// Subgrid maximum from per-axis quadratic fits.
    pub center: Vec<f64>,
    /// Fitted peak value.
    pub height: f64,
    /// Rate from the height inversion (height/c0)^{2/(n-2)}.
    pub lambda_hat: f64,
    /// Rate from the profile width regression.
    pub lambda_fit: f64,
    /// Weight from the profile regression; 1 for an exact unit bubble.
    pub alpha_hat: f64,
}

/// Finds local maxima above a prominence threshold, refines them by
/// per-axis quadratic fits, and estimates (alpha, lambda) by regressing the
/// bubble profile. Peaks closer than the configured separation are merged.
pub fn extract_peaks(
    grid: &crate::grid::DomainGrid,
    u: &GridField,
    opts: &PeakOptions,
) -> Vec<PeakEstimate> {
    let n = grid.dim();
    let strides = grid.strides().to_vec();
    let global_max = u.max();
    if !(global_max > 0.0) {
        return Vec::new();
    }
    let threshold = opts.prominence * global_max;
    let mut candidates: Vec<(usize, f64)> = (0..grid.node_count())
        .filter(|&i| grid.is_interior(i))
        .filter_map(|i| {
            let v = u.get(i);
            if v < threshold {
                return None;
            }
            for s in &strides {
                if u.get(i - s) > v || u.get(i + s) > v {
                    return None;
                }
            }
            Some((i, v))
        })
        .collect();
    candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (i, v) in candidates {
        let xi = grid.coords(i);
        let far_enough = kept.iter().all(|&(j, _)| {
            let xj = grid.coords(j);
            let d: f64 = xi
                .iter()
                .zip(&xj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d >= opts.min_separation
        });
        if far_enough {
            kept.push((i, v));
        }
    }
    let c0 = bubble_c0(n);
    let nu = (n as f64 - 2.0) / 2.0;
    kept.into_iter()
        .map(|(i, v)| {
            let idx = grid.multi_index(i);
            let mut center = grid.coords(i);
            let mut height = v;
            for k in 0..n {
                let (fm, f0, fp) = (u.get(i - strides[k]), v, u.get(i + strides[k]));
                let denom = fm - 2.0 * f0 + fp;
                if denom < 0.0 {
                    let offset = (0.5 * (fm - fp) / denom).clamp(-0.5, 0.5);
                    center[k] += offset * grid.spacing[k];
                    // per-axis parabola gain at the vertex
                    height += -(fp - fm) * (fp - fm) / (8.0 * denom);
                }
            }
            let lambda_hat = (height / c0).powf(1.0 / nu);
            // profile regression: u^{-2/(n-2)} is linear in rho^2
            let r = opts.fit_radius_cells as isize;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut offsets = vec![-r; n];
            'outer: loop {
                let mut j = i as isize;
                let mut inside = true;
                for k in 0..n {
                    let pos = idx[k] as isize + offsets[k];
                    if pos < 0 || pos as usize >= grid.dims[k] {
                        inside = false;
                        break;
                    }
                    j += offsets[k] * strides[k] as isize;
                }
                if inside {
                    let j = j as usize;
                    let val = u.get(j);
                    if grid.is_interior(j) && val > 0.2 * height {
                        let x = grid.coords(j);
                        let rho2: f64 = x
                            .iter()
                            .zip(&center)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        xs.push(rho2);
                        ys.push(val.powf(-1.0 / nu));
                    }
                }
                let mut k = 0;
                loop {
                    offsets[k] += 1;
                    if offsets[k] <= r {
                        break;
                    }
                    offsets[k] = -r;
                    k += 1;
                    if k == n {
                        break 'outer;
                    }
                }
            }
            let (lambda_fit, alpha_hat) =
                fit_profile(&xs, &ys, nu, c0).unwrap_or((lambda_hat, 1.0));
            PeakEstimate {
                center,
                height,
                lambda_hat,
                lambda_fit,
                alpha_hat,
            }
        })
        .collect()
}

/// Least squares of y = A + B rho^2; for the bubble profile this gives
/// lambda = sqrt(B/A) and alpha = (A B)^{-(n-2)/4} / c0.
fn fit_profile(xs: &[f64], ys: &[f64], nu: f64, c0: f64) -> Option<(f64, f64)> {
    let m = xs.len();
    if m < 3 {
        return None;
    }
    let mf = m as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = mf * sxx - sx * sx;
    if denom <= 0.0 {
        return None;
    }
    let b = (mf * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / mf;
    if a <= 0.0 || b <= 0.0 {
        return None;
    }
    Some(((b / a).sqrt(), (a * b).powf(-nu / 2.0) / c0))
}

/// One sweep record: the extracted parameters of one bubble at one eps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub block: usize,
    pub bubble: usize,
    pub lambda_hat: f64,
    pub lambda_fit: f64,
    pub alpha_hat: f64,
    pub center: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Why a sweep ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SweepStop {
    Completed,
    /// The grid cannot resolve the predicted rate at this eps: an accepted
    /// refusal, not a numerical failure.
    Refused { eps: f64, lambda: f64, cap: f64 },
    Failed { eps: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub stop: SweepStop,
    /// Peak counts per executed eps.
    pub peak_counts: Vec<(f64, usize)>,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Rate cap (lambda * max spacing) for warm-start assembly; looser than
    /// the strict projection cap because the sweep validates trends only.
    pub assembly_cap: f64,
    pub newton: PdeNewtonOptions,
    pub solver: SolverOptions,
    pub prominence: f64,
    pub mu: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            assembly_cap: 1.25,
            newton: PdeNewtonOptions::default(),
            solver: SolverOptions::default(),
            prominence: 0.05,
            mu: 0.5,
        }
    }
}

/// Warm-started continuation over a strictly decreasing eps schedule for a
/// single anchor block. Each step solves the discrete problem from an
/// assembled multi-bubble start (the previous solution rescaled by the
/// predicted rate ratio) and records the extracted peaks. The first failure
/// or grid-cap refusal terminates the sweep with a partial table.
#[allow(clippy::too_many_arguments)]
pub fn continuation_sweep(
    op: &EllipticOperator,
    constants: &crate::analytic::constants::PaperConstants,
    potential: &Potential,
    anchor: &HessianAnchor,
    cert: &Certificate,
    schedule: &[f64],
    block: usize,
    opts: &SweepOptions,
) -> Result<SweepTable> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "schedule must be non-empty and strictly decreasing".into(),
        ));
    }
    let grid = op.grid;
    let h = grid.max_spacing();
    let proj_opts = ProjectionOptions {
        lambda_h_cap: opts.assembly_cap,
        d0: None,
        solver: opts.solver.clone(),
    };
    let mut rows = Vec::new();
    let mut peak_counts = Vec::new();
    let mut stop = SweepStop::Completed;
    // carried state: (alpha_hat, center, rate) per bubble from the last solve
    let mut carried: Option<Vec<(f64, Vec<f64>, f64)>> = None;
    let mut prev_rate = f64::NAN;
    for &eps in schedule {
        let pred = predicted_parameters(constants, potential, anchor, cert, eps, opts.mu)?;
        let rate = pred.rates[0];
        if rate * h > opts.assembly_cap {
            stop = SweepStop::Refused {
                eps,
                lambda: rate,
                cap: opts.assembly_cap,
            };
            break;
        }
        let min_sep = min_pair_separation(&pred).unwrap_or(f64::INFINITY);
        let mut u0 = GridField::zeros(grid);
        let start: Vec<(f64, Vec<f64>, f64)> = match &carried {
            None => pred
                .alpha
                .iter()
                .zip(&pred.centers)
                .zip(&pred.rates)
                .map(|((a, c), r)| (*a, c.clone(), *r))
                .collect(),
            Some(prev) => {
                let ratio = rate / prev_rate;
                prev.iter()
                    .map(|(a, c, r)| (*a, c.clone(), r * ratio))
                    .collect()
            }
        };
        for (a, c, r) in &start {
            let bubble = Bubble::new(c.clone(), (*r).min(opts.assembly_cap / h))?;
            let proj = project_bubble(op, &bubble, &proj_opts)?;
            u0.axpy(*a, &proj.pi_delta);
        }
        let u0 = amplitude_correct(op, eps, &u0);
        let report = solve_from_ansatz(op, eps, &u0, None, &opts.newton)?;
        if report.status != SolveStatus::Converged || !report.positive {
            stop = SweepStop::Failed {
                eps,
                reason: format!(
                    "status {:?}, positive {}, residual {:.3e}",
                    report.status, report.positive, report.residual
                ),
            };
            break;
        }
        let peaks = extract_peaks(
            grid,
            &report.u,
            &PeakOptions {
                prominence: opts.prominence,
                min_separation: (0.4 * min_sep).min(8.0 / rate),
                fit_radius_cells: 3,
            },
        );
        peak_counts.push((eps, peaks.len()));
        // stable bubble labels: nearest predicted center
        let mut labeled: Vec<(usize, &PeakEstimate)> = peaks
            .iter()
            .map(|p| {
                let nearest = pred
                    .centers
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da: f64 =
                            a.iter().zip(&p.center).map(|(x, y)| (x - y) * (x - y)).sum();
                        let db: f64 =
                            b.iter().zip(&p.center).map(|(x, y)| (x - y) * (x - y)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (nearest, p)
            })
            .collect();
        labeled.sort_by_key(|(i, _)| *i);
        for (label, p) in &labeled {
            rows.push(SweepRow {
                eps,
                block,
                bubble: *label,
                lambda_hat: p.lambda_hat,
                lambda_fit: p.lambda_fit,
                alpha_hat: p.alpha_hat,
                center: p.center.clone(),
                residual: report.residual,
                iterations: report.iterations,
            });
        }
        carried = Some(
            labeled
                .iter()
                .map(|(_, p)| (p.alpha_hat, p.center.clone(), p.lambda_fit))
                .collect(),
        );
        prev_rate = rate;
    }
    Ok(SweepTable {
        rows,
        stop,
        peak_counts,
    })
}

fn min_pair_separation(pred: &PredictedSolution) -> Option<f64> {
    let mut min_sep: Option<f64> = None;
    for i in 0..pred.centers.len() {
        for j in (i + 1)..pred.centers.len() {
            let d: f64 = pred.centers[i]
                .iter()
                .zip(&pred.centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_sep = Some(min_sep.map_or(d, |m: f64| m.min(d)));
        }
    }
    min_sep
}

/// Analytics-only sweep rows from the predicted parameters (no PDE solve).
pub fn predicted_sweep_rows(
    constants: &crate::analytic::constants::PaperConstants,
    potential: &Potential,
    anchor: &HessianAnchor,
    cert: &Certificate,
    schedule: &[f64],
    mu: f64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &eps in schedule {
        let pred = predicted_parameters(constants, potential, anchor, cert, eps, mu)?;
        for (i, ((alpha, center), rate)) in pred
            .alpha
            .iter()
            .zip(&pred.centers)
            .zip(&pred.rates)
            .enumerate()
        {
            rows.push(SweepRow {
                eps,
                block: 0,
                bubble: i,
                lambda_hat: *rate,
                lambda_fit: *rate,
                alpha_hat: *alpha,
                center: center.clone(),
                residual: 0.0,
                iterations: 0,
            });
        }
    }
    Ok(rows)
}

/// Slopes of the concentration laws fitted from sweep rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Slope of ln(lambda_hat) against the rate predictor.
    pub rate_slope: f64,
    pub rate_halfwidth: f64,
    /// Target: -1/2 against ln(eps) for n >= 5; +1 against the
    /// log-corrected predictor for n = 4.
    pub rate_target: f64,
    /// Slope of ln|center - anchor| against ln(eta(eps)), when centers move.
    pub center_slope: Option<f64>,
    pub center_halfwidth: Option<f64>,
    pub samples: usize,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let m = xs.len();
    if m < 3 {
        return Err(Error::InvalidInput("need at least three samples".into()));
    }
    let mf = m as f64;
    let xbar = xs.iter().sum::<f64>() / mf;
    let ybar = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx <= 1e-30 {
        return Err(Error::InvalidInput(
            "degenerate predictor column (constant)".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let fit = ybar + slope * (x - xbar);
            (y - fit) * (y - fit)
        })
        .sum();
    let variance = rss / (mf - 2.0).max(1.0);
    let halfwidth = 2.0 * (variance / sxx).sqrt();
    Ok((slope, halfwidth))
}

/// Least-squares fit of ln(lambda_hat) against the dimension's rate
/// predictor, and of the center drift against eta(eps).
pub fn fit_scaling_law(rows: &[SweepRow], n: usize, anchor: &[f64]) -> Result<FitReport> {
    if rows.len() < 3 {
        return Err(Error::InvalidInput("need at least three sweep rows".into()));
    }
    let mut eps_values: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eps_values.dedup();
    if eps_values.len() < 3 {
        return Err(Error::InvalidInput(
            "need at least three distinct eps values".into(),
        ));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut drift_xs = Vec::new();
    let mut drift_ys = Vec::new();
    for &eps in &eps_values {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.eps == eps).collect();
        let mean_log_rate =
            group.iter().map(|r| r.lambda_hat.ln()).sum::<f64>() / group.len() as f64;
        let predictor = if n == 4 {
            // lambda ~ sqrt(|ln eps|/2 / eps): slope target 1 against this
            0.5 * (((-eps.ln()) / 2.0).ln() - eps.ln())
        } else {
            eps.ln()
        };
        xs.push(predictor);
        ys.push(mean_log_rate);
        let mean_drift = group
            .iter()
            .map(|r| {
                r.center
                    .iter()
                    .zip(anchor)
                    .map(|(c, b)| (c - b) * (c - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / group.len() as f64;
        if mean_drift > 1e-14 {
            drift_xs.push(eta_scale(n, eps)?.ln());
            drift_ys.push(mean_drift.ln());
        }
    }
    let (rate_slope, rate_halfwidth) = least_squares_slope(&xs, &ys)?;
    let (center_slope, center_halfwidth) = if drift_xs.len() >= 3 {
        let (s, w) = least_squares_slope(&drift_xs, &drift_ys)?;
        (Some(s), Some(w))
    } else {
        (None, None)
    };
    Ok(FitReport {
        rate_slope,
        rate_halfwidth,
        rate_target: if n == 4 { 1.0 } else { -0.5 },
        center_slope,
        center_halfwidth,
        samples: rows.len(),
    })
}

/// Criticality witness: pairings of a computed solution with the basis
/// fields of one extracted bubble; all vanish to solver accuracy at a
/// discrete solution.
pub fn criticality_pairings(
    op: &EllipticOperator,
    eps: f64,
    u: &GridField,
    bubble: &Bubble,
    opts: &ProjectionOptions,
) -> Result<Vec<(Which, f64)>> {
    let fields = crate::grid::projection::basis_fields(op, bubble, opts)?;
    let mut out = Vec::new();
    for (k, phi) in fields.iter().enumerate() {
        let which = match k {
            0 => Which::Alpha,
            1 => Which::Rate,
            j => Which::Center(j - 2),
        };
        out.push((which, op.pairing(eps, u, phi)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, MaskKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_grid(n: usize, nodes: usize) -> crate::grid::DomainGrid {
        let spec =
            GridSpec::with_nodes(vec![(0.0, 1.0); n], &vec![nodes; n], MaskKind::Box).unwrap();
        build_grid(&spec).unwrap()
    }

    #[test]
    fn manufactured_nonlinear_solve() {
        let grid = unit_grid(3, 13);
        let pot = Potential::constant(3, 1.0);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let eps = 0.05;
        let u_true = GridField::from_fn(&grid, |x| {
            2.0 * x.iter().map(|xi| (PI * xi).sin()).product::<f64>()
        });
        let source = pde_residual(&op, eps, &u_true, None);
        let mut u0 = u_true.clone();
        u0.scale(0.8);
        let report =
            newton_solve(&op, eps, &u0, Some(&source), &PdeNewtonOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        let mut diff = report.u.clone();
        diff.axpy(-1.0, &u_true);
        assert!(diff.max_abs() < 1e-6, "recovery error {}", diff.max_abs());
    }

    #[test]
    fn zero_start_converges_to_trivial_branch() {
        let grid = unit_grid(2, 9);
        let pot = Potential::constant(2, 1.0);
        let op = EllipticOperator::new(&grid, &pot).unwrap();
        let z = GridField::zeros(&grid);
        let report = newton_solve(&op, 0.1, &z, None, &PdeNewtonOptions::default()).unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.trivial);
        assert!(!report.positive);
    }

    #[test]
    fn synthetic_peak_recovery() {
        // sampled bubble with lambda h = 0.25: center within h, rate within 5%
        let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 3], &[33; 3], MaskKind::Box).unwrap();
        let grid = build_grid(&spec).unwrap();
        let lambda = 4.0;
        let center = vec![0.13, -0.08, 0.21];
        let bubble = Bubble::new(center.clone(), lambda).unwrap();
        let u = crate::grid::projection::sample_bubble(&grid, &bubble);
        let peaks = extract_peaks(&grid, &u, &PeakOptions::default());
        assert_eq!(peaks.len(), 1);
        let p = &peaks[0];
        for (c, e) in p.center.iter().zip(&center) {
            assert!((c - e).abs() <= grid.max_spacing(), "center {c} vs {e}");
        }
        assert!(
            (p.lambda_hat - lambda).abs() / lambda < 0.05,
            "lambda_hat {} vs {lambda}",
            p.lambda_hat
        );
        assert!(
            (p.lambda_fit - lambda).abs() / lambda < 0.05,
            "lambda_fit {} vs {lambda}",
            p.lambda_fit
        );
        assert!((p.alpha_hat - 1.0).abs() < 0.05, "alpha_hat {}", p.alpha_hat);
    }

    #[test]
    fn empty_and_double_peaks() {
        let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 2], &[65; 2], MaskKind::Box).unwrap();
        let grid = build_grid(&spec).unwrap();
        let z = GridField::zeros(&grid);
        assert!(extract_peaks(&grid, &z, &PeakOptions::default()).is_empty());
        let u = GridField::from_fn(&grid, |x| {
            let d1 = (x[0] - 0.5) * (x[0] - 0.5) + x[1] * x[1];
            let d2 = (x[0] + 0.5) * (x[0] + 0.5) + x[1] * x[1];
            (-40.0 * d1).exp() + 0.9 * (-40.0 * d2).exp()
        });
        let peaks = extract_peaks(
            &grid,
            &u,
            &PeakOptions {
                prominence: 0.1,
                min_separation: 0.3,
                fit_radius_cells: 2,
            },
        );
        assert_eq!(peaks.len(), 2);
    }

    #[test]
    fn peak_extraction_is_translation_consistent() {
        let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 3], &[33; 3], MaskKind::Box).unwrap();
        let grid = build_grid(&spec).unwrap();
        let h = grid.spacing[0];
        let lambda = 5.0;
        let base = vec![0.0, 0.05, -0.1];
        let shifted = vec![base[0] + 3.0 * h, base[1], base[2]];
        let u1 = crate::grid::projection::sample_bubble(
            &grid,
            &Bubble::new(base, lambda).unwrap(),
        );
        let u2 = crate::grid::projection::sample_bubble(
            &grid,
            &Bubble::new(shifted, lambda).unwrap(),
        );
        let p1 = extract_peaks(&grid, &u1, &PeakOptions::default());
        let p2 = extract_peaks(&grid, &u2, &PeakOptions::default());
        assert_eq!(p1.len(), 1);
        assert_eq!(p2.len(), 1);
        assert_relative_eq!(p2[0].center[0] - p1[0].center[0], 3.0 * h, epsilon = 1e-9);
        assert_relative_eq!(p2[0].center[1], p1[0].center[1], epsilon = 1e-9);
    }

    #[test]
    fn scaling_fit_recovers_synthetic_law() {
        // rows generated exactly from the n >= 5 law: slope -1/2 to 1e-12
        let mut rows = Vec::new();
        for &eps in &[0.2f64, 0.1, 0.05, 0.025] {
            rows.push(SweepRow {
                eps,
                block: 0,
                bubble: 0,
                lambda_hat: 3.0 * eps.powf(-0.5),
                lambda_fit: 3.0 * eps.powf(-0.5),
                alpha_hat: 1.0,
                center: vec![0.0; 5],
                residual: 0.0,
                iterations: 0,
            });
        }
        let fit = fit_scaling_law(&rows, 5, &[0.0; 5]).unwrap();
        assert_relative_eq!(fit.rate_slope, -0.5, epsilon = 1e-12);
        assert!(fit.center_slope.is_none());
    }

    #[test]
    fn degenerate_fit_columns_rejected() {
        let rows: Vec<SweepRow> = (0..4)
            .map(|_| SweepRow {
                eps: 0.1,
                block: 0,
                bubble: 0,
                lambda_hat: 5.0,
                lambda_fit: 5.0,
                alpha_hat: 1.0,
                center: vec![0.0; 4],
                residual: 0.0,
                iterations: 0,
            })
            .collect();
        assert!(fit_scaling_law(&rows, 4, &[0.0; 4]).is_err());
    }
}

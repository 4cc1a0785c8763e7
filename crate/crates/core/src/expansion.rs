//! Predicted asymptotic expansions of the gradient pairings, remainder
//! budgets, comparison against direct discrete pairings, and ratio audits of
//! the appendix integral estimates.

use crate::analytic::constants::PaperConstants;
use crate::analytic::{critical_exponent, half_decay, interaction, Bubble, ConcentrationSet};
use crate::error::{Error, Result};
use crate::grid::operator::EllipticOperator;
use crate::grid::projection::{basis_fields, project_bubble, sample_bubble, ProjectionOptions};
use crate::grid::{GridField, Potential};
use serde::{Deserialize, Serialize};

/// Decay scale of the self-interaction terms: lambda^{-2} for n >= 5,
/// ln(lambda)/lambda^2 for n = 4, lambda^{-1} for n = 3.
pub fn t2(n: usize, lambda: f64) -> f64 {
    match n {
        3 => 1.0 / lambda,
        4 => lambda.ln() / (lambda * lambda),
        _ => 1.0 / (lambda * lambda),
    }
}

/// Interaction remainder shape; the logarithm is clamped at t = e^{-1} so the
/// factor stays positive.
pub fn t3(n: usize, t: f64) -> f64 {
    if n >= 6 {
        let nf = n as f64;
        t.powf((nf + 2.0) / (2.0 * (nf - 2.0)))
            * (1.0 / t).ln().max(1.0).powf((nf + 2.0) / (2.0 * nf))
    } else {
        t
    }
}

/// Bracket controlling the interaction of a correction theta_i with a far
/// bubble j at center distance d.
pub fn xi_pair(n: usize, lambda_i: f64, lambda_j: f64, d: f64) -> f64 {
    match n {
        3 => 1.0 / lambda_i,
        4 => lambda_i.ln() / (lambda_i * lambda_i) + d * d * d.ln().abs() + lambda_j.powf(-1.5),
        _ => 1.0 / (lambda_i * lambda_i) + d * d + lambda_j.powf(-1.5),
    }
}

/// Remainder budget realized for one bubble of a concentration set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemainderBudget {
    pub t2: f64,
    pub r_alpha: f64,
    pub r_lambda: f64,
    pub r_a: f64,
    pub r_v: f64,
    /// Xi brackets against each other bubble, in index order (self skipped).
    pub xi: Vec<f64>,
}

impl RemainderBudget {
    pub fn assemble(set: &ConcentrationSet, eps: f64, i: usize, v_norm: f64) -> Self {
        let n = set.dim();
        let nf = n as f64;
        let li = set.bubbles[i].rate;
        let count = set.len();
        let pair_eps = |a: usize, b: usize| interaction(&set.bubbles[a], &set.bubbles[b]).eps;
        let all_pairs_log: f64 = (0..count)
            .flat_map(|k| (0..count).map(move |j| (k, j)))
            .filter(|&(k, j)| k != j)
            .map(|(k, j)| {
                let e = pair_eps(k, j);
                e.powf(nf / (nf - 2.0)) * (1.0 / e).ln().max(1.0)
            })
            .sum();
        let sum_eps_i: f64 = (0..count).filter(|&j| j != i).map(|j| pair_eps(i, j)).sum();
        let mut xi = Vec::new();
        let mut r_lambda_pairs = 0.0;
        let mut r_a_pairs = 0.0;
        for j in 0..count {
            if j == i {
                continue;
            }
            let lj = set.bubbles[j].rate;
            let d: f64 = set.bubbles[i]
                .center
                .iter()
                .zip(&set.bubbles[j].center)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            let eij = pair_eps(i, j);
            let xij = xi_pair(n, li, lj, d);
            xi.push(xij);
            r_lambda_pairs +=
                (li * lj).powf(-(nf - 2.0) / 2.0) + eij * (xij + li.powf(-1.5) + lj.powf(-1.5));
            r_a_pairs += lj * d * eij.powf((nf + 1.0) / (nf - 2.0))
                + eij * (eps + 1.0 / li + lj.powf(-1.5));
        }
        let sum_rate_tails: f64 = set.bubbles.iter().map(|b| b.rate.powf(1.0 - nf)).sum();
        let sigma_log = |l: f64| if n == 4 { l.ln() } else { 1.0 };
        let r_alpha = eps + t2(n, li) + v_norm * v_norm + sum_eps_i;
        let r_lambda = eps * eps
            + v_norm * v_norm
            + li.powf(2.0 - nf)
            + li.powf(-4.0)
            + if n == 6 { li.ln() / li.powf(4.0) } else { 0.0 }
            + all_pairs_log
            + r_lambda_pairs;
        let r_a = v_norm * v_norm
            + li.powf(-4.0)
            + if n == 5 { li.ln() / li.powf(4.0) } else { 0.0 }
            + sum_rate_tails
            + all_pairs_log
            + r_a_pairs
            + eps * sigma_log(li) / (li * li);
        let r_v = eps
            + set.bubbles.iter().map(|b| t2(n, b.rate)).sum::<f64>()
            + (0..count)
                .flat_map(|k| (0..count).map(move |j| (k, j)))
                .filter(|&(k, j)| k != j)
                .map(|(k, j)| t3(n, pair_eps(k, j)))
                .sum::<f64>();
        Self {
            t2: t2(n, li),
            r_alpha,
            r_lambda,
            r_a,
            r_v,
            xi,
        }
    }
}

fn rate_damp(eps: f64, n: usize, lambda: f64) -> f64 {
    lambda.powf(-eps * half_decay(n))
}

fn sigma_log_pow(n: usize, lambda: f64) -> f64 {
    if n == 4 {
        lambda.ln()
    } else {
        1.0
    }
}

/// Leading term of the pairing against the projection itself:
/// alpha S_n (1 - alpha^{p-1-eps} lambda^{-eps(n-2)/2}).
pub fn predict_alpha_pairing(constants: &PaperConstants, alpha: f64, lambda: f64, eps: f64) -> f64 {
    let p = critical_exponent(constants.n);
    alpha
        * constants.s_n
        * (1.0 - alpha.powf(p - 1.0 - eps) * rate_damp(eps, constants.n, lambda))
}

/// Leading terms of the pairing against the scaled rate derivative of the
/// projection: interaction derivatives, the eps term, and the potential term.
pub fn predict_rate_pairing(
    constants: &PaperConstants,
    set: &ConcentrationSet,
    potential: &Potential,
    i: usize,
    eps: f64,
) -> f64 {
    let n = constants.n;
    let p = critical_exponent(n);
    let alpha_i = set.weights[i];
    let li = set.bubbles[i].rate;
    let damp_i = rate_damp(eps, n, li);
    let c0_damp = constants.c0.powf(-eps);
    let mut total = 0.0;
    for j in 0..set.len() {
        if j == i {
            continue;
        }
        let inter = interaction(&set.bubbles[i], &set.bubbles[j]);
        let alpha_j = set.weights[j];
        let damp_j = rate_damp(eps, n, set.bubbles[j].rate);
        let bracket =
            1.0 - alpha_i.powf(p - 1.0 - eps) * damp_i - alpha_j.powf(p - 1.0 - eps) * damp_j;
        total += alpha_j * constants.c2bar * inter.d_rate_i * bracket;
    }
    total += c0_damp * damp_i * constants.c2 * alpha_i.powf(p - eps) * eps;
    let v_at = potential.value(&set.bubbles[i].center);
    total -= constants.c_of_n
        * alpha_i
        * (sigma_log_pow(n, li) / (li * li))
        * v_at
        * (2.0 * alpha_i.powf(p - 1.0 - eps) * c0_damp * damp_i - 1.0);
    total
}

/// Leading terms of the pairing against the scaled center derivative of the
/// projection, one component per coordinate.
pub fn predict_center_pairing(
    constants: &PaperConstants,
    set: &ConcentrationSet,
    potential: &Potential,
    i: usize,
    eps: f64,
) -> Vec<f64> {
    let n = constants.n;
    let p = critical_exponent(n);
    let alpha_i = set.weights[i];
    let li = set.bubbles[i].rate;
    let damp_i = rate_damp(eps, n, li);
    let c0_damp = constants.c0.powf(-eps);
    let grad_v = potential.gradient(&set.bubbles[i].center);
    let grad_coeff = constants.c2_of_n
        * alpha_i
        * (sigma_log_pow(n, li) / (li * li * li))
        * (2.0 * alpha_i.powf(p - 1.0 - eps) * c0_damp * damp_i - 1.0);
    let mut out: Vec<f64> = grad_v.iter().map(|g| grad_coeff * g).collect();
    for j in 0..set.len() {
        if j == i {
            continue;
        }
        let inter = interaction(&set.bubbles[i], &set.bubbles[j]);
        let alpha_j = set.weights[j];
        let bracket = 1.0
            - c0_damp * damp_i * alpha_i.powf(p - 1.0 - eps)
            - c0_damp * damp_i * alpha_j.powf(p - 1.0 - eps);
        for (o, d) in out.iter_mut().zip(&inter.d_center_i) {
            *o += constants.c2bar * alpha_j * d * bracket;
        }
    }
    out
}

/// Which pairing an expansion report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Alpha,
    Rate,
    /// One component of the center pairing.
    Center(usize),
}

/// Numeric pairing versus predicted leading term, with the matching budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub which: Which,
    pub bubble: usize,
    pub numeric: f64,
    pub predicted: f64,
    /// numeric - predicted, by definition.
    pub remainder: f64,
    /// The matching scalar budget (R_alpha, R_lambda, or R_a).
    pub budget: f64,
    pub ratio: f64,
    pub detail: RemainderBudget,
}

/// Assembles u = sum alpha_k pi delta_k on the grid (v = 0), computes the
/// discrete pairing with the requested basis field of bubble `i`, and
/// compares with the predicted leading term.
pub fn verify_expansion(
    op: &EllipticOperator,
    constants: &PaperConstants,
    set: &ConcentrationSet,
    potential: &Potential,
    which: Which,
    i: usize,
    eps: f64,
    opts: &ProjectionOptions,
) -> Result<ExpansionReport> {
    if i >= set.len() {
        return Err(Error::InvalidInput(format!("bubble index {i} out of range")));
    }
    if set.dim() != constants.n || op.grid.dim() != constants.n {
        return Err(Error::InvalidInput("dimension mismatch".into()));
    }
    let grid = op.grid;
    let mut ubar = GridField::zeros(grid);
    let mut projections = Vec::with_capacity(set.len());
    for (alpha, bubble) in set.weights.iter().zip(&set.bubbles) {
        let proj = project_bubble(op, bubble, opts)?;
        ubar.axpy(*alpha, &proj.pi_delta);
        projections.push(proj);
    }
    let phi = match which {
        Which::Alpha => projections[i].pi_delta.clone(),
        Which::Rate => {
            let fields = basis_fields(op, &set.bubbles[i], opts)?;
            fields.into_iter().nth(1).unwrap()
        }
        Which::Center(j) => {
            if j >= constants.n {
                return Err(Error::InvalidInput(format!("component {j} out of range")));
            }
            let fields = basis_fields(op, &set.bubbles[i], opts)?;
            fields.into_iter().nth(2 + j).unwrap()
        }
    };
    let numeric = op.pairing(eps, &ubar, &phi);
    let predicted = match which {
        Which::Alpha => predict_alpha_pairing(constants, set.weights[i], set.bubbles[i].rate, eps),
        Which::Rate => predict_rate_pairing(constants, set, potential, i, eps),
        Which::Center(j) => predict_center_pairing(constants, set, potential, i, eps)[j],
    };
    let detail = RemainderBudget::assemble(set, eps, i, 0.0);
    let budget = match which {
        Which::Alpha => detail.r_alpha,
        Which::Rate => detail.r_lambda,
        Which::Center(_) => detail.r_a,
    };
    let remainder = numeric - predicted;
    Ok(ExpansionReport {
        which,
        bubble: i,
        numeric,
        predicted,
        remainder,
        budget,
        ratio: remainder / budget,
        detail,
    })
}

/// One audited inequality instance: measured left side, budget right side,
/// and their ratio (the fitted constant).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRow {
    pub lemma: String,
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Grid quadrature of delta_i^a delta_j^b against the interaction bound
/// eps_ij^{min(a,b)}. Requires a + b = 2n/(n-2) and a != b.
pub fn audit_pair_integral(
    op: &EllipticOperator,
    bi: &Bubble,
    bj: &Bubble,
    a_exp: f64,
    b_exp: f64,
) -> Result<AuditRow> {
    let n = op.grid.dim();
    let crit = 2.0 * n as f64 / (n as f64 - 2.0);
    if (a_exp + b_exp - crit).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "exponents must sum to 2n/(n-2) = {crit}, got {a_exp} + {b_exp}"
        )));
    }
    if (a_exp - b_exp).abs() < 1e-12 {
        return Err(Error::InvalidInput(
            "the pair-integral bound requires distinct exponents".into(),
        ));
    }
    let di = sample_bubble(op.grid, bi);
    let dj = sample_bubble(op.grid, bj);
    let mut integrand = GridField::zeros(op.grid);
    for k in 0..op.grid.node_count() {
        if op.grid.is_interior(k) {
            let v = di.get(k).powf(a_exp) * dj.get(k).powf(b_exp);
            integrand.set(op.grid, k, v);
        }
    }
    let lhs = op.integrate(&integrand);
    let eij = interaction(bi, bj).eps;
    let rhs = eij.powf(a_exp.min(b_exp));
    let sep: f64 = bi
        .center
        .iter()
        .zip(&bj.center)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    Ok(AuditRow {
        lemma: "pair-integral".into(),
        label: format!("a={a_exp} b={b_exp} l_i={} l_j={} sep={sep:.3}", bi.rate, bj.rate),
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// | ||pi delta||^2 - S_n | * lambda^2 / ln^{sigma_n} lambda: bounded when
/// the projection norm approaches S_n at the predicted speed.
pub fn audit_projection_norm(
    op: &EllipticOperator,
    constants: &PaperConstants,
    bubble: &Bubble,
    opts: &ProjectionOptions,
) -> Result<AuditRow> {
    let proj = project_bubble(op, bubble, opts)?;
    let norm2 = op.inner_product(&proj.pi_delta, &proj.pi_delta);
    let l = bubble.rate;
    let lhs = (norm2 - constants.s_n).abs();
    let rhs = sigma_log_pow(constants.n, l) / (l * l);
    Ok(AuditRow {
        lemma: "projection-norm".into(),
        label: format!("lambda={l}"),
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// Interaction of the correction theta_1 with a far bubble against the
/// two-term budget (lambda_1 lambda_2)^{-(n-2)/2} + eps_12 Xi_12.
pub fn audit_theta_interaction(
    op: &EllipticOperator,
    b1: &Bubble,
    b2: &Bubble,
    opts: &ProjectionOptions,
) -> Result<AuditRow> {
    let n = op.grid.dim();
    let p = critical_exponent(n);
    let proj1 = project_bubble(op, b1, opts)?;
    let d2 = sample_bubble(op.grid, b2);
    let mut integrand = GridField::zeros(op.grid);
    for k in 0..op.grid.node_count() {
        if op.grid.is_interior(k) {
            integrand.set(op.grid, k, d2.get(k).powf(p) * proj1.theta.get(k).abs());
        }
    }
    let lhs = op.integrate(&integrand);
    let eij = interaction(b1, b2).eps;
    let d: f64 = b1
        .center
        .iter()
        .zip(&b2.center)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let nf = n as f64;
    let rhs = (b1.rate * b2.rate).powf(-(nf - 2.0) / 2.0) + eij * xi_pair(n, b1.rate, b2.rate, d);
    Ok(AuditRow {
        lemma: "theta-interaction".into(),
        label: format!("l1={} l2={} sep={d:.3}", b1.rate, b2.rate),
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// Audit of the linear-form bound |int ubar^{p-eps-1} v phi| <=
/// c ||v|| (eps + T2 + sum T3) with a surrogate test function orthogonalized
/// against the span of the basis fields.
pub fn audit_linear_form(
    op: &EllipticOperator,
    set: &ConcentrationSet,
    eps: f64,
    opts: &ProjectionOptions,
) -> Result<AuditRow> {
    let grid = op.grid;
    let n = grid.dim();
    let p = critical_exponent(n);
    let mut ubar = GridField::zeros(grid);
    let mut all_fields = Vec::new();
    for (alpha, bubble) in set.weights.iter().zip(&set.bubbles) {
        let fields = basis_fields(op, bubble, opts)?;
        ubar.axpy(*alpha, &fields[0]);
        all_fields.extend(fields);
    }
    let phi = all_fields[0].clone();
    // surrogate v: smooth interior blob with a zero-mean wiggle
    let widths: Vec<f64> = grid
        .bounds
        .iter()
        .map(|&(lo, hi)| 0.5 * (hi - lo))
        .collect();
    let center: Vec<f64> = grid
        .bounds
        .iter()
        .map(|&(lo, hi)| 0.5 * (lo + hi))
        .collect();
    let mut v = GridField::from_fn(grid, |x| {
        let mut prof = 1.0;
        for ((xi, c), w) in x.iter().zip(&center).zip(&widths) {
            let t = (xi - c) / w;
            prof *= (1.0 - t * t).max(0.0);
        }
        prof * (5.0 * (x[0] - center[0])).sin()
    });
    // modified Gram-Schmidt in the energy product
    let mut ortho: Vec<GridField> = Vec::new();
    for mut e in all_fields {
        for q in &ortho {
            let c = op.inner_product(&e, q) / op.inner_product(q, q);
            e.axpy(-c, q);
        }
        if op.inner_product(&e, &e) > 1e-20 {
            ortho.push(e);
        }
    }
    for q in &ortho {
        let c = op.inner_product(&v, q) / op.inner_product(q, q);
        v.axpy(-c, q);
    }
    let v_norm = op.norm(&v);
    let mut integrand = GridField::zeros(grid);
    for k in 0..grid.node_count() {
        if grid.is_interior(k) {
            let base = ubar.get(k).abs();
            if base > 0.0 {
                integrand.set(grid, k, base.powf(p - eps - 1.0) * v.get(k) * phi.get(k));
            }
        }
    }
    let lhs = op.integrate(&integrand).abs();
    let mut tail = eps + t2(n, set.bubbles[0].rate);
    for j in 1..set.len() {
        tail += t3(n, interaction(&set.bubbles[0], &set.bubbles[j]).eps);
    }
    let rhs = v_norm * tail;
    Ok(AuditRow {
        lemma: "linear-form".into(),
        label: format!("N={} eps={eps}", set.len()),
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// Summary over audit rows: (lemma, max ratio, sample count).
pub fn audit_summary(rows: &[AuditRow]) -> Vec<(String, f64, usize)> {
    let mut lemmas: Vec<String> = rows.iter().map(|r| r.lemma.clone()).collect();
    lemmas.sort();
    lemmas.dedup();
    lemmas
        .into_iter()
        .map(|lemma| {
            let matching: Vec<&AuditRow> = rows.iter().filter(|r| r.lemma == lemma).collect();
            let max_ratio = matching.iter().fold(0.0f64, |m, r| m.max(r.ratio));
            (lemma, max_ratio, matching.len())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::constants::{compute_constants, QuadratureSettings};
    use approx::assert_relative_eq;

    fn constants(n: usize) -> PaperConstants {
        compute_constants(n, &QuadratureSettings::default()).unwrap()
    }

    #[test]
    fn alpha_prediction_zeros() {
        let c = constants(4);
        let (lambda, eps) = (30.0f64, 0.05);
        let p = critical_exponent(4);
        // balancing weight makes the bracket vanish: alpha^{p-1-eps} = lambda^{eps(n-2)/2}
        let alpha = lambda.powf(eps * half_decay(4) / (p - 1.0 - eps));
        assert!(predict_alpha_pairing(&c, alpha, lambda, eps).abs() < 1e-10);
        assert_eq!(predict_alpha_pairing(&c, 1.0, 10.0, 0.0), 0.0);
    }

    #[test]
    fn rate_prediction_balances_single_bubble() {
        for n in [4usize, 5] {
            let c = constants(n);
            let pot = Potential::constant(n, 2.0);
            let lambda = 60.0;
            let eps = c.c_of_n * 2.0 * sigma_log_pow(n, lambda) / (lambda * lambda) / c.c2;
            let set =
                ConcentrationSet::new(vec![1.0], vec![Bubble::new(vec![0.0; n], lambda).unwrap()])
                    .unwrap();
            let predicted = predict_rate_pairing(&c, &set, &pot, 0, eps);
            let scale = c.c2 * eps;
            // the residual of the balance is the small eps-power defect
            let defect = 2.0 * eps * (c.c0.ln() + half_decay(n) * lambda.ln());
            assert!(
                predicted.abs() <= scale * defect,
                "n={n}: predicted {predicted:.3e} vs scale {scale:.3e} defect {defect:.3e}"
            );
        }
    }

    #[test]
    fn rate_prediction_sign_flips_past_balance() {
        let c = constants(4);
        let pot = Potential::constant(4, 2.0);
        let eps = 0.01;
        let mut signs = Vec::new();
        for lambda in [5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0] {
            let set =
                ConcentrationSet::new(vec![1.0], vec![Bubble::new(vec![0.0; 4], lambda).unwrap()])
                    .unwrap();
            signs.push(predict_rate_pairing(&c, &set, &pot, 0, eps).signum());
        }
        assert!(signs.contains(&1.0) && signs.contains(&-1.0), "{signs:?}");
        let first_pos = signs.iter().position(|s| *s > 0.0).unwrap();
        assert!(signs[first_pos..].iter().all(|s| *s > 0.0), "{signs:?}");
    }

    #[test]
    fn far_separated_interaction_term_is_negative_and_small() {
        let c = constants(4);
        let pot = Potential::constant(4, 1.0);
        let eps = 0.01;
        let b1 = Bubble::new(vec![0.0; 4], 40.0).unwrap();
        let b2 = Bubble::new(vec![2.0, 0.0, 0.0, 0.0], 40.0).unwrap();
        let set = ConcentrationSet::new(vec![1.0, 1.0], vec![b1.clone(), b2.clone()]).unwrap();
        let inter = interaction(&b1, &b2);
        assert!(inter.d_rate_i < 0.0, "interaction decreasing in lambda_i");
        let single = ConcentrationSet::new(vec![1.0], vec![b1]).unwrap();
        let with_pair = predict_rate_pairing(&c, &set, &pot, 0, eps);
        let alone = predict_rate_pairing(&c, &single, &pot, 0, eps);
        assert!((with_pair - alone).abs() <= 2.0 * c.c2bar * inter.eps);
    }

    #[test]
    fn center_prediction_vanishes_at_flat_anchor() {
        let c = constants(5);
        let pot = Potential::constant(5, 1.0);
        let set =
            ConcentrationSet::new(vec![1.0], vec![Bubble::new(vec![0.0; 5], 40.0).unwrap()])
                .unwrap();
        let v = predict_center_pairing(&c, &set, &pot, 0, 0.02);
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn center_prediction_parallel_to_separation() {
        let c = constants(4);
        let pot = Potential::constant(4, 1.0);
        let dir = [0.6, 0.8, 0.0, 0.0];
        let b1 = Bubble::new(vec![0.0; 4], 25.0).unwrap();
        let b2 = Bubble::new(dir.iter().map(|d| 0.4 * d).collect(), 25.0).unwrap();
        let set = ConcentrationSet::new(vec![1.0, 1.0], vec![b1, b2]).unwrap();
        let v = predict_center_pairing(&c, &set, &pot, 0, 0.02);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 0.0);
        let cosine: f64 = v.iter().zip(&dir).map(|(vi, di)| vi * di).sum::<f64>().abs() / norm;
        assert_relative_eq!(cosine, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn center_prediction_matches_closed_form_rederivation() {
        // replace the chain-rule interaction derivative by the closed form
        // (n-2) lambda_i lambda_j (a_j - a_i) eps^{n/(n-2)} / lambda_i
        let c = constants(5);
        let pot = Potential::quadratic(3.0, &[-1.0, 0.5, 0.5, 0.5, 0.5]);
        let b1 = Bubble::new(vec![0.1, 0.0, -0.05, 0.0, 0.0], 35.0).unwrap();
        let b2 = Bubble::new(vec![-0.2, 0.12, 0.0, 0.03, 0.0], 28.0).unwrap();
        let set = ConcentrationSet::new(vec![1.01, 0.99], vec![b1.clone(), b2.clone()]).unwrap();
        let eps = 0.03;
        let direct = predict_center_pairing(&c, &set, &pot, 0, eps);
        let n = 5usize;
        let p = critical_exponent(n);
        let damp = |l: f64| l.powf(-eps * half_decay(n));
        let c0d = c.c0.powf(-eps);
        let grad = pot.gradient(&b1.center);
        let coeff = c.c2_of_n
            * set.weights[0]
            * (1.0 / b1.rate.powi(3))
            * (2.0 * set.weights[0].powf(p - 1.0 - eps) * c0d * damp(b1.rate) - 1.0);
        let eij = interaction(&b1, &b2).eps;
        let bracket = 1.0
            - c0d * damp(b1.rate) * set.weights[0].powf(p - 1.0 - eps)
            - c0d * damp(b1.rate) * set.weights[1].powf(p - 1.0 - eps);
        let mut expected: Vec<f64> = grad.iter().map(|g| coeff * g).collect();
        for k in 0..n {
            let dk = (n as f64 - 2.0) * b2.rate * (b2.center[k] - b1.center[k])
                * eij.powf(n as f64 / (n as f64 - 2.0));
            expected[k] += c.c2bar * set.weights[1] * dk * bracket;
        }
        for (d, e) in direct.iter().zip(&expected) {
            assert_relative_eq!(d, e, max_relative = 1e-10);
        }
    }

    #[test]
    fn budget_shapes() {
        let mut prev = f64::INFINITY;
        for l in [2.0, 4.0, 8.0, 16.0, 64.0] {
            let v = t2(4, l);
            assert!(v < prev);
            prev = v;
        }
        for n in [4usize, 6] {
            let mut prev = 0.0;
            for k in 1..20 {
                let t = 0.35 * k as f64 / 20.0;
                let v = t3(n, t);
                assert!(v > prev, "n={n} t={t}");
                prev = v;
            }
        }
        let b1 = Bubble::new(vec![0.0; 4], 20.0).unwrap();
        let b2 = Bubble::new(vec![0.5, 0.0, 0.0, 0.0], 20.0).unwrap();
        let set = ConcentrationSet::new(vec![1.0, 1.0], vec![b1, b2]).unwrap();
        let with_v = RemainderBudget::assemble(&set, 0.01, 0, 0.1);
        let without = RemainderBudget::assemble(&set, 0.01, 0, 0.0);
        assert_relative_eq!(with_v.r_alpha - without.r_alpha, 0.01, epsilon = 1e-12);
        assert!(without.r_alpha > 0.0 && without.r_lambda > 0.0 && without.r_a > 0.0);
    }

    #[test]
    fn pair_integral_preconditions() {
        use crate::grid::{build_grid, GridSpec, MaskKind};
        let spec = GridSpec::with_nodes(vec![(-1.0, 1.0); 3], &[9, 9, 9], MaskKind::Box).unwrap();
        let grid = build_grid(&spec).unwrap();
        let op = EllipticOperator::new(&grid, &Potential::constant(3, 1.0)).unwrap();
        let b1 = Bubble::new(vec![0.3, 0.0, 0.0], 8.0).unwrap();
        let b2 = Bubble::new(vec![-0.3, 0.0, 0.0], 8.0).unwrap();
        // n = 3: exponents must sum to 6 and differ
        assert!(audit_pair_integral(&op, &b1, &b2, 3.0, 3.0).is_err());
        assert!(audit_pair_integral(&op, &b1, &b2, 4.0, 1.0).is_err());
        assert!(audit_pair_integral(&op, &b1, &b2, 5.0, 1.0).is_ok());
    }
}

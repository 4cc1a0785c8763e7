//! From a certified cluster configuration to predicted concentration
//! parameters: the change of variables, the leading-order balancing system
//! and its Newton solution, assembly of the approximate solution, and
//! multi-anchor predictions.

use crate::analytic::constants::PaperConstants;
use crate::analytic::{
    critical_exponent, eta_scale, half_decay, interaction, Bubble, ConcentrationSet,
};
use crate::cluster::{Certificate, HessianAnchor};
use crate::error::{Error, Result};
use crate::grid::operator::EllipticOperator;
use crate::grid::projection::{project_bubble, ProjectionOptions};
use crate::grid::{GridField, Potential};
use dual::Dual;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// The reduced unknowns of the balancing system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedVariables {
    /// beta_i = 1 - alpha_i^{p-1}
    pub beta: Vec<f64>,
    /// Relative deviation of 1/lambda_i^2 from the leading rate law.
    pub shift: Vec<f64>,
    /// Configuration deviation zeta_i in units of eta(eps) sigma.
    pub drift: Vec<Vec<f64>>,
}

impl ReducedVariables {
    pub fn zeros(count: usize, dim: usize) -> Self {
        Self {
            beta: vec![0.0; count],
            shift: vec![0.0; count],
            drift: vec![vec![0.0; dim]; count],
        }
    }

    fn from_flat(v: &DVector<f64>, count: usize, dim: usize) -> Self {
        let beta = v.as_slice()[..count].to_vec();
        let shift = v.as_slice()[count..2 * count].to_vec();
        let drift = (0..count)
            .map(|i| v.as_slice()[2 * count + i * dim..2 * count + (i + 1) * dim].to_vec())
            .collect();
        Self { beta, shift, drift }
    }

    fn flatten(&self) -> DVector<f64> {
        let count = self.beta.len();
        let dim = self.drift.first().map_or(0, |z| z.len());
        let mut v = DVector::zeros(2 * count + count * dim);
        for i in 0..count {
            v[i] = self.beta[i];
            v[count + i] = self.shift[i];
            for k in 0..dim {
                v[2 * count + i * dim + k] = self.drift[i][k];
            }
        }
        v
    }
}

/// Soft-window diagnostics for a predicted or balanced state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowReport {
    pub alpha_window: f64,
    pub max_alpha_dev: f64,
    pub alpha_ok: bool,
    /// Extremes of ln^{sigma_n}(lambda) / (lambda^2 eps) over the bubbles.
    pub rate_ratio_min: f64,
    pub rate_ratio_max: f64,
    pub rate_band: f64,
    pub rate_ok: bool,
    pub eta0: f64,
    pub max_center_dev: f64,
    pub center_ok: bool,
}

/// Predicted concentration data for one anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedSolution {
    pub eps: f64,
    pub anchor: Vec<f64>,
    pub zbar: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub rates: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub window: WindowReport,
}

impl PredictedSolution {
    pub fn concentration_set(&self) -> Result<ConcentrationSet> {
        let bubbles = self
            .centers
            .iter()
            .zip(&self.rates)
            .map(|(c, &r)| Bubble::new(c.clone(), r))
            .collect::<Result<Vec<_>>>()?;
        ConcentrationSet::new(self.alpha.clone(), bubbles)
    }
}

/// The fixed data of one balancing instance.
pub struct BalanceSystem<'a> {
    pub constants: &'a PaperConstants,
    pub potential: &'a Potential,
    pub anchor: &'a HessianAnchor,
    pub zbar: Vec<Vec<f64>>,
    pub eps: f64,
    eta: f64,
    sigma: f64,
    rate0: f64,
    v_at_anchor: f64,
}

#[derive(Debug, Clone)]
pub struct BalanceOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Two-sided band constant for the rate-law window.
    pub rate_band: f64,
    /// Center window radius; `None` picks a quarter of the smallest
    /// configured separation.
    pub eta0: Option<f64>,
    /// Multiplier on the eps ln^2(eps) weight window.
    pub alpha_window_factor: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 80,
            rate_band: 100.0,
            eta0: None,
            alpha_window_factor: 4.0,
        }
    }
}

/// Report of a balancing solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceReport {
    pub iterations: usize,
    pub residual_norm: f64,
    /// Smallest singular value of the Jacobian at the solution.
    pub jacobian_margin: f64,
    pub window: WindowReport,
}

impl<'a> BalanceSystem<'a> {
    pub fn new(
        constants: &'a PaperConstants,
        potential: &'a Potential,
        anchor: &'a HessianAnchor,
        cert: &Certificate,
        eps: f64,
    ) -> Result<Self> {
        if !cert.nondegenerate {
            return Err(Error::Degenerate {
                margin: cert.margin,
                threshold: f64::NAN,
            });
        }
        let n = constants.n;
        if anchor.dim() != n || cert.configuration.dim() != n {
            return Err(Error::InvalidInput("dimension mismatch".into()));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidInput(format!("eps must lie in (0,1), got {eps}")));
        }
        let v_at_anchor = potential.value(&anchor.point);
        let eta = eta_scale(n, eps)?;
        let sigma = constants.sigma(v_at_anchor)?;
        let rate0 = constants.leading_rate(v_at_anchor, eps)?;
        Ok(Self {
            constants,
            potential,
            anchor,
            zbar: cert.configuration.points.clone(),
            eps,
            eta,
            sigma,
            rate0,
            v_at_anchor,
        })
    }

    pub fn count(&self) -> usize {
        self.zbar.len()
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn leading_rate(&self) -> f64 {
        self.rate0
    }

    pub fn potential_at_anchor(&self) -> f64 {
        self.v_at_anchor
    }

    /// The change of variables: weights from beta, rates from the shifted
    /// law, centers from the scaled drift around the configuration.
    pub fn realize(&self, rv: &ReducedVariables) -> Result<PredictedSolution> {
        let n = self.dim();
        let p = critical_exponent(n);
        let count = self.count();
        let mut alpha = Vec::with_capacity(count);
        let mut rates = Vec::with_capacity(count);
        let mut centers = Vec::with_capacity(count);
        for i in 0..count {
            if rv.beta[i] >= 1.0 {
                return Err(Error::Admissibility(format!(
                    "beta_{i} = {} leaves the weight window",
                    rv.beta[i]
                )));
            }
            if rv.shift[i] <= -1.0 {
                return Err(Error::Admissibility(format!(
                    "rate shift_{i} = {} leaves the rate window",
                    rv.shift[i]
                )));
            }
            alpha.push((1.0 - rv.beta[i]).powf(1.0 / (p - 1.0)));
            rates.push(self.rate0 * (1.0 + rv.shift[i]).powf(-0.5));
            let c: Vec<f64> = (0..n)
                .map(|k| {
                    self.anchor.point[k] + self.eta * self.sigma * (rv.drift[i][k] + self.zbar[i][k])
                })
                .collect();
            centers.push(c);
        }
        let window = self.window_report(&alpha, &rates, rv, &BalanceOptions::default());
        Ok(PredictedSolution {
            eps: self.eps,
            anchor: self.anchor.point.clone(),
            zbar: self.zbar.clone(),
            alpha,
            rates,
            centers,
            window,
        })
    }

    fn window_report(
        &self,
        alpha: &[f64],
        rates: &[f64],
        rv: &ReducedVariables,
        opts: &BalanceOptions,
    ) -> WindowReport {
        let n = self.dim();
        let eps = self.eps;
        let alpha_window = opts.alpha_window_factor * eps * eps.ln() * eps.ln();
        let max_alpha_dev = alpha.iter().fold(0.0f64, |m, a| m.max((a - 1.0).abs()));
        let log_pow = |l: f64| if n == 4 { l.ln() } else { 1.0 };
        let ratios: Vec<f64> = rates
            .iter()
            .map(|&l| log_pow(l) / (l * l * eps))
            .collect();
        let rate_ratio_min = ratios.iter().fold(f64::INFINITY, |m, &r| m.min(r));
        let rate_ratio_max = ratios.iter().fold(0.0f64, |m, &r| m.max(r));
        let eta0 = opts.eta0.unwrap_or_else(|| {
            let mut min_sep = f64::INFINITY;
            for i in 0..self.count() {
                for j in (i + 1)..self.count() {
                    let d: f64 = self.zbar[i]
                        .iter()
                        .zip(&self.zbar[j])
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt();
                    min_sep = min_sep.min(d);
                }
            }
            0.25 * min_sep
        });
        let max_center_dev = rv
            .drift
            .iter()
            .map(|z| self.sigma * z.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        WindowReport {
            alpha_window,
            max_alpha_dev,
            alpha_ok: max_alpha_dev <= alpha_window,
            rate_ratio_min,
            rate_ratio_max,
            rate_band: opts.rate_band,
            rate_ok: ratios
                .iter()
                .all(|&r| r > 1.0 / opts.rate_band && r < opts.rate_band),
            eta0,
            max_center_dev,
            center_ok: max_center_dev <= eta0,
        }
    }

    /// Inverse of the change of variables: reduced coordinates of explicit
    /// parameters (weights, rates, centers).
    pub fn reduce(&self, alpha: &[f64], rates: &[f64], centers: &[Vec<f64>]) -> ReducedVariables {
        let p = critical_exponent(self.dim());
        let beta = alpha.iter().map(|a| 1.0 - a.powf(p - 1.0)).collect();
        let shift = rates
            .iter()
            .map(|l| (self.rate0 / l) * (self.rate0 / l) - 1.0)
            .collect();
        let drift = centers
            .iter()
            .zip(&self.zbar)
            .map(|(c, z)| {
                c.iter()
                    .zip(&self.anchor.point)
                    .zip(z)
                    .map(|((ci, bi), zi)| (ci - bi) / (self.eta * self.sigma) - zi)
                    .collect()
            })
            .collect();
        ReducedVariables { beta, shift, drift }
    }

    fn dual_weight(&self, beta: f64, seed: f64) -> Dual {
        let p = critical_exponent(self.dim());
        Dual::new(1.0 - beta, -seed).powf(1.0 / (p - 1.0))
    }

    fn dual_rate(&self, shift: f64, seed: f64) -> Dual {
        Dual::new(1.0 + shift, seed).powf(-0.5) * self.rate0
    }

    /// Weight equation: the bracket 1 - alpha^{p-1-eps} lambda^{-eps(n-2)/2}.
    fn weight_equation(&self, alpha: Dual, rate: Dual) -> Dual {
        let p = critical_exponent(self.dim());
        let nu = half_decay(self.dim());
        -(alpha.powf(p - 1.0 - self.eps) * rate.powf(-self.eps * nu)) + 1.0
    }

    /// Rate equation: the leading terms of the rate pairing divided by eps.
    #[allow(clippy::too_many_arguments)]
    fn rate_equation(
        &self,
        i: usize,
        alpha: &[Dual],
        rate: &[Dual],
        centers: &[Vec<Dual>],
        v_at: Dual,
    ) -> Dual {
        let n = self.dim();
        let nf = n as f64;
        let p = critical_exponent(n);
        let nu = half_decay(n);
        let eps = self.eps;
        let c = self.constants;
        let c0_damp = c.c0.powf(-eps);
        let damp_i = rate[i].powf(-eps * nu);
        let mut total = c0_damp * c.c2 * eps * alpha[i].powf(p - eps) * damp_i;
        // potential term with ln^{sigma_n}(lambda)/lambda^2
        let log_pow = if n == 4 {
            rate[i].ln()
        } else {
            Dual::constant(1.0)
        };
        let bracket_v = alpha[i].powf(p - 1.0 - eps) * damp_i * (2.0 * c0_damp) - 1.0;
        total = total
            - alpha[i] * v_at * bracket_v * log_pow * rate[i].powf(-2.0) * c.c_of_n;
        // interaction terms
        for j in 0..self.count() {
            if j == i {
                continue;
            }
            let mut d2 = Dual::constant(0.0);
            for k in 0..n {
                let diff = centers[i][k] - centers[j][k];
                d2 = d2 + diff * diff;
            }
            let ratio_ij = rate[i] / rate[j];
            let ratio_ji = rate[j] / rate[i];
            let prod = rate[i] * rate[j] * d2;
            let g = ratio_ij + ratio_ji + prod;
            let u = ratio_ij - ratio_ji + prod;
            // lambda_i d eps_ij / d lambda_i = -nu g^{-n/2} u
            let w = g.powf(-nf / 2.0) * u * (-nu);
            let damp_j = rate[j].powf(-eps * nu);
            let bracket = -(alpha[i].powf(p - 1.0 - eps) * damp_i)
                - (alpha[j].powf(p - 1.0 - eps) * damp_j)
                + 1.0;
            total = total + alpha[j] * w * bracket * c.c2bar;
        }
        total * (1.0 / eps)
    }

    /// Residual of the leading-order balancing system, stacked as
    /// [weight block, rate block, center block].
    pub fn residual(&self, rv: &ReducedVariables) -> Result<DVector<f64>> {
        self.residual_with_seed(rv, None)
            .map(|(r, _)| r)
    }

    /// Evaluates the residual and, if a seed direction is given, its exact
    /// directional derivative.
    fn residual_with_seed(
        &self,
        rv: &ReducedVariables,
        seed: Option<&DVector<f64>>,
    ) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
        let n = self.dim();
        let count = self.count();
        let size = 2 * count + count * n;
        let zero_seed = DVector::zeros(size);
        let s = seed.unwrap_or(&zero_seed);
        for i in 0..count {
            if rv.beta[i] >= 1.0 || rv.shift[i] <= -1.0 {
                return Err(Error::Admissibility(format!(
                    "state left the parameter windows (beta_{i} = {}, shift_{i} = {})",
                    rv.beta[i], rv.shift[i]
                )));
            }
        }
        let alpha: Vec<Dual> = (0..count)
            .map(|i| self.dual_weight(rv.beta[i], s[i]))
            .collect();
        let rate: Vec<Dual> = (0..count)
            .map(|i| self.dual_rate(rv.shift[i], s[count + i]))
            .collect();
        let centers: Vec<Vec<Dual>> = (0..count)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        Dual::new(
                            self.anchor.point[k]
                                + self.eta * self.sigma * (rv.drift[i][k] + self.zbar[i][k]),
                            self.eta * self.sigma * s[2 * count + i * n + k],
                        )
                    })
                    .collect()
            })
            .collect();
        let mut res = DVector::zeros(size);
        let mut der = DVector::zeros(size);
        for i in 0..count {
            let w = self.weight_equation(alpha[i], rate[i]);
            res[i] = w.value();
            der[i] = w.deriv();
            let center_vals: Vec<f64> = centers[i].iter().map(|c| c.value()).collect();
            let v_val = self.potential.value(&center_vals);
            let v_grad = self.potential.gradient(&center_vals);
            let v_dot: f64 = v_grad
                .iter()
                .zip(&centers[i])
                .map(|(g, c)| g * c.deriv())
                .sum();
            let r = self.rate_equation(i, &alpha, &rate, &centers, Dual::new(v_val, v_dot));
            res[count + i] = r.value();
            der[count + i] = r.deriv();
        }
        // center block: linear in (shift, drift) with constant coefficients
        let nf = n as f64;
        for i in 0..count {
            let row0 = 2 * count + i * n;
            // Hessian term
            for a in 0..n {
                let mut acc = 0.0;
                let mut dacc = 0.0;
                for b in 0..n {
                    acc += self.anchor.hessian[(a, b)] * rv.drift[i][b];
                    dacc += self.anchor.hessian[(a, b)] * s[2 * count + i * n + b];
                }
                res[row0 + a] += acc;
                der[row0 + a] += dacc;
            }
            for j in 0..count {
                if j == i {
                    continue;
                }
                let w: Vec<f64> = self.zbar[j]
                    .iter()
                    .zip(&self.zbar[i])
                    .map(|(zj, zi)| zj - zi)
                    .collect();
                let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                let inv_n = wn.powf(-nf);
                let inv_n2 = wn.powf(-nf - 2.0);
                let dz: Vec<f64> = (0..n)
                    .map(|k| rv.drift[j][k] - rv.drift[i][k])
                    .collect();
                let sz: Vec<f64> = (0..n)
                    .map(|k| s[2 * count + j * n + k] - s[2 * count + i * n + k])
                    .collect();
                let dot: f64 = w.iter().zip(&dz).map(|(a, b)| a * b).sum();
                let sdot: f64 = w.iter().zip(&sz).map(|(a, b)| a * b).sum();
                let coupling = (nf - 6.0) / 4.0 * rv.shift[i] + (nf - 2.0) / 4.0 * rv.shift[j];
                let scoupling =
                    (nf - 6.0) / 4.0 * s[count + i] + (nf - 2.0) / 4.0 * s[count + j];
                for a in 0..n {
                    res[row0 + a] += -(nf - 2.0) * dz[a] * inv_n
                        + nf * (nf - 2.0) * dot * w[a] * inv_n2
                        - (nf - 2.0) * w[a] * inv_n * coupling;
                    der[row0 + a] += -(nf - 2.0) * sz[a] * inv_n
                        + nf * (nf - 2.0) * sdot * w[a] * inv_n2
                        - (nf - 2.0) * w[a] * inv_n * scoupling;
                }
            }
        }
        Ok((res, seed.map(|_| der)))
    }

    /// Exact Jacobian of the residual, column by column via dual seeding.
    pub fn jacobian(&self, rv: &ReducedVariables) -> Result<DMatrix<f64>> {
        let size = 2 * self.count() + self.count() * self.dim();
        let mut jac = DMatrix::zeros(size, size);
        for col in 0..size {
            let mut seed = DVector::zeros(size);
            seed[col] = 1.0;
            let (_, der) = self.residual_with_seed(rv, Some(&seed))?;
            jac.set_column(col, &der.unwrap());
        }
        Ok(jac)
    }
}

/// Predicted parameters at shift zero: unit weights, the leading rate law,
/// and centers placed on the scaled configuration.
pub fn predicted_parameters(
    constants: &PaperConstants,
    potential: &Potential,
    anchor: &HessianAnchor,
    cert: &Certificate,
    eps: f64,
    mu: f64,
) -> Result<PredictedSolution> {
    let sys = BalanceSystem::new(constants, potential, anchor, cert, eps)?;
    let rv = ReducedVariables::zeros(sys.count(), sys.dim());
    let pred = sys.realize(&rv)?;
    check_admissible(&pred, eps, mu)?;
    Ok(pred)
}

fn check_admissible(pred: &PredictedSolution, eps: f64, mu: f64) -> Result<()> {
    let set = pred.concentration_set()?;
    let report = set.admissibility(eps, mu, 0.0, |_| f64::INFINITY);
    if !report.ok {
        return Err(Error::Admissibility(report.violations.join("; ")));
    }
    Ok(())
}

/// Newton iteration on the leading-order balancing system from the zero
/// initial guess.
pub fn solve_balancing(
    sys: &BalanceSystem,
    opts: &BalanceOptions,
) -> Result<(ReducedVariables, BalanceReport)> {
    let count = sys.count();
    let dim = sys.dim();
    let mut rv = ReducedVariables::zeros(count, dim);
    let mut res = sys.residual(&rv)?;
    let mut norm = res.norm();
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        if norm <= opts.tol {
            break;
        }
        iterations += 1;
        let jac = sys.jacobian(&rv)?;
        let step = jac
            .clone()
            .lu()
            .solve(&(-&res))
            .ok_or_else(|| Error::NonConvergence("singular balancing Jacobian".into()))?;
        let x = rv.flatten();
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-12 {
            let trial = ReducedVariables::from_flat(&(&x + t * &step), count, dim);
            match sys.residual(&trial) {
                Ok(tres) => {
                    let tnorm = tres.norm();
                    if tnorm < norm * (1.0 - 1e-4 * t) || tnorm < opts.tol {
                        rv = trial;
                        res = tres;
                        norm = tnorm;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(format!(
                "balancing line search stalled at residual {norm:.3e}"
            )));
        }
    }
    if norm > opts.tol {
        return Err(Error::NonConvergence(format!(
            "balancing system not solved after {} iterations (residual {norm:.3e})",
            opts.max_iter
        )));
    }
    let jac = sys.jacobian(&rv)?;
    let margin = jac
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, &s| m.min(s));
    let pred = sys.realize(&rv)?;
    let report = BalanceReport {
        iterations,
        residual_norm: norm,
        jacobian_margin: margin,
        window: pred.window,
    };
    Ok((rv, report))
}

/// Balanced prediction: solves the system and realizes the parameters.
pub fn balanced_parameters(
    constants: &PaperConstants,
    potential: &Potential,
    anchor: &HessianAnchor,
    cert: &Certificate,
    eps: f64,
    opts: &BalanceOptions,
) -> Result<(PredictedSolution, BalanceReport)> {
    let sys = BalanceSystem::new(constants, potential, anchor, cert, eps)?;
    let (rv, report) = solve_balancing(&sys, opts)?;
    Ok((sys.realize(&rv)?, report))
}

/// Sum of weighted projected bubbles on the grid.
pub fn assemble_approx_solution(
    op: &EllipticOperator,
    pred: &PredictedSolution,
    opts: &ProjectionOptions,
) -> Result<GridField> {
    let mut u = GridField::zeros(op.grid);
    for (alpha, center) in pred.alpha.iter().zip(&pred.centers) {
        let idx = pred.centers.iter().position(|c| std::ptr::eq(c, center)).unwrap();
        let bubble = Bubble::new(center.clone(), pred.rates[idx])?;
        let proj = project_bubble(op, &bubble, opts)?;
        u.axpy(*alpha, &proj.pi_delta);
    }
    Ok(u)
}

/// Cross-block interaction diagnostics for multi-anchor predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossBlockReport {
    /// (block_i, bubble_i, block_j, bubble_j, eps_ij) over all cross pairs.
    pub pairs: Vec<(usize, usize, usize, usize, f64)>,
    pub max_cross_eps: f64,
    /// The within-block rate-equation scale (eps itself).
    pub within_scale: f64,
    pub negligible: bool,
}

/// Per-anchor predictions with the cross-block interaction check.
pub fn multi_block_predict(
    constants: &PaperConstants,
    potential: &Potential,
    blocks: &[(&HessianAnchor, &Certificate)],
    eps: f64,
    mu: f64,
) -> Result<(Vec<PredictedSolution>, CrossBlockReport)> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("need at least one anchor block".into()));
    }
    for (i, (ai, _)) in blocks.iter().enumerate() {
        for (aj, _) in blocks.iter().skip(i + 1) {
            let d: f64 = ai
                .point
                .iter()
                .zip(&aj.point)
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            if d == 0.0 {
                return Err(Error::InvalidInput("coincident anchors".into()));
            }
        }
    }
    let preds: Vec<PredictedSolution> = blocks
        .iter()
        .map(|(anchor, cert)| predicted_parameters(constants, potential, anchor, cert, eps, mu))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    let mut max_cross: f64 = 0.0;
    for bi in 0..preds.len() {
        for bj in (bi + 1)..preds.len() {
            let set_i = preds[bi].concentration_set()?;
            let set_j = preds[bj].concentration_set()?;
            for (ii, bub_i) in set_i.bubbles.iter().enumerate() {
                for (jj, bub_j) in set_j.bubbles.iter().enumerate() {
                    let e = interaction(bub_i, bub_j).eps;
                    max_cross = max_cross.max(e);
                    pairs.push((bi, ii, bj, jj, e));
                }
            }
        }
    }
    let report = CrossBlockReport {
        pairs,
        max_cross_eps: max_cross,
        within_scale: eps,
        negligible: max_cross < eps,
    };
    Ok((preds, report))
}

mod dual {
    //! Minimal forward-mode scalar for exact directional derivatives.

    use std::ops::{Add, Div, Mul, Neg, Sub};

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Dual {
        v: f64,
        d: f64,
    }

    impl Dual {
        pub fn new(v: f64, d: f64) -> Self {
            Self { v, d }
        }

        pub fn constant(v: f64) -> Self {
            Self { v, d: 0.0 }
        }

        pub fn value(self) -> f64 {
            self.v
        }

        pub fn deriv(self) -> f64 {
            self.d
        }

        pub fn powf(self, p: f64) -> Self {
            Self {
                v: self.v.powf(p),
                d: p * self.v.powf(p - 1.0) * self.d,
            }
        }

        pub fn ln(self) -> Self {
            Self {
                v: self.v.ln(),
                d: self.d / self.v,
            }
        }
    }

    impl Add for Dual {
        type Output = Dual;
        fn add(self, o: Dual) -> Dual {
            Dual::new(self.v + o.v, self.d + o.d)
        }
    }

    impl Add<f64> for Dual {
        type Output = Dual;
        fn add(self, o: f64) -> Dual {
            Dual::new(self.v + o, self.d)
        }
    }

    impl Sub for Dual {
        type Output = Dual;
        fn sub(self, o: Dual) -> Dual {
            Dual::new(self.v - o.v, self.d - o.d)
        }
    }

    impl Sub<f64> for Dual {
        type Output = Dual;
        fn sub(self, o: f64) -> Dual {
            Dual::new(self.v - o, self.d)
        }
    }

    impl Mul for Dual {
        type Output = Dual;
        fn mul(self, o: Dual) -> Dual {
            Dual::new(self.v * o.v, self.v * o.d + self.d * o.v)
        }
    }

    impl Mul<f64> for Dual {
        type Output = Dual;
        fn mul(self, o: f64) -> Dual {
            Dual::new(self.v * o, self.d * o)
        }
    }

    impl Mul<Dual> for f64 {
        type Output = Dual;
        fn mul(self, o: Dual) -> Dual {
            Dual::new(self * o.v, self * o.d)
        }
    }

    impl Div for Dual {
        type Output = Dual;
        fn div(self, o: Dual) -> Dual {
            Dual::new(self.v / o.v, (self.d * o.v - self.v * o.d) / (o.v * o.v))
        }
    }

    impl Neg for Dual {
        type Output = Dual;
        fn neg(self) -> Dual {
            Dual::new(-self.v, -self.d)
        }
    }
}

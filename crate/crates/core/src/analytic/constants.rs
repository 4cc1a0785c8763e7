//! Dimension-dependent constants entering the balancing laws, computed by
//! high-accuracy radial quadrature and cross-checked with a second scheme.

use super::quadrature::{radial_improper, sphere_measure, Substitution};
use super::{bubble_c0, gamma_exponent, half_decay, log_correction_order};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Settings for the constant computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureSettings {
    /// Absolute tolerance per radial integral.
    pub tol: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self { tol: 1e-11 }
    }
}

/// Per-constant quadrature error estimates plus the disagreement between the
/// two independent schemes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConstantErrors {
    pub s_n: f64,
    pub c2: f64,
    pub c2bar: f64,
    pub c_of_n: f64,
    pub c2_of_n: f64,
}

/// The scalars governing the concentration laws in dimension n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaperConstants {
    pub n: usize,
    /// [n(n-2)]^{(n-2)/4}
    pub c0: f64,
    /// Full-space integral of the 2n/(n-2) power of the unit bubble.
    pub s_n: f64,
    /// Coefficient of the eps term in the rate balance.
    pub c2: f64,
    /// Coefficient of the interaction terms.
    pub c2bar: f64,
    /// Coefficient of the ln^{sigma_n}(lambda)/lambda^2 potential term.
    pub c_of_n: f64,
    /// Coefficient of the gradient term in the center balance.
    pub c2_of_n: f64,
    /// 1 for n = 4, else 0.
    pub sigma_n: u32,
    /// (n-4)/(2n)
    pub gamma: f64,
    /// Scheme disagreement and per-integral error estimates.
    pub errors: ConstantErrors,
}

fn both_schemes<F>(f: F, n: usize, tol: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64 + Copy,
{
    let (a, ea) = radial_improper(f, n, tol, Substitution::Rational)?;
    let (b, eb) = radial_improper(f, n, tol, Substitution::Tangent)?;
    let spread = (a - b).abs();
    Ok((a, spread.max(ea).max(eb)))
}

/// Computes all constants for 4 <= n <= 6. The n >= 5 integral formulas for
/// c(n) and c2(n) diverge at n = 4, where the closed surface-measure forms
/// are used instead.
pub fn compute_constants(n: usize, settings: &QuadratureSettings) -> Result<PaperConstants> {
    if !(4..=6).contains(&n) {
        return Err(Error::InvalidInput(format!(
            "constants are defined for 4 <= n <= 6 (theorem scope), got {n}"
        )));
    }
    let tol = settings.tol;
    let nf = n as f64;
    let nu = half_decay(n);
    let c0 = bubble_c0(n);
    let omega = sphere_measure(n);
    // c0^{2n/(n-2)} = [n(n-2)]^{n/2}
    let c0_crit = (nf * (nf - 2.0)).powf(nf / 2.0);

    let (sn_rad, sn_err) = both_schemes(move |r| (1.0 + r * r).powf(-nf), n, tol)?;
    let s_n = c0_crit * omega * sn_rad;

    let (c2_rad, c2_err) = both_schemes(
        move |r| {
            let q = 1.0 + r * r;
            (r * r - 1.0) * q.powf(-(nf + 1.0)) * q.ln()
        },
        n,
        tol,
    )?;
    let c2 = nu * nu * c0_crit * omega * c2_rad;

    let (c2bar_rad, c2bar_err) =
        both_schemes(move |r| (1.0 + r * r).powf(-(nf + 2.0) / 2.0), n, tol)?;
    let c2bar = c0_crit * omega * c2bar_rad;

    let (c_of_n, c_err, c2_of_n, c2n_err) = if n == 4 {
        let s3 = sphere_measure(4);
        (c0 * c0 * s3, 0.0, 0.5 * c0 * c0 * s3, 0.0)
    } else {
        let (c_rad, c_err) = both_schemes(
            move |r| (r * r - 1.0) * (1.0 + r * r).powf(1.0 - nf),
            n,
            tol,
        )?;
        let (c2n_rad, c2n_err) =
            both_schemes(move |r| r * r * (1.0 + r * r).powf(1.0 - nf), n, tol)?;
        (
            nu * c0 * c0 * omega * c_rad,
            nu * c0 * c0 * omega * c_err,
            (nf - 2.0) / nf * c0 * c0 * omega * c2n_rad,
            (nf - 2.0) / nf * c0 * c0 * omega * c2n_err,
        )
    };

    let constants = PaperConstants {
        n,
        c0,
        s_n,
        c2,
        c2bar,
        c_of_n,
        c2_of_n,
        sigma_n: log_correction_order(n),
        gamma: gamma_exponent(n),
        errors: ConstantErrors {
            s_n: c0_crit * omega * sn_err,
            c2: nu * nu * c0_crit * omega * c2_err,
            c2bar: c0_crit * omega * c2bar_err,
            c_of_n: c_err,
            c2_of_n: c2n_err,
        },
    };
    for (name, v) in [
        ("S_n", constants.s_n),
        ("c2", constants.c2),
        ("c2bar", constants.c2bar),
        ("c(n)", constants.c_of_n),
        ("c2(n)", constants.c2_of_n),
    ] {
        if !(v > 0.0) {
            return Err(Error::NonConvergence(format!(
                "constant {name} came out non-positive: {v}"
            )));
        }
    }
    Ok(constants)
}

impl PaperConstants {
    /// Cluster-shrink scale eta(eps).
    pub fn eta(&self, eps: f64) -> Result<f64> {
        super::eta_scale(self.n, eps)
    }

    /// Geometry factor sigma = (c2bar/c2(n))^{1/n} (c2/(c(n) V(b)))^gamma.
    pub fn sigma(&self, v_at_b: f64) -> Result<f64> {
        if !(v_at_b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "potential value at the anchor must be positive, got {v_at_b}"
            )));
        }
        Ok((self.c2bar / self.c2_of_n).powf(1.0 / self.n as f64)
            * (self.c2 / (self.c_of_n * v_at_b)).powf(self.gamma))
    }

    /// Leading concentration rate of the change of variables at shift zero:
    /// 1/lambda^2 = (c2 / (c(n) V(b))) eps (|ln eps|/2)^{-sigma_n}.
    pub fn leading_rate(&self, v_at_b: f64, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidInput(format!(
                "eps must lie in (0,1), got {eps}"
            )));
        }
        if !(v_at_b > 0.0) {
            return Err(Error::InvalidInput(
                "potential value at the anchor must be positive".into(),
            ));
        }
        let log_factor = if self.sigma_n == 1 {
            (-eps.ln()) / 2.0
        } else {
            1.0
        };
        Ok((self.c_of_n * v_at_b * log_factor / (self.c2 * eps)).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::ln_gamma;
    use std::f64::consts::PI;

    fn beta(a: f64, b: f64) -> f64 {
        (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
    }

    // Closed forms from int_0^inf r^{a-1}(1+r^2)^{-b} dr = B(a/2, b-a/2)/2
    // and its derivative in b for the logarithmic weight.
    fn oracle(n: usize) -> (f64, f64, f64, Option<f64>, Option<f64>) {
        let nf = n as f64;
        let nu = (nf - 2.0) / 2.0;
        let c0c = (nf * (nf - 2.0)).powf(nf / 2.0);
        let c0sq = (nf * (nf - 2.0)).powf(nu);
        let omega = 2.0 * PI.powf(nf / 2.0) / (ln_gamma(nf / 2.0)).exp();
        let s_n = c0c * omega * 0.5 * beta(nf / 2.0, nf / 2.0);
        // the digamma difference psi((n+2)/2) - psi(n/2) collapses to 2/n
        let c2 = nu * nu * c0c * omega * beta(nf / 2.0, (nf + 2.0) / 2.0) / nf;
        let c2bar = c0c * omega * 0.5 * beta(nf / 2.0, 1.0);
        if n == 4 {
            (s_n, c2, c2bar, None, None)
        } else {
            let c_rad = 0.5 * (beta((nf + 2.0) / 2.0, (nf - 4.0) / 2.0) - beta(nf / 2.0, (nf - 2.0) / 2.0));
            let c2n_rad = 0.5 * beta((nf + 2.0) / 2.0, (nf - 4.0) / 2.0);
            (
                s_n,
                c2,
                c2bar,
                Some(nu * c0sq * omega * c_rad),
                Some((nf - 2.0) / nf * c0sq * omega * c2n_rad),
            )
        }
    }

    #[test]
    fn matches_beta_closed_forms() {
        let settings = QuadratureSettings::default();
        for n in 4..=6 {
            let c = compute_constants(n, &settings).unwrap();
            let (s_n, c2, c2bar, c_of_n, c2_of_n) = oracle(n);
            assert_relative_eq!(c.s_n, s_n, max_relative = 1e-9);
            assert_relative_eq!(c.c2, c2, max_relative = 1e-9);
            assert_relative_eq!(c.c2bar, c2bar, max_relative = 1e-9);
            if let Some(v) = c_of_n {
                assert_relative_eq!(c.c_of_n, v, max_relative = 1e-9);
            }
            if let Some(v) = c2_of_n {
                assert_relative_eq!(c.c2_of_n, v, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn dimension_four_closed_forms() {
        let c = compute_constants(4, &QuadratureSettings::default()).unwrap();
        assert_relative_eq!(c.s_n, 32.0 * PI * PI / 3.0, epsilon = 1e-8);
        assert_relative_eq!(c.c2bar, 32.0 * PI * PI, epsilon = 1e-7);
        assert_relative_eq!(c.c_of_n, 16.0 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(c.c2_of_n, 8.0 * PI * PI, epsilon = 1e-12);
        assert_relative_eq!(c.c0, 8.0_f64.sqrt(), epsilon = 1e-14);
        assert_eq!(c.sigma_n, 1);
        assert_eq!(c.gamma, 0.0);
    }

    #[test]
    fn rejects_out_of_scope_dimensions() {
        assert!(compute_constants(3, &QuadratureSettings::default()).is_err());
        assert!(compute_constants(7, &QuadratureSettings::default()).is_err());
    }

    #[test]
    fn rate_law_and_sigma() {
        let c = compute_constants(5, &QuadratureSettings::default()).unwrap();
        let v_b = 2.0;
        let l = c.leading_rate(v_b, 1e-4).unwrap();
        // n >= 5: eps lambda^2 = c(n) V(b) / c2 exactly.
        assert_relative_eq!(1e-4 * l * l, c.c_of_n * v_b / c.c2, max_relative = 1e-12);
        assert!(c.sigma(v_b).unwrap() > 0.0);
        // quartering eps doubles the rate
        let l2 = c.leading_rate(v_b, 2.5e-5).unwrap();
        assert_relative_eq!(l2, 2.0 * l, max_relative = 1e-12);
    }
}

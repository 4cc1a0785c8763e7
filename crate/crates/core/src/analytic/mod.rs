//! Closed-form bubble profiles, pairwise interaction quantities, and the
//! dimension-dependent scaling laws used throughout the toolkit.

pub mod constants;
pub mod quadrature;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Critical exponent p = (n+2)/(n-2).
pub fn critical_exponent(n: usize) -> f64 {
    (n as f64 + 2.0) / (n as f64 - 2.0)
}

/// Profile normalization c0 = [n(n-2)]^{(n-2)/4}.
pub fn bubble_c0(n: usize) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0)
}

/// Exponent nu = (n-2)/2 governing the profile decay.
pub fn half_decay(n: usize) -> f64 {
    (n as f64 - 2.0) / 2.0
}

fn check_dimension(n: usize) -> Result<()> {
    if !(3..=6).contains(&n) {
        return Err(Error::InvalidInput(format!(
            "dimension {n} unsupported (analytics cover 3 <= n <= 6)"
        )));
    }
    Ok(())
}

/// One bubble: a center in the domain and a concentration rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub center: Vec<f64>,
    pub rate: f64,
}

/// Value and scaled first derivatives of a bubble at one point.
#[derive(Debug, Clone)]
pub struct BubbleDerivatives {
    pub value: f64,
    /// lambda * d/d lambda
    pub rate: f64,
    /// lambda^{-1} * d/d a_j, one entry per coordinate
    pub center: Vec<f64>,
}

impl Bubble {
    pub fn new(center: Vec<f64>, rate: f64) -> Result<Self> {
        check_dimension(center.len())?;
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "concentration rate must be positive and finite, got {rate}"
            )));
        }
        Ok(Self { center, rate })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn radius2(&self, x: &[f64]) -> f64 {
        self.center
            .iter()
            .zip(x)
            .map(|(a, xi)| (xi - a) * (xi - a))
            .sum()
    }

    /// Profile value c0 lambda^nu (1 + lambda^2 |x-a|^2)^{-nu}.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let nu = half_decay(n);
        let q = 1.0 + self.rate * self.rate * self.radius2(x);
        bubble_c0(n) * self.rate.powf(nu) * q.powf(-nu)
    }

    /// Value together with lambda d/d lambda and lambda^{-1} d/d a.
    pub fn derivatives(&self, x: &[f64]) -> BubbleDerivatives {
        let n = self.dim();
        let nu = half_decay(n);
        let l2r2 = self.rate * self.rate * self.radius2(x);
        let q = 1.0 + l2r2;
        let value = bubble_c0(n) * self.rate.powf(nu) * q.powf(-nu);
        let rate = nu * value * (1.0 - l2r2) / q;
        let center = self
            .center
            .iter()
            .zip(x)
            .map(|(a, xi)| 2.0 * nu * self.rate * (xi - a) * value / q)
            .collect();
        BubbleDerivatives {
            value,
            rate,
            center,
        }
    }
}

/// Mutual influence of two bubbles and its scaled derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interaction {
    pub eps: f64,
    /// lambda_i d eps / d lambda_i
    pub d_rate_i: f64,
    /// lambda_j d eps / d lambda_j
    pub d_rate_j: f64,
    /// lambda_i^{-1} d eps / d a_i, one entry per coordinate
    pub d_center_i: Vec<f64>,
}

/// Interaction quantity (l_i/l_j + l_j/l_i + l_i l_j |a_i-a_j|^2)^{(2-n)/2}
/// with its scaled derivatives.
pub fn interaction(bi: &Bubble, bj: &Bubble) -> Interaction {
    let n = bi.dim();
    debug_assert_eq!(n, bj.dim());
    let nu = half_decay(n);
    let (li, lj) = (bi.rate, bj.rate);
    let d2: f64 = bi
        .center
        .iter()
        .zip(&bj.center)
        .map(|(p, q)| (p - q) * (p - q))
        .sum();
    let g = li / lj + lj / li + li * lj * d2;
    let eps = g.powf(-nu);
    // g^{-n/2} = eps^{n/(n-2)}
    let gpow = g.powf(-(n as f64) / 2.0);
    let u_i = li / lj - lj / li + li * lj * d2;
    let u_j = lj / li - li / lj + li * lj * d2;
    let d_center_i = bi
        .center
        .iter()
        .zip(&bj.center)
        .map(|(p, q)| (n as f64 - 2.0) * lj * gpow * (q - p))
        .collect();
    Interaction {
        eps,
        d_rate_i: -nu * gpow * u_i,
        d_rate_j: -nu * gpow * u_j,
        d_center_i,
    }
}

/// Exponent gamma = (n-4)/(2n) of the cluster-shrink rate.
pub fn gamma_exponent(n: usize) -> f64 {
    (n as f64 - 4.0) / (2.0 * n as f64)
}

/// 1 for n = 4 (logarithmic corrections active), 0 otherwise.
pub fn log_correction_order(n: usize) -> u32 {
    u32::from(n == 4)
}

/// Cluster-shrink scale: eps^gamma for n >= 5, |ln eps|^{-1/4} for n = 4.
pub fn eta_scale(n: usize, eps: f64) -> Result<f64> {
    check_dimension(n)?;
    if n < 4 {
        return Err(Error::InvalidInput(
            "eta scale is defined for n >= 4 (theorem scope)".into(),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eps must lie in (0,1), got {eps}"
        )));
    }
    Ok(if n == 4 {
        (-eps.ln()).powf(-0.25)
    } else {
        eps.powf(gamma_exponent(n))
    })
}

/// A weighted family (alpha_i, a_i, lambda_i) of bubbles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationSet {
    pub weights: Vec<f64>,
    pub bubbles: Vec<Bubble>,
}

/// Outcome of the admissible-set membership test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Admissibility {
    pub ok: bool,
    pub violations: Vec<String>,
}

impl ConcentrationSet {
    pub fn new(weights: Vec<f64>, bubbles: Vec<Bubble>) -> Result<Self> {
        if weights.len() != bubbles.len() || bubbles.is_empty() {
            return Err(Error::InvalidInput(
                "weights and bubbles must be non-empty and of equal length".into(),
            ));
        }
        let n = bubbles[0].dim();
        if bubbles.iter().any(|b| b.dim() != n) {
            return Err(Error::InvalidInput("mixed bubble dimensions".into()));
        }
        Ok(Self { weights, bubbles })
    }

    pub fn len(&self) -> usize {
        self.bubbles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bubbles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bubbles[0].dim()
    }

    /// Checks membership in the admissible parameter set: weights near one,
    /// large rates, interior centers, eps*ln(lambda) and pairwise
    /// interactions below `mu`. `boundary_dist` maps a center to its
    /// distance from the domain boundary; `2*d0` is the interior margin.
    /// Interior margin: distance of every center to the boundary must
    /// exceed 2*d0 under the provided distance function.
    pub fn admissibility<F>(&self, eps: f64, mu: f64, d0: f64, boundary_dist: F) -> Admissibility
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut violations = Vec::new();
        for (i, (alpha, b)) in self.weights.iter().zip(&self.bubbles).enumerate() {
            if (alpha - 1.0).abs() >= mu {
                violations.push(format!("|alpha_{i} - 1| = {:.3e} >= mu", (alpha - 1.0).abs()));
            }
            if b.rate <= 1.0 / mu {
                violations.push(format!("lambda_{i} = {:.3} <= 1/mu", b.rate));
            }
            if eps * b.rate.ln() >= mu {
                violations.push(format!(
                    "eps*ln(lambda_{i}) = {:.3e} >= mu",
                    eps * b.rate.ln()
                ));
            }
            let dist = boundary_dist(&b.center);
            if dist <= 2.0 * d0 {
                violations.push(format!(
                    "center {i} at boundary distance {dist:.3e} <= 2*d0 = {:.3e}",
                    2.0 * d0
                ));
            }
        }
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let eij = interaction(&self.bubbles[i], &self.bubbles[j]).eps;
                if eij >= mu {
                    violations.push(format!("eps_{i}{j} = {eij:.3e} >= mu"));
                }
            }
        }
        Admissibility {
            ok: violations.is_empty(),
            violations,
        }
    }
}

//! The cluster configuration energy: quadratic confinement by the potential
//! Hessian at an anchor minus pairwise Coulomb-type attraction. Its
//! non-degenerate critical points fix the relative positions of the bubbles
//! in a cluster.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A non-degenerate critical point of the potential together with the
/// Hessian of the potential there.
#[derive(Debug, Clone)]
pub struct HessianAnchor {
    pub point: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

impl HessianAnchor {
    pub fn new(point: Vec<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let n = point.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::InvalidInput("hessian shape mismatch".into()));
        }
        let asym = (&hessian - hessian.transpose()).norm();
        if asym > 1e-10 * (1.0 + hessian.norm()) {
            return Err(Error::InvalidInput(format!(
                "hessian is not symmetric (asymmetry {asym:.3e})"
            )));
        }
        let eigs = hessian.clone().symmetric_eigen().eigenvalues;
        let min_abs = eigs.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        let max_abs = eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if min_abs <= 1e-12 * max_abs.max(1.0) {
            return Err(Error::Degenerate {
                margin: min_abs,
                threshold: 1e-12 * max_abs.max(1.0),
            });
        }
        Ok(Self { point, hessian })
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

/// N pairwise-distinct points in R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub points: Vec<Vec<f64>>,
}

impl Configuration {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty configuration".into()));
        }
        let n = points[0].len();
        if points.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidInput("mixed point dimensions".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn diameter(&self) -> f64 {
        let mut d = 0.0f64;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d = d.max(dist(&self.points[i], &self.points[j]));
            }
        }
        d
    }

    fn min_pair_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                d = d.min(dist(&self.points[i], &self.points[j]));
            }
        }
        d
    }

    fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len() * self.dim(),
            self.points.iter().flat_map(|p| p.iter().copied()),
        )
    }

    fn from_flat(v: &DVector<f64>, count: usize, dim: usize) -> Self {
        let points = (0..count)
            .map(|i| v.as_slice()[i * dim..(i + 1) * dim].to_vec())
            .collect();
        Self { points }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_distinct(cfg: &Configuration) -> Result<()> {
    for i in 0..cfg.len() {
        for j in (i + 1)..cfg.len() {
            let d = dist(&cfg.points[i], &cfg.points[j]);
            if d == 0.0 {
                return Err(Error::Collision {
                    i,
                    j,
                    dist: d,
                    floor: 0.0,
                });
            }
        }
    }
    Ok(())
}

/// Sum_i z_i^T H z_i - sum_{i != j} |z_j - z_i|^{2-n}; each unordered pair
/// is counted twice by the ordered double sum.
pub fn energy(anchor: &HessianAnchor, cfg: &Configuration) -> Result<f64> {
    check_distinct(cfg)?;
    let n = anchor.dim() as f64;
    let mut total = 0.0;
    for p in &cfg.points {
        let z = DVector::from_column_slice(p);
        total += (&anchor.hessian * &z).dot(&z);
    }
    for i in 0..cfg.len() {
        for j in (i + 1)..cfg.len() {
            total -= 2.0 * dist(&cfg.points[i], &cfg.points[j]).powf(2.0 - n);
        }
    }
    Ok(total)
}

/// Gradient: component i is 2 H z_i + 2(n-2) sum_{j != i} (z_i - z_j)/|z_i - z_j|^n.
pub fn gradient(anchor: &HessianAnchor, cfg: &Configuration) -> Result<Vec<Vec<f64>>> {
    check_distinct(cfg)?;
    let dim = anchor.dim();
    let nf = dim as f64;
    let mut out = vec![vec![0.0; dim]; cfg.len()];
    for (i, p) in cfg.points.iter().enumerate() {
        let z = DVector::from_column_slice(p);
        let hz = &anchor.hessian * &z;
        for k in 0..dim {
            out[i][k] = 2.0 * hz[k];
        }
    }
    for i in 0..cfg.len() {
        for j in 0..cfg.len() {
            if i == j {
                continue;
            }
            let d = dist(&cfg.points[i], &cfg.points[j]);
            let scale = 2.0 * (nf - 2.0) * d.powf(-nf);
            for k in 0..dim {
                out[i][k] += scale * (cfg.points[i][k] - cfg.points[j][k]);
            }
        }
    }
    Ok(out)
}

/// Exact (nN) x (nN) second-derivative matrix of the energy.
pub fn hessian_matrix(anchor: &HessianAnchor, cfg: &Configuration) -> Result<DMatrix<f64>> {
    check_distinct(cfg)?;
    let dim = anchor.dim();
    let nf = dim as f64;
    let count = cfg.len();
    let mut h = DMatrix::zeros(count * dim, count * dim);
    for i in 0..count {
        for a in 0..dim {
            for b in 0..dim {
                h[(i * dim + a, i * dim + b)] += 2.0 * anchor.hessian[(a, b)];
            }
        }
    }
    for i in 0..count {
        for j in (i + 1)..count {
            let d = dist(&cfg.points[i], &cfg.points[j]);
            let dn = d.powf(-nf);
            let dn2 = d.powf(-nf - 2.0);
            // Hessian in w = z_i - z_j of -2|w|^{2-n}:
            //   2(n-2) [ |w|^{-n} I - n |w|^{-n-2} w w^T ]
            for a in 0..dim {
                for b in 0..dim {
                    let w_a = cfg.points[i][a] - cfg.points[j][a];
                    let w_b = cfg.points[i][b] - cfg.points[j][b];
                    let mut block = -2.0 * (nf - 2.0) * nf * dn2 * w_a * w_b;
                    if a == b {
                        block += 2.0 * (nf - 2.0) * dn;
                    }
                    h[(i * dim + a, i * dim + b)] += block;
                    h[(j * dim + a, j * dim + b)] += block;
                    h[(i * dim + a, j * dim + b)] -= block;
                    h[(j * dim + a, i * dim + b)] -= block;
                }
            }
        }
    }
    Ok(h)
}

/// A located critical point together with its non-degeneracy data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub configuration: Configuration,
    pub value: f64,
    pub grad_norm: f64,
    /// Eigenvalues of the energy Hessian at the solution, ascending.
    pub spectrum: Vec<f64>,
    /// Smallest absolute eigenvalue.
    pub margin: f64,
    pub nondegenerate: bool,
}

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Non-degeneracy threshold relative to the largest |eigenvalue|.
    pub margin_rel: f64,
    /// Collision floor as a fraction of the configuration diameter.
    pub collision_frac: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
            margin_rel: 1e-8,
            collision_frac: 1e-3,
        }
    }
}

fn grad_norm(g: &[Vec<f64>]) -> f64 {
    g.iter()
        .flat_map(|v| v.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

fn certificate(
    anchor: &HessianAnchor,
    cfg: Configuration,
    opts: &NewtonOptions,
) -> Result<Certificate> {
    let value = energy(anchor, &cfg)?;
    let gnorm = grad_norm(&gradient(anchor, &cfg)?);
    let h = hessian_matrix(anchor, &cfg)?;
    let mut spectrum: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let margin = spectrum.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
    let max_abs = spectrum.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(Certificate {
        configuration: cfg,
        value,
        grad_norm: gnorm,
        spectrum,
        margin,
        nondegenerate: margin > opts.margin_rel * max_abs,
    })
}

/// Damped Newton iteration on the gradient with a collision guard. A
/// converged degenerate point is returned flagged, never silently accepted.
pub fn find_critical_point(
    anchor: &HessianAnchor,
    init: &Configuration,
    opts: &NewtonOptions,
) -> Result<Certificate> {
    check_distinct(init)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let dim = anchor.dim();
    let count = init.len();
    let mut cfg = init.clone();
    let mut g = gradient(anchor, &cfg)?;
    let mut gnorm = grad_norm(&g);
    for _ in 0..opts.max_iter {
        if gnorm <= opts.tol {
            return certificate(anchor, cfg, opts);
        }
        let h = hessian_matrix(anchor, &cfg)?;
        let rhs = -DVector::from_iterator(count * dim, g.iter().flat_map(|v| v.iter().copied()));
        let step = h.lu().solve(&rhs).ok_or_else(|| {
            Error::NonConvergence("singular Hessian in Newton iteration".into())
        })?;
        let x = cfg.flatten();
        let floor = opts.collision_frac * cfg.diameter();
        let mut t = 1.0;
        let mut accepted = false;
        let mut floor_hit = false;
        while t >= 1e-14 {
            let trial = Configuration::from_flat(&(&x + t * &step), count, dim);
            if count > 1 && trial.min_pair_distance() < floor {
                floor_hit = true;
                t *= 0.5;
                continue;
            }
            let tg = match gradient(anchor, &trial) {
                Ok(v) => v,
                Err(_) => {
                    t *= 0.5;
                    continue;
                }
            };
            let tnorm = grad_norm(&tg);
            if tnorm < gnorm * (1.0 - 1e-4 * t) || tnorm < opts.tol {
                cfg = trial;
                g = tg;
                gnorm = tnorm;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if floor_hit {
                let d = cfg.min_pair_distance();
                return Err(Error::Collision {
                    i: 0,
                    j: 1,
                    dist: d,
                    floor,
                });
            }
            return Err(Error::NonConvergence(format!(
                "line search stalled at gradient norm {gnorm:.3e}"
            )));
        }
    }
    if gnorm <= opts.tol {
        return certificate(anchor, cfg, opts);
    }
    Err(Error::NonConvergence(format!(
        "no critical point after {} iterations (gradient norm {gnorm:.3e})",
        opts.max_iter
    )))
}

#[derive(Debug, Clone)]
pub struct MultistartOptions {
    pub seeds: usize,
    pub rng_seed: u64,
    /// Half-width of the sampling cube; `None` picks a balance-based scale.
    pub sample_radius: Option<f64>,
    pub newton: NewtonOptions,
}

impl Default for MultistartOptions {
    fn default() -> Self {
        Self {
            seeds: 64,
            rng_seed: 1,
            sample_radius: None,
            newton: NewtonOptions::default(),
        }
    }
}

fn fingerprint(cert: &Certificate) -> Vec<f64> {
    let cfg = &cert.configuration;
    let mut f = Vec::new();
    for i in 0..cfg.len() {
        for j in (i + 1)..cfg.len() {
            f.push(dist(&cfg.points[i], &cfg.points[j]));
        }
    }
    f.sort_by(|a, b| a.partial_cmp(b).unwrap());
    f
}

fn same_solution(a: &Certificate, b: &Certificate, tol: f64) -> bool {
    let (fa, fb) = (fingerprint(a), fingerprint(b));
    if fa.len() != fb.len() {
        return false;
    }
    let scale = 1.0 + fa.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dist_ok = fa
        .iter()
        .zip(&fb)
        .all(|(x, y)| (x - y).abs() <= tol * scale);
    dist_ok && (a.value - b.value).abs() <= tol.sqrt() * (1.0 + a.value.abs())
}

/// Deduplicates certificates modulo permutation and global negation using
/// sorted pairwise-distance fingerprints, preserving the first occurrence.
pub fn dedup_certificates(mut certs: Vec<Certificate>, tol: f64) -> Vec<Certificate> {
    certs.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap());
    let mut kept: Vec<Certificate> = Vec::new();
    for c in certs {
        if !kept.iter().any(|k| same_solution(k, &c, tol)) {
            kept.push(c);
        }
    }
    kept
}

/// Deterministic multistart search: `seeds` random initial configurations,
/// Newton from each, deduplication, results sorted by energy value. An empty
/// result is a valid outcome.
pub fn multistart(
    anchor: &HessianAnchor,
    bubbles: usize,
    opts: &MultistartOptions,
) -> Result<Vec<Certificate>> {
    if opts.seeds == 0 {
        return Err(Error::InvalidInput("need at least one seed".into()));
    }
    if bubbles == 0 {
        return Err(Error::InvalidInput("need at least one point".into()));
    }
    let dim = anchor.dim();
    let nf = dim as f64;
    let radius = opts.sample_radius.unwrap_or_else(|| {
        let eigs = anchor.hessian.clone().symmetric_eigen().eigenvalues;
        let min_abs = eigs.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        1.5 * (2.0 * (nf - 2.0) * bubbles as f64 / min_abs).powf(1.0 / nf)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut found = Vec::new();
    for _ in 0..opts.seeds {
        let points: Vec<Vec<f64>> = (0..bubbles)
            .map(|_| (0..dim).map(|_| rng.gen_range(-radius..radius)).collect())
            .collect();
        let init = match Configuration::new(points) {
            Ok(c) if c.len() == 1 || c.min_pair_distance() > 1e-6 * radius => c,
            _ => continue,
        };
        if let Ok(cert) = find_critical_point(anchor, &init, &opts.newton) {
            if cert.nondegenerate {
                found.push(cert);
            }
        }
    }
    Ok(dedup_certificates(found, 1e-8))
}

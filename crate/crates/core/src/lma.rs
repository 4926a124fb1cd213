//! Laplace mixture approximation: multi-start mode search, finite-difference
//! Hessians, evidence-weighted mixtures, and a k-means fit from empirical samples.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{logsumexp_unchecked, Covariance, GaussianComponent, Mixture};
use crate::metrics::SampleSet;
use crate::simplex::{md_step, softmax};
use crate::target::TargetDensity;
use crate::util;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEstimate {
    pub location: Vec<f64>,
    pub log_density: f64,
    /// Negative Hessian of `ln p̄` at `location`.
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmaConfig {
    pub n_starts: usize,
    /// Starts are drawn uniformly from the box `[lower, upper]`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Defaults to 1e-2 times the box diagonal.
    #[serde(default)]
    pub dedup_radius: Option<f64>,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub lambda: f64,
    /// Defaults to `1e-3 · max(1, ‖θ‖∞)` at each mode.
    #[serde(default)]
    pub fd_step: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl LmaConfig {
    pub fn new(n_starts: usize, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            n_starts,
            lower,
            upper,
            dedup_radius: None,
            kappa: 1.0,
            lambda: 0.0,
            fd_step: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(GmaError::InvalidParameter(m));
        if self.n_starts == 0 {
            return bad("n_starts must be >= 1".into());
        }
        check_dim(dim, self.lower.len())?;
        check_dim(dim, self.upper.len())?;
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return bad(format!("search box side [{l}, {u}] is not a bounded interval"));
            }
        }
        if let Some(h) = self.fd_step {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("fd_step must be > 0, got {h}"));
            }
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be >= 1, got {}", self.kappa));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        Ok(())
    }

    fn box_diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub const NM_TOLERANCE: f64 = 1e-8;
pub const NM_MAX_EVALS: usize = 2000;

/// Outcome of one Nelder–Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSearch {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of edge `scale`.
/// Stops when every vertex lies within `NM_TOLERANCE` of the best one or after
/// `NM_MAX_EVALS` evaluations.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], scale: &[f64]) -> SimplexSearch {
    let d = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..d {
        let mut p = x0.to_vec();
        p[k] += scale[k];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();

    let diameter = |pts: &[Vec<f64>], best: usize| {
        pts.iter()
            .map(|p| {
                p.iter()
                    .zip(&pts[best])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    };

    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        if diameter(&pts, 0) < NM_TOLERANCE {
            return SimplexSearch {
                x: pts.swap_remove(0),
                value: vals[0],
                evals: evals.get(),
                converged: true,
            };
        }
        if evals.get() >= NM_MAX_EVALS {
            return SimplexSearch {
                x: pts.swap_remove(0),
                value: vals[0],
                evals: evals.get(),
                converged: false,
            };
        }

        let mut centroid = vec![0.0; d];
        for p in &pts[..d] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[d])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        let best = pts[0].clone();
        for k in 1..=d {
            let p: Vec<f64> = best.iter().zip(&pts[k]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            vals[k] = eval(&p);
            pts[k] = p;
        }
    }
}

/// Central-difference negative Hessian of `ln p̄` at `theta`, symmetrized.
pub fn fd_hessian(target: &dyn TargetDensity, theta: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_dim(target.dim(), theta.len())?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("step must be > 0, got {h}")));
    }
    let d = theta.len();
    let f = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut x = theta.to_vec();
        for &(k, s) in offsets {
            x[k] += s;
        }
        let v = target.eval(&x);
        if !v.is_finite() {
            return Err(GmaError::NonFinite(format!("log-density {v} at stencil point {x:?}")));
        }
        Ok(v)
    };
    let f0 = f(&[])?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        hess[(i, i)] = (f(&[(i, h)])? - 2.0 * f0 + f(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (f(&[(i, h), (j, h)])? - f(&[(i, h), (j, -h)])? - f(&[(i, -h), (j, h)])?
                + f(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    Ok(-sym)
}

/// Default finite-difference step at `theta`.
pub fn default_fd_step(theta: &[f64]) -> f64 {
    1e-3 * theta.iter().fold(1.0f64, |a, x| a.max(x.abs()))
}

/// Multi-start mode search with deduplication and per-mode Hessians.
pub fn find_modes<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    cfg: &LmaConfig,
    rng: &mut R,
) -> Result<Vec<ModeEstimate>> {
    let d = target.dim();
    cfg.validate(d)?;
    let starts: Vec<Vec<f64>> = (0..cfg.n_starts)
        .map(|_| {
            cfg.lower
                .iter()
                .zip(&cfg.upper)
                .map(|(&l, &u)| l + (u - l) * rng.random::<f64>())
                .collect()
        })
        .collect();
    let scale: Vec<f64> = cfg
        .lower
        .iter()
        .zip(&cfg.upper)
        .map(|(l, u)| (0.05 * (u - l)).max(1e-3))
        .collect();
    let runs: Vec<SimplexSearch> = starts
        .par_iter()
        .map(|x0| nelder_mead(|x| -target.eval(x), x0, &scale))
        .collect();

    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut diagnostics = Vec::new();
    for (s, run) in runs.into_iter().enumerate() {
        if run.converged && run.value.is_finite() {
            found.push((run.x, -run.value));
        } else {
            diagnostics.push(format!(
                "start {s}: value {} after {} evaluations (converged = {})",
                -run.value, run.evals, run.converged
            ));
        }
    }
    if found.is_empty() {
        return Err(GmaError::NoConvergence(format!(
            "no mode search converged: {}",
            diagnostics.join("; ")
        )));
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    let radius = cfg.dedup_radius.unwrap_or(1e-2 * cfg.box_diameter());
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, v) in found {
        let close = kept.iter().any(|(k, _)| {
            k.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() < radius
        });
        if !close {
            kept.push((x, v));
        }
    }
    kept.into_iter()
        .map(|(location, log_density)| {
            let h = cfg.fd_step.unwrap_or_else(|| default_fd_step(&location));
            let hessian = fd_hessian(target, &location, h)?;
            Ok(ModeEstimate {
                location,
                log_density,
                hessian,
            })
        })
        .collect()
}

/// `Σ_j = κ² H_j⁻¹ + λI`, weights from the log Laplace evidence.
/// Modes whose Hessian is not positive definite are dropped with a warning.
pub fn build_laplace_mixture(modes: &[ModeEstimate], kappa: f64, lambda: f64) -> Result<Mixture> {
    if modes.is_empty() {
        return Err(GmaError::EmptyInput("no modes to build a mixture from"));
    }
    let mut comps = Vec::new();
    let mut log_w = Vec::new();
    for (j, mode) in modes.iter().enumerate() {
        let d = mode.location.len();
        let Some(chol) = mode.hessian.clone().cholesky() else {
            warn!("dropping mode {j}: Hessian is not positive definite");
            continue;
        };
        let sigma = chol.inverse() * (kappa * kappa) + DMatrix::identity(d, d) * lambda;
        let cov = match Covariance::full((&sigma + sigma.transpose()) * 0.5) {
            Ok(c) => c,
            Err(e) => {
                warn!("dropping mode {j}: {e}");
                continue;
            }
        };
        log_w.push(mode.log_density + 0.5 * d as f64 * LN_2PI + 0.5 * cov.log_det());
        comps.push(GaussianComponent::new(mode.location.clone(), cov)?);
    }
    if comps.is_empty() {
        return Err(GmaError::NotPositiveDefinite(
            "every mode had a non positive-definite Hessian".into(),
        ));
    }
    Mixture::new(comps, softmax(&log_w))
}

/// Mean and covariance of the mixture.
pub fn moment_match(m: &Mixture) -> (Vec<f64>, DMatrix<f64>) {
    let d = m.dim();
    let mut mu = DVector::zeros(d);
    for (c, &w) in m.components().iter().zip(m.weights()) {
        mu += DVector::from_column_slice(c.mean()) * w;
    }
    let mut sigma = DMatrix::zeros(d, d);
    for (c, &w) in m.components().iter().zip(m.weights()) {
        let diff = DVector::from_column_slice(c.mean()) - &mu;
        sigma += (c.cov().to_dense() + &diff * diff.transpose()) * w;
    }
    (mu.iter().copied().collect(), sigma)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; returns centres and assignments.
pub fn kmeans<R: Rng + ?Sized>(
    samples: &SampleSet,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let n = samples.len();
    if k == 0 || k > n {
        return Err(GmaError::InvalidParameter(format!(
            "cluster count {k} must lie in 1..={n}"
        )));
    }
    let mut centres: Vec<Vec<f64>> = vec![samples.point(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(samples.point(i), &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            util::draw_index(&util::cumulative(&d2), rng)
        } else {
            rng.random_range(0..n)
        };
        centres.push(samples.point(next).to_vec());
        let c = centres.last().unwrap();
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(samples.point(i), c));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let p = samples.point(i);
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centres[a]).total_cmp(&sq_dist(p, &centres[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let d = samples.dim();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(samples.point(i)) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // reseed from the point farthest from its current centre
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(samples.point(a), &centres[assign[a]])
                            .total_cmp(&sq_dist(samples.point(b), &centres[assign[b]]))
                    })
                    .unwrap();
                centres[j] = samples.point(far).to_vec();
                assign[far] = j;
                changed = true;
            } else {
                centres[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Ok((centres, assign))
}

/// k-means clusters turned into Gaussians (empirical covariance plus ridge),
/// then `md_steps` exponentiated-gradient steps on the empirical cross-entropy.
pub fn fit_lma_from_samples<R: Rng + ?Sized>(
    samples: &SampleSet,
    j: usize,
    ridge: f64,
    md_steps: usize,
    eta: f64,
    rng: &mut R,
) -> Result<Mixture> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("ridge must be >= 0, got {ridge}")));
    }
    let (centres, assign) = kmeans(samples, j, 100, rng)?;
    let d = samples.dim();
    let n = samples.len();
    let mut comps = Vec::with_capacity(j);
    let mut sizes = vec![0usize; j];
    for &a in &assign {
        sizes[a] += 1;
    }
    for (c, centre) in centres.iter().enumerate() {
        let mu = DVector::from_column_slice(centre);
        let mut s = DMatrix::zeros(d, d);
        for i in (0..n).filter(|&i| assign[i] == c) {
            let diff = DVector::from_column_slice(samples.point(i)) - &mu;
            s += &diff * diff.transpose();
        }
        let s = s / (sizes[c].saturating_sub(1)).max(1) as f64 + DMatrix::identity(d, d) * ridge;
        let cov = Covariance::full(s).map_err(|e| {
            GmaError::NotPositiveDefinite(format!(
                "cluster {c} ({} points) has a singular covariance; raise the ridge: {e}",
                sizes[c]
            ))
        })?;
        comps.push(GaussianComponent::new(centre.clone(), cov)?);
    }
    let mut w: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();

    if md_steps > 0 {
        let log_phi: Vec<f64> = (0..n)
            .flat_map(|i| comps.iter().map(move |c| c.log_pdf(samples.point(i))))
            .collect();
        let mut buf = vec![0.0; j];
        for _ in 0..md_steps {
            let lw: Vec<f64> = w.iter().map(|x| x.max(crate::simplex::WEIGHT_FLOOR).ln()).collect();
            let mut grad = vec![0.0; j];
            for row in log_phi.chunks_exact(j) {
                for l in 0..j {
                    buf[l] = lw[l] + row[l];
                }
                let lq = logsumexp_unchecked(&buf);
                for l in 0..j {
                    grad[l] -= (row[l] - lq).exp() / n as f64;
                }
            }
            w = md_step(&w, &grad, eta, 1.0)?;
        }
    }
    Mixture::new(comps, w)
}

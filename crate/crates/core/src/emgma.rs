//! Population EM over all mixture parameters, driven by self-normalized
//! importance weights of a bank drawn from the current mixture.

use std::io::Write;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{logsumexp_unchecked, Covariance, GaussianComponent, Mixture};
use crate::metrics::SampleSet;
use crate::simplex::{softmax, weight_entropy};
use crate::target::TargetDensity;

/// Effective counts below this keep their previous parameters.
pub const MIN_COUNT: f64 = 1e-10;
/// Largest allowed covariance condition number.
pub const MAX_CONDITION: f64 = 1e8;
/// Covariance inflation applied when the ESS falls under the floor.
pub const ESS_INFLATION: f64 = 1.5;

/// Points with their normalized importance weights.
#[derive(Debug, Clone)]
pub struct WeightedBank {
    pub points: SampleSet,
    pub weights: Vec<f64>,
    pub ess: f64,
    pub proposal_log_pdf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovKind {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub sweeps: usize,
    pub bank_size: usize,
    pub ridge: f64,
    /// Responsibility temperature at the first sweep, annealed linearly to 1.
    pub resp_temperature: f64,
    pub resp_floor: f64,
    pub ess_floor: f64,
    pub refresh_bank: bool,
    pub cov_kind: CovKind,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            sweeps: 80,
            bank_size: 4096,
            ridge: 1e-6,
            resp_temperature: 2.0,
            resp_floor: 1e-8,
            ess_floor: 0.02,
            refresh_bank: true,
            cov_kind: CovKind::Full,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmaError::InvalidParameter(m));
        if self.sweeps == 0 {
            return bad("sweeps must be >= 1".into());
        }
        if self.bank_size < 2 {
            return bad("bank_size must be >= 2".into());
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if !(self.resp_temperature >= 1.0 && self.resp_temperature.is_finite()) {
            return bad(format!("resp_temperature must be >= 1, got {}", self.resp_temperature));
        }
        if !(0.0..1.0).contains(&self.resp_floor) {
            return bad(format!("resp_floor must lie in [0, 1), got {}", self.resp_floor));
        }
        if !(0.0..1.0).contains(&self.ess_floor) {
            return bad(format!("ess_floor must lie in [0, 1), got {}", self.ess_floor));
        }
        Ok(())
    }

    /// Responsibility temperature at sweep `t` (1-based).
    pub fn temperature_at(&self, t: usize) -> f64 {
        if self.sweeps <= 1 {
            return 1.0;
        }
        let frac = (t - 1) as f64 / (self.sweeps - 1) as f64;
        self.resp_temperature + (1.0 - self.resp_temperature) * frac
    }
}

fn log_joint(m: &Mixture, z: &[f64]) -> Vec<f64> {
    m.components()
        .iter()
        .zip(m.log_weights())
        .map(|(c, lw)| if lw.is_finite() { lw + c.log_pdf(z) } else { f64::NEG_INFINITY })
        .collect()
}

/// Posterior component probabilities at `z`.
pub fn responsibilities(m: &Mixture, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(m.dim(), z.len())?;
    Ok(resp_tempered(m, z, 1.0, 0.0))
}

fn resp_tempered(m: &Mixture, z: &[f64], temperature: f64, floor: f64) -> Vec<f64> {
    let lj = log_joint(m, z);
    if lj.iter().all(|v| *v == f64::NEG_INFINITY) {
        warn!("every component assigns zero density at {z:?}; using uniform responsibilities");
        return vec![1.0 / m.len() as f64; m.len()];
    }
    let mut r = softmax(&lj.iter().map(|v| v / temperature).collect::<Vec<_>>());
    if floor > 0.0 && r.iter().any(|&x| x < floor) {
        for x in r.iter_mut() {
            if *x < floor {
                *x = 0.0;
            }
        }
        let s: f64 = r.iter().sum();
        r.iter_mut().for_each(|x| *x /= s);
    }
    r
}

/// Self-normalized weights `ω ∝ p̄ / q` over `points`.
pub fn snis_weights(target: &dyn TargetDensity, proposal: &Mixture, points: SampleSet) -> Result<WeightedBank> {
    check_dim(target.dim(), points.dim())?;
    check_dim(proposal.dim(), points.dim())?;
    let pairs: Vec<(f64, f64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let z = points.point(i);
            (target.eval(z), proposal.log_pdf(z))
        })
        .collect();
    let mut log_w = Vec::with_capacity(pairs.len());
    let mut proposal_log_pdf = Vec::with_capacity(pairs.len());
    for (i, &(lt, lq)) in pairs.iter().enumerate() {
        if lt.is_nan() || lt == f64::INFINITY {
            return Err(GmaError::NonFinite(format!("target returned {lt} at bank point {i}")));
        }
        if !lq.is_finite() {
            return Err(GmaError::NonFinite(format!("proposal log-density {lq} at bank point {i}")));
        }
        log_w.push(lt - lq);
        proposal_log_pdf.push(lq);
    }
    if log_w.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(GmaError::DegenerateBank("bank has no mass under target".into()));
    }
    let lse = logsumexp_unchecked(&log_w);
    let weights: Vec<f64> = log_w.iter().map(|v| (v - lse).exp()).collect();
    let s: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.into_iter().map(|w| w / s).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    Ok(WeightedBank {
        points,
        weights,
        ess,
        proposal_log_pdf,
    })
}

/// Clips eigenvalues so that the condition number stays within `MAX_CONDITION`.
fn cap_condition(s: DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let lo = max / MAX_CONDITION;
    if eig.eigenvalues.min() >= lo {
        return s;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(lo));
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&clipped) * q.transpose()
}

/// One M-step on the weighted bank with tempered, floored responsibilities.
pub fn em_sweep(m: &Mixture, wb: &WeightedBank, cfg: &EmConfig, t_resp: f64) -> Result<Mixture> {
    check_dim(m.dim(), wb.points.dim())?;
    let d = m.dim();
    let k = m.len();
    let pts = &wb.points;
    let resp: Vec<Vec<f64>> = (0..pts.len())
        .into_par_iter()
        .map(|i| resp_tempered(m, pts.point(i), t_resp, cfg.resp_floor))
        .collect();

    let mut counts = vec![0.0; k];
    let mut sums = vec![DVector::<f64>::zeros(d); k];
    for (i, r) in resp.iter().enumerate() {
        let z = DVector::from_column_slice(pts.point(i));
        let om = wb.weights[i];
        for c in 0..k {
            let a = om * r[c];
            if a > 0.0 {
                counts[c] += a;
                sums[c].axpy(a, &z, 1.0);
            }
        }
    }
    let means: Vec<DVector<f64>> = (0..k).map(|c| &sums[c] / counts[c]).collect();
    let mut scatter = vec![DMatrix::<f64>::zeros(d, d); k];
    for (i, r) in resp.iter().enumerate() {
        let z = DVector::from_column_slice(pts.point(i));
        let om = wb.weights[i];
        for c in 0..k {
            let a = om * r[c];
            if a > 0.0 {
                let diff = &z - &means[c];
                scatter[c].syger(a, &diff, &diff, 1.0);
            }
        }
    }

    let mut comps = Vec::with_capacity(k);
    let mut eff = Vec::with_capacity(k);
    for c in 0..k {
        let prev = &m.components()[c];
        if counts[c] < MIN_COUNT || !counts[c].is_finite() {
            comps.push(prev.clone());
            eff.push(MIN_COUNT);
            continue;
        }
        let mut s = &scatter[c] / counts[c];
        s.fill_upper_triangle_with_lower_triangle();
        s += DMatrix::identity(d, d) * cfg.ridge;
        let cov = match cfg.cov_kind {
            CovKind::Diagonal => {
                let v: Vec<f64> = (0..d).map(|i| s[(i, i)]).collect();
                let max = v.iter().copied().fold(0.0, f64::max);
                Covariance::diagonal(v.iter().map(|x| x.max(max / MAX_CONDITION)).collect())
            }
            CovKind::Full => Covariance::full(cap_condition(s)),
        };
        match cov {
            Ok(cov) => {
                comps.push(GaussianComponent::new(means[c].iter().copied().collect(), cov)?);
                eff.push(counts[c]);
            }
            Err(e) => {
                warn!("component {c} kept its previous parameters: {e}");
                comps.push(prev.clone());
                eff.push(counts[c].max(MIN_COUNT));
            }
        }
    }
    let total: f64 = eff.iter().sum();
    Mixture::new(comps, eff.iter().map(|x| x / total).collect())
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    pub ess: Vec<f64>,
    pub entropy: Vec<f64>,
    pub mean_drift: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub inflated: Vec<bool>,
}

impl EmTrace {
    /// Writes `sweep, ess, entropy, max_mean_drift` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["sweep", "ess", "entropy", "max_mean_drift"])?;
        for t in 0..self.ess.len() {
            out.write_record([
                (t + 1).to_string(),
                format!("{}", self.ess[t]),
                format!("{}", self.entropy[t]),
                format!("{}", self.mean_drift[t]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn max_mean_drift(a: &Mixture, b: &Mixture) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .flat_map(|(x, y)| x.mean().iter().zip(y.mean()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Runs `cfg.sweeps` SNIS-EM sweeps starting from `init`.
pub fn run_emgma<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    init: &Mixture,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<(Mixture, EmTrace)> {
    cfg.validate()?;
    check_dim(init.dim(), target.dim())?;
    let d = init.dim();
    let mut m = init.clone();
    let mut trace = EmTrace::default();
    let mut bank: Option<WeightedBank> = None;
    for t in 1..=cfg.sweeps {
        if cfg.refresh_bank || bank.is_none() {
            let (pts, _) = m.sample_many(cfg.bank_size, rng);
            bank = Some(snis_weights(target, &m, SampleSet::new(d, pts)?)?);
        }
        let wb = bank.as_ref().expect("bank drawn above");
        let mut next = em_sweep(&m, wb, cfg, cfg.temperature_at(t))?;
        let inflate = wb.ess < cfg.ess_floor * cfg.bank_size as f64;
        if inflate {
            let comps = next
                .components()
                .iter()
                .map(|c| GaussianComponent::new(c.mean().to_vec(), c.cov().scaled(ESS_INFLATION)?))
                .collect::<Result<Vec<_>>>()?;
            next = Mixture::new(comps, next.weights().to_vec())?;
        }
        trace.ess.push(wb.ess);
        trace.entropy.push(weight_entropy(next.weights()).0);
        trace.mean_drift.push(max_mean_drift(&m, &next));
        trace.weights.push(next.weights().to_vec());
        trace.inflated.push(inflate);
        m = next;
    }
    Ok((m, trace))
}

/// Permutation `p` of the estimated components minimizing `Σ ‖μ̂_{p(k)} − μ_k‖`,
/// so `estimate[p[k]]` is matched to `truth[k]`. Exhaustive up to 8 components,
/// greedy beyond.
pub fn match_components(estimate: &Mixture, truth: &Mixture) -> Result<Vec<usize>> {
    check_dim(truth.len(), estimate.len())?;
    let k = truth.len();
    let dist = |i: usize, j: usize| -> f64 {
        estimate.components()[i]
            .mean()
            .iter()
            .zip(truth.components()[j].mean())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    if k > 8 {
        let mut used = vec![false; k];
        return Ok((0..k)
            .map(|j| {
                let i = (0..k)
                    .filter(|&i| !used[i])
                    .min_by(|&a, &b| dist(a, j).total_cmp(&dist(b, j)))
                    .unwrap();
                used[i] = true;
                i
            })
            .collect());
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let cost: f64 = p.iter().enumerate().map(|(j, &i)| dist(i, j)).sum();
        if cost < best_cost {
            best_cost = cost;
            best = p.to_vec();
        }
    });
    Ok(best)
}

fn permute(p: &mut Vec<usize>, start: usize, f: &mut dyn FnMut(&[usize])) {
    if start == p.len() {
        f(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, f);
        p.swap(start, i);
    }
}

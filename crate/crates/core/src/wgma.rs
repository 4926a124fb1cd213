//! Weights-only mixture fitting: the bank reverse-KL gradient, the projected
//! gradient and mirror-descent loops, and multi-stage refinement.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{build_bank, log_mixture_rows, SampleBank};
use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{normalize_simplex, GaussianComponent, Mixture};
use crate::resample::{stratified_resample, Ensemble};
use crate::simplex::{
    convex_mix, entropy_gradient, md_step, polyak_average, project_to_simplex, schedule_at,
    weight_entropy, ScheduleSet,
};
use crate::target::TargetDensity;
use crate::util;

/// Stand-in for `ln p̄ = -inf` inside gradient sums.
pub const LOG_TARGET_CLAMP: f64 = -1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Pgd,
    Md,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitWeights {
    Uniform,
    /// Flat Dirichlet draw.
    RandomSimplex,
    Supplied { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WgmaConfig {
    pub iterations: usize,
    pub schedules: ScheduleSet,
    pub optimizer: Optimizer,
    pub standardize_target: bool,
    pub init: InitWeights,
    /// Ensemble size drawn after the last stage; 0 means `N·M`.
    pub ensemble_size: usize,
}

impl Default for WgmaConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            schedules: ScheduleSet::default(),
            optimizer: Optimizer::Pgd,
            standardize_target: false,
            init: InitWeights::Uniform,
            ensemble_size: 0,
        }
    }
}

impl WgmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(GmaError::InvalidParameter("iterations must be >= 1".into()));
        }
        self.schedules.validate(self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub top_fraction: f64,
    pub shrink: f64,
    pub jitter: f64,
    pub stages: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.2,
            shrink: 0.35,
            jitter: 0.15,
            stages: 2,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmaError::InvalidParameter(m));
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!("top_fraction must lie in (0, 1], got {}", self.top_fraction));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return bad(format!("shrink must lie in (0, 1], got {}", self.shrink));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if self.stages == 0 {
            return bad("stages must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of one optimization run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimTrace {
    pub weights: Vec<Vec<f64>>,
    pub entropy: Vec<f64>,
    pub eff: Vec<f64>,
    /// Norm of the gradient with its mean removed; the mean is irrelevant on the simplex.
    pub grad_norm: Vec<f64>,
    pub step: Vec<f64>,
}

impl OptimTrace {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Writes `stage, iteration, entropy, eff, grad_norm, step, w_0..` rows for every stage.
pub fn write_traces_csv<W: Write>(traces: &[OptimTrace], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let n = traces
        .iter()
        .flat_map(|t| t.weights.first().map(Vec::len))
        .max()
        .unwrap_or(0);
    let mut header: Vec<String> = ["stage", "iteration", "entropy", "eff", "grad_norm", "step"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n).map(|i| format!("w_{i}")));
    out.write_record(&header)?;
    for (s, t) in traces.iter().enumerate() {
        for k in 0..t.len() {
            let mut rec = vec![
                s.to_string(),
                (k + 1).to_string(),
                format!("{}", t.entropy[k]),
                format!("{}", t.eff[k]),
                format!("{}", t.grad_norm[k]),
                format!("{}", t.step[k]),
            ];
            rec.extend(t.weights[k].iter().map(|v| format!("{v}")));
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Monte Carlo gradient of the bank reverse-KL objective with entropy regularization.
pub fn estimate_gradient(
    bank: &SampleBank,
    w: &[f64],
    beta: f64,
    lambda: f64,
    standardize: bool,
) -> Result<Vec<f64>> {
    check_dim(bank.n_components(), w.len())?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(GmaError::InvalidParameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    let w = normalize_simplex(w.to_vec())?;
    Ok(gradient_unchecked(bank, &w, beta, lambda, standardize))
}

fn gradient_unchecked(bank: &SampleBank, w: &[f64], beta: f64, lambda: f64, standardize: bool) -> Vec<f64> {
    let log_q = log_mixture_rows(bank, w);
    let stats = bank.target_stats();
    let m = bank.per_component();
    let lt = bank.log_target();
    let ent = entropy_gradient(w, lambda);
    (0..bank.n_components())
        .map(|i| {
            let mut acc = 0.0;
            for r in i * m..(i + 1) * m {
                let raw = if lt[r] == f64::NEG_INFINITY { LOG_TARGET_CLAMP } else { lt[r] };
                let t = if standardize {
                    (beta * raw - stats.mean) / stats.std
                } else {
                    beta * raw
                };
                acc += log_q[r] - t;
            }
            1.0 + acc / m as f64 + ent[i]
        })
        .collect()
}

fn initial_weights<R: Rng + ?Sized>(init: &InitWeights, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    match init {
        InitWeights::Uniform => Ok(vec![1.0 / n as f64; n]),
        InitWeights::RandomSimplex => {
            let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let s: f64 = e.iter().sum();
            Ok(e.iter().map(|x| x / s).collect())
        }
        InitWeights::Supplied { weights } => {
            check_dim(n, weights.len())?;
            normalize_simplex(weights.clone())
        }
    }
}

/// Runs `cfg.iterations` pGD or MD steps on the bank objective.
pub fn optimize_weights<R: Rng + ?Sized>(
    bank: &SampleBank,
    cfg: &WgmaConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, OptimTrace)> {
    cfg.validate()?;
    let n = bank.n_components();
    let k_total = cfg.iterations;
    let mut w = initial_weights(&cfg.init, n, rng)?;
    let mut trace = OptimTrace::default();
    for k in 1..=k_total {
        let sv = schedule_at(&cfg.schedules, k, k_total)?;
        let g = gradient_unchecked(bank, &w, sv.beta, sv.lambda, cfg.standardize_target);
        if let Some(i) = g.iter().position(|x| x.is_nan()) {
            return Err(GmaError::Optimization {
                iteration: k,
                reason: format!("gradient component {i} is NaN"),
            });
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(GmaError::Optimization {
                iteration: k,
                reason: format!("gradient component {i} is {}", g[i]),
            });
        }
        w = match cfg.optimizer {
            Optimizer::Pgd => {
                let v: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - sv.eta * gi).collect();
                project_to_simplex(&v)?
            }
            Optimizer::Md => {
                let prop = md_step(&w, &g, sv.eta, sv.tau)?;
                convex_mix(&w, &prop, sv.alpha)
            }
        };
        if w.iter().any(|x| x.is_nan()) {
            return Err(GmaError::Optimization {
                iteration: k,
                reason: "weights became NaN".into(),
            });
        }
        let mean_g = g.iter().sum::<f64>() / n as f64;
        let (h, eff) = weight_entropy(&w);
        trace.grad_norm.push(g.iter().map(|x| (x - mean_g).powi(2)).sum::<f64>().sqrt());
        trace.step.push(sv.eta);
        trace.entropy.push(h);
        trace.eff.push(eff);
        trace.weights.push(w.clone());
    }
    let l = cfg.schedules.polyak_window;
    let w_star = if l > 0 {
        polyak_average(&trace.weights, l)?
    } else {
        w
    };
    Ok((w_star, trace))
}

/// Re-centres a new bank around the heaviest components with shrunken covariances.
pub fn refine_stage<R: Rng + ?Sized>(
    mixture: &Mixture,
    w: &[f64],
    rc: &RefineConfig,
    rng: &mut R,
) -> Result<Mixture> {
    rc.validate()?;
    check_dim(mixture.len(), w.len())?;
    let w = normalize_simplex(w.to_vec())?;
    if mixture.components().iter().any(|c| c.cov().is_full()) {
        return Err(GmaError::Unsupported(
            "refinement scales per-axis deviations and needs isotropic or diagonal covariances".into(),
        ));
    }
    let n = mixture.len();
    let n_top = ((rc.top_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]));
    let top = &order[..n_top];
    let top_w: Vec<f64> = top.iter().map(|&i| w[i]).collect();
    let cdf = util::cumulative(&top_w);
    let shrink_var = rc.shrink * rc.shrink;
    let mut comps = Vec::with_capacity(n);
    for _ in 0..n {
        let src = &mixture.components()[top[util::draw_index(&cdf, rng)]];
        let sd = src.cov().axis_stds();
        let mean: Vec<f64> = src
            .mean()
            .iter()
            .zip(&sd)
            .map(|(&mu, &s)| {
                let e: f64 = rng.sample(StandardNormal);
                mu + rc.shrink * rc.jitter * s * e
            })
            .collect();
        let cov = if rc.shrink == 1.0 {
            src.cov().clone()
        } else {
            src.cov().scaled(shrink_var)?
        };
        comps.push(GaussianComponent::new(mean, cov)?);
    }
    Mixture::uniform(comps)
}

/// Wall-clock totals across stages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub bank_build: Duration,
    pub optimize: Duration,
    pub resample: Duration,
}

#[derive(Debug, Clone)]
pub struct SamplerResult {
    pub weights: Vec<f64>,
    /// Last-stage mixture carrying the optimized weights.
    pub mixture: Mixture,
    pub ensemble: Ensemble,
    pub traces: Vec<OptimTrace>,
    pub timings: PhaseTimings,
}

/// Full pipeline: per stage build a bank, optimize the weights, and refine;
/// the last stage ends with stratified resampling.
pub fn run_wgma<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    init: &Mixture,
    cfg: &WgmaConfig,
    rc: Option<&RefineConfig>,
    m: usize,
    rng: &mut R,
) -> Result<SamplerResult> {
    cfg.validate()?;
    check_dim(init.dim(), target.dim())?;
    if let Some(rc) = rc {
        rc.validate()?;
    }
    let stages = rc.map_or(1, |r| r.stages);
    let mut timings = PhaseTimings::default();
    let mut traces = Vec::with_capacity(stages);
    let mut mixture = init.clone();
    let mut stage_cfg = cfg.clone();
    for s in 0..stages {
        let t0 = Instant::now();
        let bank = build_bank(&mixture, m, target, rng)?;
        timings.bank_build += t0.elapsed();

        let t0 = Instant::now();
        let (w, trace) = optimize_weights(&bank, &stage_cfg, rng)?;
        timings.optimize += t0.elapsed();
        traces.push(trace);

        if s + 1 < stages {
            let t0 = Instant::now();
            mixture = refine_stage(&mixture, &w, rc.expect("stages > 1 implies refine config"), rng)?;
            timings.bank_build += t0.elapsed();
            stage_cfg.init = InitWeights::Uniform;
        } else {
            let t0 = Instant::now();
            let ensemble = stratified_resample(&bank, &w, cfg.ensemble_size, rng)?;
            timings.resample += t0.elapsed();
            let mixture = mixture.with_weights(w.clone())?;
            return Ok(SamplerResult {
                weights: w,
                mixture,
                ensemble,
                traces,
                timings,
            });
        }
    }
    unreachable!("stages >= 1")
}

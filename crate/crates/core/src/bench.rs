//! Experiment configuration, reference samplers, and the end-to-end runner
//! behind the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boed::{greedy_allocate, per_dose_gains, write_allocation_csv, DoseDesignProblem};
use crate::emgma::{run_emgma, EmConfig};
use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{Covariance, GaussianComponent, Mixture};
use crate::lma::{build_laplace_mixture, find_modes, fit_lma_from_samples, LmaConfig};
use crate::metrics::{
    kl_hist, ks_stat_1d, mmd2_unbiased, tv_distance_hist, wasserstein1_1d, write_metrics_csv,
    MetricRow, SampleSet, DEFAULT_MMD_SCALES,
};
use crate::resample::Ensemble;
use crate::target::{make_zoo_target, TargetDensity, ZooSpec};
use crate::wgma::{run_wgma, write_traces_csv, Optimizer, RefineConfig, WgmaConfig};

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of phase `phase` derived from the global seed: `splitmix64(seed ^ splitmix64(phase))`.
/// Each phase owns an independent stream, so adding a phase leaves the others untouched.
pub fn sub_seed(seed: u64, phase: u64) -> u64 {
    splitmix64(seed ^ splitmix64(phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    Sampler = 2,
    Reference = 3,
    Metrics = 4,
}

pub fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, phase as u64))
}

/// Random-walk Metropolis chain with its acceptance rate.
#[derive(Debug, Clone)]
pub struct MhChain {
    pub samples: SampleSet,
    pub acceptance_rate: f64,
}

/// Random-walk Metropolis with an isotropic Gaussian proposal.
pub fn mh_chain<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    init: &[f64],
    proposal_std: f64,
    burn_in: usize,
    keep: usize,
    rng: &mut R,
) -> Result<MhChain> {
    check_dim(target.dim(), init.len())?;
    if !(proposal_std > 0.0 && proposal_std.is_finite()) {
        return Err(GmaError::InvalidParameter(format!(
            "proposal std must be > 0, got {proposal_std}"
        )));
    }
    if keep == 0 {
        return Err(GmaError::InvalidParameter("keep must be >= 1".into()));
    }
    let mut x = init.to_vec();
    let mut lp = target.eval(&x);
    if !lp.is_finite() {
        return Err(GmaError::InvalidParameter(format!(
            "target log-density at the initial point is {lp}"
        )));
    }
    let d = x.len();
    let mut out = Vec::with_capacity(keep * d);
    let mut accepted = 0usize;
    let mut prop = vec![0.0; d];
    for step in 0..burn_in + keep {
        for (p, xi) in prop.iter_mut().zip(&x) {
            let e: f64 = rng.sample(StandardNormal);
            *p = xi + proposal_std * e;
        }
        let lq = target.eval(&prop);
        let u = 1.0 - rng.random::<f64>();
        if lq.is_finite() && u.ln() < lq - lp {
            x.copy_from_slice(&prop);
            lp = lq;
            accepted += 1;
        }
        if step >= burn_in {
            out.extend_from_slice(&x);
        }
    }
    Ok(MhChain {
        samples: SampleSet::new(d, out)?,
        acceptance_rate: accepted as f64 / (burn_in + keep) as f64,
    })
}

pub fn mh_sample<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    init: &[f64],
    proposal_std: f64,
    burn_in: usize,
    keep: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    mh_chain(target, init, proposal_std, burn_in, keep, rng).map(|c| c.samples)
}

/// Draws from a 1D target by trapezoidal normalization on a grid and
/// inverse-CDF sampling, interpolating the CDF linearly between nodes.
pub fn grid_inverse_cdf_1d<R: Rng + ?Sized>(
    target: &dyn TargetDensity,
    range: (f64, f64),
    step: f64,
    count: usize,
    rng: &mut R,
) -> Result<SampleSet> {
    check_dim(1, target.dim())?;
    let (lo, hi) = range;
    if !(step > 0.0 && step.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("grid step must be > 0, got {step}")));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("empty grid range [{lo}, {hi}]")));
    }
    if count == 0 {
        return Err(GmaError::InvalidParameter("count must be >= 1".into()));
    }
    let n = ((hi - lo) / step).ceil() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (lo + k as f64 * step).min(hi)).collect();
    let lp: Vec<f64> = xs.iter().map(|&x| target.eval(&[x])).collect();
    let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(GmaError::DegenerateBank(
            "target has zero mass over the grid range".into(),
        ));
    }
    let p: Vec<f64> = lp.iter().map(|v| (v - m).exp()).collect();
    let mut cdf = vec![0.0; xs.len()];
    for k in 1..xs.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (p[k] + p[k - 1]) * (xs[k] - xs[k - 1]);
    }
    let total = *cdf.last().unwrap();
    if !(total > 0.0) {
        return Err(GmaError::DegenerateBank(
            "target has zero mass over the grid range".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = (1.0 - rng.random::<f64>()) * total;
        let k = cdf.partition_point(|&c| c < t).clamp(1, xs.len() - 1);
        let width = cdf[k] - cdf[k - 1];
        let frac = if width > 0.0 { (t - cdf[k - 1]) / width } else { 0.5 };
        out.push(xs[k - 1] + frac.clamp(0.0, 1.0) * (xs[k] - xs[k - 1]));
    }
    SampleSet::from_1d(out)
}

/// Where the reference samples for metrics come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    ExactMixture {
        size: usize,
    },
    GridInverseCdf {
        size: usize,
        lower: f64,
        upper: f64,
        #[serde(default = "default_grid_step")]
        step: f64,
    },
    Mh {
        size: usize,
        init: Vec<f64>,
        proposal_std: f64,
        #[serde(default)]
        burn_in: usize,
    },
}

fn default_grid_step() -> f64 {
    1e-3
}

impl ReferenceSpec {
    pub fn size(&self) -> usize {
        match self {
            ReferenceSpec::ExactMixture { size }
            | ReferenceSpec::GridInverseCdf { size, .. }
            | ReferenceSpec::Mh { size, .. } => *size,
        }
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        spec: &ZooSpec,
        target: &dyn TargetDensity,
        rng: &mut R,
    ) -> Result<SampleSet> {
        match self {
            ReferenceSpec::ExactMixture { size } => {
                let mix = spec.exact_mixture()?.ok_or_else(|| {
                    GmaError::InvalidParameter(format!(
                        "target '{}' is not a closed-form mixture; use grid-inverse-cdf or mh",
                        spec.name()
                    ))
                })?;
                let (pts, _) = mix.sample_many(*size, rng);
                SampleSet::new(mix.dim(), pts)
            }
            ReferenceSpec::GridInverseCdf {
                size,
                lower,
                upper,
                step,
            } => grid_inverse_cdf_1d(target, (*lower, *upper), *step, *size, rng),
            ReferenceSpec::Mh {
                size,
                init,
                proposal_std,
                burn_in,
            } => mh_sample(target, init, *proposal_std, *burn_in, *size, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    W1,
    Ks,
    Mmd2,
    Tv,
    Kl,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::W1 => "w1",
            Metric::Ks => "ks",
            Metric::Mmd2 => "mmd2",
            Metric::Tv => "tv",
            Metric::Kl => "kl",
        }
    }

    fn one_dimensional(self) -> bool {
        matches!(self, Metric::W1 | Metric::Ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRequest {
    pub reference: ReferenceSpec,
    /// Empty means every metric defined for the target dimension.
    #[serde(default)]
    pub list: Vec<Metric>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Pseudo-count added to every histogram bin before the KL divergence.
    #[serde(default = "default_kl_smoothing")]
    pub kl_smoothing: f64,
    #[serde(default = "default_scales")]
    pub mmd_scales: Vec<f64>,
}

fn default_bins() -> usize {
    60
}

fn default_kl_smoothing() -> f64 {
    0.5
}

fn default_scales() -> Vec<f64> {
    DEFAULT_MMD_SCALES.to_vec()
}

/// Initial component layout; all covariances are isotropic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitMixtureSpec {
    /// Evenly spaced means over the box, `per_axis[k]` along axis `k`.
    /// With `variance_range = [a, b]` the variances run linearly from `a` to `b`
    /// across components; otherwise every component has `variance`.
    Lattice {
        lower: Vec<f64>,
        upper: Vec<f64>,
        per_axis: Vec<usize>,
        #[serde(default)]
        variance: Option<f64>,
        #[serde(default)]
        variance_range: Option<(f64, f64)>,
    },
    /// `n` means drawn uniformly from the box.
    RandomBox {
        n: usize,
        lower: Vec<f64>,
        upper: Vec<f64>,
        variance: f64,
    },
    /// `n` means evenly spaced on a circle of `radius` with a random phase.
    Ring {
        n: usize,
        radius: f64,
        variance: f64,
    },
    Explicit {
        mixture: Mixture,
    },
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl InitMixtureSpec {
    pub fn build<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Mixture> {
        let bad = |m: String| Err(GmaError::InvalidParameter(m));
        match self {
            InitMixtureSpec::Lattice {
                lower,
                upper,
                per_axis,
                variance,
                variance_range,
            } => {
                check_dim(dim, lower.len())?;
                check_dim(dim, upper.len())?;
                check_dim(dim, per_axis.len())?;
                if per_axis.contains(&0) {
                    return bad("per_axis counts must be >= 1".into());
                }
                let axes: Vec<Vec<f64>> = (0..dim).map(|k| linspace(lower[k], upper[k], per_axis[k])).collect();
                let n: usize = per_axis.iter().product();
                let mut means = Vec::with_capacity(n);
                for idx in 0..n {
                    let mut rem = idx;
                    let mut p = vec![0.0; dim];
                    for k in (0..dim).rev() {
                        p[k] = axes[k][rem % per_axis[k]];
                        rem /= per_axis[k];
                    }
                    means.push(p);
                }
                let vars: Vec<f64> = match (variance, variance_range) {
                    (Some(v), None) => vec![*v; n],
                    (None, Some((a, b))) => linspace(*a, *b, n),
                    _ => return bad("lattice needs exactly one of variance or variance_range".into()),
                };
                let comps = means
                    .into_iter()
                    .zip(vars)
                    .map(|(m, v)| GaussianComponent::new(m, Covariance::isotropic(dim, v)?))
                    .collect::<Result<Vec<_>>>()?;
                Mixture::uniform(comps)
            }
            InitMixtureSpec::RandomBox {
                n,
                lower,
                upper,
                variance,
            } => {
                check_dim(dim, lower.len())?;
                check_dim(dim, upper.len())?;
                if *n == 0 {
                    return bad("n must be >= 1".into());
                }
                let comps = (0..*n)
                    .map(|_| {
                        let m: Vec<f64> = (0..dim)
                            .map(|k| lower[k] + (upper[k] - lower[k]) * rng.random::<f64>())
                            .collect();
                        GaussianComponent::new(m, Covariance::isotropic(dim, *variance)?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Mixture::uniform(comps)
            }
            InitMixtureSpec::Ring { n, radius, variance } => {
                if dim != 2 {
                    return bad("ring initialization is two-dimensional".into());
                }
                if *n == 0 {
                    return bad("n must be >= 1".into());
                }
                let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                let comps = (0..*n)
                    .map(|k| {
                        let a = phase + 2.0 * std::f64::consts::PI * k as f64 / *n as f64;
                        GaussianComponent::new(
                            vec![radius * a.cos(), radius * a.sin()],
                            Covariance::isotropic(2, *variance)?,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Mixture::uniform(comps)
            }
            InitMixtureSpec::Explicit { mixture } => {
                check_dim(dim, mixture.dim())?;
                Ok(mixture.clone())
            }
        }
    }
}

fn default_m() -> usize {
    200
}

fn default_draws() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    WgmaPgd {
        init: InitMixtureSpec,
        #[serde(default = "default_m")]
        samples_per_component: usize,
        #[serde(default)]
        wgma: WgmaConfig,
        #[serde(default)]
        refine: Option<RefineConfig>,
    },
    WgmaMd {
        init: InitMixtureSpec,
        #[serde(default = "default_m")]
        samples_per_component: usize,
        #[serde(default)]
        wgma: WgmaConfig,
        #[serde(default)]
        refine: Option<RefineConfig>,
    },
    /// Laplace mixture; with `wgma` set, the mixture seeds a weights-only run.
    Lma {
        lma: LmaConfig,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        wgma: Option<WgmaConfig>,
        #[serde(default = "default_m")]
        samples_per_component: usize,
    },
    Emgma {
        init: InitMixtureSpec,
        #[serde(default)]
        em: EmConfig,
        #[serde(default = "default_draws")]
        draws: usize,
    },
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::WgmaPgd { .. } => "wgma-pgd",
            SamplerSpec::WgmaMd { .. } => "wgma-md",
            SamplerSpec::Lma { .. } => "lma",
            SamplerSpec::Emgma { .. } => "emgma",
        }
    }
}

/// One experiment, read from a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub target: ZooSpec,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub metrics: Option<MetricsRequest>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("gma-out")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(GmaError::InvalidParameter(
                "no seed: set it in the config, pass --seed, or export GMA_SEED".into(),
            ));
        }
        let dim = self.target.dim();
        match &self.sampler {
            SamplerSpec::WgmaPgd {
                samples_per_component,
                wgma,
                refine,
                ..
            }
            | SamplerSpec::WgmaMd {
                samples_per_component,
                wgma,
                refine,
                ..
            } => {
                wgma.validate()?;
                if let Some(r) = refine {
                    r.validate()?;
                }
                if *samples_per_component == 0 {
                    return Err(GmaError::InvalidParameter("samples_per_component must be >= 1".into()));
                }
            }
            SamplerSpec::Lma {
                lma,
                draws,
                wgma,
                samples_per_component,
            } => {
                lma.validate(dim)?;
                if let Some(w) = wgma {
                    w.validate()?;
                    if *samples_per_component == 0 {
                        return Err(GmaError::InvalidParameter("samples_per_component must be >= 1".into()));
                    }
                } else if *draws == 0 {
                    return Err(GmaError::InvalidParameter("draws must be >= 1".into()));
                }
            }
            SamplerSpec::Emgma { em, draws, .. } => {
                em.validate()?;
                if *draws == 0 {
                    return Err(GmaError::InvalidParameter("draws must be >= 1".into()));
                }
            }
        }
        if let Some(m) = &self.metrics {
            if m.reference.size() < 2 {
                return Err(GmaError::InvalidParameter("reference size must be >= 2".into()));
            }
            if m.bins == 0 {
                return Err(GmaError::InvalidParameter("bins must be >= 1".into()));
            }
            if dim > 2 && m.list.iter().any(|k| matches!(k, Metric::Tv | Metric::Kl)) {
                return Err(GmaError::InvalidParameter("histogram metrics cover 1D and 2D only".into()));
            }
            if dim != 1 && m.list.iter().any(|k| k.one_dimensional()) {
                return Err(GmaError::InvalidParameter(format!(
                    "w1 and ks need a one-dimensional target, got dimension {dim}"
                )));
            }
            if matches!(m.reference, ReferenceSpec::GridInverseCdf { .. }) && dim != 1 {
                return Err(GmaError::InvalidParameter("grid-inverse-cdf reference is one-dimensional".into()));
            }
            if matches!(m.reference, ReferenceSpec::ExactMixture { .. })
                && self.target.exact_mixture()?.is_none()
            {
                return Err(GmaError::InvalidParameter(format!(
                    "target '{}' has no exact mixture reference",
                    self.target.name()
                )));
            }
        }
        Ok(())
    }
}

/// Seconds spent per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timings {
    pub init: f64,
    pub bank_build: f64,
    pub optimize: f64,
    pub resample: f64,
    pub reference: f64,
    pub metrics: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub ensemble: Ensemble,
    pub mixture: Mixture,
    pub metrics: Vec<MetricRow>,
    pub timings: Timings,
    pub artifacts: Vec<PathBuf>,
}

pub const ENSEMBLE_CSV: &str = "ensemble.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const MIXTURE_JSON: &str = "mixture.json";
pub const MANIFEST_JSON: &str = "manifest.json";

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn ensemble_from_draws(dim: usize, pts: Vec<f64>, labels: Vec<usize>) -> Ensemble {
    Ensemble {
        dim,
        points: pts,
        provenance: labels.into_iter().enumerate().map(|(k, i)| (i, k)).collect(),
    }
}

/// Runs the configured sampler, scores it if metrics were requested, and
/// writes `ensemble.csv`, `trace.csv`, `mixture.json`, optionally
/// `metrics.csv`, and `manifest.json` into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let seed = cfg.seed.expect("validated");
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir)?;
    let target = make_zoo_target(&cfg.target)?;
    let dim = target.dim();
    let mut timings = Timings::default();
    let mut init_rng = phase_rng(seed, Phase::Init);
    let mut rng = phase_rng(seed, Phase::Sampler);
    let mut trace_buf = Vec::new();

    let (ensemble, mixture) = match &cfg.sampler {
        SamplerSpec::WgmaPgd {
            init,
            samples_per_component,
            wgma,
            refine,
        }
        | SamplerSpec::WgmaMd {
            init,
            samples_per_component,
            wgma,
            refine,
        } => {
            let t0 = Instant::now();
            let init_mix = init.build(dim, &mut init_rng)?;
            timings.init = secs(t0);
            let mut wcfg = wgma.clone();
            wcfg.optimizer = if matches!(cfg.sampler, SamplerSpec::WgmaMd { .. }) {
                Optimizer::Md
            } else {
                Optimizer::Pgd
            };
            let res = run_wgma(target.as_ref(), &init_mix, &wcfg, refine.as_ref(), *samples_per_component, &mut rng)?;
            timings.bank_build = res.timings.bank_build.as_secs_f64();
            timings.optimize = res.timings.optimize.as_secs_f64();
            timings.resample = res.timings.resample.as_secs_f64();
            write_traces_csv(&res.traces, &mut trace_buf)?;
            (res.ensemble, res.mixture)
        }
        SamplerSpec::Lma {
            lma,
            draws,
            wgma,
            samples_per_component,
        } => {
            let t0 = Instant::now();
            let modes = find_modes(target.as_ref(), lma, &mut init_rng)?;
            let lap = build_laplace_mixture(&modes, lma.kappa, lma.lambda)?;
            timings.init = secs(t0);
            match wgma {
                Some(wcfg) => {
                    let res = run_wgma(target.as_ref(), &lap, wcfg, None, *samples_per_component, &mut rng)?;
                    timings.bank_build = res.timings.bank_build.as_secs_f64();
                    timings.optimize = res.timings.optimize.as_secs_f64();
                    timings.resample = res.timings.resample.as_secs_f64();
                    write_traces_csv(&res.traces, &mut trace_buf)?;
                    (res.ensemble, res.mixture)
                }
                None => {
                    write_mode_table(&modes, &lap, &mut trace_buf)?;
                    let t0 = Instant::now();
                    let (pts, labels) = lap.sample_many(*draws, &mut rng);
                    timings.resample = secs(t0);
                    (ensemble_from_draws(dim, pts, labels), lap)
                }
            }
        }
        SamplerSpec::Emgma { init, em, draws } => {
            let t0 = Instant::now();
            let init_mix = init.build(dim, &mut init_rng)?;
            timings.init = secs(t0);
            let t0 = Instant::now();
            let (fit, trace) = run_emgma(target.as_ref(), &init_mix, em, &mut rng)?;
            timings.optimize = secs(t0);
            trace.write_csv(&mut trace_buf)?;
            let t0 = Instant::now();
            let (pts, labels) = fit.sample_many(*draws, &mut rng);
            timings.resample = secs(t0);
            (ensemble_from_draws(dim, pts, labels), fit)
        }
    };

    let mut artifacts = Vec::new();
    let ens_path = out_dir.join(ENSEMBLE_CSV);
    ensemble.export_csv(&ens_path)?;
    artifacts.push(ens_path);
    let trace_path = out_dir.join(TRACE_CSV);
    fs::write(&trace_path, &trace_buf)?;
    artifacts.push(trace_path);
    let mix_path = out_dir.join(MIXTURE_JSON);
    fs::write(&mix_path, serde_json::to_string_pretty(&mixture)?)?;
    artifacts.push(mix_path);

    let mut rows = Vec::new();
    if let Some(req) = &cfg.metrics {
        let t0 = Instant::now();
        let reference = req.reference.draw(&cfg.target, target.as_ref(), &mut phase_rng(seed, Phase::Reference))?;
        timings.reference = secs(t0);
        let t0 = Instant::now();
        let sample = SampleSet::new(dim, ensemble.points.clone())?;
        rows = compute_metrics(cfg.sampler.name(), &sample, &reference, req)?;
        timings.metrics = secs(t0);
        let path = out_dir.join(METRICS_CSV);
        write_metrics_csv(&rows, fs::File::create(&path)?)?;
        artifacts.push(path);
    }

    let manifest = serde_json::json!({
        "status": "ok",
        "seed": seed,
        "sub_seeds": {
            "init": sub_seed(seed, Phase::Init as u64),
            "sampler": sub_seed(seed, Phase::Sampler as u64),
            "reference": sub_seed(seed, Phase::Reference as u64),
        },
        "sampler": cfg.sampler.name(),
        "target": cfg.target.name(),
        "ensemble_size": ensemble.len(),
        "timings_s": timings,
        "artifacts": artifacts.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "config": cfg,
    });
    let man_path = out_dir.join(MANIFEST_JSON);
    fs::write(&man_path, serde_json::to_string_pretty(&manifest)?)?;
    artifacts.push(man_path);

    Ok(RunSummary {
        ensemble,
        mixture,
        metrics: rows,
        timings,
        artifacts,
    })
}

fn write_mode_table<W: std::io::Write>(
    modes: &[crate::lma::ModeEstimate],
    mix: &Mixture,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = mix.dim();
    let mut header = vec!["mode".to_string(), "log_density".into(), "weight".into()];
    header.extend((0..d).map(|k| format!("x{k}")));
    out.write_record(&header)?;
    for (j, c) in mix.components().iter().enumerate() {
        let ld = modes
            .iter()
            .find(|m| m.location.as_slice() == c.mean())
            .map_or(f64::NAN, |m| m.log_density);
        let mut rec = vec![j.to_string(), format!("{ld}"), format!("{}", mix.weights()[j])];
        rec.extend(c.mean().iter().map(|v| format!("{v}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Scores `sample` against `reference`. W1 compares the first `min(n, m)`
/// points of each set, since it needs equal sizes.
pub fn compute_metrics(
    method: &str,
    sample: &SampleSet,
    reference: &SampleSet,
    req: &MetricsRequest,
) -> Result<Vec<MetricRow>> {
    let dim = sample.dim();
    let list: Vec<Metric> = if req.list.is_empty() {
        [Metric::W1, Metric::Ks, Metric::Mmd2, Metric::Tv, Metric::Kl]
            .into_iter()
            .filter(|m| dim == 1 || (!m.one_dimensional() && (dim <= 2 || *m == Metric::Mmd2)))
            .collect()
    } else {
        req.list.clone()
    };
    let mut rows = Vec::with_capacity(list.len());
    for m in list {
        let value = match m {
            Metric::W1 => {
                let k = sample.len().min(reference.len());
                let a = SampleSet::from_1d(sample.points()[..k].to_vec())?;
                let b = SampleSet::from_1d(reference.points()[..k].to_vec())?;
                wasserstein1_1d(&a, &b)?
            }
            Metric::Ks => ks_stat_1d(sample, reference)?,
            Metric::Mmd2 => mmd2_unbiased(sample, reference, &req.mmd_scales)?,
            Metric::Tv => tv_distance_hist(sample, reference, req.bins, None)?,
            Metric::Kl => kl_hist(sample, reference, req.bins, None, req.kl_smoothing)?,
        };
        rows.push(MetricRow {
            method: method.to_string(),
            metric: m.name().to_string(),
            value,
        });
    }
    Ok(rows)
}

/// Empirical mixture fit from a CSV of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmaFitConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// CSV with a header row and one point per line.
    pub input: PathBuf,
    pub components: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub md_steps: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_ridge() -> f64 {
    1e-6
}

fn default_eta() -> f64 {
    0.1
}

/// Reads a headed CSV of numeric columns into a sample set.
pub fn read_points_csv(path: &Path) -> Result<SampleSet> {
    let mut rdr = csv::Reader::from_path(path)?;
    let dim = rdr.headers()?.len();
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        check_dim(dim, rec.len())?;
        for field in rec.iter() {
            pts.push(field.trim().parse::<f64>().map_err(|e| {
                GmaError::InvalidParameter(format!("bad number '{field}' in {}: {e}", path.display()))
            })?);
        }
    }
    SampleSet::new(dim, pts)
}

pub fn run_lma_fit(cfg: &LmaFitConfig) -> Result<Mixture> {
    let seed = cfg.seed.ok_or_else(|| {
        GmaError::InvalidParameter("no seed: set it in the config, pass --seed, or export GMA_SEED".into())
    })?;
    let samples = read_points_csv(&cfg.input)?;
    let t0 = Instant::now();
    let mix = fit_lma_from_samples(
        &samples,
        cfg.components,
        cfg.ridge,
        cfg.md_steps,
        cfg.eta,
        &mut phase_rng(seed, Phase::Sampler),
    )?;
    let elapsed = secs(t0);
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(cfg.output_dir.join(MIXTURE_JSON), serde_json::to_string_pretty(&mix)?)?;
    let manifest = serde_json::json!({
        "status": "ok",
        "seed": seed,
        "timings_s": { "fit": elapsed },
        "artifacts": [MIXTURE_JSON],
        "config": cfg,
    });
    fs::write(cfg.output_dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(mix)
}

/// Dose allocation: either explicit `(α, β)` samples or draws from a 2D prior mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoedConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub doses: Vec<f64>,
    pub budget: usize,
    /// Defaults to the mean log-dose.
    #[serde(default)]
    pub x_offset: Option<f64>,
    #[serde(default)]
    pub param_samples: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub prior: Option<Mixture>,
    #[serde(default = "default_prior_draws")]
    pub prior_draws: usize,
    #[serde(default = "default_true")]
    pub one_per_dose_floor: bool,
}

fn default_prior_draws() -> usize {
    4000
}

fn default_true() -> bool {
    true
}

pub const ALLOCATION_CSV: &str = "allocation.csv";

/// Returns `(Δ, counts)` and writes `allocation.csv` plus a manifest.
pub fn run_boed(cfg: &BoedConfig) -> Result<(Vec<f64>, Vec<usize>)> {
    let t0 = Instant::now();
    let param_samples = match (&cfg.param_samples, &cfg.prior) {
        (Some(s), None) => s.clone(),
        (None, Some(prior)) => {
            check_dim(2, prior.dim())?;
            let seed = cfg.seed.ok_or_else(|| {
                GmaError::InvalidParameter("drawing from a prior needs a seed".into())
            })?;
            let (pts, _) = prior.sample_many(cfg.prior_draws, &mut phase_rng(seed, Phase::Sampler));
            pts.chunks_exact(2).map(|p| (p[0], p[1])).collect()
        }
        _ => {
            return Err(GmaError::InvalidParameter(
                "give exactly one of param_samples or prior".into(),
            ))
        }
    };
    let x_offset = match cfg.x_offset {
        Some(x) => x,
        None => {
            if cfg.doses.iter().any(|d| !(*d > 0.0)) {
                return Err(GmaError::InvalidParameter("doses must be positive".into()));
            }
            cfg.doses.iter().map(|d| d.ln()).sum::<f64>() / cfg.doses.len().max(1) as f64
        }
    };
    let problem = DoseDesignProblem {
        doses: cfg.doses.clone(),
        budget: cfg.budget,
        x_offset,
        param_samples,
    };
    let delta = per_dose_gains(&problem)?;
    let counts = greedy_allocate(&delta, cfg.budget, cfg.one_per_dose_floor)?;
    let elapsed = secs(t0);
    fs::create_dir_all(&cfg.output_dir)?;
    write_allocation_csv(&cfg.doses, &delta, &counts, fs::File::create(cfg.output_dir.join(ALLOCATION_CSV))?)?;
    let manifest = serde_json::json!({
        "status": "ok",
        "seed": cfg.seed,
        "x_offset": x_offset,
        "allocation": counts,
        "timings_s": { "design": elapsed },
        "artifacts": [ALLOCATION_CSV],
        "config": cfg,
    });
    fs::write(cfg.output_dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok((delta, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::FnTarget;

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (1..=4).map(|p| sub_seed(42, p)).collect();
        let b: Vec<u64> = (1..=4).map(|p| sub_seed(42, p)).collect();
        assert_eq!(a, b);
        for i in 0..4 {
            for j in 0..i {
                assert_ne!(a[i], a[j]);
            }
        }
        assert_ne!(sub_seed(42, 1), sub_seed(43, 1));
        // reference value of the finalizer
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn mh_on_standard_normal() {
        let t = FnTarget::new(1, |z: &[f64]| -0.5 * z[0] * z[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = mh_sample(&t, &[0.0], 2.4, 1000, 50_000, &mut rng).unwrap();
        let x = s.points();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((0.9..=1.1).contains(&var), "var = {var}");
        // chain autocorrelation inflates the standard error; allow for it
        assert!(mean.abs() < 3.0 * (var / n).sqrt() * 3.0, "mean = {mean}");
        let wide = mh_chain(&t, &[0.0], 100.0, 0, 5000, &mut rng).unwrap();
        assert!(wide.acceptance_rate < 0.05);
        let dead = FnTarget::new(1, |_: &[f64]| f64::NEG_INFINITY);
        assert!(mh_sample(&dead, &[0.0], 1.0, 0, 10, &mut rng).is_err());
        assert!(mh_sample(&t, &[0.0], 0.0, 0, 10, &mut rng).is_err());
    }

    #[test]
    fn grid_sampler_uniform_and_normal() {
        let u = FnTarget::new(1, |z: &[f64]| if (0.0..=1.0).contains(&z[0]) { 0.0 } else { f64::NEG_INFINITY });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = grid_inverse_cdf_1d(&u, (0.0, 1.0), 1e-3, 100_000, &mut rng).unwrap();
        let mean = s.points().iter().sum::<f64>() / 1e5;
        assert!((0.49..=0.51).contains(&mean));

        let n = FnTarget::new(1, |z: &[f64]| -0.5 * z[0] * z[0]);
        let s = grid_inverse_cdf_1d(&n, (-8.0, 8.0), 1e-3, 10_000, &mut rng).unwrap();
        let mut x = s.points().to_vec();
        x.sort_by(f64::total_cmp);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal.cdf(v);
                (f - i as f64 / 1e4).abs().max(((i + 1) as f64 / 1e4 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.01, "ks = {ks}");

        let far = FnTarget::new(1, |z: &[f64]| if z[0] > 100.0 { 0.0 } else { f64::NEG_INFINITY });
        assert!(grid_inverse_cdf_1d(&far, (-1.0, 1.0), 1e-3, 10, &mut rng).is_err());
    }

    #[test]
    fn lattice_init_layout() {
        let spec = InitMixtureSpec::Lattice {
            lower: vec![-6.0],
            upper: vec![6.0],
            per_axis: vec![10],
            variance: None,
            variance_range: Some((0.25, 0.49)),
        };
        let m = spec.build(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m.components()[0].mean(), &[-6.0]);
        assert_eq!(m.components()[9].mean(), &[6.0]);
        assert!((m.components()[9].cov().axis_stds()[0] - 0.7).abs() < 1e-15);
        assert!((m.components()[0].cov().axis_stds()[0] - 0.5).abs() < 1e-15);
        let spec = InitMixtureSpec::Lattice {
            lower: vec![-1.0, -2.0],
            upper: vec![1.0, 2.0],
            per_axis: vec![2, 3],
            variance: Some(0.5),
            variance_range: None,
        };
        let m = spec.build(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.components()[1].mean(), &[-1.0, 0.0]);
        assert_eq!(m.components()[5].mean(), &[1.0, 2.0]);
    }

    #[test]
    fn config_parsing_and_validation() {
        let text = r#"{
            "target": {"name": "connected-trimodal"},
            "sampler": {"kind": "wgma-pgd", "init": {"kind": "lattice", "lower": [-6], "upper": [6], "per_axis": [10], "variance_range": [0.25, 0.49]},
                        "wgma": {"iterations": 120, "schedules": {"eta": {"rule": "harmonic", "eta0": 0.5}}}},
            "metrics": {"reference": {"source": "grid-inverse-cdf", "size": 2000, "lower": -10, "upper": 10}}
        }"#;
        let mut cfg = RunConfig::from_json(text).unwrap();
        assert!(cfg.validate().is_err(), "missing seed must be rejected");
        cfg.seed = Some(1);
        cfg.validate().unwrap();
        assert!(RunConfig::from_json(r#"{"target": {"name": "moon"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"target": {"name": "moon"}, "sampler": {"kind": "hmc"}}"#).is_err());
        let mut bad = cfg.clone();
        bad.target = ZooSpec::Moon;
        assert!(bad.validate().is_err(), "grid reference on a 2D target");
    }
}

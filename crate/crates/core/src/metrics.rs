//! Sample-based distances between an ensemble and a reference set.

use std::io::Write;

use crate::error::{check_dim, GmaError, Result};

/// Non-empty set of finite points of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
}

impl SampleSet {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(GmaError::InvalidParameter("dimension must be >= 1".into()));
        }
        if points.is_empty() {
            return Err(GmaError::EmptyInput("sample set has no points"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(GmaError::InvalidParameter(format!(
                "{} coordinates do not split into {dim}-vectors",
                points.len()
            )));
        }
        if let Some(v) = points.iter().find(|v| !v.is_finite()) {
            return Err(GmaError::NonFinite(format!("sample coordinate {v}")));
        }
        Ok(Self { dim, points })
    }

    pub fn from_1d(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim(dim, r.len())?;
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.points.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

fn require_1d(x: &SampleSet) -> Result<()> {
    if x.dim() != 1 {
        return Err(GmaError::InvalidParameter(format!(
            "one-dimensional metric given {}-dimensional samples",
            x.dim()
        )));
    }
    Ok(())
}

fn sorted(x: &SampleSet) -> Vec<f64> {
    let mut v = x.points().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean absolute difference of order statistics; sizes must match.
pub fn wasserstein1_1d(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    require_1d(x)?;
    require_1d(y)?;
    check_dim(x.len(), y.len())?;
    let (a, b) = (sorted(x), sorted(y));
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_stat_1d(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    require_1d(x)?;
    require_1d(y)?;
    let (a, b) = (sorted(x), sorted(y));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(best)
}

/// Default bandwidth multipliers of the RBF kernel sum.
pub const DEFAULT_MMD_SCALES: [f64; 3] = [0.5, 1.0, 2.0];

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `1 / (2 · median squared distance)` over the upper-triangular pairs of `y`.
pub fn median_heuristic_gamma(y: &SampleSet) -> Result<f64> {
    let n = y.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sqd(y.point(i), y.point(j)));
        }
    }
    if d.is_empty() {
        return Err(GmaError::InvalidParameter("median heuristic needs two points".into()));
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let med = if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    };
    if !(med > 0.0) {
        return Err(GmaError::InvalidParameter(
            "median pairwise distance of the reference set is zero".into(),
        ));
    }
    Ok(1.0 / (2.0 * med))
}

/// Unbiased MMD² with kernel `Σ_ℓ exp(−s_ℓ γ₀ ‖a − b‖²)`, `γ₀` from the
/// reference set `y` by the median heuristic.
pub fn mmd2_unbiased(x: &SampleSet, y: &SampleSet, scales: &[f64]) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    if x.len() < 2 || y.len() < 2 {
        return Err(GmaError::InvalidParameter("MMD² needs at least two points per set".into()));
    }
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(GmaError::InvalidParameter("bandwidth scales must be positive".into()));
    }
    let g0 = median_heuristic_gamma(y)?;
    mmd2_with_gamma(x, y, g0, scales)
}

/// Unbiased MMD² with an explicit base bandwidth.
pub fn mmd2_with_gamma(x: &SampleSet, y: &SampleSet, gamma0: f64, scales: &[f64]) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    let gammas: Vec<f64> = scales.iter().map(|s| s * gamma0).collect();
    let k = |a: &[f64], b: &[f64]| {
        let d = sqd(a, b);
        gammas.iter().map(|g| (-g * d).exp()).sum::<f64>()
    };
    let within = |s: &SampleSet| {
        let n = s.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                acc += k(s.point(i), s.point(j));
            }
        }
        2.0 * acc / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for a in x.iter() {
        for b in y.iter() {
            cross += k(a, b);
        }
    }
    Ok(within(x) + within(y) - 2.0 * cross / (x.len() * y.len()) as f64)
}

/// Per-axis histogram range.
pub type Range = Vec<(f64, f64)>;

/// Pooled per-axis min/max padded by 1% of the width (±0.5 for a zero width).
pub fn default_range(x: &SampleSet, y: &SampleSet) -> Result<Range> {
    check_dim(x.dim(), y.dim())?;
    Ok((0..x.dim())
        .map(|k| {
            let (lo, hi) = x
                .iter()
                .chain(y.iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
            let pad = if hi > lo { 0.01 * (hi - lo) } else { 0.5 };
            (lo - pad, hi + pad)
        })
        .collect())
}

/// Normalized histogram; points outside the range are ignored and the
/// remaining counts renormalized. The last bin on each axis is closed.
fn histogram(x: &SampleSet, bins: usize, range: &Range, smoothing: f64) -> Result<Vec<f64>> {
    let d = x.dim();
    let mut counts = vec![0.0; bins.pow(d as u32)];
    for p in x.iter() {
        let mut idx = 0usize;
        let mut inside = true;
        for k in 0..d {
            let (lo, hi) = range[k];
            if p[k] < lo || p[k] > hi {
                inside = false;
                break;
            }
            let b = (((p[k] - lo) / (hi - lo)) * bins as f64).floor() as usize;
            idx = idx * bins + b.min(bins - 1);
        }
        if inside {
            counts[idx] += 1.0;
        }
    }
    for c in counts.iter_mut() {
        *c += smoothing;
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(GmaError::EmptyInput("no sample falls inside the histogram range"));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

fn check_hist_args(x: &SampleSet, y: &SampleSet, bins: usize, range: &Range) -> Result<()> {
    check_dim(x.dim(), y.dim())?;
    if x.dim() > 2 {
        return Err(GmaError::Unsupported("histogram metrics cover 1D and 2D only".into()));
    }
    if bins == 0 {
        return Err(GmaError::InvalidParameter("bins must be >= 1".into()));
    }
    check_dim(x.dim(), range.len())?;
    for &(lo, hi) in range {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(GmaError::InvalidParameter(format!("empty histogram range [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Half the L1 distance between shared-bin histograms. `range = None` uses [`default_range`].
pub fn tv_distance_hist(x: &SampleSet, y: &SampleSet, bins: usize, range: Option<&Range>) -> Result<f64> {
    let range = match range {
        Some(r) => r.clone(),
        None => default_range(x, y)?,
    };
    check_hist_args(x, y, bins, &range)?;
    let p = histogram(x, bins, &range, 0.0)?;
    let q = histogram(y, bins, &range, 0.0)?;
    Ok(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Σ p̂ ln(p̂/q̂)` over bins with `p̂ > 0`; `+inf` when `q̂` vanishes there.
/// `smoothing` is added to every bin count of both histograms.
pub fn kl_hist(
    x: &SampleSet,
    y: &SampleSet,
    bins: usize,
    range: Option<&Range>,
    smoothing: f64,
) -> Result<f64> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("smoothing must be >= 0, got {smoothing}")));
    }
    let range = match range {
        Some(r) => r.clone(),
        None => default_range(x, y)?,
    };
    check_hist_args(x, y, bins, &range)?;
    let p = histogram(x, bins, &range, smoothing)?;
    let q = histogram(y, bins, &range, smoothing)?;
    let mut kl = 0.0;
    for (a, b) in p.iter().zip(&q) {
        if *a > 0.0 {
            if *b == 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// `method, metric, value` rows.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "metric", "value"])?;
    for r in rows {
        out.write_record([r.method.as_str(), r.metric.as_str(), &format!("{}", r.value)])?;
    }
    out.flush()?;
    Ok(())
}

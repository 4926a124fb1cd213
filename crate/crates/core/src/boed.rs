//! Dose-allocation design from a cloud of logistic dose-response parameters.

use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

/// Doses, replicate budget, log-dose centring offset, and `(α, β)` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseDesignProblem {
    pub doses: Vec<f64>,
    pub budget: usize,
    pub x_offset: f64,
    pub param_samples: Vec<(f64, f64)>,
}

impl DoseDesignProblem {
    pub fn validate(&self) -> Result<()> {
        if self.doses.is_empty() {
            return Err(GmaError::EmptyInput("design needs at least one dose"));
        }
        if let Some(d) = self.doses.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(GmaError::InvalidParameter(format!("doses must be positive, got {d}")));
        }
        if self.param_samples.is_empty() {
            return Err(GmaError::EmptyInput("design needs at least one parameter sample"));
        }
        if self
            .param_samples
            .iter()
            .any(|(a, b)| !a.is_finite() || !b.is_finite())
        {
            return Err(GmaError::NonFinite("parameter sample".into()));
        }
        Ok(())
    }
}

/// `−p ln p − (1−p) ln(1−p)` with `0 ln 0 = 0`.
pub fn bernoulli_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GmaError::InvalidParameter(format!("probability must lie in [0, 1], got {p}")));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: f64) -> f64 {
    let t = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    t(p) + t(1.0 - p)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Δ_k = h(mean_s P_sk) − mean_s h(P_sk)` with `P_sk = σ(α_s + β_s(ln d_k − x_offset))`.
pub fn per_dose_gains(prob: &DoseDesignProblem) -> Result<Vec<f64>> {
    prob.validate()?;
    let s = prob.param_samples.len() as f64;
    Ok(prob
        .doses
        .iter()
        .map(|&d| {
            let x = d.ln() - prob.x_offset;
            let (mut pbar, mut hbar) = (0.0, 0.0);
            for &(a, b) in &prob.param_samples {
                let p = logistic(a + b * x);
                pbar += p;
                hbar += entropy_unchecked(p);
            }
            entropy_unchecked((pbar / s).clamp(0.0, 1.0)) - hbar / s
        })
        .collect())
}

/// One replicate per dose when `floor` is set, then all remaining replicates
/// on the largest gain (lowest index on ties).
pub fn greedy_allocate(delta: &[f64], budget: usize, floor: bool) -> Result<Vec<usize>> {
    let k = delta.len();
    if k == 0 {
        return Err(GmaError::EmptyInput("no doses to allocate"));
    }
    if let Some(v) = delta.iter().find(|v| v.is_nan()) {
        return Err(GmaError::NonFinite(format!("gain {v}")));
    }
    let need = if floor { k } else { 1 };
    if budget < need {
        return Err(GmaError::InvalidParameter(format!(
            "budget {budget} is below the required minimum {need}"
        )));
    }
    let mut counts = vec![if floor { 1 } else { 0 }; k];
    let best = (0..k).fold(0, |b, i| if delta[i] > delta[b] { i } else { b });
    counts[best] += budget - counts.iter().sum::<usize>();
    Ok(counts)
}

/// Writes `dose, delta, count` rows.
pub fn write_allocation_csv<W: std::io::Write>(doses: &[f64], delta: &[f64], counts: &[usize], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dose", "delta", "count"])?;
    for ((d, g), c) in doses.iter().zip(delta).zip(counts) {
        out.write_record([format!("{d}"), format!("{g}"), c.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

//! Probability-simplex primitives shared by the weight optimizers.

use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

/// Floor applied to weights before taking logarithms.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// Euclidean projection onto the probability simplex by sort-and-threshold.
///
/// Ties are ordered by original index, and the result is divided by its sum
/// once more so that it sums to one up to the last rounding.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(GmaError::EmptyInput("cannot project an empty vector"));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite()) {
        return Err(GmaError::NonFinite(format!("projection input contains {x}")));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    // descending by value, stable on index
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));

    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cum += v[i];
        let t = (cum - 1.0) / (k + 1) as f64;
        if v[i] - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        // can only happen through cancellation; fall back to the argmax vertex
        w.iter_mut().for_each(|x| *x = 0.0);
        w[order[0]] = 1.0;
        return Ok(w);
    }
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// Normalized exponentiated-gradient step: `softmax((ln w − η g) / τ)`.
pub fn md_step(w: &[f64], g: &[f64], eta: f64, tau: f64) -> Result<Vec<f64>> {
    crate::error::check_dim(w.len(), g.len())?;
    if let Some(x) = g.iter().find(|x| !x.is_finite()) {
        return Err(GmaError::NonFinite(format!("gradient contains {x}")));
    }
    if !(tau >= 1.0 && tau.is_finite()) {
        return Err(GmaError::InvalidParameter(format!("temperature must be >= 1, got {tau}")));
    }
    let logits: Vec<f64> = w
        .iter()
        .zip(g)
        .map(|(&wi, &gi)| (wi.max(WEIGHT_FLOOR).ln() - eta * gi) / tau)
        .collect();
    Ok(softmax(&logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

/// `λ (1 + ln max(w_i, 1e-12))` per coordinate.
pub fn entropy_gradient(w: &[f64], lambda: f64) -> Vec<f64> {
    if lambda == 0.0 {
        return vec![0.0; w.len()];
    }
    w.iter()
        .map(|&wi| lambda * (1.0 + wi.max(WEIGHT_FLOOR).ln()))
        .collect()
}

/// `(1 − α) w_prev + α w_prop`.
pub fn convex_mix(w_prev: &[f64], w_prop: &[f64], alpha: f64) -> Vec<f64> {
    debug_assert_eq!(w_prev.len(), w_prop.len());
    w_prev
        .iter()
        .zip(w_prop)
        .map(|(&a, &b)| (1.0 - alpha) * a + alpha * b)
        .collect()
}

/// Coordinate-wise mean of the last `l` entries of `history`.
pub fn polyak_average(history: &[Vec<f64>], l: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(GmaError::InvalidParameter("Polyak window must be >= 1".into()));
    }
    if l > history.len() {
        return Err(GmaError::InvalidParameter(format!(
            "Polyak window {l} exceeds history length {}",
            history.len()
        )));
    }
    let tail = &history[history.len() - l..];
    let n = tail[0].len();
    let mut out = vec![0.0; n];
    for w in tail {
        for (o, x) in out.iter_mut().zip(w) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|x| *x /= l as f64);
    Ok(out)
}

/// Entropy in nats (`0 ln 0 = 0`) and the effective number of components `exp(H)`.
pub fn weight_entropy(w: &[f64]) -> (f64, f64) {
    let h: f64 = -w
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>();
    let h = h.max(0.0);
    (h, h.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaRule {
    /// `η₀ / k`
    Harmonic { eta0: f64 },
    /// `η₀ / √(k + k₀)`
    Sqrt { eta0: f64, k0: f64 },
    Constant { eta0: f64 },
}

impl EtaRule {
    pub fn eta0(&self) -> f64 {
        match *self {
            EtaRule::Harmonic { eta0 } | EtaRule::Sqrt { eta0, .. } | EtaRule::Constant { eta0 } => eta0,
        }
    }
}

/// Schedules for step size, tempering, entropy regularization, MD temperature,
/// convex mixing, and the Polyak tail window.
///
/// The defaults (`β_min = 1`, `λ₀ = 0`, `τ₀ = 1`, `α₀ = α_floor = 1`, `L = 0`)
/// disable every stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSet {
    pub eta: EtaRule,
    pub beta_min: f64,
    pub lambda0: f64,
    pub tau0: f64,
    pub alpha0: f64,
    pub alpha_floor: f64,
    pub polyak_window: usize,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        Self {
            eta: EtaRule::Harmonic { eta0: 0.5 },
            beta_min: 1.0,
            lambda0: 0.0,
            tau0: 1.0,
            alpha0: 1.0,
            alpha_floor: 1.0,
            polyak_window: 0,
        }
    }
}

/// Values at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub eta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl ScheduleSet {
    pub fn validate(&self, k_total: usize) -> Result<()> {
        let bad = |msg: String| Err(GmaError::InvalidParameter(msg));
        let eta0 = self.eta.eta0();
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return bad(format!("eta0 must be > 0, got {eta0}"));
        }
        if let EtaRule::Sqrt { k0, .. } = self.eta {
            if !(k0 >= 0.0 && k0.is_finite()) {
                return bad(format!("k0 must be >= 0, got {k0}"));
            }
        }
        if !(self.beta_min > 0.0 && self.beta_min <= 1.0) {
            return bad(format!("beta_min must lie in (0, 1], got {}", self.beta_min));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be >= 0, got {}", self.lambda0));
        }
        if !(self.tau0 >= 1.0 && self.tau0.is_finite()) {
            return bad(format!("tau0 must be >= 1, got {}", self.tau0));
        }
        if !(self.alpha0 > 0.0 && self.alpha0 <= 1.0) {
            return bad(format!("alpha0 must lie in (0, 1], got {}", self.alpha0));
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor <= self.alpha0) {
            return bad(format!(
                "alpha_floor must lie in (0, alpha0], got {}",
                self.alpha_floor
            ));
        }
        if self.polyak_window > k_total {
            return bad(format!(
                "Polyak window {} exceeds K = {k_total}",
                self.polyak_window
            ));
        }
        Ok(())
    }
}

/// Schedule values at iteration `k` of `k_total` (1-based).
pub fn schedule_at(s: &ScheduleSet, k: usize, k_total: usize) -> Result<ScheduleValues> {
    if k == 0 || k > k_total {
        return Err(GmaError::InvalidParameter(format!(
            "iteration {k} outside 1..={k_total}"
        )));
    }
    let kf = k as f64;
    let frac_left = 1.0 - kf / k_total as f64;
    let eta = match s.eta {
        EtaRule::Harmonic { eta0 } => eta0 / kf,
        EtaRule::Sqrt { eta0, k0 } => eta0 / (kf + k0).sqrt(),
        EtaRule::Constant { eta0 } => eta0,
    };
    let beta = if k_total == 1 {
        1.0
    } else {
        s.beta_min + (1.0 - s.beta_min) * (kf - 1.0) / (k_total as f64 - 1.0)
    };
    Ok(ScheduleValues {
        eta,
        beta,
        lambda: s.lambda0 * frac_left,
        tau: 1.0 + (s.tau0 - 1.0) * frac_left,
        alpha: s.alpha_floor.max(s.alpha0 * frac_left),
    })
}

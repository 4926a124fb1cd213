//! Gaussian components, mixtures over them, and the log-space kernels they share.
//!
//! Isotropic and diagonal covariances never materialize a dense matrix; the
//! full kind caches a lower Cholesky factor in row-major order and evaluates
//! quadratic forms by forward substitution.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, GmaError, Result};
use crate::util;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `ln Σ exp(v_i)`. Empty input is rejected.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(GmaError::EmptyInput("logsumexp needs at least one value"));
    }
    Ok(logsumexp_unchecked(values))
}

/// `logsumexp` without the emptiness check; returns −∞ for an empty slice.
pub fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

#[derive(Debug, Clone, PartialEq)]
enum CovKind {
    Isotropic { variance: f64, std: f64 },
    Diagonal { variances: Vec<f64>, stds: Vec<f64> },
    Full { matrix: DMatrix<f64>, chol: Vec<f64> },
}

/// Covariance of one Gaussian component with its cached factor and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    dim: usize,
    kind: CovKind,
    log_det: f64,
}

fn positive_variance(v: f64, what: &str) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(GmaError::InvalidParameter(format!(
            "{what} must be finite and > 0, got {v}"
        )));
    }
    Ok(())
}

impl Covariance {
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(GmaError::InvalidParameter("dimension must be >= 1".into()));
        }
        positive_variance(variance, "isotropic variance")?;
        Ok(Self {
            dim,
            kind: CovKind::Isotropic {
                variance,
                std: variance.sqrt(),
            },
            log_det: dim as f64 * variance.ln(),
        })
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(GmaError::InvalidParameter("dimension must be >= 1".into()));
        }
        for &v in &variances {
            positive_variance(v, "diagonal variance")?;
        }
        let log_det = variances.iter().map(|v| v.ln()).sum();
        let stds = variances.iter().map(|v| v.sqrt()).collect();
        Ok(Self {
            dim: variances.len(),
            kind: CovKind::Diagonal { variances, stds },
            log_det,
        })
    }

    /// Full symmetric positive-definite covariance. Non-PD input is an error;
    /// see [`Covariance::full_with_ridge`] for the explicit repair path.
    pub fn full(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(GmaError::InvalidParameter(format!(
                "covariance must be square and non-empty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(GmaError::NonFinite("covariance entry".into()));
        }
        let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return Err(GmaError::InvalidParameter(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let chol = sym.clone().cholesky().ok_or_else(|| {
            GmaError::NotPositiveDefinite("covariance admits no Cholesky factor".into())
        })?;
        let l = chol.l();
        let mut flat = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        Ok(Self {
            dim: d,
            kind: CovKind::Full {
                matrix: sym,
                chol: flat,
            },
            log_det,
        })
    }

    /// Full covariance with a single ridge repair: on Cholesky failure, retries
    /// with `matrix + λI`, `λ = 1e-8 · trace / d`.
    pub fn full_with_ridge(matrix: DMatrix<f64>) -> Result<Self> {
        match Self::full(matrix.clone()) {
            Err(GmaError::NotPositiveDefinite(_)) => {
                let d = matrix.nrows();
                let lambda = 1e-8 * matrix.trace().abs().max(f64::MIN_POSITIVE) / d as f64;
                Self::full(matrix + DMatrix::identity(d, d) * lambda)
            }
            other => other,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            CovKind::Isotropic { .. } => "isotropic",
            CovKind::Diagonal { .. } => "diagonal",
            CovKind::Full { .. } => "full",
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self.kind, CovKind::Full { .. })
    }

    /// Per-axis standard deviations (square roots of the diagonal).
    pub fn axis_stds(&self) -> Vec<f64> {
        match &self.kind {
            CovKind::Isotropic { std, .. } => vec![*std; self.dim],
            CovKind::Diagonal { stds, .. } => stds.clone(),
            CovKind::Full { matrix, .. } => (0..self.dim).map(|i| matrix[(i, i)].sqrt()).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.kind {
            CovKind::Isotropic { variance, .. } => DMatrix::identity(self.dim, self.dim) * *variance,
            CovKind::Diagonal { variances, .. } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances))
            }
            CovKind::Full { matrix, .. } => matrix.clone(),
        }
    }

    /// Same kind, every variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match &self.kind {
            CovKind::Isotropic { variance, .. } => Self::isotropic(self.dim, variance * factor),
            CovKind::Diagonal { variances, .. } => {
                Self::diagonal(variances.iter().map(|v| v * factor).collect())
            }
            CovKind::Full { matrix, .. } => Self::full(matrix * factor),
        }
    }

    /// Squared Mahalanobis distance of `diff = z − μ`.
    fn mahalanobis_sq(&self, diff: &[f64]) -> f64 {
        match &self.kind {
            CovKind::Isotropic { variance, .. } => {
                diff.iter().map(|d| d * d).sum::<f64>() / variance
            }
            CovKind::Diagonal { variances, .. } => diff
                .iter()
                .zip(variances)
                .map(|(d, v)| d * d / v)
                .sum(),
            CovKind::Full { chol, .. } => {
                let d = self.dim;
                let mut y = [0.0f64; 8];
                let mut heap;
                let buf: &mut [f64] = if d <= 8 {
                    &mut y[..d]
                } else {
                    heap = vec![0.0; d];
                    &mut heap
                };
                let mut acc = 0.0;
                for i in 0..d {
                    let row = &chol[i * d..i * d + i];
                    let s: f64 = row.iter().zip(&buf[..i]).map(|(l, y)| l * y).sum();
                    let yi = (diff[i] - s) / chol[i * d + i];
                    buf[i] = yi;
                    acc += yi * yi;
                }
                acc
            }
        }
    }

    /// Writes `L·ε` into `out`.
    fn transform(&self, eps: &[f64], out: &mut [f64]) {
        match &self.kind {
            CovKind::Isotropic { std, .. } => {
                for (o, e) in out.iter_mut().zip(eps) {
                    *o = std * e;
                }
            }
            CovKind::Diagonal { stds, .. } => {
                for ((o, e), s) in out.iter_mut().zip(eps).zip(stds) {
                    *o = s * e;
                }
            }
            CovKind::Full { chol, .. } => {
                let d = self.dim;
                for i in 0..d {
                    out[i] = chol[i * d..=i * d + i]
                        .iter()
                        .zip(&eps[..=i])
                        .map(|(l, e)| l * e)
                        .sum();
                }
            }
        }
    }
}

/// One Gaussian `N(μ, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    cov: Covariance,
    log_norm: f64,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(GmaError::NonFinite("component mean".into()));
        }
        let log_norm = -0.5 * (mean.len() as f64 * LN_2PI + cov.log_det());
        Ok(Self {
            mean,
            cov,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    /// Log-density at `z`; `z.len()` must equal `dim()` (checked in debug builds).
    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim());
        let d = self.dim();
        let mut small = [0.0f64; 8];
        let mut heap;
        let diff: &mut [f64] = if d <= 8 {
            &mut small[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for ((o, zi), mi) in diff.iter_mut().zip(z).zip(&self.mean) {
            *o = zi - mi;
        }
        self.log_norm - 0.5 * self.cov.mahalanobis_sq(diff)
    }

    /// Draws `μ + L·ε`, writing the point into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let eps: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.cov.transform(&eps, out);
        for (o, m) in out.iter_mut().zip(&self.mean) {
            *o += m;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// Checked log-density of a single component.
pub fn component_logpdf(c: &GaussianComponent, z: &[f64]) -> Result<f64> {
    check_dim(c.dim(), z.len())?;
    Ok(c.log_pdf(z))
}

/// Draw from a single component; deterministic given the generator state.
pub fn component_sample<R: Rng + ?Sized>(c: &GaussianComponent, rng: &mut R) -> Vec<f64> {
    c.sample(rng)
}

/// A finite Gaussian mixture with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureJson", into = "MixtureJson")]
pub struct Mixture {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

/// Tolerance for accepting externally supplied weights before exact renormalization.
const SIMPLEX_ACCEPT_TOL: f64 = 1e-9;

impl Mixture {
    pub fn new(components: Vec<GaussianComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(GmaError::EmptyInput("mixture needs at least one component"));
        }
        check_dim(components.len(), weights.len())?;
        let d = components[0].dim();
        for c in &components[1..] {
            check_dim(d, c.dim())?;
        }
        let weights = normalize_simplex(weights)?;
        let log_weights = weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            components,
            weights,
            log_weights,
        })
    }

    pub fn uniform(components: Vec<GaussianComponent>) -> Result<Self> {
        let n = components.len();
        Self::new(components, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.components.clone(), weights)
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln w_i`, with −∞ for zero weights.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Unchecked mixture log-density; zero-weight components are skipped.
    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.log_weights)
            .filter(|(_, lw)| lw.is_finite())
            .map(|(c, lw)| lw + c.log_pdf(z))
            .collect();
        logsumexp_unchecked(&terms)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let cdf = util::cumulative(&self.weights);
        let k = util::draw_index(&cdf, rng);
        self.components[k].sample(rng)
    }

    /// `count` i.i.d. draws, returned as a flat row-major buffer with the
    /// component index of each draw.
    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
        let d = self.dim();
        let cdf = util::cumulative(&self.weights);
        let mut points = vec![0.0; count * d];
        let mut labels = Vec::with_capacity(count);
        for row in points.chunks_exact_mut(d) {
            let k = util::draw_index(&cdf, rng);
            self.components[k].sample_into(rng, row);
            labels.push(k);
        }
        (points, labels)
    }
}

/// Checks `w` against the simplex within `SIMPLEX_ACCEPT_TOL` and renormalizes it exactly.
pub(crate) fn normalize_simplex(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = w.iter().sum();
    if w.iter().any(|v| !v.is_finite()) || min < -SIMPLEX_ACCEPT_TOL || (sum - 1.0).abs() > SIMPLEX_ACCEPT_TOL {
        return Err(GmaError::OffSimplex { sum, min });
    }
    for v in w.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    Ok(w)
}

/// Checked mixture log-density.
pub fn mixture_logpdf(m: &Mixture, z: &[f64]) -> Result<f64> {
    check_dim(m.dim(), z.len())?;
    Ok(m.log_pdf(z))
}

/// Categorical component draw followed by a draw from that component.
pub fn mixture_sample<R: Rng + ?Sized>(m: &Mixture, rng: &mut R) -> Vec<f64> {
    m.sample(rng)
}

/// Wire form: `{weights, components: [{mean, cov: {kind, values}}]}`.
/// `values` holds `[σ²]` (isotropic), the `d` variances (diagonal) or the
/// row-major `d×d` matrix (full).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureJson {
    pub weights: Vec<f64>,
    pub components: Vec<ComponentJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentJson {
    pub mean: Vec<f64>,
    pub cov: CovJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovJson {
    pub kind: String,
    pub values: Vec<f64>,
}

impl CovJson {
    pub fn into_covariance(self, dim: usize) -> Result<Covariance> {
        match self.kind.as_str() {
            "isotropic" => match self.values.as_slice() {
                [v] => Covariance::isotropic(dim, *v),
                _ => Err(GmaError::InvalidParameter(
                    "isotropic covariance takes exactly one value".into(),
                )),
            },
            "diagonal" => {
                check_dim(dim, self.values.len())?;
                Covariance::diagonal(self.values)
            }
            "full" => {
                check_dim(dim * dim, self.values.len())?;
                Covariance::full(DMatrix::from_row_slice(dim, dim, &self.values))
            }
            other => Err(GmaError::InvalidParameter(format!(
                "unknown covariance kind '{other}'"
            ))),
        }
    }
}

impl From<&Covariance> for CovJson {
    fn from(c: &Covariance) -> Self {
        let values = match &c.kind {
            CovKind::Isotropic { variance, .. } => vec![*variance],
            CovKind::Diagonal { variances, .. } => variances.clone(),
            CovKind::Full { matrix, .. } => {
                let d = c.dim;
                (0..d * d).map(|k| matrix[(k / d, k % d)]).collect()
            }
        };
        Self {
            kind: c.kind_name().to_string(),
            values,
        }
    }
}

impl TryFrom<MixtureJson> for Mixture {
    type Error = GmaError;

    fn try_from(j: MixtureJson) -> Result<Self> {
        let components = j
            .components
            .into_iter()
            .map(|c| {
                let d = c.mean.len();
                GaussianComponent::new(c.mean, c.cov.into_covariance(d)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Mixture::new(components, j.weights)
    }
}

impl From<Mixture> for MixtureJson {
    fn from(m: Mixture) -> Self {
        MixtureJson {
            weights: m.weights.clone(),
            components: m
                .components
                .iter()
                .map(|c| ComponentJson {
                    mean: c.mean.clone(),
                    cov: CovJson::from(&c.cov),
                })
                .collect(),
        }
    }
}

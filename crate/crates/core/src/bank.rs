//! The fixed sample bank and its precomputed log-densities.
//!
//! Rows are the flattened sample index `r = i·M + j` (component `i`, draw `j`,
//! both zero-based); `log_p` is stored row-major with `N` columns.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, GmaError, Result};
use crate::gauss::{logsumexp_unchecked, normalize_simplex, Mixture};
use crate::target::TargetDensity;
use crate::util::finite_mean_std;

/// Mean and standard deviation of the finite target log-densities in a bank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SampleBank {
    dim: usize,
    n: usize,
    m: usize,
    samples: Vec<f64>,
    log_p: Vec<f64>,
    log_target: Vec<f64>,
    source: Mixture,
    stats: TargetStats,
}

/// Draws `m` samples from every component of `mixture` and caches the
/// component and target log-densities at each of them.
pub fn build_bank<R: Rng + ?Sized>(
    mixture: &Mixture,
    m: usize,
    target: &dyn TargetDensity,
    rng: &mut R,
) -> Result<SampleBank> {
    if m == 0 {
        return Err(GmaError::InvalidParameter("samples per component must be >= 1".into()));
    }
    check_dim(mixture.dim(), target.dim())?;
    let d = mixture.dim();
    let n = mixture.len();
    let mut samples = vec![0.0; n * m * d];
    for (i, comp) in mixture.components().iter().enumerate() {
        for row in samples[i * m * d..(i + 1) * m * d].chunks_exact_mut(d) {
            comp.sample_into(rng, row);
        }
    }
    SampleBank::from_samples_with_target(mixture.clone(), m, samples, target)
}

impl SampleBank {
    /// Builds the caches for an existing set of samples laid out as `N` blocks of `m` rows.
    pub fn from_samples_with_target(
        source: Mixture,
        m: usize,
        samples: Vec<f64>,
        target: &dyn TargetDensity,
    ) -> Result<Self> {
        let d = source.dim();
        let n = source.len();
        check_dim(n * m * d, samples.len())?;
        check_dim(d, target.dim())?;
        let comps = source.components();
        let log_p: Vec<f64> = samples
            .par_chunks_exact(d)
            .flat_map_iter(|z| comps.iter().map(move |c| c.log_pdf(z)))
            .collect();
        let log_target: Vec<f64> = samples
            .par_chunks_exact(d)
            .map(|z| {
                let v = target.eval(z);
                if v.is_nan() || v == f64::INFINITY {
                    Err(GmaError::NonFinite(format!("target returned {v} at {z:?}")))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<_>>()?;
        let stats = match finite_mean_std(&log_target) {
            None => {
                return Err(GmaError::DegenerateBank(
                    "every target log-density in the bank is -inf; the target has no mass under the initial mixture".into(),
                ))
            }
            Some((mean, std)) if !(std > 0.0) => {
                return Err(GmaError::DegenerateBank(format!(
                    "target log-density is constant ({mean}) across the bank"
                )))
            }
            Some((mean, std)) => TargetStats { mean, std },
        };
        Ok(Self {
            dim: d,
            n,
            m,
            samples,
            log_p,
            log_target,
            source,
            stats,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of components `N`.
    pub fn n_components(&self) -> usize {
        self.n
    }

    /// Samples per component `M`.
    pub fn per_component(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.n * self.m
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Sample `s_{i,j}` (zero-based).
    pub fn sample(&self, i: usize, j: usize) -> &[f64] {
        self.row(i * self.m + j)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.samples[r * self.dim..(r + 1) * self.dim]
    }

    /// Row-major `(N·M) × N` component log-densities.
    pub fn log_p(&self) -> &[f64] {
        &self.log_p
    }

    pub fn log_p_row(&self, r: usize) -> &[f64] {
        &self.log_p[r * self.n..(r + 1) * self.n]
    }

    pub fn log_target(&self) -> &[f64] {
        &self.log_target
    }

    pub fn source(&self) -> &Mixture {
        &self.source
    }

    pub fn target_stats(&self) -> TargetStats {
        self.stats
    }

    /// Writes one row per flattened sample: `x0..x{d-1}, log_target`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("log_target".into());
        out.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.log_target[r]));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// `ln q_w` at every bank row; zero-weight columns are skipped.
pub fn mixture_log_at_bank(bank: &SampleBank, w: &[f64]) -> Result<Vec<f64>> {
    check_dim(bank.n, w.len())?;
    let w = normalize_simplex(w.to_vec())?;
    Ok(log_mixture_rows(bank, &w))
}

/// Unchecked variant used inside the optimizers, where `w` is already on the simplex.
pub(crate) fn log_mixture_rows(bank: &SampleBank, w: &[f64]) -> Vec<f64> {
    let active: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(l, &x)| (l, x.ln()))
        .collect();
    let n = bank.n;
    bank.log_p
        .par_chunks_exact(n)
        .map_init(
            || Vec::with_capacity(active.len()),
            |buf: &mut Vec<f64>, row| {
                buf.clear();
                buf.extend(active.iter().map(|&(l, lw)| lw + row[l]));
                logsumexp_unchecked(buf)
            },
        )
        .collect()
}

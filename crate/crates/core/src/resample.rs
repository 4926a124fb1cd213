//! Stratified resampling of the bank into an equally weighted ensemble.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::bank::SampleBank;
use crate::error::{check_dim, Result};
use crate::gauss::normalize_simplex;
use crate::util;

/// Equally weighted points, each tagged with the bank sample it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub dim: usize,
    /// Flat row-major coordinates.
    pub points: Vec<f64>,
    /// `(component i, draw j)` for every point.
    pub provenance: Vec<(usize, usize)>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// Writes `x0..x{d-1}, component` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("component".into());
        out.write_record(&header)?;
        for (k, (i, _)) in self.provenance.iter().enumerate() {
            let mut rec: Vec<String> = self.point(k).iter().map(|v| format!("{v}")).collect();
            rec.push(i.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// For each output point draw `i ~ Cat(w)`, then `j ~ U{0..M-1}`, and emit `s_{i,j}`.
/// `count = 0` means `N·M`.
pub fn stratified_resample<R: Rng + ?Sized>(
    bank: &SampleBank,
    w: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Ensemble> {
    check_dim(bank.n_components(), w.len())?;
    let w = normalize_simplex(w.to_vec())?;
    let count = if count == 0 { bank.n_rows() } else { count };
    let m = bank.per_component();
    let d = bank.dim();
    let cdf = util::cumulative(&w);
    let mut points = Vec::with_capacity(count * d);
    let mut provenance = Vec::with_capacity(count);
    for _ in 0..count {
        let i = util::draw_index(&cdf, rng);
        let j = rng.random_range(0..m);
        points.extend_from_slice(bank.sample(i, j));
        provenance.push((i, j));
    }
    Ok(Ensemble {
        dim: d,
        points,
        provenance,
    })
}

/// Proportional allocation of `total` draws across strata: `floor(total·w_i)`
/// with the remainder handed out by largest fractional part (lowest index on ties).
pub fn proportional_counts(w: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = w.iter().map(|&x| x * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

use rand::Rng;

/// Cumulative sums of `weights`, used for inverse-CDF categorical draws.
pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|&w| {
            acc += w;
            acc
        })
        .collect()
}

/// Draws an index from the categorical law whose cumulative table is `cdf`.
///
/// One uniform `u` in (0, 1] per draw, scaled by the table total; bins are the
/// right-closed intervals (c_{i-1}, c_i], so zero-weight entries are never picked.
pub(crate) fn draw_index<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let u = (1.0 - rng.random::<f64>()) * total;
    let idx = cdf.partition_point(|&c| c < u);
    if idx < cdf.len() {
        idx
    } else {
        // rounding pushed u past the final entry: take the last positive bin
        last_positive_bin(cdf)
    }
}

fn last_positive_bin(cdf: &[f64]) -> usize {
    let mut prev = 0.0;
    let mut last = cdf.len() - 1;
    for (i, &c) in cdf.iter().enumerate() {
        if c > prev {
            last = i;
        }
        prev = c;
    }
    last
}

/// Mean and population standard deviation of the finite entries.
pub(crate) fn finite_mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

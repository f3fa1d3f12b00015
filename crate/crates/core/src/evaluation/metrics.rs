use crate::error::{invalid, Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("lengths {a} and {b} differ")));
    }
    if a == 0 {
        return invalid("empty input");
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmspe(truth: &[f64], pred: &[f64]) -> Result<f64> {
    same_len(truth.len(), pred.len())?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

/// Sum (not mean) of squared errors of the latent field.
pub fn mse_w(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    same_len(truth.len(), estimate.len())?;
    Ok(truth.iter().zip(estimate).map(|(t, e)| (t - e).powi(2)).sum())
}

/// Fraction of `truth[i]` inside `[lower[i], upper[i]]`.
pub fn coverage(lower: &[f64], upper: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(lower.len(), truth.len())?;
    same_len(upper.len(), truth.len())?;
    let hits = (0..truth.len()).filter(|&i| lower[i] <= truth[i] && truth[i] <= upper[i]).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Linearly interpolated percentile of sorted data (`q` in `[0, 1]`,
/// position `q·(n−1)`).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval of `values` at `level` from empirical percentiles.
pub fn central_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (percentile(&v, tail), percentile(&v, 1.0 - tail))
}

/// Per-component central intervals for `draws` laid out as `L` rows of `k`
/// values each.
pub fn draw_intervals(draws: &[f64], k: usize, level: f64) -> (Vec<f64>, Vec<f64>) {
    let l = if k == 0 { 0 } else { draws.len() / k };
    (0..k)
        .map(|j| {
            let col: Vec<f64> = (0..l).map(|r| draws[r * k + j]).collect();
            central_interval(&col, level)
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmspe_basics() {
        let t = [1.0, -2.0, 3.5];
        assert_eq!(rmspe(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.75).collect();
        assert!((rmspe(&t, &shifted).unwrap() - 0.75).abs() < 1e-15);
        assert!(rmspe(&t, &t[..2]).is_err());
    }

    #[test]
    fn mse_is_a_sum() {
        assert_eq!(mse_w(&[0.0, 0.0, 0.0], &[1.0, 1.0, 2.0]).unwrap(), 6.0);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.125), 1.5);
        assert_eq!(percentile(&[7.0], 0.975), 7.0);
    }

    #[test]
    fn coverage_counts_inclusive() {
        let c = coverage(&[0.0, 0.0, 0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(c, 0.75);
    }

    #[test]
    fn intervals_by_column() {
        let draws: Vec<f64> = (0..101).flat_map(|r| [r as f64, -(r as f64)]).collect();
        let (lo, hi) = draw_intervals(&draws, 2, 0.95);
        assert!((lo[0] - 2.5).abs() < 1e-12 && (hi[0] - 97.5).abs() < 1e-12);
        assert!((lo[1] + 97.5).abs() < 1e-12 && (hi[1] + 2.5).abs() < 1e-12);
    }
}

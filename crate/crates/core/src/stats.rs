//! Order statistics shared by the metrics and evaluation modules.

use std::cmp::Ordering;

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    Some(v[(v.len() - 1) / 2])
}

/// Ordinary median, averaging the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linearly interpolated quantile over positions `0..n-1`.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let v = sorted(values);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Tukey hinges: medians of the lower and upper halves, where both halves
/// include the middle element when the count is odd.
pub fn tukey_hinges(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let n = v.len();
    let half = n.div_ceil(2);
    let lower = &v[..half];
    let upper = &v[n - half..];
    Some((median(lower)?, median(upper)?))
}

/// Empirical CDF: one `(value, fraction <= value)` row per distinct value,
/// ascending, ending at 1.0.
pub fn ecdf(values: &[f64]) -> Vec<(f64, f64)> {
    let v = sorted(values);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(lower_median(&[2.0, 3.0, 4.0, 5.0]), Some(3.0));
        assert_eq!(median(&[2.0, 3.0, 4.0, 5.0]), Some(3.5));
        assert_eq!(median(&[0.2, 0.4, 0.6, 0.8]).map(|m| (m * 1e9).round() / 1e9), Some(0.5));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn hinges() {
        let v = [1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 5.0, 5.0, 5.0];
        assert_eq!(tukey_hinges(&v), Some((2.0, 5.0)));
        assert_eq!(tukey_hinges(&[3.0, 4.0, 5.0]), Some((3.5, 4.5)));
        assert_eq!(tukey_hinges(&[4.0]), Some((4.0, 4.0)));
    }

    #[test]
    fn cdf_rows() {
        assert_eq!(ecdf(&[4.0, 5.0, 4.0]), vec![(4.0, 2.0 / 3.0), (5.0, 1.0)]);
        assert!(ecdf(&[]).is_empty());
    }
}

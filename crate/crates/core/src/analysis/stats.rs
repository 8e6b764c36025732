use std::cmp::Ordering;
use std::io::Write;

use serde::Serialize;

use crate::corpus::AttributeLabel;
use crate::error::{Error, Result};
use crate::metrics::group_imbalance;
use crate::similarity::ScoredImage;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBin {
    pub quantile_low: f64,
    pub quantile_high: f64,
    pub mean_similarity: f64,
    pub bias: f64,
    pub count: usize,
}

impl QuantileBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.quantile_low + self.quantile_high)
    }
}

/// Bag bias of consecutive similarity-ranked windows, lowest scores first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileBiasCurve {
    pub bins: Vec<QuantileBin>,
}

impl QuantileBiasCurve {
    /// Least-squares line of bin bias against the bin's quantile midpoint.
    pub fn fit(&self) -> Result<RegressionFit> {
        let pts: Vec<_> = self.bins.iter().map(|b| (b.midpoint(), b.bias)).collect();
        ols_fit(&pts)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, query_id: &str) -> Result<()> {
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                w,
                "{query_id},{i},{},{},{},{},{}",
                b.quantile_low, b.quantile_high, b.mean_similarity, b.bias, b.count
            )?;
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str =
        "query_id,bin,quantile_low,quantile_high,mean_similarity,bias,count";
}

/// Sorts by `(score, id)` ascending and cuts the list into `bins` contiguous
/// windows whose sizes differ by at most one (the larger ones first). Each
/// window's bias uses its own size as the denominator.
pub fn quantile_bias_curve(scored: &[(ScoredImage, AttributeLabel)], bins: usize) -> Result<QuantileBiasCurve> {
    if scored.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins == 0 || bins > scored.len() {
        return Err(Error::InvalidConfig(format!(
            "bins must be in 1..={}, got {bins}",
            scored.len()
        )));
    }
    let groups = scored
        .iter()
        .filter_map(|(_, l)| l.group())
        .max()
        .map_or(2, |g| (g + 1).max(2));
    let mut sorted: Vec<_> = scored.iter().collect();
    sorted.sort_by(|a, b| {
        a.0.score
            .total_cmp(&b.0.score)
            .then_with(|| a.0.image_id.cmp(&b.0.image_id))
    });

    let n = sorted.len();
    let (base, extra) = (n / bins, n % bins);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for i in 0..bins {
        let size = base + usize::from(i < extra);
        let window = &sorted[start..start + size];
        let mean_similarity = window.iter().map(|(s, _)| s.score).sum::<f64>() / size as f64;
        let imbalance = group_imbalance(window.iter().map(|(_, l)| *l), groups);
        out.push(QuantileBin {
            quantile_low: start as f64 / n as f64,
            quantile_high: (start + size) as f64 / n as f64,
            mean_similarity,
            bias: imbalance as f64 / size as f64,
            count: size,
        });
        start += size;
    }
    Ok(QuantileBiasCurve { bins: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares for `y = slope * x + intercept`.
pub fn ols_fit(points: &[(f64, f64)]) -> Result<RegressionFit> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = points
            .iter()
            .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RegressionFit { slope, intercept, r_squared })
}

/// 1-based ranks with ties sharing their average rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN observation".into()));
    }
    let (rx, ry) = (mid_ranks(x), mid_ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use AttributeLabel::Group;

    fn item(id: usize, score: f64, l: AttributeLabel) -> (ScoredImage, AttributeLabel) {
        (ScoredImage::new(format!("i{id:03}"), score), l)
    }

    #[test]
    fn homogeneous_bins() {
        let data = vec![
            item(0, 0.1, Group(1)),
            item(1, 0.2, Group(1)),
            item(2, 0.8, Group(0)),
            item(3, 0.9, Group(0)),
        ];
        let curve = quantile_bias_curve(&data, 2).unwrap();
        assert_eq!(curve.bins.iter().map(|b| b.bias).collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(curve.bins[0].quantile_low, 0.0);
        assert_eq!(curve.bins[1].quantile_high, 1.0);
    }

    fn alternating(n: usize) -> Vec<(ScoredImage, AttributeLabel)> {
        (0..n).map(|i| item(i, i as f64 / n as f64, Group(i % 2))).collect()
    }

    #[test]
    fn singleton_and_pair_bins() {
        let curve = quantile_bias_curve(&alternating(100), 100).unwrap();
        assert!(curve.bins.iter().all(|b| b.bias == 1.0 && b.count == 1));
        let curve = quantile_bias_curve(&alternating(100), 50).unwrap();
        assert!(curve.bins.iter().all(|b| b.bias == 0.0 && b.count == 2));
    }

    #[test]
    fn uneven_bins_put_larger_first() {
        let curve = quantile_bias_curve(&alternating(10), 3).unwrap();
        assert_eq!(curve.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert!(quantile_bias_curve(&alternating(3), 4).is_err());
        assert_eq!(quantile_bias_curve(&[], 1), Err(Error::EmptyInput));
    }

    #[test]
    fn ols_cases() {
        let fit = ols_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let fit = ols_fit(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.intercept - 1.0 / 3.0).abs() < 1e-12);

        assert_eq!(ols_fit(&[(1.0, 0.0), (1.0, 2.0)]), Err(Error::DegenerateX));
        assert_eq!(ols_fit(&[(1.0, 5.0), (2.0, 5.0)]).unwrap().r_squared, 1.0);
    }

    #[test]
    fn spearman_cases() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        let tied = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]).unwrap();
        // ranks (1.5,1.5,3.5,3.5) vs (1,2,3,4): 4 / sqrt(5 * 4)
        assert!((tied - 4.0 / 20f64.sqrt()).abs() < 1e-12);
        assert!((tied - 0.8944).abs() < 1e-3);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance));
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}

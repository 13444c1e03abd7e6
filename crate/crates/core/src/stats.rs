//! Rank and product-moment correlation.
//!
//! Spearman uses average ranks for ties. Kendall is tau-b, computed with
//! Knight's O(n log n) merge-sort algorithm. A correlation that is undefined
//! because one side has no variance is reported as [`StatsError::Undefined`],
//! never as a silent zero.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 paired observations, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("correlation undefined: {0}")]
    Undefined(&'static str),
}

/// Two equally long series of finite values, at least two long.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSeries<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
}

impl<'a> PairedSeries<'a> {
    pub fn new(xs: &'a [f64], ys: &'a [f64]) -> Result<Self, StatsError> {
        if xs.len() != ys.len() {
            return Err(StatsError::LengthMismatch {
                left: xs.len(),
                right: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(StatsError::TooShort(xs.len()));
        }
        if let Some(i) = xs.iter().zip(ys).position(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        self.xs
    }

    pub fn ys(&self) -> &[f64] {
        self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson_raw(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero variance"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson product-moment correlation.
pub fn pearson(p: &PairedSeries<'_>) -> Result<f64, StatsError> {
    pearson_raw(p.xs, p.ys)
}

/// 1-based ranks, ties sharing the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(p: &PairedSeries<'_>) -> Result<f64, StatsError> {
    pearson_raw(&average_ranks(p.xs), &average_ranks(p.ys))
}

/// Number of tied pairs implied by runs of equal values in a sorted slice.
fn tied_pairs<T, F>(sorted: &[T], eq: F) -> u64
where
    F: Fn(&T, &T) -> bool,
{
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of inversions removed.
fn merge_sort_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_swaps(&mut v[..mid], buf) + merge_sort_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Pair counts that determine tau-b.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    /// n(n-1)/2
    pub total: u64,
    /// pairs tied in x
    pub x_ties: u64,
    /// pairs tied in y
    pub y_ties: u64,
    /// concordant minus discordant
    pub score: i64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Result<f64, StatsError> {
        let dx = self.total - self.x_ties;
        let dy = self.total - self.y_ties;
        if dx == 0 || dy == 0 {
            return Err(StatsError::Undefined("all pairs tied"));
        }
        let tau = self.score as f64 / ((dx as f64) * (dy as f64)).sqrt();
        Ok(tau.clamp(-1.0, 1.0))
    }
}

/// Knight's algorithm for the tau-b pair counts.
pub fn kendall_counts(p: &PairedSeries<'_>) -> KendallCounts {
    let n = p.len() as u64;
    let mut pairs: Vec<(f64, f64)> = p.xs.iter().copied().zip(p.ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let x_ties = tied_pairs(&pairs, |a, b| a.0 == b.0);
    let joint_ties = tied_pairs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_sort_swaps(&mut ys, &mut buf);
    let y_ties = tied_pairs(&ys, |a, b| a == b);

    let total = n * (n - 1) / 2;
    // concordant - discordant = total - x_ties - y_ties + joint_ties - 2 * discordant
    let score = total as i64 - x_ties as i64 - y_ties as i64 + joint_ties as i64 - 2 * swaps as i64;
    KendallCounts {
        total,
        x_ties,
        y_ties,
        score,
    }
}

/// Kendall's tau-b.
pub fn kendall(p: &PairedSeries<'_>) -> Result<f64, StatsError> {
    kendall_counts(p).tau_b()
}

/// All three correlations for one pair of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n: usize,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    pub pearson: Option<f64>,
    /// Names of the statistics that were undefined on this data.
    pub undefined: Vec<String>,
}

impl CorrelationSummary {
    pub fn compute(xs: &[f64], ys: &[f64]) -> Result<Self, StatsError> {
        let p = PairedSeries::new(xs, ys)?;
        let mut undefined = Vec::new();
        let mut take = |name: &str, r: Result<f64, StatsError>| match r {
            Ok(v) => Some(v),
            Err(StatsError::Undefined(_)) => {
                undefined.push(name.to_string());
                None
            }
            Err(e) => unreachable!("validated series produced {e}"),
        };
        let spearman = take("spearman", spearman(&p));
        let kendall = take("kendall", kendall(&p));
        let pearson = take("pearson", pearson(&p));
        Ok(Self {
            n: p.len(),
            spearman,
            kendall,
            pearson,
            undefined,
        })
    }

    pub fn is_fully_defined(&self) -> bool {
        self.undefined.is_empty()
    }
}

/// Total order on finite floats, used when sorting score columns.
pub fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps<'a>(x: &'a [f64], y: &'a [f64]) -> PairedSeries<'a> {
        PairedSeries::new(x, y).unwrap()
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        assert_eq!(pearson(&ps(&xs, &ys)).unwrap(), 1.0);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_eq!(pearson(&ps(&xs, &neg)).unwrap(), -1.0);
        // centered: x=(-1.5,-.5,.5,1.5), y=(-1.5,.5,-.5,1.5) -> 4/5
        let r = pearson(&ps(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).unwrap();
        assert!((r - 0.8).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        let xs = [0.1, 0.5, 2.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| x.exp()).collect();
        assert_eq!(spearman(&ps(&xs, &ys)).unwrap(), 1.0);
        assert_eq!(spearman(&ps(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0])).unwrap(), -1.0);
        // ranks (1, 2.5, 2.5, 4) vs (1,2,3,4): centered (-1.5,0,0,1.5)·(-1.5,-.5,.5,1.5)=4.5,
        // norms² 4.5 and 5 -> 4.5/sqrt(22.5)
        let r = spearman(&ps(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!((r - 4.5 / 22.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall(&ps(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(kendall(&ps(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0])).unwrap(), 1.0 / 3.0);
        // pairs: (0,1) x-tie, (0,2) C, (1,2) C -> 2/sqrt(2*3)
        let t = kendall(&ps(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(t, 2.0 / 6f64.sqrt());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn undefined_is_flagged() {
        let p = ps(&[3.0, 3.0], &[3.0, 3.0]);
        assert!(matches!(pearson(&p), Err(StatsError::Undefined(_))));
        assert!(matches!(spearman(&p), Err(StatsError::Undefined(_))));
        assert!(matches!(kendall(&p), Err(StatsError::Undefined(_))));
        let s = CorrelationSummary::compute(&[3.0, 3.0], &[3.0, 3.0]).unwrap();
        assert_eq!(s.undefined.len(), 3);
        assert!(s.spearman.is_none());
    }

    #[test]
    fn series_validation() {
        assert!(matches!(
            PairedSeries::new(&[1.0], &[1.0]),
            Err(StatsError::TooShort(1))
        ));
        assert!(matches!(
            PairedSeries::new(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            PairedSeries::new(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(StatsError::NonFinite(1))
        ));
    }
}

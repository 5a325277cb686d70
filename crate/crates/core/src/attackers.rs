//! Baseline attacks and ranking metrics over node pairs i < j.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pairwise (1 + cos)/2 between rows; symmetric, zero diagonal. A zero row
/// scores 0.5 against everything.
pub fn similarity_attack(rows: &Tensor) -> Result<Tensor> {
    let n = rows.rows();
    if n < 2 {
        return Err(Error::Precondition(format!("similarity attack needs at least 2 rows, got {n}")));
    }
    let norms: Vec<f64> = (0..n).map(|i| rows.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.5
            } else {
                let dot: f64 = rows.row_slice(i).iter().zip(rows.row_slice(j)).map(|(a, b)| a * b).sum();
                (0.5 * (1.0 + dot / (norms[i] * norms[j]))).clamp(0.0, 1.0)
            };
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Above,
    Below,
}

/// Â_ij = 1 when ⟨r_i, r_j⟩ is above (or below) τ.
pub fn threshold_attack(rows: &Tensor, tau: f64, direction: Direction) -> Tensor {
    let n = rows.rows();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = rows.row_slice(i).iter().zip(rows.row_slice(j)).map(|(a, b)| a * b).sum();
            let hit = match direction {
                Direction::Above => dot > tau,
                Direction::Below => dot < tau,
            };
            if hit {
                out.set(i, j, 1.0);
                out.set(j, i, 1.0);
            }
        }
    }
    out
}

/// (score, is_edge) for every i < j.
pub fn upper_pairs(scores: &Tensor, truth: &[u8]) -> Result<Vec<(f64, bool)>> {
    let k = scores.rows();
    if scores.cols() != k || truth.len() != k * k {
        return Err(Error::Shape { op: "pairs", detail: format!("scores {:?} against {} truth entries", scores.shape(), truth.len()) });
    }
    Ok((0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).map(|(i, j)| (scores.get(i, j), truth[i * k + j] == 1)).collect())
}

/// Mann–Whitney AUC with average ranks for ties.
pub fn auc_pairs(pairs: &[(f64, bool)]) -> Result<f64> {
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Precondition(format!("AUC needs both classes, got {pos} positives and {neg} negatives")));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pairs[idx[j + 1]].0 == pairs[idx[i]].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&t| pairs[t].1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Σ (R_k − R_{k−1}) P_k over a stable descending sort: equal scores keep
/// their pair order, so AP is tie-sensitive.
pub fn ap_pairs(pairs: &[(f64, bool)]) -> Result<f64> {
    let pos = pairs.iter().filter(|p| p.1).count();
    if pos == 0 {
        return Err(Error::Precondition("average precision needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &t) in idx.iter().enumerate() {
        if pairs[t].1 {
            hits += 1;
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / pos as f64)
}

pub fn has_ties(pairs: &[(f64, bool)]) -> bool {
    let mut s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

pub fn auc(scores: &Tensor, truth: &[u8]) -> Result<f64> {
    auc_pairs(&upper_pairs(scores, truth)?)
}

pub fn average_precision(scores: &Tensor, truth: &[u8]) -> Result<f64> {
    ap_pairs(&upper_pairs(scores, truth)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionAucs {
    /// Pairs with both endpoints observed; `None` when a class is missing.
    pub ss: Option<f64>,
    pub su: Option<f64>,
    pub uu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub scores: Tensor,
    pub attack: String,
    pub auc: f64,
    pub ap: f64,
    /// Some scores were tied, so AP depended on pair order.
    pub ap_ties: bool,
    pub partitions: Option<PartitionAucs>,
}

/// Scores a k×k reconstruction against the true window adjacency.
/// `observed[i]` marks window positions in S.
pub fn evaluate(scores: Tensor, truth: &[u8], attack: &str, observed: Option<&[bool]>) -> Result<ReconResult> {
    let pairs = upper_pairs(&scores, truth)?;
    let auc = auc_pairs(&pairs)?;
    let ap = ap_pairs(&pairs)?;
    let partitions = observed.map(|obs| {
        let k = scores.rows();
        let mut buckets: [Vec<(f64, bool)>; 3] = Default::default();
        let mut p = 0;
        for i in 0..k {
            for j in i + 1..k {
                let b = match (obs[i], obs[j]) {
                    (true, true) => 0,
                    (false, false) => 2,
                    _ => 1,
                };
                buckets[b].push(pairs[p]);
                p += 1;
            }
        }
        let a = |v: &Vec<(f64, bool)>| auc_pairs(v).ok();
        PartitionAucs { ss: a(&buckets[0]), su: a(&buckets[1]), uu: a(&buckets[2]) }
    });
    Ok(ReconResult { ap_ties: has_ties(&pairs), scores, attack: attack.to_string(), auc, ap, partitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_examples() {
        let rows = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0], vec![-1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let s = similarity_attack(&rows).unwrap();
        assert!((s.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((s.get(0, 2) - 0.5).abs() < 1e-15);
        assert_eq!(s.get(0, 3), 0.0);
        assert_eq!(s.get(4, 1), 0.5);
        assert_eq!(s.get(2, 2), 0.0);
    }

    #[test]
    fn metric_examples() {
        let truth = [0u8, 1, 0, 1, 0, 0, 0, 0, 0];
        let perfect = Tensor::from_fn(3, 3, |i, j| truth[i * 3 + j] as f64);
        assert_eq!(auc(&perfect, &truth).unwrap(), 1.0);
        assert_eq!(average_precision(&perfect, &truth).unwrap(), 1.0);
        assert_eq!(auc(&Tensor::full(3, 3, 0.3), &truth).unwrap(), 0.5);
        // Single positive last among three pairs.
        let last = Tensor::from_fn(3, 3, |i, j| if (i, j) == (0, 1) || (i, j) == (1, 0) { 0.0 } else { 1.0 });
        assert!((average_precision(&last, &truth).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(auc(&perfect, &[0; 9]).is_err());
    }

    #[test]
    fn infinite_threshold_is_empty() {
        let rows = Tensor::from_fn(4, 2, |i, j| (i + j) as f64);
        assert_eq!(threshold_attack(&rows, f64::INFINITY, Direction::Above).sum(), 0.0);
    }
}

//! Edge scoring, ROC AUC and average precision.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::tensor::numeric::sigmoid;
use crate::tensor::{dot, DenseMat};

/// `sigmoid(z_a . z_b)` for every pair.
pub fn score_edges(z: &DenseMat, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = z.rows();
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= n || b >= n {
                return Err(Error::Contract(format!(
                    "pair ({a}, {b}) out of range for {n} nodes"
                )));
            }
            Ok(sigmoid(dot(z.row(a), z.row(b))))
        })
        .collect()
}

fn check_sides(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Contract(format!(
            "AUC needs both classes, got {} positive and {} negative scores",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(Error::Contract("AUC scores contain NaN".into()));
    }
    Ok(())
}

/// Twice the Mann-Whitney count: `2 #{pos > neg} + #{pos == neg}`.
fn doubled_wins_pairwise(pos: &[f64], neg: &[f64]) -> u128 {
    let mut wins = 0u128;
    for &p in pos {
        for &q in neg {
            wins += match p.partial_cmp(&q) {
                Some(Ordering::Greater) => 2,
                Some(Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    wins
}

fn doubled_wins_ranked(pos: &[f64], neg: &[f64]) -> u128 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let mut wins = 0u128;
    for &p in pos {
        let below = sorted.partition_point(|&q| q < p);
        let not_above = sorted.partition_point(|&q| q <= p);
        wins += 2 * below as u128 + (not_above - below) as u128;
    }
    wins
}

fn ratio(doubled: u128, pos: usize, neg: usize) -> f64 {
    doubled as f64 / (2.0 * pos as f64 * neg as f64)
}

/// ROC AUC by the `O(N M)` pair definition, ties counting one half.
pub fn auc_pairwise(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_sides(pos, neg)?;
    Ok(ratio(doubled_wins_pairwise(pos, neg), pos.len(), neg.len()))
}

/// ROC AUC from sorted negatives; equal to [`auc_pairwise`] bit for bit.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_sides(pos, neg)?;
    Ok(ratio(doubled_wins_ranked(pos, neg), pos.len(), neg.len()))
}

/// Mean of precision@k over the ranks of the positives, in descending score
/// order. Equal scores keep their input order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "average_precision",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if scores.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("AP scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Contract("AP needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// AUC and AP of positive against negative scores, positives listed first.
pub fn auc_ap(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    let a = auc(pos, neg)?;
    let scores: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let labels: Vec<bool> = (0..scores.len()).map(|k| k < pos.len()).collect();
    Ok((a, average_precision(&scores, &labels)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let z = DenseMat::zeros(3, 2);
        assert_eq!(score_edges(&z, &[(0, 1), (2, 2)]).unwrap(), vec![0.5, 0.5]);
        let z = DenseMat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let s = score_edges(&z, &[(0, 1)]).unwrap()[0];
        assert!((s - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert!(score_edges(&z, &[(0, 2)]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.4], &[0.5]).unwrap(), 0.5);
        assert_eq!(auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(auc_pairwise(&[0.9, 0.4], &[0.5]).unwrap(), 0.5);
        assert!(matches!(auc(&[], &[0.1]), Err(Error::Contract(_))));
        assert!(matches!(auc_pairwise(&[0.1], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert_eq!(ap, 0.25);
        assert!(average_precision(&[0.1], &[false]).is_err());
        assert!(average_precision(&[0.1], &[]).is_err());
    }

    #[test]
    fn ap_ties_follow_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
    }
}

use crate::error::{Error, Result};

/// Rank-based ROC AUC; tied scores count one half.
pub fn downstream_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract("scores and labels differ in length"));
    }
    if labels.iter().any(|l| *l > 1) {
        return Err(Error::domain("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::domain("scores must not be NaN"));
    }
    let positives = labels.iter().filter(|l| **l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN rejected above"));
    // Sum of midranks (1-based, doubled to stay integral) over positives.
    let mut doubled_rank_sum = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_mid = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                doubled_rank_sum += doubled_mid;
            }
        }
        i = j + 1;
    }
    let p = positives as u64;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_examples() {
        assert_eq!(downstream_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(downstream_auc(&[0.1, 0.4, 0.35, 0.8], &[1, 1, 0, 0]).unwrap(), 0.25);
        assert_eq!(downstream_auc(&[0.1, 0.2, 0.9], &[0, 1, 1]).unwrap(), 1.0);
        assert_eq!(downstream_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert!(matches!(
            downstream_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }
}

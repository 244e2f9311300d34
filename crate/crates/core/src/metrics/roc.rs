//! Rank-based ROC summaries and threshold calibration.
//!
//! Thresholds follow one convention everywhere: a score is flagged when it
//! is `>=` the threshold, and the threshold for a target false-positive
//! rate `f` over `n` negatives is the smallest negative score `v` with
//! `#{neg >= v} <= floor(f * n)`. Without ties this is the
//! `floor(f * n)`-th largest negative (1-based). If no negative qualifies,
//! the threshold is the next float above the largest negative.

use crate::error::{Error, Result};

fn check_scores(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::param(format!("{name} scores are empty")));
    }
    if v.iter().any(|s| s.is_nan()) {
        return Err(Error::param(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Mann-Whitney `U / (|pos| |neg|)`, ties counting one half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let mut neg_sorted = neg.to_vec();
    neg_sorted.sort_by(f64::total_cmp);
    // Twice U, kept integral so the result is exact.
    let mut u2: u64 = 0;
    for &p in pos {
        let below = neg_sorted.partition_point(|&n| n < p);
        let not_above = neg_sorted.partition_point(|&n| n <= p);
        u2 += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(u2 as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// Threshold for a target false-positive rate under the module convention.
pub fn threshold_at_fpr(neg: &[f64], fpr: f64) -> Result<f64> {
    check_scores("negative", neg)?;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(Error::param(format!("target fpr must be in (0, 1), got {fpr}")));
    }
    let mut desc = neg.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let k = (fpr * desc.len() as f64).floor() as usize;
    // Walk down from the k-th largest until no tie crosses the boundary.
    let mut i = k;
    while i > 0 {
        let v = desc[i - 1];
        if i == desc.len() || desc[i] < v {
            return Ok(v);
        }
        i -= 1;
    }
    Ok(desc[0].next_up())
}

/// Fraction of positives at or above the calibrated threshold.
pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], fpr: f64) -> Result<f64> {
    check_scores("positive", pos)?;
    let t = threshold_at_fpr(neg, fpr)?;
    Ok(pos.iter().filter(|&&p| p >= t).count() as f64 / pos.len() as f64)
}

/// Threshold giving empirical FPR `<= target_fpr` on the calibration
/// negatives; needs at least `1 / target_fpr` of them.
pub fn calibrate_threshold(neg: &[f64], target_fpr: f64) -> Result<f64> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::param(format!("target fpr must be in (0, 1), got {target_fpr}")));
    }
    let needed = (1.0 / target_fpr).ceil() as usize;
    if neg.len() < needed {
        return Err(Error::param(format!(
            "calibration at fpr {target_fpr} needs {needed} negatives, got {}",
            neg.len()
        )));
    }
    threshold_at_fpr(neg, target_fpr)
}

/// Fraction of `scores` at or above `threshold`.
pub fn flagged_fraction(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[2.0, 0.0], &[1.0]).unwrap(), 0.5);
        assert!(roc_auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn hand_enumerated_threshold() {
        let neg: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(threshold_at_fpr(&neg, 0.05).unwrap(), 95.0);
        assert_eq!(tpr_at_fpr(&[96.0, 94.0], &neg, 0.05).unwrap(), 0.5);
    }

    #[test]
    fn calibration_on_a_thousand() {
        let neg: Vec<f64> = (0..1000).map(f64::from).collect();
        let t = calibrate_threshold(&neg, 0.01).unwrap();
        assert_eq!(t, 990.0);
        assert_eq!(flagged_fraction(&neg, t), 0.01);
        assert!(calibrate_threshold(&neg[..50], 0.01).is_err());
    }

    #[test]
    fn median_boundary_at_one_half() {
        let neg = [-2.0, -1.0, 1.0, 2.0];
        assert_eq!(calibrate_threshold(&neg, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn ties_never_exceed_target() {
        let neg = [5.0, 5.0, 5.0, 1.0];
        let t = threshold_at_fpr(&neg, 0.5).unwrap();
        assert!(t > 5.0);
        assert_eq!(flagged_fraction(&neg, t), 0.0);
    }

    #[test]
    fn tiny_fpr_threshold_sits_above_all_negatives() {
        let neg = [0.1, 0.2];
        let t = threshold_at_fpr(&neg, 0.1).unwrap();
        assert!(t > 0.2);
        assert_eq!(tpr_at_fpr(&[0.2, 0.3], &neg, 0.1).unwrap(), 0.5);
    }
}

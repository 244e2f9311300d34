mod common;

use common::*;
use proptest::prelude::*;
use wmux_core::bench::corpus::synth_utterance;
use wmux_core::metrics::roc::flagged_fraction;
use wmux_core::metrics::{calibrate_threshold, roc_auc, snr_db as snr, stoi, threshold_at_fpr, tpr_at_fpr};

/// All-pairs AUC: wins count one, ties one half.
fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice = 0usize;
    for p in pos {
        for n in neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    twice as f64 / (2 * pos.len() * neg.len()) as f64
}

/// Enumerates every negative (and one value above them all) as a candidate
/// threshold and keeps the lowest one whose false-positive count fits the
/// budget.
fn tpr_oracle(pos: &[f64], neg: &[f64], fpr: f64) -> f64 {
    let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = neg.to_vec();
    candidates.push(max.next_up());
    let budget = fpr * neg.len() as f64;
    let t = candidates
        .into_iter()
        .filter(|&t| neg.iter().filter(|&&n| n >= t).count() as f64 <= budget)
        .fold(f64::INFINITY, f64::min);
    pos.iter().filter(|&&p| p >= t).count() as f64 / pos.len() as f64
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-3.0f64..3.0, 1..=50),
        // Coarse grid, to exercise ties.
        prop::collection::vec((0i32..8).prop_map(f64::from), 1..=50),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn roc_summaries_match_brute_force(pos in scores(), neg in scores(), fpr in 0.001f64..0.999) {
        prop_assert_eq!(roc_auc(&pos, &neg).unwrap(), auc_oracle(&pos, &neg));
        prop_assert_eq!(tpr_at_fpr(&pos, &neg, fpr).unwrap(), tpr_oracle(&pos, &neg, fpr));
        for f in [0.01, 0.05] {
            prop_assert_eq!(tpr_at_fpr(&pos, &neg, f).unwrap(), tpr_oracle(&pos, &neg, f));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn calibration_holds_its_budget(neg in prop::collection::vec(-5.0f64..5.0, 100..600), coarse in any::<bool>()) {
        let neg: Vec<f64> = if coarse { neg.iter().map(|v| v.round()).collect() } else { neg };
        let t = calibrate_threshold(&neg, 0.01).unwrap();
        prop_assert!(flagged_fraction(&neg, t) <= 0.01);
        prop_assert_eq!(t, threshold_at_fpr(&neg, 0.01).unwrap());
    }
}

#[test]
fn calibration_needs_enough_negatives() {
    let neg: Vec<f64> = (0..99).map(f64::from).collect();
    assert!(calibrate_threshold(&neg, 0.01).is_err());
}

#[test]
fn snr_of_identical_signals_is_infinite() {
    let x = synth_utterance(1, 1.0, SR);
    assert_eq!(snr(&x, &x).unwrap(), f64::INFINITY);
    let y = buf(x.samples().iter().map(|v| v * 1.1).collect());
    assert!((snr(&x, &y).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn stoi_orders_noise_levels() {
    let x = synth_utterance(2, 4.0, SR);
    let mut last = 1.0 + 1e-12;
    for snr_db in [30.0, 20.0, 10.0, 0.0] {
        let noise = white(3, x.len(), 1.0);
        let g = (energy(x.samples()) / energy(&noise) / 10f64.powf(snr_db / 10.0)).sqrt();
        let y = buf(x.samples().iter().zip(&noise).map(|(a, n)| a + g * n).collect());
        let d = stoi(&x, &y).unwrap();
        assert!(d < last, "{snr_db} dB: {d} after {last}");
        last = d;
    }
}

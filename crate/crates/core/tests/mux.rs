mod common;

use common::*;
use wmux_core::bench::corpus::synth_utterance;
use wmux_core::mux::{
    apply_tf_routing, make_fdm_masks, make_naive_masks, make_tdm_masks, mux_parallel, mux_sequential, BandPlan,
    GridShape, MaskLabel, RoutingMask, SlotPlan, Stage,
};
use wmux_core::{AudioBuffer, BackendId, Payload, Perturbation, StftConfig, WatermarkKey};

fn stage(backend: BackendId, seed: u64) -> Stage {
    Stage {
        backend,
        payload: Payload::random(seed ^ 0x55, 16).unwrap(),
        key: WatermarkKey::new(seed, backend),
        strength: backend.default_strength(),
    }
}

fn embed(x: &AudioBuffer, s: &Stage) -> Perturbation {
    s.backend.embed(x, &s.payload, &s.key, s.strength).unwrap()
}

fn z(y: &AudioBuffer, s: &Stage) -> f64 {
    s.backend.detect(y, &s.key).unwrap().z
}

#[test]
fn unit_masks_match_time_domain_addition() {
    let cfg = StftConfig::default();
    for case in 0..20u64 {
        let n = 4_000 + 997 * case as usize;
        let x = buf(white(case, n, 0.1));
        let n_wm = 1 + (case % 4) as usize;
        let deltas: Vec<Perturbation> = (0..n_wm)
            .map(|i| Perturbation::new(white(1_000 + 10 * case + i as u64, n, 0.01), BackendId::Ss).unwrap())
            .collect();
        let ones = vec![1.0; n_wm];
        let shape = GridShape::of(&x, cfg);
        let routed = apply_tf_routing(&x, &deltas, &make_naive_masks(&ones, &shape).unwrap(), &cfg).unwrap();
        let direct = mux_parallel(&x, &deltas, &ones).unwrap();
        let e = rel_err(routed.audio.samples(), direct.audio.samples());
        assert!(e < 1e-6, "case {case}: relative error {e}");
    }
}

#[test]
fn zero_masks_leave_host_unchanged() {
    let cfg = StftConfig::default();
    let x = buf(white(3, 8_000, 0.1));
    let d = vec![Perturbation::new(white(4, 8_000, 0.05), BackendId::Qim).unwrap()];
    let shape = GridShape::of(&x, cfg);
    let m = vec![RoutingMask::constant(&shape, 0.0, MaskLabel::Naive).unwrap()];
    let y = apply_tf_routing(&x, &d, &m, &cfg).unwrap();
    assert!(rel_err(y.audio.samples(), x.samples()) < 1e-6);
}

#[test]
fn fdm_keeps_each_perturbation_in_its_band() {
    let cfg = StftConfig::default();
    let n = 32_000;
    let x = buf(white(5, n, 0.05));
    let plan = BandPlan::default_for(2, SR).unwrap();
    let shape = GridShape::of(&x, cfg);
    let bands = [(0.0, 4_000.0), (4_000.0, 8_001.0)];
    for i in 0..2 {
        let mut alphas = vec![0.0; 2];
        alphas[i] = 1.0;
        let masks = make_fdm_masks(&plan, &alphas, &shape).unwrap();
        let d = Perturbation::new(white(6 + i as u64, n, 0.005), BackendId::Ss).unwrap();
        let deltas = vec![d.clone(), d];
        let y = apply_tf_routing(&x, &deltas, &masks, &cfg).unwrap();
        let out = diff(y.audio.samples(), x.samples());
        let leak = 1.0 - band_fraction(&out, bands[i].0, bands[i].1);
        assert!(leak <= 0.05, "band {i}: {:.2}% outside", 100.0 * leak);
    }
}

#[test]
fn tdm_masks_alternate_and_sum_to_alpha() {
    let cfg = StftConfig::default();
    let x = buf(white(7, 48_000, 0.05));
    let shape = GridShape::of(&x, cfg);
    let masks = make_tdm_masks(&SlotPlan::new(60.0).unwrap(), &[0.5, 0.5], &shape).unwrap();
    let (frames, bins) = masks[0].dims();
    for t in 0..frames {
        let (a, b) = (masks[0].at(t, 0), masks[1].at(t, 0));
        assert_eq!(a + b, 0.5);
        assert!(a == 0.0 || b == 0.0);
        assert_eq!(masks[0].at(t, bins - 1), a);
    }
    assert!((0..frames).any(|t| masks[0].at(t, 0) > 0.0));
    assert!((0..frames).any(|t| masks[1].at(t, 0) > 0.0));
}

#[test]
fn parallel_disjoint_bands_preserve_each_detector() {
    let x = synth_utterance(11, 4.0, SR);
    let phase = stage(BackendId::Phase, 21);
    let qim = stage(BackendId::Qim, 22);
    // Phase writes below 3 kHz; keep only the QIM tiles above it.
    let a = embed(&x, &phase);
    let b = Perturbation::new(band_limit(&embed(&x, &qim).delta, 3_200.0, 5_000.0), BackendId::Qim).unwrap();

    let both = mux_parallel(&x, &[a.clone(), b.clone()], &[1.0, 1.0]).unwrap().audio;
    let only_a = mux_parallel(&x, &[a], &[1.0]).unwrap().audio;
    let only_b = mux_parallel(&x, &[b], &[1.0]).unwrap().audio;
    for (s, single) in [(&phase, &only_a), (&qim, &only_b)] {
        let (z1, z2) = (z(single, s), z(&both, s));
        assert!(z1 > 4.0, "{}: single z {z1}", s.backend);
        assert!((z2 - z1).abs() <= 0.1 * z1, "{}: single {z1}, parallel {z2}", s.backend);
    }
}

#[test]
fn single_stage_sequence_is_that_embed() {
    let x = synth_utterance(12, 2.0, SR);
    let s = stage(BackendId::Phase, 31);
    let seq = mux_sequential(&x, std::slice::from_ref(&s)).unwrap();
    let direct = embed(&x, &s).apply(&x).unwrap();
    assert_eq!(seq.audio.samples(), direct.samples());
}

#[test]
fn sequential_order_matters_and_last_stage_keeps_its_score() {
    let x = synth_utterance(13, 4.0, SR);
    let qim = stage(BackendId::Qim, 41);
    let phase = stage(BackendId::Phase, 42);
    let pq = mux_sequential(&x, &[phase.clone(), qim.clone()]).unwrap().audio;
    let qp = mux_sequential(&x, &[qim.clone(), phase.clone()]).unwrap().audio;
    assert!(rel_err(pq.samples(), qp.samples()) > 1e-3);

    let single = embed(&x, &qim).apply(&x).unwrap();
    let (z_single, z_last) = (z(&single, &qim), z(&pq, &qim));
    assert!(z_last >= z_single - 1e-9, "single {z_single}, embedded last {z_last}");
}

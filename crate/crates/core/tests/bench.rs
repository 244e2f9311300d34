mod common;

use common::*;
use wmux_core::attacks::AttackSpec;
use wmux_core::bench::case::{case_study, dump_case_study, DB_FLOOR};
use wmux_core::bench::corpus::synth_utterance;
use wmux_core::bench::report::{table1_rows, table2_rows};
use wmux_core::bench::*;
use wmux_core::BackendId;

fn tiny(modes: Vec<Mode>, attacks: Vec<AttackSpec>, n: usize) -> BenchConfig {
    BenchConfig {
        utterance_cap: n,
        utterance_secs: 2.0,
        modes,
        attacks,
        ..BenchConfig::default()
    }
}

#[test]
fn one_cell_scores_every_utterance_twice() {
    let cfg = tiny(vec![Mode::Parallel], vec![AttackSpec::GaussianNoise { snr_db: 20.0 }], 4);
    let r = run_benchmark(&cfg).unwrap();
    assert_eq!(r.cells.len(), 1);
    let m = r.cells[0].metrics().unwrap();
    assert_eq!((m.n_pos, m.n_neg), (4, 4));
    assert_eq!(m.detectors.len(), 2);
    assert_eq!(r.cells[0].attack, "gaussian_noise(20dB)");
    assert_eq!(r.config_hash, cfg.hash());
}

#[test]
fn clean_cells_separate_perfectly() {
    let modes = vec![Mode::SingleSs, Mode::SingleQim, Mode::SinglePhase];
    let r = run_benchmark(&tiny(modes.clone(), vec![AttackSpec::None], 8)).unwrap();
    for mode in modes {
        let m = r.cell(mode, "none").unwrap().metrics().unwrap();
        assert_eq!(m.fused.auc, 1.0, "{mode}");
        assert!(m.fused.tpr.iter().all(|&t| t == 1.0), "{mode}");
    }
}

#[test]
fn reruns_are_bit_identical() {
    let cfg = tiny(
        vec![Mode::Parallel, Mode::SeqAb, Mode::Patfm],
        vec![AttackSpec::FftMask { fraction: 0.1 }, AttackSpec::Echo { delay_ms: 100.0, gain: 0.3 }],
        4,
    );
    let a = run_benchmark(&cfg).unwrap();
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn json_report_round_trips_and_csv_has_both_tables() {
    let cfg = tiny(vec![Mode::Fdm, Mode::Tdm], vec![AttackSpec::None, AttackSpec::ZeroMask { fraction: 0.1 }], 4);
    let r = run_benchmark(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = emit_report(&r, ReportFormat::Json, dir.path()).unwrap();
    assert_eq!(read_report(&json[0]).unwrap(), r);

    let csv = emit_report(&r, ReportFormat::Csv, dir.path()).unwrap();
    assert_eq!(csv.len(), 2);
    let t1 = table1_rows(&r);
    assert_eq!(t1.len(), 1 + 2);
    assert_eq!(t1[0][0], "attack");
    assert_eq!(t1[0].len(), 1 + 2 * 2);
    let t2 = table2_rows(&r);
    assert_eq!(t2.len(), 1 + 2);
    assert!(t2[0].iter().any(|h| h == "pesq"));
    let text = std::fs::read_to_string(&csv[1]).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn empty_report_is_an_error() {
    let cfg = tiny(vec![Mode::Parallel], vec![AttackSpec::None], 2);
    let mut r = run_benchmark(&cfg).unwrap();
    r.cells.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&r, ReportFormat::Csv, dir.path()).is_err());
    assert!(emit_report(&r, ReportFormat::Json, dir.path()).is_err());
}

#[test]
fn report_with_another_schema_version_is_rejected() {
    let cfg = tiny(vec![Mode::Parallel], vec![AttackSpec::None], 2);
    let mut r = run_benchmark(&cfg).unwrap();
    r.schema_version += 1;
    let dir = tempfile::tempdir().unwrap();
    let path = emit_report(&r, ReportFormat::Json, dir.path()).unwrap();
    assert!(read_report(&path[0]).is_err());
}

#[test]
fn failing_codec_fails_only_its_cells() {
    let mut cfg = tiny(
        vec![Mode::SingleQim],
        vec![AttackSpec::None, AttackSpec::ExternalCodec { codec: "broken".into() }],
        2,
    );
    cfg.codecs.insert("broken".into(), "false {in} {out}".into());
    let r = run_benchmark(&cfg).unwrap();
    assert!(r.cell(Mode::SingleQim, "none").unwrap().metrics().is_some());
    let bad = r.cell(Mode::SingleQim, "broken").unwrap();
    assert!(matches!(bad.outcome, CellOutcome::Failed { .. }));
    assert_eq!(r.summary(Mode::SingleQim).unwrap().failed_cells, 1);
}

#[test]
fn fusion_holds_up_across_a_complementary_pair() {
    let cfg = tiny(
        vec![Mode::Patfm],
        vec![AttackSpec::Lowpass { cutoff_hz: 3000.0 }, AttackSpec::TimeShift { shift_ms: 4.0 }],
        20,
    );
    let r = run_benchmark(&cfg).unwrap();
    let cells: Vec<_> = r.cells.iter().map(|c| c.metrics().unwrap()).collect();
    let mean = |f: &dyn Fn(&CellMetrics) -> f64| cells.iter().map(|m| f(m)).sum::<f64>() / cells.len() as f64;
    let fused = mean(&|m| m.fused.auc);
    let best = [BackendId::Qim, BackendId::Phase]
        .iter()
        .map(|b| mean(&|m| m.detectors[b].auc))
        .fold(0.0, f64::max);
    assert!(fused >= best - 0.02, "fused {fused}, best single {best}");
}

#[test]
fn zero_strength_point_is_the_clean_cell() {
    let cfg = tiny(vec![Mode::Parallel], vec![AttackSpec::None], 6);
    let clean = run_benchmark(&cfg).unwrap();
    let sweep = strength_sweep(&cfg, "gaussian_noise", &[0.0]).unwrap();
    let want = clean.cell(Mode::Parallel, "none").unwrap().metrics().unwrap();
    let point = &sweep.points[0].modes[0];
    assert_eq!(point.fused, want.fused.tpr);
    for (b, rates) in &want.detectors {
        assert_eq!(point.detectors[b], rates.tpr);
    }
}

#[test]
fn tpr_falls_as_noise_rises() {
    let cfg = tiny(vec![Mode::Parallel], vec![AttackSpec::None], 20);
    // Noise amplitude relative to the host: 0 dB down to -26 dB SNR.
    let s = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 20.0];
    let sweep = strength_sweep(&cfg, "gaussian_noise", &s).unwrap();
    for b in &cfg.backends {
        let curve = sweep.detector_curve(Mode::Parallel, *b, 0);
        assert_eq!(curve.len(), s.len());
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 0.02, "{b}: {curve:?}");
        }
        assert!(curve[0] > *curve.last().unwrap(), "{b}: {curve:?}");
    }
}

#[test]
fn case_study_panels() {
    let x = synth_utterance(1, 2.0, SR);
    let delta = white(2, x.len(), 0.003);
    let wm = buf(x.samples().iter().zip(&delta).map(|(a, d)| a + d).collect());
    let attacked = buf(wm.samples().iter().map(|v| 0.5 * v).collect());
    let panels = case_study(&x, &wm, &attacked).unwrap();
    let names: Vec<_> = panels.iter().map(|p| p.name).collect();
    assert_eq!(names, ["original", "watermarked", "difference", "attacked", "attack_difference"]);
    for p in &panels {
        assert_eq!((p.n_frames, p.n_bins), (panels[0].n_frames, panels[0].n_bins));
        assert_eq!(p.db.len(), p.n_frames * p.n_bins);
    }

    // One-sided power with non-edge bins doubled gives the full-spectrum
    // energy; a half-overlapped Hann window passes 3/8 of N per hop of N/2.
    let n = 1024.0;
    let d = &panels[2];
    let panel_energy: f64 = d
        .db
        .chunks(d.n_bins)
        .flat_map(|row| {
            row.iter().enumerate().map(move |(k, &v)| {
                let w = if k == 0 || k == row.len() - 1 { 1.0 } else { 2.0 };
                if v <= DB_FLOOR { 0.0 } else { w * 10f64.powf(v / 10.0) }
            })
        })
        .sum();
    let expected = n * 0.75 * energy(&delta);
    assert!((panel_energy / expected - 1.0).abs() < 0.05, "ratio {}", panel_energy / expected);

    let same = case_study(&x, &x, &x).unwrap();
    assert!(same[2].db.iter().all(|&v| v == DB_FLOOR));
    assert!(same[4].db.iter().all(|&v| v == DB_FLOOR));

    let dir = tempfile::tempdir().unwrap();
    let files = dump_case_study(&x, &wm, &attacked, dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    let text = std::fs::read_to_string(&files[0]).unwrap();
    assert!(text.starts_with("# original frames="));
    assert_eq!(text.lines().count(), 1 + panels[0].n_frames);
}

#[test]
fn worker_count_does_not_change_the_report() {
    let mut cfg = tiny(
        vec![Mode::Parallel, Mode::Patfm, Mode::SeqBa],
        vec![AttackSpec::None, AttackSpec::GaussianNoise { snr_db: 10.0 }],
        6,
    );
    cfg.jobs = Some(1);
    let a = run_benchmark(&cfg).unwrap();
    cfg.jobs = Some(3);
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a, b);
}

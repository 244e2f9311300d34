use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use wmux_core::bench::corpus::synth_utterance;
use wmux_core::{load_wav, save_wav, WavEncoding};

fn wmux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmux"))
        .args(args)
        .env_remove("WMUX_CONFIG")
        .output()
        .unwrap()
}

/// Runs a command that must succeed and returns its single stdout line.
fn ok(args: &[&str]) -> Value {
    let out = wmux(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?}: {stderr}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "{stdout}");
    serde_json::from_str(stdout.trim()).unwrap()
}

fn host(dir: &Path, seed: u64) -> PathBuf {
    let path = dir.join(format!("host{seed}.wav"));
    save_wav(&synth_utterance(seed, 3.0, 16_000), &path, WavEncoding::Float32).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn embed_writes_audio_and_reports_snr() {
    let dir = tempfile::tempdir().unwrap();
    let input = host(dir.path(), 1);
    let out = dir.path().join("wm.wav");
    let v = ok(&["embed", "--in", s(&input), "--out", s(&out), "--mode", "patfm", "--keys", "7,8"]);
    assert_eq!(v["command"], "embed");
    let snr = v["snr_db"].as_f64().unwrap();
    assert!(snr > 15.0 && snr < 60.0, "{snr}");
    assert_eq!(load_wav(&out).unwrap().len(), load_wav(&input).unwrap().len());
}

#[test]
fn zero_alpha_leaves_the_host_alone() {
    let dir = tempfile::tempdir().unwrap();
    let input = host(dir.path(), 2);
    let out = dir.path().join("wm.wav");
    for mode in ["parallel", "patfm", "fdm", "tdm"] {
        let v = ok(&["embed", "--in", s(&input), "--out", s(&out), "--mode", mode, "--keys", "1,2", "--alpha", "0"]);
        assert_eq!(v["snr_db"], "inf", "{mode}");
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    let out = wmux(&["embed", "--out", "x.wav", "--keys", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn key_count_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = host(dir.path(), 3);
    let out = wmux(&["embed", "--in", s(&input), "--out", s(&dir.path().join("o.wav")), "--keys", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_wav_is_a_processing_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.wav");
    std::fs::write(&bad, b"not a wave file").unwrap();
    let out = wmux(&["detect", "--in", s(&bad), "--keys", "1,2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn right_keys_clear_a_threshold_set_on_wrong_keys() {
    let dir = tempfile::tempdir().unwrap();
    let input = host(dir.path(), 4);
    let wm = dir.path().join("wm.wav");
    ok(&["embed", "--in", s(&input), "--out", s(&wm), "--keys", "101,102"]);
    let fused = |keys: &str| ok(&["detect", "--in", s(&wm), "--keys", keys])["fused"]["logit"].as_f64().unwrap();

    let wrong: Vec<f64> = (0..12).map(|k| fused(&format!("{},{}", 500 + 2 * k, 501 + 2 * k))).collect();
    let mean = wrong.iter().sum::<f64>() / wrong.len() as f64;
    assert!(mean.abs() < 1.0, "wrong-key mean {mean}: {wrong:?}");
    let threshold = wrong.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let right = fused("101,102");
    assert!(right > threshold, "{right} vs {threshold}");

    let v = ok(&["detect", "--in", s(&wm), "--keys", "101,102", "--fusion-weights", "3,1"]);
    assert_eq!(v["fused"]["weights"][0], 0.75);
    assert!(v["detectors"]["qim"]["z"].as_f64().unwrap() > 3.0);
}

#[test]
fn identity_attack_survives_pcm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = host(dir.path(), 5);
    let out = dir.path().join("a.wav");
    ok(&["attack", "--in", s(&input), "--out", s(&out), "--kind", "none", "--encoding", "pcm16"]);
    let (x, y) = (load_wav(&input).unwrap(), load_wav(&out).unwrap());
    let worst = x.samples().iter().zip(y.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 32_768.0, "{worst}");

    let v = ok(&["attack", "--in", s(&input), "--out", s(&out), "--kind", "echo", "--params", "delay_ms=50,gain=0.3"]);
    assert_eq!(v["attack"], "echo(50ms,0.3)");
    let out = wmux(&["attack", "--in", s(&input), "--out", s(&out), "--kind", "echo", "--params", "delay_ms"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tiny_bench_writes_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(
        &cfg,
        "utterance_cap = 3\nutterance_secs = 2.0\nmodes = [\"parallel\", \"tdm\"]\n\
         [[attacks]]\nkind = \"none\"\n[[attacks]]\nkind = \"gaussian_noise\"\nsnr_db = 20.0\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let v = ok(&["bench", "--config", s(&cfg), "--jobs", "1", "--out-dir", s(&out_dir)]);
    assert_eq!(v["cells"], 4);
    assert_eq!(v["failed_cells"], 0);
    let files: Vec<&str> = v["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert_eq!(files.len(), 3);
    for f in files {
        let text = std::fs::read_to_string(f).unwrap();
        if f.ends_with(".json") {
            wmux_core::bench::read_report(f).unwrap();
        } else {
            let mut rows = csv::Reader::from_reader(text.as_bytes());
            assert_eq!(rows.records().count(), 2, "{f}");
        }
    }
}

#[test]
fn unknown_sweep_attack_is_a_usage_error() {
    let out = wmux(&["sweep", "--attack", "teleport", "--strengths", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.toml");
    std::fs::write(&cfg, "no_such_field = 1\n").unwrap();
    let out = wmux(&["bench", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

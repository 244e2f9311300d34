//! Detection rate as a function of attack strength.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, Mode};
use super::corpus::Utterance;
use super::run::{in_pool, load_corpus, CellOutcome, Runner, REPORT_SCHEMA_VERSION};
use crate::attacks::{AttackSpec, MAX_STRETCH_RATE};
use crate::backends::BackendId;
use crate::error::{Error, Result};

/// Attack kinds with a strength axis.
pub const SWEEP_KINDS: [&str; 12] = [
    "gaussian_noise",
    "uniform_noise",
    "amplitude_scale",
    "zero_mask",
    "time_shift",
    "lowpass",
    "smoothing",
    "time_stretch",
    "echo",
    "crop_invert",
    "fft_mask",
    "rir",
];

/// The attack of `kind` at strength `s >= 0`; strength 0 is no attack.
///
/// | kind | strength |
/// |---|---|
/// | gaussian_noise, uniform_noise | noise to signal RMS ratio (SNR = -20 log10 s) |
/// | amplitude_scale | gain `1 + s` |
/// | zero_mask, crop_invert, fft_mask | fraction |
/// | time_shift | delay in ms |
/// | lowpass | cutoff at `(1 - s)` of Nyquist, `s < 1` |
/// | smoothing | `2 round(s) + 1` taps |
/// | time_stretch | rate `1 + s` |
/// | echo | gain at 100 ms delay |
/// | rir | rt60 in ms |
pub fn attack_at_strength(kind: &str, s: f64, sample_rate: u32) -> Result<AttackSpec> {
    if !SWEEP_KINDS.contains(&kind) {
        return Err(Error::Config(format!(
            "no strength axis for attack `{kind}`; expected one of {}",
            SWEEP_KINDS.join(", ")
        )));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::Config(format!("strength must be finite and >= 0, got {s}")));
    }
    if s == 0.0 {
        return Ok(AttackSpec::None);
    }
    let spec = match kind {
        "gaussian_noise" => AttackSpec::GaussianNoise { snr_db: -20.0 * s.log10() },
        "uniform_noise" => AttackSpec::UniformNoise { snr_db: -20.0 * s.log10() },
        "amplitude_scale" => AttackSpec::AmplitudeScale { gain: 1.0 + s },
        "zero_mask" => AttackSpec::ZeroMask { fraction: s },
        "crop_invert" => AttackSpec::CropInvert { fraction: s },
        "fft_mask" => AttackSpec::FftMask { fraction: s },
        "time_shift" => AttackSpec::TimeShift { shift_ms: s },
        "lowpass" if s < 1.0 => AttackSpec::Lowpass {
            cutoff_hz: (1.0 - s) * sample_rate as f64 / 2.0,
        },
        "lowpass" => return Err(Error::Config("lowpass strength must be < 1".into())),
        "smoothing" => AttackSpec::Smoothing {
            taps: 2 * s.round() as usize + 1,
        },
        "time_stretch" if 1.0 + s <= MAX_STRETCH_RATE => AttackSpec::TimeStretch { rate: 1.0 + s },
        "time_stretch" => return Err(Error::Config("time_stretch strength must be <= 0.25".into())),
        "echo" => AttackSpec::Echo { delay_ms: 100.0, gain: s },
        _ => AttackSpec::Rir { rt60_ms: s },
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePoint {
    pub mode: Mode,
    /// TPR at each configured FPR, per detector.
    pub detectors: BTreeMap<BackendId, Vec<f64>>,
    pub fused: Vec<f64>,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub strength: f64,
    pub attack: String,
    pub modes: Vec<ModePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub attack_kind: String,
    pub target_fprs: Vec<f64>,
    /// In increasing strength.
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    /// Curve of one detector inside `mode` at FPR index `fpr_idx`.
    pub fn detector_curve(&self, mode: Mode, b: BackendId, fpr_idx: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                p.modes
                    .iter()
                    .find(|m| m.mode == mode)
                    .and_then(|m| m.detectors.get(&b))
                    .and_then(|t| t.get(fpr_idx).copied())
                    .unwrap_or(f64::NAN)
            })
            .collect()
    }

    pub fn fused_curve(&self, mode: Mode, fpr_idx: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                p.modes
                    .iter()
                    .find(|m| m.mode == mode)
                    .and_then(|m| m.fused.get(fpr_idx).copied())
                    .unwrap_or(f64::NAN)
            })
            .collect()
    }
}

pub fn strength_sweep(cfg: &BenchConfig, attack_kind: &str, strengths: &[f64]) -> Result<SweepReport> {
    cfg.validate()?;
    let utterances = load_corpus(cfg)?;
    strength_sweep_on(cfg, &utterances, attack_kind, strengths)
}

/// Runs every configured mode against `attack_kind` at each strength.
pub fn strength_sweep_on(
    cfg: &BenchConfig,
    utterances: &[Utterance],
    attack_kind: &str,
    strengths: &[f64],
) -> Result<SweepReport> {
    cfg.validate()?;
    if strengths.is_empty() {
        return Err(Error::Config("no sweep strengths".into()));
    }
    let mut sorted = strengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let attacks: Vec<AttackSpec> = sorted
        .iter()
        .map(|&s| attack_at_strength(attack_kind, s, cfg.sample_rate))
        .collect::<Result<_>>()?;
    let report = in_pool(cfg.jobs, || Runner::new(cfg, utterances)?.run(&attacks))?;
    let n_attacks = attacks.len();
    let points = sorted
        .iter()
        .zip(&attacks)
        .enumerate()
        .map(|(i, (&strength, a))| SweepPoint {
            strength,
            attack: a.label(),
            modes: report
                .modes
                .iter()
                .enumerate()
                .map(|(m, summary)| {
                    let cell = &report.cells[m * n_attacks + i];
                    match &cell.outcome {
                        CellOutcome::Ok(c) => ModePoint {
                            mode: summary.mode,
                            detectors: c.detectors.iter().map(|(b, r)| (*b, r.tpr.clone())).collect(),
                            fused: c.fused.tpr.clone(),
                            failed: None,
                        },
                        CellOutcome::Failed { reason } => ModePoint {
                            mode: summary.mode,
                            detectors: BTreeMap::new(),
                            fused: Vec::new(),
                            failed: Some(reason.clone()),
                        },
                    }
                })
                .collect(),
        })
        .collect();
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        attack_kind: attack_kind.to_string(),
        target_fprs: cfg.target_fprs.clone(),
        points,
    })
}

/// Writes `sweep.json` and a long-format `sweep.csv` (one row per
/// strength, mode, detector and FPR; the fused score is detector `fused`).
pub fn emit_sweep(sweep: &SweepReport, out_dir: impl AsRef<std::path::Path>) -> Result<Vec<std::path::PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join("sweep.json");
    super::report::write_json(&json, sweep)?;
    let csv_path = out_dir.join("sweep.csv");
    let err = |e: csv::Error| Error::Report(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    w.write_record(["attack", "strength", "mode", "detector", "fpr", "tpr"]).map_err(err)?;
    for p in &sweep.points {
        for m in &p.modes {
            let rows = m
                .detectors
                .iter()
                .map(|(b, t)| (b.to_string(), t))
                .chain([("fused".to_string(), &m.fused)]);
            for (name, tprs) in rows {
                for (f, t) in sweep.target_fprs.iter().zip(tprs) {
                    w.write_record([
                        sweep.attack_kind.clone(),
                        p.strength.to_string(),
                        m.mode.to_string(),
                        name.clone(),
                        f.to_string(),
                        format!("{t:.4}"),
                    ])
                    .map_err(err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(vec![json, csv_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strength_is_no_attack() {
        for k in SWEEP_KINDS {
            assert_eq!(attack_at_strength(k, 0.0, 16_000).unwrap(), AttackSpec::None);
        }
    }

    #[test]
    fn strength_maps() {
        assert_eq!(
            attack_at_strength("gaussian_noise", 0.1, 16_000).unwrap(),
            AttackSpec::GaussianNoise { snr_db: 20.0 }
        );
        assert_eq!(
            attack_at_strength("lowpass", 0.5, 16_000).unwrap(),
            AttackSpec::Lowpass { cutoff_hz: 4000.0 }
        );
        assert!(attack_at_strength("lowpass", 1.0, 16_000).is_err());
        assert!(attack_at_strength("bandpass", 0.5, 16_000).is_err());
        assert!(attack_at_strength("nonsense", 0.5, 16_000).is_err());
        assert!(attack_at_strength("time_stretch", 0.5, 16_000).is_err());
    }
}

//! Dataset ingestion and a deterministic synthetic speech-like corpus.
//!
//! The synthetic utterances alternate voiced segments (harmonic source with
//! a gliding pitch shaped by three formants), fricatives (high-passed noise)
//! and short pauses, over a noise floor 40 dB below the speech level. They
//! stand in for a read-speech corpus when none is supplied.

use std::path::{Path, PathBuf};

use crate::audio::{load_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::pn::PnStream;

/// Target RMS of synthetic utterances (about -26 dBFS).
pub const SPEECH_RMS: f64 = 0.05;
/// Length of benchmark utterances when none are supplied.
pub const DEFAULT_UTTERANCE_SECS: f64 = 4.0;
const FLOOR_REL: f64 = 0.01;
const CORPUS_STREAM: u64 = 0x434F_5250;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioBuffer,
}

fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    let tilt = 1.0 / (1.0 + (f / 400.0).powi(2)).sqrt();
    let res: f64 = formants
        .iter()
        .enumerate()
        .map(|(i, &(fc, bw))| {
            let g = [1.0, 0.6, 0.35][i];
            g / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum();
    tilt * (0.05 + res)
}

fn ramp(i: usize, n: usize, ramp_len: usize) -> f64 {
    let r = ramp_len.min(n / 2).max(1);
    let edge = i.min(n - 1 - i);
    if edge >= r {
        1.0
    } else {
        let x = edge as f64 / r as f64 * std::f64::consts::FRAC_PI_2;
        x.sin().powi(2)
    }
}

/// One synthetic utterance of `duration_s` seconds.
pub fn synth_utterance(seed: u64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round() as usize;
    let mut rng = PnStream::new(seed, CORPUS_STREAM);
    let f0_base = 90.0 + 130.0 * rng.uniform();
    let mut out = vec![0.0; len];
    let mut pos = (0.04 * fs) as usize;
    let ramp_len = (0.012 * fs) as usize;
    while pos < len {
        let choice = rng.uniform();
        if choice < 0.62 {
            let n = ((0.12 + 0.18 * rng.uniform()) * fs) as usize;
            let formants = [
                (300.0 + 500.0 * rng.uniform(), 80.0),
                (900.0 + 1400.0 * rng.uniform(), 110.0),
                (2300.0 + 700.0 * rng.uniform(), 160.0),
            ];
            let f0_start = f0_base * (0.85 + 0.3 * rng.uniform());
            let f0_end = f0_base * (0.85 + 0.3 * rng.uniform());
            let n_harm = (0.45 * fs / f0_start.max(f0_end)).floor() as usize;
            let gains: Vec<f64> = (1..=n_harm)
                .map(|h| formant_gain(h as f64 * f0_start, &formants))
                .collect();
            let phases: Vec<f64> = (0..n_harm).map(|_| rng.uniform() * std::f64::consts::TAU).collect();
            let mut acc = 0.0;
            for i in 0..n.min(len - pos) {
                let f0 = f0_start + (f0_end - f0_start) * i as f64 / n as f64;
                acc += std::f64::consts::TAU * f0 / fs;
                let mut v = 0.0;
                for (h, (&g, &ph)) in gains.iter().zip(&phases).enumerate() {
                    let hf = (h + 1) as f64;
                    if hf * f0 < 0.45 * fs {
                        v += g * (hf * acc + ph).sin();
                    }
                }
                out[pos + i] += v * ramp(i, n, ramp_len);
            }
            pos += n;
        } else if choice < 0.8 {
            let n = ((0.05 + 0.07 * rng.uniform()) * fs) as usize;
            let level = 0.08 + 0.1 * rng.uniform();
            let mut prev = 0.0;
            for i in 0..n.min(len - pos) {
                let w = rng.gaussian();
                out[pos + i] += level * (w - 0.7 * prev) * ramp(i, n, ramp_len);
                prev = w;
            }
            pos += n;
        } else {
            pos += ((0.04 + 0.11 * rng.uniform()) * fs) as usize;
        }
    }
    normalize_with_floor(out, &mut rng, sample_rate)
}

fn normalize_with_floor(mut samples: Vec<f64>, rng: &mut PnStream, sample_rate: u32) -> AudioBuffer {
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt();
    let g = if rms > 0.0 { SPEECH_RMS / rms } else { 0.0 };
    for v in &mut samples {
        *v = *v * g + SPEECH_RMS * FLOOR_REL * rng.gaussian();
    }
    AudioBuffer::new(samples, sample_rate).expect("finite synthetic samples")
}

/// Stationary Gaussian noise with a speech-like long-term spectrum
/// (flat to ~400 Hz, then falling), at the corpus RMS.
pub fn speech_shaped_noise(seed: u64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    let len = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = PnStream::new(seed, CORPUS_STREAM ^ 0xFF);
    let pole = (-std::f64::consts::TAU * 400.0 / sample_rate as f64).exp();
    let mut state = 0.0;
    let samples: Vec<f64> = (0..len)
        .map(|_| {
            state = pole * state + (1.0 - pole) * rng.gaussian();
            state
        })
        .collect();
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    AudioBuffer::new(samples.into_iter().map(|v| v * SPEECH_RMS / rms).collect(), sample_rate)
        .expect("finite noise")
}

/// `n` synthetic utterances with ids `synth-0000`, `synth-0001`, ...
pub fn synthetic_corpus(n: usize, seed: u64, duration_s: f64, sample_rate: u32) -> Vec<Utterance> {
    (0..n)
        .map(|i| Utterance {
            id: format!("synth-{i:04}"),
            audio: synth_utterance(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), duration_s, sample_rate),
        })
        .collect()
}

/// WAV files of `dir` in lexicographic order, truncated to `cap`.
pub fn ingest_dataset(dir: impl AsRef<Path>, cap: usize, sample_rate: u32) -> Result<Vec<Utterance>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no WAV files in {}", dir.display())));
    }
    paths.sort();
    paths.truncate(cap);
    paths
        .into_iter()
        .map(|p| {
            let audio = load_wav(&p)?;
            if audio.sample_rate() != sample_rate {
                return Err(Error::Dataset(format!(
                    "{}: sample rate {} Hz, expected {} Hz",
                    p.display(),
                    audio.sample_rate(),
                    sample_rate
                )));
            }
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            Ok(Utterance { id, audio })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{save_wav, WavEncoding};

    #[test]
    fn synthetic_is_deterministic_and_normalized() {
        let a = synth_utterance(3, 2.0, 16_000);
        let b = synth_utterance(3, 2.0, 16_000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32_000);
        assert!((a.rms() - SPEECH_RMS).abs() < 0.002, "{}", a.rms());
        assert!(a.peak() < 1.0);
        assert_ne!(a, synth_utterance(4, 2.0, 16_000));
    }

    #[test]
    fn ingest_orders_and_caps() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c.wav", "a.wav", "b.wav"] {
            save_wav(&synth_utterance(1, 0.2, 16_000), dir.path().join(name), WavEncoding::Pcm16).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let list = ingest_dataset(dir.path(), 2, 16_000).unwrap();
        let ids: Vec<_> = list.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(ingest_dataset(dir.path(), 2, 16_000).unwrap(), list);
    }

    #[test]
    fn ingest_rejects_wrong_rate_naming_file() {
        let dir = tempfile::tempdir().unwrap();
        save_wav(&synth_utterance(1, 0.2, 8_000), dir.path().join("bad.wav"), WavEncoding::Pcm16).unwrap();
        let err = ingest_dataset(dir.path(), 5, 16_000).unwrap_err().to_string();
        assert!(err.contains("bad.wav"), "{err}");
    }

    #[test]
    fn ingest_rejects_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dataset(dir.path(), 5, 16_000), Err(Error::Dataset(_))));
    }
}

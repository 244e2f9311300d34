//! The attack battery: classical edits, temporal manipulations and
//! external codecs.

pub mod codec;
pub mod filters;
pub mod rir;
pub mod stretch;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pn::PnStream;
use crate::stft::{istft, stft, StftConfig};

pub use codec::{external_codec_attack, CodecCommand, ProcessLimiter};

pub const MIN_STRETCH_RATE: f64 = 0.8;
pub const MAX_STRETCH_RATE: f64 = 1.25;

const ATTACK_STREAM: u64 = 0x4154_4B00;

/// One attack and its parameters. Serialized as a table with a `kind` key,
/// e.g. `{ kind = "echo", delay_ms = 100, gain = 0.3 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// No attack; the clean-condition cell.
    None,
    GaussianNoise { snr_db: f64 },
    UniformNoise { snr_db: f64 },
    AmplitudeScale { gain: f64 },
    ZeroMask { fraction: f64 },
    /// Delay (positive) or advance (negative) with zero fill.
    TimeShift { shift_ms: f64 },
    Lowpass { cutoff_hz: f64 },
    Bandpass { low_hz: f64, high_hz: f64 },
    Smoothing { taps: usize },
    TimeStretch { rate: f64 },
    Echo { delay_ms: f64, gain: f64 },
    /// Reverses a seeded contiguous segment in place.
    CropInvert { fraction: f64 },
    FftMask { fraction: f64 },
    Rir { rt60_ms: f64 },
    /// Runs the codec command registered under `codec`.
    ExternalCodec { codec: String },
}

impl AttackSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::GaussianNoise { .. } => "gaussian_noise",
            AttackSpec::UniformNoise { .. } => "uniform_noise",
            AttackSpec::AmplitudeScale { .. } => "amplitude_scale",
            AttackSpec::ZeroMask { .. } => "zero_mask",
            AttackSpec::TimeShift { .. } => "time_shift",
            AttackSpec::Lowpass { .. } => "lowpass",
            AttackSpec::Bandpass { .. } => "bandpass",
            AttackSpec::Smoothing { .. } => "smoothing",
            AttackSpec::TimeStretch { .. } => "time_stretch",
            AttackSpec::Echo { .. } => "echo",
            AttackSpec::CropInvert { .. } => "crop_invert",
            AttackSpec::FftMask { .. } => "fft_mask",
            AttackSpec::Rir { .. } => "rir",
            AttackSpec::ExternalCodec { .. } => "external_codec",
        }
    }

    /// Short label including the parameters, e.g. `echo(100ms,0.3)`.
    pub fn label(&self) -> String {
        match self {
            AttackSpec::None => "none".into(),
            AttackSpec::GaussianNoise { snr_db } => format!("gaussian_noise({snr_db}dB)"),
            AttackSpec::UniformNoise { snr_db } => format!("uniform_noise({snr_db}dB)"),
            AttackSpec::AmplitudeScale { gain } => format!("amplitude_scale({gain})"),
            AttackSpec::ZeroMask { fraction } => format!("zero_mask({fraction})"),
            AttackSpec::TimeShift { shift_ms } => format!("time_shift({shift_ms}ms)"),
            AttackSpec::Lowpass { cutoff_hz } => format!("lowpass({cutoff_hz}Hz)"),
            AttackSpec::Bandpass { low_hz, high_hz } => format!("bandpass({low_hz}-{high_hz}Hz)"),
            AttackSpec::Smoothing { taps } => format!("smoothing({taps})"),
            AttackSpec::TimeStretch { rate } => format!("time_stretch({rate})"),
            AttackSpec::Echo { delay_ms, gain } => format!("echo({delay_ms}ms,{gain})"),
            AttackSpec::CropInvert { fraction } => format!("crop_invert({fraction})"),
            AttackSpec::FftMask { fraction } => format!("fft_mask({fraction})"),
            AttackSpec::Rir { rt60_ms } => format!("rir({rt60_ms}ms)"),
            AttackSpec::ExternalCodec { codec } => codec.clone(),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, AttackSpec::ExternalCodec { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::param(format!("{}: {what}", self.label())));
        let unit = |f: f64| (0.0..=1.0).contains(&f);
        match *self {
            AttackSpec::GaussianNoise { snr_db } | AttackSpec::UniformNoise { snr_db } if !snr_db.is_finite() => {
                bad("snr_db must be finite")
            }
            AttackSpec::AmplitudeScale { gain } if !(gain.is_finite() && gain >= 0.0) => bad("gain must be >= 0"),
            AttackSpec::ZeroMask { fraction } | AttackSpec::CropInvert { fraction } | AttackSpec::FftMask { fraction }
                if !unit(fraction) =>
            {
                bad("fraction must be in [0, 1]")
            }
            AttackSpec::TimeShift { shift_ms } if !shift_ms.is_finite() => bad("shift_ms must be finite"),
            AttackSpec::Lowpass { cutoff_hz } if !(cutoff_hz > 0.0) => bad("cutoff_hz must be > 0"),
            AttackSpec::Bandpass { low_hz, high_hz } if !(low_hz > 0.0 && low_hz < high_hz) => {
                bad("need 0 < low_hz < high_hz")
            }
            AttackSpec::Smoothing { taps } if taps == 0 || taps % 2 == 0 => bad("taps must be odd"),
            AttackSpec::TimeStretch { rate } if !(MIN_STRETCH_RATE..=MAX_STRETCH_RATE).contains(&rate) => {
                bad("rate must be in [0.8, 1.25]")
            }
            AttackSpec::Echo { delay_ms, gain } if !(delay_ms >= 0.0 && gain.is_finite() && gain.abs() <= 1.0) => {
                bad("need delay_ms >= 0 and |gain| <= 1")
            }
            AttackSpec::Rir { rt60_ms } if !(rt60_ms > 0.0 && rt60_ms <= 5000.0) => bad("rt60_ms must be in (0, 5000]"),
            _ => Ok(()),
        }
    }

    /// The eleven attacks of the default battery: six built in, five run
    /// through codec commands (`mp3`, `opus`, `encodec`, `speech_tokenizer`,
    /// `dac`).
    pub fn table1() -> Vec<AttackSpec> {
        let codec = |c: &str| AttackSpec::ExternalCodec { codec: c.into() };
        vec![
            AttackSpec::GaussianNoise { snr_db: 20.0 },
            AttackSpec::UniformNoise { snr_db: 20.0 },
            AttackSpec::ZeroMask { fraction: 0.1 },
            AttackSpec::FftMask { fraction: 0.1 },
            AttackSpec::Echo { delay_ms: 100.0, gain: 0.3 },
            codec("mp3"),
            codec("opus"),
            codec("encodec"),
            codec("speech_tokenizer"),
            codec("dac"),
            AttackSpec::Rir { rt60_ms: 200.0 },
        ]
    }

    /// Built-in members of [`AttackSpec::table1`].
    pub fn table1_builtin() -> Vec<AttackSpec> {
        Self::table1().into_iter().filter(|a| !a.is_external()).collect()
    }
}

/// Where and how external codecs run.
#[derive(Debug, Clone)]
pub struct CodecContext {
    pub commands: BTreeMap<String, CodecCommand>,
    pub workdir: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for CodecContext {
    fn default() -> Self {
        let commands = [CodecCommand::ffmpeg_mp3(64), CodecCommand::ffmpeg_opus(24)]
            .into_iter()
            .map(|c| (c.name.split('_').next().unwrap_or_default().to_string(), c))
            .collect();
        Self {
            commands,
            workdir: None,
            timeout: Duration::from_secs(codec::DEFAULT_TIMEOUT_SECS),
        }
    }
}

fn ms_to_samples(ms: f64, fs: u32) -> usize {
    (ms.abs() * fs as f64 / 1000.0).round() as usize
}

/// Applies a built-in attack. Deterministic in `(x, spec, seed)`.
pub fn attack_apply(x: &AudioBuffer, spec: &AttackSpec, seed: u64) -> Result<AudioBuffer> {
    attack_apply_with(x, spec, seed, &CodecContext::default())
}

/// [`attack_apply`] with an explicit codec registry.
pub fn attack_apply_with(x: &AudioBuffer, spec: &AttackSpec, seed: u64, codecs: &CodecContext) -> Result<AudioBuffer> {
    spec.validate()?;
    let fs = x.sample_rate();
    let s = x.samples();
    let n = s.len();
    let mut rng = PnStream::new(seed, ATTACK_STREAM);
    let out = match spec {
        AttackSpec::None => s.to_vec(),
        AttackSpec::GaussianNoise { snr_db } => add_noise_at_snr(s, *snr_db, |_| rng.gaussian()),
        AttackSpec::UniformNoise { snr_db } => add_noise_at_snr(s, *snr_db, |_| 2.0 * rng.uniform() - 1.0),
        AttackSpec::AmplitudeScale { gain } => s.iter().map(|v| v * gain).collect(),
        AttackSpec::ZeroMask { fraction } => {
            let m = (fraction * n as f64).floor() as usize;
            let start = rng.below(n - m + 1);
            let mut y = s.to_vec();
            y[start..start + m].fill(0.0);
            y
        }
        AttackSpec::TimeShift { shift_ms } => {
            let d = ms_to_samples(*shift_ms, fs).min(n);
            let mut y = vec![0.0; n];
            if *shift_ms >= 0.0 {
                y[d..].copy_from_slice(&s[..n - d]);
            } else {
                y[..n - d].copy_from_slice(&s[d..]);
            }
            y
        }
        AttackSpec::Lowpass { cutoff_hz } => filters::lowpass(s, check_below_nyquist(*cutoff_hz, fs)?, fs as f64),
        AttackSpec::Bandpass { low_hz, high_hz } => {
            filters::bandpass(s, *low_hz, check_below_nyquist(*high_hz, fs)?, fs as f64)
        }
        AttackSpec::Smoothing { taps } => filters::smooth(s, *taps),
        AttackSpec::TimeStretch { rate } => {
            let mut y = stretch::phase_vocoder(s, *rate);
            y.resize(n, 0.0);
            y
        }
        AttackSpec::Echo { delay_ms, gain } => return echo(x, *delay_ms, *gain),
        AttackSpec::CropInvert { fraction } => {
            let m = (fraction * n as f64).floor() as usize;
            let start = rng.below(n - m + 1);
            let mut y = s.to_vec();
            y[start..start + m].reverse();
            y
        }
        AttackSpec::FftMask { fraction } => return fft_mask(x, *fraction, seed),
        AttackSpec::Rir { rt60_ms } => {
            let h = rir::synth_rir(*rt60_ms, seed, fs);
            return rir_convolve(x, &h);
        }
        AttackSpec::ExternalCodec { codec } => {
            let cmd = codecs
                .commands
                .get(codec)
                .ok_or_else(|| Error::Config(format!("no codec command registered as `{codec}`")))?;
            return external_codec_attack(x, cmd, codecs.workdir.as_deref(), codecs.timeout);
        }
    };
    x.with_samples(out)
}

fn check_below_nyquist(f: f64, fs: u32) -> Result<f64> {
    if f >= fs as f64 / 2.0 {
        return Err(Error::param(format!("{f} Hz is not below Nyquist")));
    }
    Ok(f)
}

/// Adds `noise` scaled so the SNR against `x` is exactly `snr_db`.
fn add_noise_at_snr(x: &[f64], snr_db: f64, mut noise: impl FnMut(usize) -> f64) -> Vec<f64> {
    let w: Vec<f64> = (0..x.len()).map(&mut noise).collect();
    let ex: f64 = x.iter().map(|v| v * v).sum();
    let ew: f64 = w.iter().map(|v| v * v).sum();
    let g = if ew > 0.0 {
        (ex / ew / 10f64.powf(snr_db / 10.0)).sqrt()
    } else {
        0.0
    };
    x.iter().zip(&w).map(|(a, b)| a + g * b).collect()
}

/// `y[n] = x[n] + gain * x[n - d]` with `d = round(delay_ms * fs / 1000)`.
pub fn echo(x: &AudioBuffer, delay_ms: f64, gain: f64) -> Result<AudioBuffer> {
    AttackSpec::Echo { delay_ms, gain }.validate()?;
    let d = ms_to_samples(delay_ms, x.sample_rate());
    let s = x.samples();
    let y = (0..s.len())
        .map(|i| s[i] + if i >= d { gain * s[i - d] } else { 0.0 })
        .collect();
    x.with_samples(y)
}

/// Zeroes a seeded random subset of `round(fraction * cells)` STFT cells.
pub fn fft_mask(x: &AudioBuffer, fraction: f64, seed: u64) -> Result<AudioBuffer> {
    AttackSpec::FftMask { fraction }.validate()?;
    let mut spec = stft(x, &StftConfig::default())?;
    let cells = spec.grid().len();
    let m = (fraction * cells as f64).round() as usize;
    let mut idx: Vec<usize> = (0..cells).collect();
    PnStream::new(seed, ATTACK_STREAM + 1).shuffle(&mut idx);
    let grid = spec.grid_mut();
    for &i in &idx[..m] {
        grid[i] = Default::default();
    }
    istft(&spec)
}

/// Stretches by `rate` and fits the result back to the input length.
pub fn time_stretch(x: &AudioBuffer, rate: f64) -> Result<AudioBuffer> {
    attack_apply(x, &AttackSpec::TimeStretch { rate }, 0)
}

/// Convolves with `h`, truncates to the input length and rescales to the
/// input's peak.
pub fn rir_convolve(x: &AudioBuffer, h: &[f64]) -> Result<AudioBuffer> {
    if h.is_empty() || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("impulse response must be non-empty and finite"));
    }
    let mut y = rir::convolve(x.samples(), h);
    let peak_in = x.peak();
    let peak_out = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        y.iter_mut().for_each(|v| *v *= g);
    }
    x.with_samples(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(seed: u64, n: usize) -> AudioBuffer {
        let mut r = PnStream::new(seed, 9);
        AudioBuffer::new((0..n).map(|_| 0.1 * r.gaussian()).collect(), 16_000).unwrap()
    }

    #[test]
    fn spec_round_trips_through_toml() {
        for a in AttackSpec::table1() {
            let s = toml::to_string(&a).unwrap();
            assert_eq!(toml::from_str::<AttackSpec>(&s).unwrap(), a);
        }
        let a: AttackSpec = toml::from_str("kind = \"echo\"\ndelay_ms = 100\ngain = 0.3").unwrap();
        assert_eq!(a, AttackSpec::Echo { delay_ms: 100.0, gain: 0.3 });
        assert!(toml::from_str::<AttackSpec>("kind = \"echo\"\ndelay_ms = 1\ngain = 0.3\nx = 1").is_err());
    }

    #[test]
    fn table1_has_eleven_rows() {
        assert_eq!(AttackSpec::table1().len(), 11);
        assert_eq!(AttackSpec::table1_builtin().len(), 6);
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let x = noise(1, 4000);
        for a in [
            AttackSpec::TimeStretch { rate: 0.5 },
            AttackSpec::ZeroMask { fraction: 1.5 },
            AttackSpec::Smoothing { taps: 4 },
            AttackSpec::Lowpass { cutoff_hz: 9000.0 },
            AttackSpec::Echo { delay_ms: 10.0, gain: 2.0 },
        ] {
            assert!(attack_apply(&x, &a, 0).is_err(), "{a:?}");
        }
    }

    #[test]
    fn time_shift_moves_samples() {
        let x = AudioBuffer::new((0..160).map(|i| i as f64 / 160.0).collect(), 16_000).unwrap();
        let y = attack_apply(&x, &AttackSpec::TimeShift { shift_ms: 1.0 }, 0).unwrap();
        assert_eq!(&y.samples()[..16], &[0.0; 16]);
        assert_eq!(y.samples()[16], x.samples()[0]);
        let y = attack_apply(&x, &AttackSpec::TimeShift { shift_ms: -1.0 }, 0).unwrap();
        assert_eq!(y.samples()[0], x.samples()[16]);
    }

    #[test]
    fn crop_invert_reverses_one_segment() {
        let x = noise(2, 1000);
        let y = attack_apply(&x, &AttackSpec::CropInvert { fraction: 0.2 }, 5).unwrap();
        let changed: Vec<usize> = (0..1000).filter(|&i| x.samples()[i] != y.samples()[i]).collect();
        assert!(changed.len() <= 200 && changed.len() > 150);
        let mut a = x.samples().to_vec();
        let mut b = y.samples().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn copy_codec_is_identity_within_pcm16() {
        let x = noise(3, 8000);
        let cmd = CodecCommand::new("copy", "cp {in} {out}").unwrap();
        let y = external_codec_attack(&x, &cmd, None, Duration::from_secs(10)).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn failing_codec_is_a_structured_error() {
        let x = noise(3, 800);
        let cmd = CodecCommand::new("fail", "sh -c 'echo broken >&2; exit 1' {in} {out}").unwrap();
        match external_codec_attack(&x, &cmd, None, Duration::from_secs(10)) {
            Err(Error::Codec { name, message }) => {
                assert_eq!(name, "fail");
                assert!(message.contains("broken"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let missing = CodecCommand::new("missing", "/nonexistent/codec {in} {out}").unwrap();
        assert!(matches!(
            external_codec_attack(&x, &missing, None, Duration::from_secs(10)),
            Err(Error::Codec { .. })
        ));
    }

    #[test]
    fn codec_timeout() {
        let x = noise(3, 800);
        let cmd = CodecCommand::new("slow", "sh -c 'sleep 5' {in} {out}").unwrap();
        let err = external_codec_attack(&x, &cmd, None, Duration::from_millis(200)).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }

    #[test]
    fn template_needs_both_placeholders() {
        assert!(CodecCommand::new("x", "cp {in} out.wav").is_err());
        assert!(CodecCommand::new("x", "cp in.wav {out}").is_err());
    }

    #[test]
    fn unregistered_codec_is_a_config_error() {
        let x = noise(3, 800);
        let a = AttackSpec::ExternalCodec { codec: "nope".into() };
        assert!(matches!(attack_apply(&x, &a, 0), Err(Error::Config(_))));
    }
}

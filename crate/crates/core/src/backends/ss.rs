//! Spread-spectrum watermark.
//!
//! The carrier is a key-seeded `±1` chip sequence, band-limited to
//! 0.5-7 kHz and scaled to unit power. Consecutive 256-sample blocks carry
//! the pilot or one payload bit (antipodal). The detector correlates in the
//! STFT domain with a local spectral whitening weight, which keeps loud
//! low-frequency speech from swamping the correlation.

use rustfft::num_complex::Complex64;

use super::{
    check_capacity, lagged_null, min_frames_err, symbol_of, symbol_sign, BackendId,
    DetectionScore, Payload, Perturbation, Symbol, WatermarkKey,
};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pn;
use crate::stft::{fft_forward, fft_inverse, stft, Spectrogram, StftConfig};

pub const DEFAULT_ALPHA: f64 = 0.005;
pub const BLOCK_LEN: usize = 256;
pub const BAND_LO_HZ: f64 = 500.0;
pub const BAND_HI_HZ: f64 = 7000.0;

/// Whitening floor relative to the frame's mean in-band power.
const WHITEN_FLOOR: f64 = 1e-3;
const MIN_FRAMES: usize = 8;

const CHIP_STREAM: u64 = 0x5353_0001;

/// Unit-power band-limited chip sequence for `key`.
pub fn carrier(key: &WatermarkKey, len: usize, sample_rate: u32) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len as u64)
        .map(|i| Complex64::new(pn::chip(key.seed, CHIP_STREAM, i), 0.0))
        .collect();
    fft_forward(&mut buf);
    let df = sample_rate as f64 / len as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * df;
        if !(BAND_LO_HZ..=BAND_HI_HZ).contains(&f) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_inverse(&mut buf);
    let mut out: Vec<f64> = buf.into_iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v /= rms;
        }
    }
    out
}

fn symbol_at(sample: usize, n_bits: usize) -> Symbol {
    symbol_of(sample / BLOCK_LEN, n_bits)
}

pub fn ss_embed(x: &AudioBuffer, payload: &Payload, key: &WatermarkKey, alpha: f64) -> Result<Perturbation> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("ss alpha must be > 0, got {alpha}")));
    }
    let len = x.len();
    check_capacity(len / BLOCK_LEN, payload.len())?;
    let c = carrier(key, len, x.sample_rate());
    let delta = c
        .iter()
        .enumerate()
        .map(|(n, v)| alpha * symbol_sign(symbol_at(n, payload.len()), payload) * v)
        .collect();
    Perturbation::new(delta, BackendId::Ss)
}

struct Whitened {
    /// `Y / S` restricted to the band, as interleaved (re, im) pairs.
    stat: Vec<f64>,
    lo: usize,
    hi: usize,
    n_frames: usize,
}

fn whiten(y: &AudioBuffer, cfg: &StftConfig) -> Result<(Whitened, Spectrogram)> {
    let spec = stft(y, cfg)?;
    let n_frames = spec.n_frames();
    if n_frames < MIN_FRAMES {
        return Err(min_frames_err(cfg.hop * (MIN_FRAMES - 1), y.len()));
    }
    let lo = cfg.bin_at_or_above(BAND_LO_HZ, y.sample_rate());
    let hi = cfg.bin_at_or_above(BAND_HI_HZ, y.sample_rate()).min(spec.n_bins() - 1);
    let width = hi - lo;
    let mut stat = Vec::with_capacity(n_frames * width * 2);
    for t in 0..n_frames {
        let row = spec.frame(t);
        let pow: Vec<f64> = row.iter().map(|c| c.norm_sqr()).collect();
        let band_mean = pow[lo..hi].iter().sum::<f64>() / width as f64;
        let floor = WHITEN_FLOOR * band_mean + 1e-20;
        for k in lo..hi {
            let a = k.saturating_sub(2);
            let b = (k + 3).min(pow.len());
            let s = pow[a..b].iter().sum::<f64>() / (b - a) as f64;
            let v = row[k] / s.max(floor);
            stat.push(v.re);
            stat.push(v.im);
        }
    }
    Ok((
        Whitened {
            stat,
            lo,
            hi,
            n_frames,
        },
        spec,
    ))
}

/// Interleaved band cells of the STFT of `carrier` masked to `sym` blocks.
fn masked_reference(
    c: &[f64],
    sample_rate: u32,
    cfg: &StftConfig,
    w: &Whitened,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<f64>> {
    let masked: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(n, &v)| if keep(n) { v } else { 0.0 })
        .collect();
    let spec = stft(&AudioBuffer::new(masked, sample_rate)?, cfg)?;
    let mut out = Vec::with_capacity(w.stat.len());
    for t in 0..w.n_frames {
        for k in w.lo..w.hi {
            let v = spec.at(t, k);
            out.push(v.re);
            out.push(v.im);
        }
    }
    Ok(out)
}

pub fn ss_detect(y: &AudioBuffer, key: &WatermarkKey) -> Result<DetectionScore> {
    let cfg = StftConfig::default();
    if y.len() < BLOCK_LEN * 2 {
        return Err(min_frames_err(BLOCK_LEN * 2, y.len()));
    }
    let (w, _) = whiten(y, &cfg)?;
    let c = carrier(key, y.len(), y.sample_rate());
    // The pilot pattern does not depend on the payload length.
    let reference = masked_reference(&c, y.sample_rate(), &cfg, &w, |n| (n / BLOCK_LEN) % 2 == 0)?;
    let width = (w.hi - w.lo) * 2;
    let (c0, sigma) = lagged_null(&w.stat, &reference, w.n_frames, width, 2);
    let norm_s = w.stat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_r = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    let raw = if norm_s > 0.0 && norm_r > 0.0 { c0 / (norm_s * norm_r) } else { 0.0 };
    let z = if sigma > 0.0 { c0 / sigma } else { 0.0 };
    Ok(DetectionScore::from_z(raw, z))
}

pub fn ss_decode(y: &AudioBuffer, key: &WatermarkKey, n_bits: usize) -> Result<Payload> {
    let cfg = StftConfig::default();
    check_capacity(y.len() / BLOCK_LEN, n_bits)?;
    let (w, _) = whiten(y, &cfg)?;
    let c = carrier(key, y.len(), y.sample_rate());
    let mut bits = Vec::with_capacity(n_bits);
    for b in 0..n_bits {
        let reference = masked_reference(&c, y.sample_rate(), &cfg, &w, |n| {
            symbol_at(n, n_bits) == Symbol::Bit(b)
        })?;
        let corr: f64 = w.stat.iter().zip(&reference).map(|(a, r)| a * r).sum();
        bits.push(u8::from(corr > 0.0));
    }
    Payload::new(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::corpus::{speech_shaped_noise, synth_utterance};

    #[test]
    fn alpha_must_be_positive() {
        let x = synth_utterance(1, 1.0, 16_000);
        let key = WatermarkKey::new(1, BackendId::Ss);
        let p = Payload::random(1, 16).unwrap();
        assert!(ss_embed(&x, &p, &key, 0.0).is_err());
        assert!(ss_embed(&x, &p, &key, -1.0).is_err());
    }

    #[test]
    fn delta_is_linear_in_alpha() {
        let x = synth_utterance(2, 1.0, 16_000);
        let key = WatermarkKey::new(5, BackendId::Ss);
        let p = Payload::random(2, 16).unwrap();
        let a = ss_embed(&x, &p, &key, 0.003).unwrap();
        let b = ss_embed(&x, &p, &key, 0.006).unwrap();
        assert!((b.norm() - 2.0 * a.norm()).abs() <= 1e-12 * b.norm());
    }

    #[test]
    fn zero_host_gives_scaled_pattern() {
        let x = AudioBuffer::zeros(16_000, 16_000).unwrap();
        let key = WatermarkKey::new(8, BackendId::Ss);
        let p = Payload::random(8, 16).unwrap();
        let d = ss_embed(&x, &p, &key, 0.01).unwrap();
        let c = carrier(&key, x.len(), 16_000);
        let expect = 0.01 * c.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((d.norm() - expect).abs() < 1e-9);
    }

    #[test]
    fn carrier_is_band_limited_unit_power() {
        let key = WatermarkKey::new(3, BackendId::Ss);
        let c = carrier(&key, 16_000, 16_000);
        let p = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
        assert!((p - 1.0).abs() < 1e-9);
        let mut spec: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_forward(&mut spec);
        let out: f64 = spec
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = (*k).min(16_000 - k) as f64;
                !(BAND_LO_HZ..=BAND_HI_HZ).contains(&f)
            })
            .map(|(_, v)| v.norm_sqr())
            .sum();
        assert!(out < 1e-12);
    }

    #[test]
    fn capacity_error_for_short_signal() {
        let x = AudioBuffer::zeros(2000, 16_000).unwrap();
        let key = WatermarkKey::new(3, BackendId::Ss);
        let p = Payload::random(1, 16).unwrap();
        assert!(matches!(ss_embed(&x, &p, &key, 0.01), Err(Error::Capacity { .. })));
    }

    #[test]
    fn clean_detection_on_speech_shaped_noise() {
        // 20 dB embedding SNR on 1 s of speech-shaped noise
        for seed in 0..5 {
            let x = speech_shaped_noise(seed, 1.0, 16_000);
            let key = WatermarkKey::new(100 + seed, BackendId::Ss);
            let p = Payload::random(seed, 16).unwrap();
            let alpha = x.rms() * 0.1;
            let d = ss_embed(&x, &p, &key, alpha).unwrap();
            let y = d.apply(&x).unwrap();
            let s = ss_detect(&y, &key).unwrap();
            assert!(s.z > 6.0, "seed {seed}: z = {}", s.z);
            assert_eq!(ss_decode(&y, &key, 16).unwrap(), p);
        }
    }
}

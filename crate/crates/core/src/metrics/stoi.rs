//! Short-time objective intelligibility (Taal et al., 2011).
//!
//! Both signals are resampled to 10 kHz, frames more than 40 dB below the
//! loudest reference frame are dropped from both, and one-third-octave band
//! envelopes are compared over 384 ms segments by clipped, normalized
//! correlation.

use rustfft::num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::stft::fft_forward;

const FS: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const N_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;
/// One-sided length of the resampling kernel, in output periods.
const RESAMPLE_ZEROS: f64 = 16.0;

fn hann(n: usize) -> Vec<f64> {
    // Symmetric window without its zero end points.
    (1..=n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Windowed-sinc resampling from `from` Hz to `to` Hz.
pub(crate) fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let ratio = to as f64 / from as f64;
    // Cutoff at the lower Nyquist, in cycles per input sample.
    let fc = 0.5 * ratio.min(1.0);
    let half = RESAMPLE_ZEROS / (2.0 * fc);
    let out_len = (x.len() as f64 * ratio).round() as usize;
    (0..out_len)
        .map(|m| {
            let p = m as f64 / ratio;
            let lo = (p - half).ceil().max(0.0) as usize;
            let hi = ((p + half).floor() as usize).min(x.len().saturating_sub(1));
            (lo..=hi)
                .map(|k| {
                    let t = p - k as f64;
                    let arg = 2.0 * fc * t;
                    let sinc = if arg == 0.0 {
                        1.0
                    } else {
                        (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
                    };
                    let w = 0.5 + 0.5 * (std::f64::consts::PI * t / half).cos();
                    x[k] * 2.0 * fc * sinc * w
                })
                .sum()
        })
        .collect()
}

fn frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    if x.len() < FRAME {
        return Vec::new();
    }
    (0..=(x.len() - FRAME) / HOP)
        .map(|t| (0..FRAME).map(|i| x[t * HOP + i] * window[i]).collect())
        .collect()
}

fn overlap_add(frames: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; (frames.len().saturating_sub(1)) * HOP + FRAME];
    for (t, f) in frames.iter().enumerate() {
        for (i, v) in f.iter().enumerate() {
            out[t * HOP + i] += v;
        }
    }
    out
}

/// Drops frames of both signals where `x` is more than 40 dB below its
/// loudest frame, then resynthesizes.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let (fx, fy) = (frames(x, &w), frames(y, &w));
    let energy: Vec<f64> = fx
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..fx.len()).filter(|&t| energy[t] > max - DYN_RANGE_DB).collect();
    let pick = |f: &[Vec<f64>]| overlap_add(&keep.iter().map(|&t| f[t].clone()).collect::<Vec<_>>());
    (pick(&fx), pick(&fy))
}

/// Band-to-bin map of the one-third-octave filterbank.
fn third_octave_bands() -> Vec<std::ops::Range<usize>> {
    let n_bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..n_bins).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..n_bins)
            .min_by(|&a, &b| (f[a] - target).abs().total_cmp(&(f[b] - target).abs()))
            .unwrap_or(0)
    };
    (0..N_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            nearest(lo)..nearest(hi)
        })
        .collect()
}

/// Band envelopes, `[band][frame]`.
fn band_envelopes(x: &[f64], bands: &[std::ops::Range<usize>]) -> Vec<Vec<f64>> {
    let w = hann(FRAME);
    let spec: Vec<Vec<f64>> = frames(x, &w)
        .into_iter()
        .map(|f| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for (b, v) in buf.iter_mut().zip(&f) {
                b.re = *v;
            }
            fft_forward(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();
    bands
        .iter()
        .map(|r| spec.iter().map(|p| p[r.clone()].iter().sum::<f64>().sqrt()).collect())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// STOI of `test` against `reference`; 1 for identical signals.
pub fn stoi(reference: &AudioBuffer, test: &AudioBuffer) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::Dimension(format!(
            "stoi: reference has {} samples, test {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.sample_rate() != test.sample_rate() {
        return Err(Error::param("stoi: sample rates differ"));
    }
    let x = resample(reference.samples(), reference.sample_rate(), FS);
    let y = resample(test.samples(), test.sample_rate(), FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let (ex, ey) = (band_envelopes(&x, &bands), band_envelopes(&y, &bands));
    let n_frames = ex[0].len();
    if n_frames < SEGMENT {
        return Err(Error::TooShort {
            needed: SEGMENT * HOP * reference.sample_rate() as usize / FS as usize,
            got: reference.len(),
        });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=n_frames {
        for j in 0..N_BANDS {
            let xs = &ex[j][m - SEGMENT..m];
            let ys = &ey[j][m - SEGMENT..m];
            let alpha = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(y, x)| (y * alpha).min(x * (1.0 + clip)))
                .collect();
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let my = yp.iter().sum::<f64>() / SEGMENT as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let d: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>() / ((norm(&xc) + EPS) * (norm(&yc) + EPS));
            total += d;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resampling_keeps_a_tone() {
        let x: Vec<f64> = (0..16_000)
            .map(|n| (std::f64::consts::TAU * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let y = resample(&x, 16_000, 10_000);
        assert_eq!(y.len(), 10_000);
        for (m, v) in y.iter().enumerate().skip(200).take(9000) {
            let expect = (std::f64::consts::TAU * 1000.0 * m as f64 / 10_000.0).sin();
            assert!((v - expect).abs() < 1e-3, "{m}: {v} vs {expect}");
        }
    }

    #[test]
    fn bands_are_increasing_and_non_empty() {
        let b = third_octave_bands();
        assert_eq!(b.len(), 15);
        for w in b.windows(2) {
            assert!(w[0].start < w[1].start);
        }
        assert!(b.iter().all(|r| !r.is_empty()));
    }

    fn utterance() -> AudioBuffer {
        crate::bench::corpus::synth_utterance(11, 3.0, 16_000)
    }

    #[test]
    fn identical_signals_score_one() {
        let x = utterance();
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn decreases_with_noise() {
        let x = utterance();
        let mut rng = crate::pn::PnStream::new(5, 1);
        let noise: Vec<f64> = (0..x.len()).map(|_| rng.gaussian()).collect();
        let e_n: f64 = noise.iter().map(|v| v * v).sum();
        let scores: Vec<f64> = [30.0, 20.0, 10.0, 0.0]
            .iter()
            .map(|snr: &f64| {
                let g = (x.energy() / e_n / 10f64.powf(snr / 10.0)).sqrt();
                let y: Vec<f64> = x.samples().iter().zip(&noise).map(|(a, b)| a + g * b).collect();
                stoi(&x, &x.with_samples(y).unwrap()).unwrap()
            })
            .collect();
        for w in scores.windows(2) {
            assert!(w[0] > w[1], "{scores:?}");
        }
    }

    #[test]
    fn silence_scores_near_zero() {
        let x = utterance();
        let z = AudioBuffer::zeros(x.len(), 16_000).unwrap();
        assert!(stoi(&x, &z).unwrap().abs() < 0.05);
    }

    #[test]
    fn too_short_is_an_error() {
        let x = crate::bench::corpus::synth_utterance(1, 0.2, 16_000);
        assert!(matches!(stoi(&x, &x), Err(Error::TooShort { .. })));
    }
}

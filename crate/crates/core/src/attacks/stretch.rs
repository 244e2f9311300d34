//! Phase-vocoder time stretching.
//!
//! Analysis uses a Hann window of [`FRAME`] samples every [`HOP`] samples.
//! Output frames are read at fractional analysis positions `k * rate`:
//! magnitudes are interpolated between neighbouring frames and phases
//! advance by the measured inter-frame phase difference, so pitch is kept
//! while duration scales by `1 / rate`.

use rustfft::num_complex::Complex64;

use crate::stft::{fft_forward, fft_inverse};

const FRAME: usize = 1024;
const HOP: usize = 256;

fn hann() -> Vec<f64> {
    (0..FRAME)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / FRAME as f64).cos())
        .collect()
}

fn analyse(x: &[f64], window: &[f64]) -> Vec<Vec<Complex64>> {
    let pad = FRAME / 2;
    let mut padded = vec![0.0; x.len() + 2 * pad + FRAME];
    padded[pad..pad + x.len()].copy_from_slice(x);
    let n_frames = x.len() / HOP + 1;
    (0..n_frames)
        .map(|t| {
            let mut buf: Vec<Complex64> = (0..FRAME)
                .map(|i| Complex64::new(padded[t * HOP + i] * window[i], 0.0))
                .collect();
            fft_forward(&mut buf);
            buf.truncate(FRAME / 2 + 1);
            buf
        })
        .collect()
}

fn synthesise(frames: &[Vec<Complex64>], window: &[f64]) -> Vec<f64> {
    let pad = FRAME / 2;
    let len = (frames.len().saturating_sub(1)) * HOP + FRAME;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); FRAME];
    for (t, row) in frames.iter().enumerate() {
        buf[0] = Complex64::new(row[0].re, 0.0);
        buf[FRAME / 2] = Complex64::new(row[FRAME / 2].re, 0.0);
        for k in 1..FRAME / 2 {
            buf[k] = row[k];
            buf[FRAME - k] = row[k].conj();
        }
        fft_inverse(&mut buf);
        for i in 0..FRAME {
            out[t * HOP + i] += buf[i].re * window[i];
            norm[t * HOP + i] += window[i] * window[i];
        }
    }
    out.iter()
        .zip(&norm)
        .skip(pad)
        .map(|(o, n)| if *n > 1e-10 { o / n } else { 0.0 })
        .collect()
}

fn wrap(p: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    p - tau * ((p + std::f64::consts::PI) / tau).floor()
}

/// Stretches `x` so its duration becomes `len / rate`; `rate > 1` shortens.
pub fn phase_vocoder(x: &[f64], rate: f64) -> Vec<f64> {
    let window = hann();
    let spec = analyse(x, &window);
    let n_bins = FRAME / 2 + 1;
    let expected: Vec<f64> = (0..n_bins)
        .map(|k| std::f64::consts::TAU * HOP as f64 * k as f64 / FRAME as f64)
        .collect();
    let mut phase: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let mut out = Vec::new();
    let last = spec.len() - 1;
    let mut pos = 0.0_f64;
    while pos <= last as f64 {
        let t = pos.floor() as usize;
        let frac = pos - t as f64;
        let next = (t + 1).min(last);
        let row: Vec<Complex64> = (0..n_bins)
            .map(|k| {
                let mag = (1.0 - frac) * spec[t][k].norm() + frac * spec[next][k].norm();
                Complex64::from_polar(mag, phase[k])
            })
            .collect();
        out.push(row);
        for k in 0..n_bins {
            let d = spec[next][k].arg() - spec[t][k].arg() - expected[k];
            phase[k] += expected[k] + wrap(d);
        }
        pos += rate;
    }
    let mut y = synthesise(&out, &window);
    y.truncate((x.len() as f64 / rate).round() as usize);
    y
}

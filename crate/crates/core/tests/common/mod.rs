#![allow(dead_code)]

use rustfft::num_complex::Complex64;
use wmux_core::pn::PnStream;
use wmux_core::stft::fft_forward;
use wmux_core::AudioBuffer;

pub const SR: u32 = 16_000;

pub fn white(seed: u64, n: usize, rms: f64) -> Vec<f64> {
    let mut rng = PnStream::new(seed, 0x7E57);
    (0..n).map(|_| rms * rng.gaussian()).collect()
}

pub fn buf(samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(samples, SR).unwrap()
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `||a - b|| / ||b||`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    (energy(&diff(a, b)) / energy(b).max(1e-300)).sqrt()
}

pub fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
    10.0 * (energy(reference) / energy(&diff(test, reference))).log10()
}

/// Fraction of `x`'s energy (whole-signal DFT) at frequencies in `[lo, hi)`.
pub fn band_fraction(x: &[f64], lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut s: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut s);
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, c) in s.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * SR as f64 / n as f64;
        let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        let p = w * c.norm_sqr();
        total += p;
        if f >= lo && f < hi {
            inside += p;
        }
    }
    inside / total
}

/// Frequency of the largest DFT bin.
pub fn peak_hz(x: &[f64]) -> f64 {
    let n = x.len();
    let mut s: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut s);
    let k = (1..n / 2)
        .max_by(|&a, &b| s[a].norm_sqr().partial_cmp(&s[b].norm_sqr()).unwrap())
        .unwrap();
    k as f64 * SR as f64 / n as f64
}

/// Zero-phase brick-wall band limit to `[lo, hi)` via the whole-signal DFT.
pub fn band_limit(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let mut s: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_forward(&mut s);
    for (k, c) in s.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * SR as f64 / n as f64;
        if f < lo || f >= hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    wmux_core::stft::fft_inverse(&mut s);
    s.iter().map(|c| c.re).collect()
}

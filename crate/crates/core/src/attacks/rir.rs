//! Room impulse responses and FFT convolution.

use rustfft::num_complex::Complex64;

use crate::pn::PnStream;
use crate::stft::{fft_forward, fft_inverse};

const RIR_STREAM: u64 = 0x5249_5201;
/// Amplitude of the reverberant tail relative to the direct path.
const TAIL_LEVEL: f64 = 0.1;

/// Unit direct path followed by seeded Gaussian noise decaying by 60 dB
/// over `rt60_ms`.
pub fn synth_rir(rt60_ms: f64, seed: u64, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let len = ((rt60_ms / 1000.0 * fs).ceil() as usize).max(1);
    // exp(-k * len) = 1e-3 in amplitude
    let k = 3.0 * std::f64::consts::LN_10 / len as f64;
    let mut rng = PnStream::new(seed, RIR_STREAM);
    let mut h = Vec::with_capacity(len);
    h.push(1.0);
    for n in 1..len {
        h.push(TAIL_LEVEL * rng.gaussian() * (-k * n as f64).exp());
    }
    h
}

/// Linear convolution truncated to `x.len()`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let load = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (d, s) in b.iter_mut().zip(v) {
            d.re = *s;
        }
        fft_forward(&mut b);
        b
    };
    let (a, b) = (load(x), load(h));
    let mut c: Vec<Complex64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
    fft_inverse(&mut c);
    c.truncate(x.len());
    c.into_iter().map(|v| v.re).collect()
}

/// Energy of the direct path over the energy of the tail.
pub fn direct_to_reverberant(h: &[f64]) -> f64 {
    let tail: f64 = h[1..].iter().map(|v| v * v).sum();
    h[0] * h[0] / tail.max(f64::MIN_POSITIVE)
}

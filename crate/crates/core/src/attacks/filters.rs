//! Butterworth biquad cascades and a moving-average smoother.

use std::f64::consts::PI;

/// Pole quality factors of a 4th-order Butterworth section pair.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_7];

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, q: f64, fs: f64) -> Self {
        let w = 2.0 * PI * fc / fs;
        let (sin, cos) = w.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 + cos) / a0;
        Self {
            b: [b1 / 2.0, -b1, b1 / 2.0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Direct form II transposed.
    fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b[0] * *v + z1;
            z1 = self.b[1] * *v - self.a[0] * y + z2;
            z2 = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

/// 4th-order Butterworth low-pass.
pub fn lowpass(x: &[f64], cutoff_hz: f64, fs: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    for q in BUTTER4_Q {
        Biquad::lowpass(cutoff_hz, q, fs).run(&mut y);
    }
    y
}

/// 4th-order Butterworth high-pass followed by a 4th-order low-pass.
pub fn bandpass(x: &[f64], low_hz: f64, high_hz: f64, fs: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    for q in BUTTER4_Q {
        Biquad::highpass(low_hz, q, fs).run(&mut y);
    }
    for q in BUTTER4_Q {
        Biquad::lowpass(high_hz, q, fs).run(&mut y);
    }
    y
}

/// Centred moving average over `taps` samples (odd), shrinking at the edges.
pub fn smooth(x: &[f64], taps: usize) -> Vec<f64> {
    if taps <= 1 {
        return x.to_vec();
    }
    let half = taps / 2;
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

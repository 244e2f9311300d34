//! Phase-perturbation watermark.
//!
//! Band 0.3-3 kHz is split into contiguous groups of [`GROUP_BINS`] STFT
//! bins. Each group's band signal is multiplied by a frame-synchronous
//! modulator `sin(pi * n / hop)`, which is odd about every frame centre, and
//! by a key chip that holds for [`SEGMENT_HOPS`] hops and cross-fades into
//! its neighbours over the outer hops. Seen from the STFT,
//! the added term is `i * tan(theta) / 2 * (Y[k-1] - Y[k+1])`: it sits in
//! quadrature with the host bin, so bin phases move by up to `±theta` while
//! magnitudes change only to second order. Unlike rotating bins directly,
//! the perturbation is a real time-domain signal and therefore survives
//! resynthesis and re-analysis.
//!
//! The detector measures each bin's phase against the quadrature reference
//! `i * (Y[k-1] - Y[k+1])` built from its neighbours. For stationary host
//! content the window kernel is real, so the host term is zero on average;
//! the watermark term alternates sign from frame to frame.

use super::{
    check_capacity, lagged_null, min_frames_err, symbol_of, symbol_sign, BackendId,
    DetectionScore, Payload, Perturbation, Symbol, WatermarkKey,
};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pn;
use crate::stft::{stft, Spectrogram, StftConfig};

pub const DEFAULT_THETA: f64 = 0.17;
pub const MAX_THETA: f64 = std::f64::consts::FRAC_PI_4;
pub const BAND_LO_HZ: f64 = 300.0;
pub const BAND_HI_HZ: f64 = 3000.0;
pub const GROUP_BINS: usize = 4;
/// Hops per chip segment; the chip changes only at frame centres.
pub const SEGMENT_HOPS: usize = 4;
const MIN_FRAMES: usize = 8;
const INFORMED_PASSES: usize = 6;
const MIN_SCALE: f64 = 0.25;
const MAX_SCALE: f64 = 3.0;

const SIGN_STREAM: u64 = 0x5048_0001;

struct GroupLayout {
    lo: usize,
    n_groups: usize,
    n_frames: usize,
    n_segments: usize,
    hop: usize,
}

impl GroupLayout {
    fn new(spec: &Spectrogram) -> Self {
        let cfg = spec.config();
        let lo = cfg.bin_at_or_above(BAND_LO_HZ, spec.sample_rate());
        let hi = cfg.bin_at_or_above(BAND_HI_HZ, spec.sample_rate()).min(spec.n_bins() - 1);
        let n_frames = spec.n_frames();
        Self {
            lo,
            n_groups: (hi - lo) / GROUP_BINS,
            n_frames,
            n_segments: spec.orig_len().div_ceil(cfg.hop).div_ceil(SEGMENT_HOPS),
            hop: cfg.hop,
        }
    }

    fn n_cells(&self) -> usize {
        self.n_segments * self.n_groups
    }

    fn bins(&self, g: usize) -> std::ops::Range<usize> {
        let k = self.lo + g * GROUP_BINS;
        k..k + GROUP_BINS
    }

    fn cell(&self, segment: usize, g: usize) -> usize {
        segment * self.n_groups + g
    }

    fn chip(&self, key: &WatermarkKey, cell: usize) -> f64 {
        pn::chip(key.seed, SIGN_STREAM, cell as u64)
    }

    /// Chip weights of hop interval `i`. The outer intervals of a segment
    /// are shared half and half with the neighbouring segment, so a frame
    /// centred on a segment boundary sees the same chip mix on both sides.
    fn interval_cells(&self, i: usize, g: usize) -> Vec<(usize, f64)> {
        let s = i / SEGMENT_HOPS;
        if s >= self.n_segments {
            return Vec::new();
        }
        let neighbour = match i % SEGMENT_HOPS {
            0 => s.checked_sub(1),
            p if p == SEGMENT_HOPS - 1 => Some(s + 1).filter(|&n| n < self.n_segments),
            _ => None,
        };
        match neighbour {
            Some(n) => vec![(self.cell(s, g), 0.5), (self.cell(n, g), 0.5)],
            None => vec![(self.cell(s, g), 1.0)],
        }
    }

    /// Chip weights seen by frame `t`, which straddles intervals `t - 1`
    /// and `t`.
    fn frame_cells(&self, t: usize, g: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(4);
        for i in t.checked_sub(1).into_iter().chain([t]) {
            out.extend(self.interval_cells(i, g).into_iter().map(|(c, w)| (c, 0.5 * w)));
        }
        out
    }

    fn parity(t: usize) -> f64 {
        if t % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Frame-synchronous modulator, odd about each frame centre.
fn modulator(n: usize, hop: usize) -> f64 {
    (std::f64::consts::PI * n as f64 / hop as f64).sin()
}

/// Symbol slot index: 0 for the pilot, `1 + b` for payload bit `b`.
fn symbol_index(cell: usize, n_bits: usize) -> usize {
    match symbol_of(cell, n_bits) {
        Symbol::Pilot => 0,
        Symbol::Bit(b) => 1 + b,
    }
}

/// Chip-weighted votes per symbol slot, each frame split over the cells it
/// sees.
fn symbol_votes(stat: &[f64], layout: &GroupLayout, key: &WatermarkKey, n_bits: usize) -> Vec<f64> {
    let mut votes = vec![0.0; n_bits + 1];
    for t in 0..layout.n_frames {
        for g in 0..layout.n_groups {
            for (c, w) in layout.frame_cells(t, g) {
                votes[symbol_index(c, n_bits)] += w * stat[t * layout.n_groups + g] * layout.chip(key, c);
            }
        }
    }
    votes
}

/// Time-domain signal of each bin group: the inverse STFT of the
/// spectrogram restricted to the group's bins, synthesized directly from
/// the few bins involved.
fn band_signals(spec: &Spectrogram, layout: &GroupLayout) -> Vec<Vec<f64>> {
    let cfg = spec.config();
    let n = cfg.frame_len;
    let len = spec.orig_len();
    let window = cfg.window.coefficients(n);
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|m| (std::f64::consts::TAU * m as f64 / n as f64).sin_cos())
        .map(|(s, c)| (c, s))
        .unzip();
    let padded_len = (layout.n_frames - 1) * cfg.hop + n;
    let mut norm = vec![0.0; padded_len];
    for t in 0..layout.n_frames {
        for (i, w) in window.iter().enumerate() {
            norm[t * cfg.hop + i] += w * w;
        }
    }
    (0..layout.n_groups)
        .map(|g| {
            let mut out = vec![0.0; padded_len];
            for t in 0..layout.n_frames {
                let start = t * cfg.hop;
                for k in layout.bins(g) {
                    let c = spec.at(t, k) * (2.0 / n as f64);
                    let mut m = 0;
                    for (o, w) in out[start..start + n].iter_mut().zip(&window) {
                        *o += (c.re * cos[m] - c.im * sin[m]) * w;
                        m += k;
                        if m >= n {
                            m -= n;
                        }
                    }
                }
            }
            (0..len)
                .map(|i| {
                    let j = i + n / 2;
                    if norm[j] > 1e-12 {
                        out[j] / norm[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn phase_embed(x: &AudioBuffer, payload: &Payload, key: &WatermarkKey, theta: f64) -> Result<Perturbation> {
    if !(theta > 0.0 && theta <= MAX_THETA) {
        return Err(Error::param(format!(
            "phase theta must be in (0, pi/4], got {theta}"
        )));
    }
    let cfg = StftConfig::default();
    let spec = stft(x, &cfg)?;
    let layout = GroupLayout::new(&spec);
    if layout.n_frames < MIN_FRAMES {
        return Err(min_frames_err(cfg.hop * (MIN_FRAMES - 1), x.len()));
    }
    let n_bits = payload.len();
    check_capacity(layout.n_cells(), n_bits)?;

    // Each group's band signal times the modulator and its cell's signed
    // chip, accumulated into one basis signal per symbol slot.
    let depth = theta.tan();
    let mut basis = vec![vec![0.0; x.len()]; n_bits + 1];
    // The modulator repeats every two hops.
    let modulation: Vec<f64> = (0..2 * layout.hop).map(|n| modulator(n, layout.hop)).collect();
    for (g, xb) in band_signals(&spec, &layout).iter().enumerate() {
        for (i, chunk) in xb.chunks(layout.hop).enumerate() {
            for (cell, w) in layout.interval_cells(i, g) {
                let ws = w * layout.chip(key, cell) * symbol_sign(symbol_of(cell, n_bits), payload);
                let slot = &mut basis[symbol_index(cell, n_bits)][i * layout.hop..];
                let phase = (i % 2) * layout.hop;
                for (j, v) in chunk.iter().enumerate() {
                    slot[j] += ws * depth * modulation[phase + j] * v;
                }
            }
        }
    }
    let synth = |scales: &[f64]| -> Vec<f64> {
        let mut delta = vec![0.0; x.len()];
        for (b, &a) in basis.iter().zip(scales) {
            for (d, v) in delta.iter_mut().zip(b) {
                *d += a * v;
            }
        }
        delta
    };
    let signed_votes = |delta: &[f64]| -> Result<Vec<f64>> {
        let y = AudioBuffer::new(x.samples().iter().zip(delta).map(|(a, b)| a + b).collect(), x.sample_rate())?;
        let (stat, _) = relative_phase(&y)?;
        Ok(sign_votes(symbol_votes(&stat, &layout, key, n_bits), payload))
    };

    // Informed embedding: the host's own projection onto each symbol's chips
    // is known here, so each symbol's depth is rescaled until its vote
    // reaches what the watermark alone contributes on average.
    let host = signed_votes(&vec![0.0; x.len()])?;
    let mut scales = vec![1.0; n_bits + 1];
    let mut votes = signed_votes(&synth(&scales))?;
    let gain0: Vec<f64> = votes.iter().zip(&host).map(|(v, h)| v - h).collect();
    // Bits share one target so that no bit is left weaker than the rest.
    let bit_target = gain0[1..].iter().sum::<f64>() / n_bits as f64;
    let target: Vec<f64> = (0..=n_bits)
        .map(|i| if i == 0 { gain0[0].abs() } else { bit_target.abs() })
        .collect();
    let mut prev: Vec<(f64, f64)> = host.iter().map(|&h| (0.0, h)).collect();
    for _ in 0..INFORMED_PASSES {
        for i in 0..scales.len() {
            let (a0, v0) = prev[i];
            let slope = (votes[i] - v0) / (scales[i] - a0);
            // Secant step; fall back to the mean response if the local slope
            // is unusable.
            let slope = if slope.is_finite() && slope > 0.1 * target[i].abs() {
                slope
            } else {
                target[i].abs().max(1e-12)
            };
            prev[i] = (scales[i], votes[i]);
            scales[i] = (scales[i] + (target[i] - votes[i]) / slope).clamp(MIN_SCALE, MAX_SCALE);
        }
        votes = signed_votes(&synth(&scales))?;
    }
    // Redistribute, never add, energy: theta alone sets the host SNR.
    let nominal_energy: f64 = synth(&vec![1.0; n_bits + 1]).iter().map(|v| v * v).sum();
    let mut delta = synth(&scales);
    let energy: f64 = delta.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let c = (nominal_energy / energy).sqrt();
        delta.iter_mut().for_each(|v| *v *= c);
    }
    Perturbation::new(delta, BackendId::Phase)
}

fn sign_votes(mut votes: Vec<f64>, payload: &Payload) -> Vec<f64> {
    for (b, v) in votes.iter_mut().skip(1).enumerate() {
        *v *= payload.sign(b);
    }
    votes
}

/// Per frame and group: summed `sin` of each bin's phase relative to its
/// neighbour difference, multiplied by the frame parity.
fn relative_phase(y: &AudioBuffer) -> Result<(Vec<f64>, GroupLayout)> {
    let cfg = StftConfig::default();
    let spec = stft(y, &cfg)?;
    let layout = GroupLayout::new(&spec);
    if layout.n_frames < MIN_FRAMES {
        return Err(min_frames_err(cfg.hop * (MIN_FRAMES - 1), y.len()));
    }
    let mut stat = Vec::with_capacity(layout.n_frames * layout.n_groups);
    for t in 0..layout.n_frames {
        for g in 0..layout.n_groups {
            let mut acc = 0.0;
            for k in layout.bins(g) {
                let y = spec.at(t, k);
                let q = spec.at(t, k - 1) - spec.at(t, k + 1);
                let m = y.norm() * q.norm();
                if m > 1e-30 {
                    acc += (q.conj() * y).im / m;
                }
            }
            stat.push(acc * GroupLayout::parity(t));
        }
    }
    Ok((stat, layout))
}

pub fn phase_detect(y: &AudioBuffer, key: &WatermarkKey) -> Result<DetectionScore> {
    let (stat, layout) = relative_phase(y)?;
    let mut reference = Vec::with_capacity(stat.len());
    for t in 0..layout.n_frames {
        for g in 0..layout.n_groups {
            let r: f64 = layout
                .frame_cells(t, g)
                .into_iter()
                .filter(|&(c, _)| c % 2 == 0)
                .map(|(c, w)| w * layout.chip(key, c))
                .sum();
            reference.push(r);
        }
    }
    let (c0, sigma) = lagged_null(&stat, &reference, layout.n_frames, layout.n_groups, SEGMENT_HOPS + 2);
    let weight: f64 = reference.iter().map(|r| r.abs()).sum();
    let raw = if weight > 0.0 {
        c0 / (weight * GROUP_BINS as f64)
    } else {
        0.0
    };
    let z = if sigma > 0.0 { c0 / sigma } else { 0.0 };
    Ok(DetectionScore::from_z(raw, z))
}

pub fn phase_decode(y: &AudioBuffer, key: &WatermarkKey, n_bits: usize) -> Result<Payload> {
    let (stat, layout) = relative_phase(y)?;
    check_capacity(layout.n_cells(), n_bits)?;
    let votes = symbol_votes(&stat, &layout, key, n_bits);
    Payload::new(votes[1..].iter().map(|&v| u8::from(v > 0.0)).collect())
}

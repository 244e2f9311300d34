//! Quantization index modulation on STFT magnitude tiles.
//!
//! Mid-band bins (1-5 kHz) are shuffled by the key and grouped into sets of
//! [`GROUP_BINS`]; a tile is one bin set over [`TILE_FRAMES`] consecutive
//! frames. Each tile's mean magnitude is moved onto the dithered lattice
//! `step * Z + bit * step / 2 + dither`. Because overlapping frames make the
//! modified grid inconsistent, the embedder re-analyses and re-projects
//! until every tile is within tolerance of its lattice point after
//! resynthesis.

use super::{
    check_capacity, min_frames_err, symbol_of, BackendId, DetectionScore, Payload, Perturbation,
    Symbol, WatermarkKey,
};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pn::{self, PnStream};
use crate::stft::{istft, stft, Spectrogram, StftConfig};

pub const DEFAULT_STEP: f64 = 0.17;
pub const BAND_LO_HZ: f64 = 1000.0;
pub const BAND_HI_HZ: f64 = 5000.0;
pub const GROUP_BINS: usize = 8;
pub const TILE_FRAMES: usize = 2;
const MAX_PROJECTION_PASSES: usize = 64;
/// Tiles within this fraction of a step from their lattice point are left
/// alone, so re-embedding a marked signal is a no-op.
const TOLERANCE: f64 = 0.05;
/// Over-relaxation of each projection; speeds up convergence of the
/// overlapping-frame fixed point.
const RELAX: f64 = 1.5;

const BIN_STREAM: u64 = 0x5149_0001;
const DITHER_STREAM: u64 = 0x5149_0002;
const SCRAMBLE_STREAM: u64 = 0x5149_0003;

/// Key-dependent tile geometry for one signal length.
struct TileLayout {
    groups: Vec<Vec<usize>>,
    n_blocks: usize,
}

impl TileLayout {
    fn new(key: &WatermarkKey, spec: &Spectrogram) -> Self {
        let cfg = spec.config();
        let lo = cfg.bin_at_or_above(BAND_LO_HZ, spec.sample_rate());
        let hi = cfg.bin_at_or_above(BAND_HI_HZ, spec.sample_rate()).min(spec.n_bins());
        let mut bins: Vec<usize> = (lo..hi).collect();
        PnStream::new(key.seed, BIN_STREAM).shuffle(&mut bins);
        let groups = bins
            .chunks_exact(GROUP_BINS)
            .map(|c| {
                let mut g = c.to_vec();
                g.sort_unstable();
                g
            })
            .collect();
        Self {
            groups,
            // The edge frames are mostly padding and cannot hold a lattice.
            n_blocks: spec.n_frames().saturating_sub(2) / TILE_FRAMES,
        }
    }

    fn n_tiles(&self) -> usize {
        self.n_blocks * self.groups.len()
    }

    /// Frames and bins of tile `j`.
    fn cells(&self, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let block = j / self.groups.len();
        let group = &self.groups[j % self.groups.len()];
        (1 + block * TILE_FRAMES..1 + (block + 1) * TILE_FRAMES)
            .flat_map(move |t| group.iter().map(move |&k| (t, k)))
    }

    fn mean_magnitude(&self, spec: &Spectrogram, j: usize) -> f64 {
        let (sum, n) = self
            .cells(j)
            .fold((0.0, 0usize), |(s, n), (t, k)| (s + spec.at(t, k).norm(), n + 1));
        sum / n as f64
    }
}

fn dither(key: &WatermarkKey, tile: usize, step: f64) -> f64 {
    step * pn::uniform(key.seed, DITHER_STREAM, tile as u64)
}

fn scramble(key: &WatermarkKey, tile: usize) -> u8 {
    u8::from(pn::chip(key.seed, SCRAMBLE_STREAM, tile as u64) > 0.0)
}

/// Coset (0 or 1) the tile is expected to sit on.
fn target_coset(key: &WatermarkKey, tile: usize, sym: Symbol, payload: Option<&Payload>) -> u8 {
    let s = scramble(key, tile);
    match sym {
        Symbol::Pilot => s,
        Symbol::Bit(b) => payload.map_or(s, |p| p.bits()[b]) ^ s,
    }
}

/// Nearest non-negative point of coset `coset` to `value`.
fn quantize(value: f64, coset: u8, dither: f64, step: f64) -> f64 {
    let base = dither + coset as f64 * step / 2.0;
    let mut q = base + step * ((value - base) / step).round();
    if q < 0.0 {
        q += step;
    }
    q
}

/// Signed evidence for coset 1 in `[-1/2, 1/2]` (positive: closer to coset 1).
fn coset_evidence(value: f64, dither: f64, step: f64) -> f64 {
    let u = ((value - dither) / step).rem_euclid(1.0);
    let d0 = u.min(1.0 - u);
    let d1 = (u - 0.5).abs();
    d0 - d1
}

pub fn qim_embed(x: &AudioBuffer, payload: &Payload, key: &WatermarkKey, step: f64) -> Result<Perturbation> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::param(format!("qim step must be > 0, got {step}")));
    }
    let cfg = StftConfig::default();
    let original = stft(x, &cfg)?;
    let layout = TileLayout::new(key, &original);
    check_capacity(layout.n_tiles(), payload.len())?;

    let targets: Vec<f64> = (0..layout.n_tiles())
        .map(|j| {
            let sym = symbol_of(j, payload.len());
            let coset = target_coset(key, j, sym, Some(payload));
            quantize(layout.mean_magnitude(&original, j), coset, dither(key, j, step), step)
        })
        .collect();

    let mut spec = original;
    let mut y = x.clone();
    for _ in 0..MAX_PROJECTION_PASSES {
        let mut moved = false;
        for (j, &q) in targets.iter().enumerate() {
            let m = layout.mean_magnitude(&spec, j);
            if (m - q).abs() <= TOLERANCE * step {
                continue;
            }
            moved = true;
            if m > 1e-15 {
                let g = (m + RELAX * (q - m)).max(0.0) / m;
                for (t, k) in layout.cells(j).collect::<Vec<_>>() {
                    *spec.at_mut(t, k) *= g;
                }
            } else {
                for (t, k) in layout.cells(j).collect::<Vec<_>>() {
                    *spec.at_mut(t, k) = q.into();
                }
            }
        }
        if !moved {
            break;
        }
        y = istft(&spec)?;
        spec = stft(&y, &cfg)?;
    }
    Perturbation::from_embedded(x, &y, BackendId::Qim)
}

fn analyse(y: &AudioBuffer, key: &WatermarkKey) -> Result<(Spectrogram, TileLayout)> {
    let cfg = StftConfig::default();
    let spec = stft(y, &cfg)?;
    let layout = TileLayout::new(key, &spec);
    if layout.n_tiles() < 4 {
        return Err(min_frames_err(cfg.frame_len * 2, y.len()));
    }
    Ok((spec, layout))
}

/// Detection at the default step. The step is part of the shared secret
/// along with the key; use [`qim_detect_with_step`] for non-default steps.
pub fn qim_detect(y: &AudioBuffer, key: &WatermarkKey) -> Result<DetectionScore> {
    qim_detect_with_step(y, key, DEFAULT_STEP)
}

pub fn qim_detect_with_step(y: &AudioBuffer, key: &WatermarkKey, step: f64) -> Result<DetectionScore> {
    if !(step > 0.0) {
        return Err(Error::param(format!("qim step must be > 0, got {step}")));
    }
    let (spec, layout) = analyse(y, key)?;
    let mut matches = 0usize;
    let mut n = 0usize;
    for j in (0..layout.n_tiles()).step_by(2) {
        let expected = target_coset(key, j, Symbol::Pilot, None);
        let ev = coset_evidence(layout.mean_magnitude(&spec, j), dither(key, j, step), step);
        let decoded = u8::from(ev > 0.0);
        matches += usize::from(decoded == expected);
        n += 1;
    }
    let frac = matches as f64 / n as f64;
    let z = (matches as f64 - n as f64 / 2.0) / (n as f64 / 4.0).sqrt();
    Ok(DetectionScore::from_z(frac - 0.5, z))
}

/// Fraction of pilot tiles on the expected lattice.
pub fn qim_match_fraction(y: &AudioBuffer, key: &WatermarkKey) -> Result<f64> {
    Ok(qim_detect(y, key)?.raw + 0.5)
}

pub fn qim_decode(y: &AudioBuffer, key: &WatermarkKey, n_bits: usize) -> Result<Payload> {
    qim_decode_with_step(y, key, n_bits, DEFAULT_STEP)
}

pub fn qim_decode_with_step(y: &AudioBuffer, key: &WatermarkKey, n_bits: usize, step: f64) -> Result<Payload> {
    let (spec, layout) = analyse(y, key)?;
    check_capacity(layout.n_tiles(), n_bits)?;
    let mut votes = vec![0.0; n_bits];
    for j in 0..layout.n_tiles() {
        if let Symbol::Bit(b) = symbol_of(j, n_bits) {
            let ev = coset_evidence(layout.mean_magnitude(&spec, j), dither(key, j, step), step);
            votes[b] += if scramble(key, j) == 1 { -ev } else { ev };
        }
    }
    Payload::new(votes.into_iter().map(|v| u8::from(v > 0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_lands_on_requested_coset() {
        for &(v, c) in &[(0.0, 0u8), (0.3, 1), (7.9, 0), (7.9, 1), (100.26, 1)] {
            let q = quantize(v, c, 0.13, 0.5);
            assert!(q >= 0.0);
            assert!((q - v).abs() <= 0.5);
            let ev = coset_evidence(q, 0.13, 0.5);
            assert!((ev - if c == 1 { 0.5 } else { -0.5 }).abs() < 1e-9, "{v} {c} {ev}");
        }
    }

    #[test]
    fn step_must_be_positive() {
        let x = AudioBuffer::zeros(16_000, 16_000).unwrap();
        let key = WatermarkKey::new(1, BackendId::Qim);
        assert!(qim_embed(&x, &Payload::random(1, 16).unwrap(), &key, 0.0).is_err());
    }

    #[test]
    fn too_short_is_an_error() {
        let x = AudioBuffer::zeros(900, 16_000).unwrap();
        let key = WatermarkKey::new(1, BackendId::Qim);
        assert!(qim_embed(&x, &Payload::random(1, 16).unwrap(), &key, 0.5).is_err());
        assert!(qim_detect(&x, &key).is_err());
    }
}

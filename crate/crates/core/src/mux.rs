//! Combining several watermark perturbations into one waveform.
//!
//! Parallel mode adds scaled deltas in the time domain. Routed modes add
//! them in the STFT domain through per-watermark masks, `X + sum W_i D_i`,
//! where the masks implement naive, frequency-division or time-division
//! sharing. Sequential mode re-embeds each watermark on the previous
//! stage's output.

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::backends::{BackendId, Payload, Perturbation, WatermarkKey};
use crate::error::{Error, Result};
use crate::stft::{istft, stft, StftConfig};

pub const DEFAULT_SLOT_MS: f64 = 60.0;
pub const MIN_SLOT_MS: f64 = 40.0;
pub const MAX_SLOT_MS: f64 = 80.0;
pub const MAX_WATERMARKS: usize = 4;

/// Mixed signal plus the number of samples clipped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MuxOutput {
    pub audio: AudioBuffer,
    pub clipped: usize,
}

impl MuxOutput {
    fn clip(raw: AudioBuffer) -> Self {
        let (audio, clipped) = raw.clipped();
        Self { audio, clipped }
    }
}

/// Shape of the STFT grid a mask must match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridShape {
    pub config: StftConfig,
    pub sample_rate: u32,
    pub len: usize,
}

impl GridShape {
    pub fn of(x: &AudioBuffer, config: StftConfig) -> Self {
        Self {
            config,
            sample_rate: x.sample_rate(),
            len: x.len(),
        }
    }

    pub fn n_frames(&self) -> usize {
        self.config.n_frames(self.len)
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskLabel {
    Naive,
    Fdm,
    Tdm,
    Patfm,
}

/// Non-negative routing weights `W_i(t, f)`, row-major `[frames x bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMask {
    grid: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    pub label: MaskLabel,
}

impl RoutingMask {
    pub fn constant(shape: &GridShape, value: f64, label: MaskLabel) -> Result<Self> {
        Self::from_grid(vec![value; shape.n_frames() * shape.n_bins()], shape, label)
    }

    pub fn from_grid(grid: Vec<f64>, shape: &GridShape, label: MaskLabel) -> Result<Self> {
        let (n_frames, n_bins) = (shape.n_frames(), shape.n_bins());
        if grid.len() != n_frames * n_bins {
            return Err(Error::Dimension(format!(
                "mask has {} cells, grid needs {n_frames} x {n_bins}",
                grid.len()
            )));
        }
        if grid.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("mask weights must be finite and >= 0"));
        }
        Ok(Self {
            grid,
            n_frames,
            n_bins,
            label,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins)
    }

    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.grid[frame * self.n_bins + bin]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Half-open frequency bands `[lo, hi)`, one per watermark. The band whose
/// upper edge is the Nyquist frequency also holds the Nyquist bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPlan {
    pub bands: Vec<(f64, f64)>,
}

impl BandPlan {
    pub fn new(bands: Vec<(f64, f64)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::param("band plan needs at least one band"));
        }
        for &(lo, hi) in &bands {
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::param(format!("invalid band [{lo}, {hi})")));
            }
        }
        Ok(Self { bands })
    }

    /// Low/high halves for two watermarks, low/mid/high for three and a
    /// four-way split for four, scaled to the sample rate.
    pub fn default_for(n: usize, sample_rate: u32) -> Result<Self> {
        let s = sample_rate as f64 / 16_000.0;
        let edges: &[f64] = match n {
            1 => &[0.0, 8000.0],
            2 => &[0.0, 4000.0, 8000.0],
            3 => &[0.0, 2000.0, 5000.0, 8000.0],
            4 => &[0.0, 1500.0, 3000.0, 5000.0, 8000.0],
            _ => {
                return Err(Error::param(format!(
                    "no default band plan for {n} watermarks (1 to {MAX_WATERMARKS})"
                )))
            }
        };
        Self::new(edges.windows(2).map(|w| (w[0] * s, w[1] * s)).collect())
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Checks the plan against a Nyquist frequency.
    pub fn validate(&self, nyquist: f64, require_disjoint: bool) -> Result<()> {
        for &(lo, hi) in &self.bands {
            if hi > nyquist {
                return Err(Error::param(format!(
                    "band [{lo}, {hi}) exceeds Nyquist {nyquist} Hz"
                )));
            }
        }
        if require_disjoint {
            for (i, a) in self.bands.iter().enumerate() {
                for b in &self.bands[i + 1..] {
                    if a.0 < b.1 && b.0 < a.1 {
                        return Err(Error::param(format!(
                            "bands [{}, {}) and [{}, {}) overlap",
                            a.0, a.1, b.0, b.1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Whether frequency `f` lies in band `i`.
    pub fn contains(&self, i: usize, f: f64, nyquist: f64) -> bool {
        let (lo, hi) = self.bands[i];
        (lo..hi).contains(&f) || (hi == nyquist && f == nyquist)
    }

    /// STFT bins of band `i`.
    pub fn bins(&self, i: usize, shape: &GridShape) -> Vec<usize> {
        let ny = shape.nyquist();
        (0..shape.n_bins())
            .filter(|&k| self.contains(i, shape.config.bin_hz(k, shape.sample_rate), ny))
            .collect()
    }
}

/// Round-robin assignment of fixed-length time slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub slot_len_ms: f64,
}

impl Default for SlotPlan {
    fn default() -> Self {
        Self {
            slot_len_ms: DEFAULT_SLOT_MS,
        }
    }
}

impl SlotPlan {
    pub fn new(slot_len_ms: f64) -> Result<Self> {
        if !(MIN_SLOT_MS..=MAX_SLOT_MS).contains(&slot_len_ms) {
            return Err(Error::param(format!(
                "slot length {slot_len_ms} ms outside [{MIN_SLOT_MS}, {MAX_SLOT_MS}]"
            )));
        }
        Ok(Self { slot_len_ms })
    }

    /// Frames per slot, `ceil(slot_len * fs / hop)`.
    pub fn frames_per_slot(&self, shape: &GridShape) -> usize {
        let hops = self.slot_len_ms / 1000.0 * shape.sample_rate as f64 / shape.config.hop as f64;
        // Guard against 60 ms giving 1.8750000001 hops.
        ((hops - 1e-9).ceil() as usize).max(1)
    }

    pub fn n_slots(&self, shape: &GridShape) -> usize {
        shape.n_frames().div_ceil(self.frames_per_slot(shape))
    }

    pub fn owner(&self, frame: usize, n_wm: usize, shape: &GridShape) -> usize {
        (frame / self.frames_per_slot(shape)) % n_wm
    }
}

fn check_alphas(alphas: &[f64], n: usize) -> Result<()> {
    if alphas.len() != n {
        return Err(Error::Dimension(format!("{} alphas for {n} watermarks", alphas.len())));
    }
    if alphas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::param("alphas must be finite and >= 0"));
    }
    Ok(())
}

/// `x + sum alphas[i] * delta[i]`, clipped.
pub fn mux_parallel(x: &AudioBuffer, perturbations: &[Perturbation], alphas: &[f64]) -> Result<MuxOutput> {
    check_alphas(alphas, perturbations.len())?;
    let mut out = x.samples().to_vec();
    for (p, &a) in perturbations.iter().zip(alphas) {
        if p.len() != x.len() {
            return Err(Error::Dimension(format!(
                "perturbation has {} samples, host {}",
                p.len(),
                x.len()
            )));
        }
        for (o, d) in out.iter_mut().zip(&p.delta) {
            *o += a * d;
        }
    }
    Ok(MuxOutput::clip(x.with_samples(out)?))
}

/// One embedding stage of a sequential cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub backend: BackendId,
    pub payload: Payload,
    pub key: WatermarkKey,
    pub strength: f64,
}

/// Embeds each stage on the previous stage's output; clips once at the end.
pub fn mux_sequential(x: &AudioBuffer, order: &[Stage]) -> Result<MuxOutput> {
    if order.is_empty() {
        return Err(Error::param("sequential order is empty"));
    }
    let mut y = x.clone();
    for s in order {
        y = s.backend.embed(&y, &s.payload, &s.key, s.strength)?.apply(&y)?;
    }
    Ok(MuxOutput::clip(y))
}

/// `mask_i(t, f) = alphas[i]` inside band `i`, zero elsewhere.
pub fn make_fdm_masks(plan: &BandPlan, alphas: &[f64], shape: &GridShape) -> Result<Vec<RoutingMask>> {
    check_alphas(alphas, plan.len())?;
    plan.validate(shape.nyquist(), true)?;
    let (n_frames, n_bins) = (shape.n_frames(), shape.n_bins());
    (0..plan.len())
        .map(|i| {
            let mut row = vec![0.0; n_bins];
            for k in plan.bins(i, shape) {
                row[k] = alphas[i];
            }
            let grid = (0..n_frames).flat_map(|_| row.iter().copied()).collect();
            RoutingMask::from_grid(grid, shape, MaskLabel::Fdm)
        })
        .collect()
}

/// `mask_i(t, f) = alphas[i]` on the frames of watermark `i`'s slots.
pub fn make_tdm_masks(plan: &SlotPlan, alphas: &[f64], shape: &GridShape) -> Result<Vec<RoutingMask>> {
    let n = alphas.len();
    if n == 0 {
        return Err(Error::param("time-division needs at least one watermark"));
    }
    check_alphas(alphas, n)?;
    let (n_frames, n_bins) = (shape.n_frames(), shape.n_bins());
    (0..n)
        .map(|i| {
            let mut grid = vec![0.0; n_frames * n_bins];
            for t in 0..n_frames {
                if plan.owner(t, n, shape) == i {
                    grid[t * n_bins..(t + 1) * n_bins].fill(alphas[i]);
                }
            }
            RoutingMask::from_grid(grid, shape, MaskLabel::Tdm)
        })
        .collect()
}

/// Unit masks: routing reduces to parallel addition.
pub fn make_naive_masks(alphas: &[f64], shape: &GridShape) -> Result<Vec<RoutingMask>> {
    check_alphas(alphas, alphas.len())?;
    alphas
        .iter()
        .map(|&a| RoutingMask::constant(shape, a, MaskLabel::Naive))
        .collect()
}

/// `istft(X + sum_i W_i * stft(delta_i))`, clipped.
pub fn apply_tf_routing(
    x: &AudioBuffer,
    perturbations: &[Perturbation],
    masks: &[RoutingMask],
    cfg: &StftConfig,
) -> Result<MuxOutput> {
    if perturbations.len() != masks.len() {
        return Err(Error::Dimension(format!(
            "{} perturbations but {} masks",
            perturbations.len(),
            masks.len()
        )));
    }
    // Only the routed perturbations go through the transform, so the host
    // passes untouched where every mask is zero.
    let mut spec = stft(&x.with_samples(vec![0.0; x.len()])?, cfg)?;
    let (n_frames, n_bins) = spec.dims();
    for (p, m) in perturbations.iter().zip(masks) {
        if m.dims() != (n_frames, n_bins) {
            return Err(Error::Dimension(format!(
                "mask is {:?}, spectrogram is {:?}",
                m.dims(),
                (n_frames, n_bins)
            )));
        }
        let d = stft(&x.with_samples(p.delta.clone())?, cfg)?;
        for ((c, dc), w) in spec.grid_mut().iter_mut().zip(d.grid()).zip(m.grid()) {
            *c += dc * *w;
        }
    }
    let routed = istft(&spec)?;
    let out = x.samples().iter().zip(routed.samples()).map(|(a, b)| a + b).collect();
    Ok(MuxOutput::clip(x.with_samples(out)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(len: usize) -> GridShape {
        GridShape {
            config: StftConfig::default(),
            sample_rate: 16_000,
            len,
        }
    }

    #[test]
    fn default_plans() {
        assert_eq!(BandPlan::default_for(2, 16_000).unwrap().bands, [(0.0, 4000.0), (4000.0, 8000.0)]);
        assert_eq!(
            BandPlan::default_for(3, 16_000).unwrap().bands,
            [(0.0, 2000.0), (2000.0, 5000.0), (5000.0, 8000.0)]
        );
        assert!(BandPlan::default_for(5, 16_000).is_err());
    }

    #[test]
    fn boundary_bin_goes_to_upper_band() {
        let s = shape(16_000);
        let plan = BandPlan::default_for(2, 16_000).unwrap();
        // bin 256 sits at exactly 4 kHz
        assert!(!plan.bins(0, &s).contains(&256));
        assert!(plan.bins(1, &s).contains(&256));
        assert!(plan.bins(1, &s).contains(&512));
    }

    #[test]
    fn fdm_masks_cover_every_cell_once() {
        let s = shape(16_000);
        let plan = BandPlan::default_for(2, 16_000).unwrap();
        let masks = make_fdm_masks(&plan, &[0.7, 0.7], &s).unwrap();
        for (a, b) in masks[0].grid().iter().zip(masks[1].grid()) {
            assert_eq!(a + b, 0.7);
        }
    }

    #[test]
    fn fdm_rejects_bands_past_nyquist_and_overlaps() {
        let s = shape(16_000);
        let past = BandPlan::new(vec![(0.0, 4000.0), (4000.0, 9000.0)]).unwrap();
        assert!(make_fdm_masks(&past, &[1.0, 1.0], &s).is_err());
        let overlap = BandPlan::new(vec![(0.0, 5000.0), (4000.0, 8000.0)]).unwrap();
        assert!(make_fdm_masks(&overlap, &[1.0, 1.0], &s).is_err());
    }

    #[test]
    fn tdm_blocks_of_two_frames_at_60_ms() {
        let s = shape(16_000);
        let plan = SlotPlan::default();
        // ceil(0.060 * 16000 / 512) = ceil(1.875)
        assert_eq!(plan.frames_per_slot(&s), 2);
        let masks = make_tdm_masks(&plan, &[1.0, 1.0], &s).unwrap();
        let owners: Vec<usize> = (0..8).map(|t| usize::from(masks[1].at(t, 0) > 0.0)).collect();
        assert_eq!(owners, [0, 0, 1, 1, 0, 0, 1, 1]);
        for t in 0..s.n_frames() {
            let total: f64 = masks.iter().map(|m| m.at(t, 3)).sum();
            assert_eq!(total, 1.0);
        }
    }

    #[test]
    fn single_tdm_mask_is_constant() {
        let s = shape(8000);
        let m = &make_tdm_masks(&SlotPlan::default(), &[0.4], &s).unwrap()[0];
        assert!(m.grid().iter().all(|&w| w == 0.4));
    }

    #[test]
    fn slot_length_range() {
        assert!(SlotPlan::new(39.0).is_err());
        assert!(SlotPlan::new(81.0).is_err());
        assert!(SlotPlan::new(40.0).is_ok());
    }

    #[test]
    fn zero_alphas_leave_host_unchanged() {
        let x = AudioBuffer::new((0..4000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(), 16_000).unwrap();
        let p = Perturbation::new(vec![0.1; 4000], BackendId::Ss).unwrap();
        let out = mux_parallel(&x, &[p.clone(), p], &[0.0, 0.0]).unwrap();
        assert_eq!(out.audio, x);
        assert_eq!(out.clipped, 0);
    }

    #[test]
    fn parallel_counts_clipping() {
        let x = AudioBuffer::new(vec![0.95; 100], 16_000).unwrap();
        let p = Perturbation::new(vec![0.1; 100], BackendId::Ss).unwrap();
        let out = mux_parallel(&x, &[p], &[1.0]).unwrap();
        assert_eq!(out.clipped, 100);
        assert!(out.audio.samples().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let x = AudioBuffer::zeros(100, 16_000).unwrap();
        let p = Perturbation::new(vec![0.0; 99], BackendId::Ss).unwrap();
        assert!(mux_parallel(&x, &[p], &[1.0]).is_err());
        let p = Perturbation::new(vec![0.0; 100], BackendId::Ss).unwrap();
        assert!(mux_parallel(&x, &[p], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn routing_rejects_wrong_mask_shape() {
        let x = AudioBuffer::zeros(4000, 16_000).unwrap();
        let p = Perturbation::new(vec![0.0; 4000], BackendId::Ss).unwrap();
        let m = RoutingMask::constant(&shape(8000), 1.0, MaskLabel::Naive).unwrap();
        assert!(apply_tf_routing(&x, &[p], &[m], &StftConfig::default()).is_err());
    }
}

//! Hann-windowed STFT with least-squares overlap-add inverse.
//!
//! Frames are centred: the signal is preceded by `frame_len / 2` zeros so
//! that every input sample is covered by at least one frame with non-zero
//! window weight. The tail is zero-padded to whole frames and `istft`
//! truncates back to the original length.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place forward DFT (unnormalized).
pub fn fft_forward(buf: &mut [Complex64]) {
    if !buf.is_empty() {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place inverse DFT, normalized by `1/len`.
pub fn fft_inverse(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    plan(buf.len(), true).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 512,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(frame_len: usize) -> Result<Self> {
        let cfg = Self {
            frame_len,
            hop: frame_len / 2,
            window: Window::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 4 || !self.frame_len.is_power_of_two() {
            return Err(Error::param(format!(
                "frame_len {} must be a power of two >= 4",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len || self.hop * 2 != self.frame_len {
            return Err(Error::param(format!(
                "hop {} must equal frame_len/2 ({})",
                self.hop,
                self.frame_len / 2
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        (len - 1 + self.frame_len / 2) / self.hop + 1
    }

    pub fn bin_hz(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.frame_len as f64
    }

    /// Index of the first bin whose centre frequency is `>= hz`.
    pub fn bin_at_or_above(&self, hz: f64, sample_rate: u32) -> usize {
        let b = (hz * self.frame_len as f64 / sample_rate as f64).ceil();
        (b.max(0.0) as usize).min(self.n_bins())
    }
}

/// Complex time-frequency grid, row-major `[n_frames x n_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    grid: Vec<Complex64>,
    n_frames: usize,
    config: StftConfig,
    sample_rate: u32,
    orig_len: usize,
}

impl Spectrogram {
    pub fn from_grid(
        grid: Vec<Complex64>,
        n_frames: usize,
        config: StftConfig,
        sample_rate: u32,
        orig_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        if grid.len() != n_frames * config.n_bins() {
            return Err(Error::Dimension(format!(
                "grid has {} cells, expected {} x {}",
                grid.len(),
                n_frames,
                config.n_bins()
            )));
        }
        if orig_len == 0 || config.n_frames(orig_len) != n_frames {
            return Err(Error::Dimension(format!(
                "{n_frames} frames inconsistent with original length {orig_len}"
            )));
        }
        if grid.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Dimension("grid contains non-finite values".into()));
        }
        Ok(Self {
            grid,
            n_frames,
            config,
            sample_rate,
            orig_len,
        })
    }

    /// All-zero grid with the shape `stft` would produce for `len` samples.
    pub fn zeros(config: StftConfig, sample_rate: u32, len: usize) -> Self {
        let n_frames = config.n_frames(len);
        Self {
            grid: vec![Complex64::new(0.0, 0.0); n_frames * config.n_bins()],
            n_frames,
            config,
            sample_rate,
            orig_len: len,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_frames, self.n_bins())
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn orig_len(&self) -> usize {
        self.orig_len
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        self.config.bin_hz(bin, self.sample_rate)
    }

    pub fn grid(&self) -> &[Complex64] {
        &self.grid
    }

    pub fn grid_mut(&mut self) -> &mut [Complex64] {
        &mut self.grid
    }

    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.grid[frame * self.n_bins() + bin]
    }

    #[inline]
    pub fn at_mut(&mut self, frame: usize, bin: usize) -> &mut Complex64 {
        let nb = self.n_bins();
        &mut self.grid[frame * nb + bin]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let nb = self.n_bins();
        &self.grid[t * nb..(t + 1) * nb]
    }

    pub fn power(&self) -> Vec<f64> {
        self.grid.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.n_frames == other.n_frames
            && self.config == other.config
            && self.orig_len == other.orig_len
    }

    /// `self + gain * other`, cell by cell.
    pub fn add_scaled(&mut self, other: &Spectrogram, gain: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("spectrogram shapes differ".into()));
        }
        for (a, b) in self.grid.iter_mut().zip(&other.grid) {
            *a += b * gain;
        }
        Ok(())
    }
}

pub fn stft(buf: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let n = cfg.frame_len;
    let len = buf.len();
    if len < n {
        return Err(Error::TooShort { needed: n, got: len });
    }
    let n_frames = cfg.n_frames(len);
    let n_bins = cfg.n_bins();
    let padded_len = (n_frames - 1) * cfg.hop + n;
    let mut padded = vec![0.0; padded_len];
    padded[n / 2..n / 2 + len].copy_from_slice(buf.samples());

    let window = cfg.window.coefficients(n);
    let fft = plan(n, false);
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut grid = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, s) in scratch.iter_mut().enumerate() {
            *s = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut scratch);
        grid.extend_from_slice(&scratch[..n_bins]);
    }
    Ok(Spectrogram {
        grid,
        n_frames,
        config: *cfg,
        sample_rate: buf.sample_rate(),
        orig_len: len,
    })
}

pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let cfg = spec.config;
    let n = cfg.frame_len;
    let n_bins = cfg.n_bins();
    if spec.grid.len() != spec.n_frames * n_bins || cfg.n_frames(spec.orig_len) != spec.n_frames
    {
        return Err(Error::Dimension("inconsistent spectrogram dimensions".into()));
    }
    let padded_len = (spec.n_frames - 1) * cfg.hop + n;
    let mut out = vec![0.0; padded_len];
    let mut norm = vec![0.0; padded_len];
    let window = cfg.window.coefficients(n);
    let ifft = plan(n, true);
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for t in 0..spec.n_frames {
        let row = spec.frame(t);
        scratch[0] = Complex64::new(row[0].re, 0.0);
        scratch[n / 2] = Complex64::new(row[n / 2].re, 0.0);
        for k in 1..n / 2 {
            scratch[k] = row[k];
            scratch[n - k] = row[k].conj();
        }
        ifft.process(&mut scratch);
        let start = t * cfg.hop;
        for i in 0..n {
            out[start + i] += scratch[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let samples = (0..spec.orig_len)
        .map(|i| {
            let j = i + n / 2;
            if norm[j] > 1e-12 {
                out[j] / norm[j]
            } else {
                0.0
            }
        })
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

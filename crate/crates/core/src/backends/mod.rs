//! Classical watermark embedders and blind detectors.
//!
//! All three share one layout convention: the carrier is divided into
//! symbol slots (time blocks, magnitude tiles, or bin pairs) and slot `j`
//! carries the pilot when `j` is even and payload bit `(j / 2) % n_bits`
//! otherwise. Presence detection uses only the pilot slots, so detection
//! needs no knowledge of the payload.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::pn;

pub mod phase;
pub mod qim;
pub mod ss;

pub const DEFAULT_PAYLOAD_BITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendId {
    Ss,
    Qim,
    Phase,
}

impl BackendId {
    pub const ALL: [BackendId; 3] = [BackendId::Ss, BackendId::Qim, BackendId::Phase];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendId::Ss => "ss",
            BackendId::Qim => "qim",
            BackendId::Phase => "phase",
        }
    }

    /// Strength giving roughly 20 dB host SNR on speech at -26 dBFS RMS.
    pub fn default_strength(self) -> f64 {
        match self {
            BackendId::Ss => ss::DEFAULT_ALPHA,
            BackendId::Qim => qim::DEFAULT_STEP,
            BackendId::Phase => phase::DEFAULT_THETA,
        }
    }

    /// Frequency range the backend writes into, in Hz.
    pub fn band_hz(self) -> (f64, f64) {
        match self {
            BackendId::Ss => (ss::BAND_LO_HZ, ss::BAND_HI_HZ),
            BackendId::Qim => (qim::BAND_LO_HZ, qim::BAND_HI_HZ),
            BackendId::Phase => (phase::BAND_LO_HZ, phase::BAND_HI_HZ),
        }
    }

    pub fn embed(
        self,
        x: &AudioBuffer,
        payload: &Payload,
        key: &WatermarkKey,
        strength: f64,
    ) -> Result<Perturbation> {
        self.check_key(key)?;
        match self {
            BackendId::Ss => ss::ss_embed(x, payload, key, strength),
            BackendId::Qim => qim::qim_embed(x, payload, key, strength),
            BackendId::Phase => phase::phase_embed(x, payload, key, strength),
        }
    }

    pub fn detect(self, y: &AudioBuffer, key: &WatermarkKey) -> Result<DetectionScore> {
        self.check_key(key)?;
        match self {
            BackendId::Ss => ss::ss_detect(y, key),
            BackendId::Qim => qim::qim_detect(y, key),
            BackendId::Phase => phase::phase_detect(y, key),
        }
    }

    pub fn decode(self, y: &AudioBuffer, key: &WatermarkKey, n_bits: usize) -> Result<Payload> {
        self.check_key(key)?;
        match self {
            BackendId::Ss => ss::ss_decode(y, key, n_bits),
            BackendId::Qim => qim::qim_decode(y, key, n_bits),
            BackendId::Phase => phase::phase_decode(y, key, n_bits),
        }
    }

    fn check_key(self, key: &WatermarkKey) -> Result<()> {
        if key.backend != self {
            return Err(Error::param(format!(
                "key for `{}` used with backend `{}`",
                key.backend, self
            )));
        }
        Ok(())
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" | "spread-spectrum" => Ok(BackendId::Ss),
            "qim" => Ok(BackendId::Qim),
            "phase" => Ok(BackendId::Phase),
            other => Err(Error::param(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WatermarkKey {
    pub seed: u64,
    pub backend: BackendId,
}

impl WatermarkKey {
    pub fn new(seed: u64, backend: BackendId) -> Self {
        Self { seed, backend }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    bits: Vec<u8>,
}

impl Payload {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() > 64 {
            return Err(Error::param(format!(
                "payload must have 1..=64 bits, got {}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("payload bits must be 0 or 1"));
        }
        Ok(Self { bits })
    }

    /// Low `len` bits of `value`, least significant first.
    pub fn from_u64(value: u64, len: usize) -> Result<Self> {
        if len > 64 {
            return Err(Error::param("payload longer than 64 bits"));
        }
        Self::new((0..len).map(|i| ((value >> i) & 1) as u8).collect())
    }

    pub fn random(seed: u64, len: usize) -> Result<Self> {
        Self::from_u64(pn::word(seed, 0x5041_594C, 0), len)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_u64(&self) -> u64 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    /// Antipodal sign `2b - 1` of bit `i`.
    pub fn sign(&self, i: usize) -> f64 {
        if self.bits[i] == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn bit_errors(&self, other: &Payload) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
            + self.bits.len().abs_diff(other.bits.len())
    }
}

/// Time-domain watermark delta `W(x) - x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Vec<f64>,
    pub backend: BackendId,
}

impl Perturbation {
    pub fn new(delta: Vec<f64>, backend: BackendId) -> Result<Self> {
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidAudio("non-finite perturbation".into()));
        }
        Ok(Self { delta, backend })
    }

    pub fn from_embedded(x: &AudioBuffer, embedded: &AudioBuffer, backend: BackendId) -> Result<Self> {
        if x.len() != embedded.len() {
            return Err(Error::Dimension("embedded length differs from host".into()));
        }
        Self::new(
            embedded
                .samples()
                .iter()
                .zip(x.samples())
                .map(|(y, x)| y - x)
                .collect(),
            backend,
        )
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    }

    /// `x + delta`, unclipped.
    pub fn apply(&self, x: &AudioBuffer) -> Result<AudioBuffer> {
        if x.len() != self.delta.len() {
            return Err(Error::Dimension(format!(
                "perturbation has {} samples, host {}",
                self.delta.len(),
                x.len()
            )));
        }
        x.with_samples(x.samples().iter().zip(&self.delta).map(|(a, b)| a + b).collect())
    }
}

/// Detector output: raw statistic, null-normalized `z`, and log-odds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub raw: f64,
    pub z: f64,
    pub logit: f64,
}

/// Slope of the z-to-logit map. Calibration to probabilities happens at
/// threshold-selection time, so the map is the identity.
pub const LOGIT_SLOPE: f64 = 1.0;

impl DetectionScore {
    pub fn from_z(raw: f64, z: f64) -> Self {
        let z = if z.is_finite() { z } else { 0.0 };
        let raw = if raw.is_finite() { raw } else { 0.0 };
        Self {
            raw,
            z,
            logit: LOGIT_SLOPE * z,
        }
    }
}

/// What a symbol slot carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Symbol {
    Pilot,
    Bit(usize),
}

pub(crate) fn symbol_of(slot: usize, n_bits: usize) -> Symbol {
    if slot % 2 == 0 {
        Symbol::Pilot
    } else {
        Symbol::Bit((slot / 2) % n_bits)
    }
}

pub(crate) fn check_capacity(n_slots: usize, n_bits: usize) -> Result<()> {
    let bit_slots = n_slots / 2;
    if bit_slots < n_bits {
        return Err(Error::Capacity {
            bits: n_bits,
            capacity: bit_slots,
        });
    }
    Ok(())
}

pub(crate) fn symbol_sign(sym: Symbol, payload: &Payload) -> f64 {
    match sym {
        Symbol::Pilot => 1.0,
        Symbol::Bit(b) => payload.sign(b),
    }
}

/// Number of frame lags used for the null estimate.
pub(crate) const NULL_LAGS: usize = 64;

/// Correlates a per-cell statistic with a reference pattern at frame lag 0
/// and at circular lags `first_lag..`, returning `(corr_0, rms of lagged corrs)`.
///
/// Once the lag exceeds both the frame overlap and the reference's own
/// correlation length, a lagged reference is an independent pseudo-noise
/// pattern: the lagged correlations sample the detector's null distribution
/// on the signal under test.
pub(crate) fn lagged_null(
    stat: &[f64],
    reference: &[f64],
    n_frames: usize,
    width: usize,
    first_lag: usize,
) -> (f64, f64) {
    debug_assert_eq!(stat.len(), n_frames * width);
    debug_assert_eq!(reference.len(), n_frames * width);
    let corr = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for t in 0..n_frames {
            let r = (t + n_frames - lag % n_frames) % n_frames;
            let s_row = &stat[t * width..(t + 1) * width];
            let r_row = &reference[r * width..(r + 1) * width];
            acc += s_row.iter().zip(r_row).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    };
    let c0 = corr(0);
    // Lags past `n_frames - first_lag` wrap around to within `first_lag` of zero.
    let n_lags = NULL_LAGS.min((n_frames + 1).saturating_sub(2 * first_lag));
    let var = (first_lag..first_lag + n_lags).map(|l| corr(l).powi(2)).sum::<f64>() / n_lags.max(1) as f64;
    (c0, var.sqrt())
}

pub(crate) fn min_frames_err(needed: usize, got: usize) -> Error {
    Error::TooShort { needed, got }
}

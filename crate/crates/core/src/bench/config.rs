//! Benchmark configuration, read from TOML.
//!
//! Every key is optional; a missing key takes the default below. Sections
//! are TOML tables, so `[patfm]` and `patfm.slot_len_ms = 60` are
//! equivalent spellings.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackSpec, CodecCommand, CodecContext};
use crate::audio::DEFAULT_SAMPLE_RATE;
use crate::backends::{BackendId, DEFAULT_PAYLOAD_BITS};
use crate::error::{Error, Result};
use crate::mux::{DEFAULT_SLOT_MS, MAX_WATERMARKS};
use crate::patfm::PatfmConfig;

pub const DEFAULT_UTTERANCE_CAP: usize = 50;

/// Multiplexing mode of one report column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "single_ss")]
    SingleSs,
    #[serde(rename = "single_qim")]
    SingleQim,
    #[serde(rename = "single_phase")]
    SinglePhase,
    #[serde(rename = "parallel")]
    Parallel,
    /// Sequential cascade in the configured backend order.
    #[serde(rename = "seq_AB", alias = "seq_ab")]
    SeqAb,
    /// Sequential cascade in reverse order.
    #[serde(rename = "seq_BA", alias = "seq_ba")]
    SeqBa,
    #[serde(rename = "fdm")]
    Fdm,
    #[serde(rename = "tdm")]
    Tdm,
    #[serde(rename = "patfm")]
    Patfm,
}

impl Mode {
    pub const ALL: [Mode; 9] = [
        Mode::SingleSs,
        Mode::SingleQim,
        Mode::SinglePhase,
        Mode::Parallel,
        Mode::SeqAb,
        Mode::SeqBa,
        Mode::Fdm,
        Mode::Tdm,
        Mode::Patfm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleSs => "single_ss",
            Mode::SingleQim => "single_qim",
            Mode::SinglePhase => "single_phase",
            Mode::Parallel => "parallel",
            Mode::SeqAb => "seq_AB",
            Mode::SeqBa => "seq_BA",
            Mode::Fdm => "fdm",
            Mode::Tdm => "tdm",
            Mode::Patfm => "patfm",
        }
    }

    /// The backend of a single-watermark mode.
    pub fn single(self) -> Option<BackendId> {
        match self {
            Mode::SingleSs => Some(BackendId::Ss),
            Mode::SingleQim => Some(BackendId::Qim),
            Mode::SinglePhase => Some(BackendId::Phase),
            _ => None,
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Mode::SeqAb | Mode::SeqBa)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// How multiplexed modes combine their detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Uniform,
    /// Weights proportional to each detector's clean z separation, measured
    /// on the mode's own un-attacked pools.
    Calibrated,
}

/// Seeds for the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Synthetic corpus (unused with a dataset directory).
    pub corpus: u64,
    /// Watermark keys and payloads.
    pub keys: u64,
    /// Attack randomness.
    pub attacks: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 1,
            keys: 2,
            attacks: 3,
        }
    }
}

/// Embedding strength per backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Strengths {
    pub ss: f64,
    pub qim: f64,
    pub phase: f64,
}

impl Default for Strengths {
    fn default() -> Self {
        Self {
            ss: BackendId::Ss.default_strength(),
            qim: BackendId::Qim.default_strength(),
            phase: BackendId::Phase.default_strength(),
        }
    }
}

impl Strengths {
    pub fn of(&self, b: BackendId) -> f64 {
        match b {
            BackendId::Ss => self.ss,
            BackendId::Qim => self.qim,
            BackendId::Phase => self.phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// WAV directory; the synthetic corpus is used when absent.
    pub dataset_dir: Option<PathBuf>,
    pub utterance_cap: usize,
    /// Length of synthetic utterances in seconds.
    pub utterance_secs: f64,
    pub sample_rate: u32,
    pub payload_bits: usize,
    pub seeds: Seeds,
    pub modes: Vec<Mode>,
    /// Watermarks of the multiplexed modes, in `seq_AB` order.
    pub backends: Vec<BackendId>,
    pub strengths: Strengths,
    /// Mixing weight of every watermark in parallel, FDM, TDM and PA-TFM.
    pub mux_alpha: f64,
    pub slot_len_ms: f64,
    /// FDM bands; the default plan for the watermark count when absent.
    pub fdm_bands: Option<Vec<(f64, f64)>>,
    pub patfm: PatfmConfig,
    pub fusion: FusionMode,
    pub attacks: Vec<AttackSpec>,
    pub target_fprs: Vec<f64>,
    /// Codec name to command template; merged over the built-in mp3/opus
    /// templates.
    pub codecs: BTreeMap<String, String>,
    pub codec_timeout_secs: u64,
    pub max_processes: usize,
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            utterance_cap: DEFAULT_UTTERANCE_CAP,
            utterance_secs: super::corpus::DEFAULT_UTTERANCE_SECS,
            sample_rate: DEFAULT_SAMPLE_RATE,
            payload_bits: DEFAULT_PAYLOAD_BITS,
            seeds: Seeds::default(),
            modes: Mode::ALL.to_vec(),
            backends: vec![BackendId::Qim, BackendId::Phase],
            strengths: Strengths::default(),
            mux_alpha: 1.0,
            slot_len_ms: DEFAULT_SLOT_MS,
            fdm_bands: None,
            patfm: PatfmConfig::default(),
            fusion: FusionMode::default(),
            attacks: AttackSpec::table1(),
            target_fprs: vec![0.05, 0.01],
            codecs: BTreeMap::new(),
            codec_timeout_secs: crate::attacks::codec::DEFAULT_TIMEOUT_SECS,
            max_processes: 2,
            jobs: None,
            output_dir: PathBuf::from("bench-out"),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.modes.is_empty() {
            return bad("no modes configured".into());
        }
        if self.attacks.is_empty() {
            return bad("no attacks configured".into());
        }
        if self.utterance_cap < 2 {
            return bad(format!("utterance_cap must be >= 2, got {}", self.utterance_cap));
        }
        if !(self.utterance_secs > 0.0) {
            return bad("utterance_secs must be > 0".into());
        }
        if !(1..=64).contains(&self.payload_bits) {
            return bad(format!("payload_bits must be in 1..=64, got {}", self.payload_bits));
        }
        let multiplexed = self.modes.iter().any(|m| m.single().is_none());
        if multiplexed && !(2..=MAX_WATERMARKS).contains(&self.backends.len()) {
            return bad(format!(
                "multiplexed modes need 2 to {MAX_WATERMARKS} backends, got {}",
                self.backends.len()
            ));
        }
        for (i, b) in self.backends.iter().enumerate() {
            if self.backends[..i].contains(b) {
                return bad(format!("backend `{b}` listed twice"));
            }
        }
        for b in BackendId::ALL {
            if !(self.strengths.of(b) > 0.0) {
                return bad(format!("strength of `{b}` must be > 0"));
            }
        }
        if !(self.mux_alpha.is_finite() && self.mux_alpha >= 0.0) {
            return bad("mux_alpha must be finite and >= 0".into());
        }
        crate::mux::SlotPlan::new(self.slot_len_ms)?;
        crate::mux::SlotPlan::new(self.patfm.slot_len_ms)?;
        if self.target_fprs.is_empty() || self.target_fprs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad("target_fprs must be non-empty and within (0, 1)".into());
        }
        for a in &self.attacks {
            a.validate()?;
        }
        for (name, template) in &self.codecs {
            CodecCommand::new(name.clone(), template.clone())?;
        }
        if self.max_processes == 0 || self.jobs == Some(0) {
            return bad("max_processes and jobs must be >= 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the JSON form of everything that can change results.
    /// Worker counts and the output directory are left out, so the same
    /// experiment hashes the same however it is run.
    pub fn hash(&self) -> String {
        let canonical = BenchConfig {
            jobs: None,
            max_processes: 1,
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).unwrap_or_default();
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn codec_context(&self) -> Result<CodecContext> {
        let mut ctx = CodecContext {
            timeout: Duration::from_secs(self.codec_timeout_secs),
            ..CodecContext::default()
        };
        for (name, template) in &self.codecs {
            ctx.commands.insert(name.clone(), CodecCommand::new(name.clone(), template.clone())?);
        }
        Ok(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(BenchConfig::from_toml("").unwrap(), BenchConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = BenchConfig::default();
        cfg.modes = vec![Mode::SeqBa, Mode::Patfm];
        cfg.attacks = vec![AttackSpec::Echo { delay_ms: 50.0, gain: 0.5 }, AttackSpec::None];
        cfg.codecs.insert("copy".into(), "cp {in} {out}".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(BenchConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn dotted_keys_and_attack_tables() {
        let cfg = BenchConfig::from_toml(
            r#"
            modes = ["single_qim", "seq_AB", "patfm"]
            seeds.keys = 9
            patfm.band_affinity = true
            attacks = [{ kind = "gaussian_noise", snr_db = 10 }, { kind = "none" }]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds.keys, 9);
        assert!(cfg.patfm.band_affinity);
        assert_eq!(cfg.modes[1], Mode::SeqAb);
        assert_eq!(cfg.attacks[0], AttackSpec::GaussianNoise { snr_db: 10.0 });
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "modes = []",
            "attacks = []",
            "utterance_cap = 1",
            "unknown_key = 3",
            "backends = [\"qim\"]",
            "backends = [\"qim\", \"qim\"]",
            "target_fprs = [0.0]",
            "slot_len_ms = 100",
            "attacks = [{ kind = \"echo\", delay_ms = 10, gain = 3 }]",
            "codecs.bad = \"cp {in}\"",
        ] {
            assert!(BenchConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_result_fields_only() {
        let a = BenchConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds.attacks += 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.patfm.gain.floor = 0.3;
        assert_ne!(a.hash(), c.hash());
        let d = BenchConfig {
            jobs: Some(3),
            max_processes: 7,
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), d.hash());
    }
}

//! Benchmark execution over the mode by attack grid.
//!
//! Every utterance is used twice: watermarked (positive) and clean
//! (negative). Both pools go through the same attack with the same seed, so
//! detector nulls see attack artifacts too. Keys, payloads and attack seeds
//! depend only on the configured seeds and the utterance index, so every
//! mode is scored on the same hosts, keys and attack realizations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BenchConfig, FusionMode, Mode, Seeds};
use super::corpus::{ingest_dataset, synthetic_corpus, Utterance};
use crate::attacks::{attack_apply_with, AttackSpec, CodecContext, ProcessLimiter};
use crate::audio::AudioBuffer;
use crate::backends::{BackendId, Payload, Perturbation, WatermarkKey};
use crate::error::{Error, Result};
use crate::metrics::{roc_auc, snr_db, stoi, tpr_at_fpr};
use crate::mux::{
    apply_tf_routing, make_fdm_masks, make_tdm_masks, mux_parallel, mux_sequential, BandPlan, GridShape,
    MuxOutput, SlotPlan, Stage,
};
use crate::patfm::{fuse_scores, pa_tfm_route, FusionWeights};
use crate::pn;
use crate::stft::StftConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const KEY_STREAM: u64 = 0x4B45_5900;
const PAYLOAD_STREAM: u64 = 0x5041_5900;
const ATTACK_SEED_STREAM: u64 = 0x4154_5300;

/// AUC and TPR at each configured FPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub auc: f64,
    /// Aligned with [`EvalReport::target_fprs`].
    pub tpr: Vec<f64>,
}

impl Rates {
    fn of(pos: &[f64], neg: &[f64], fprs: &[f64]) -> Result<Self> {
        Ok(Self {
            auc: roc_auc(pos, neg)?,
            tpr: fprs.iter().map(|&f| tpr_at_fpr(pos, neg, f)).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Fused score; for single modes, the one detector.
    pub fused: Rates,
    pub detectors: BTreeMap<BackendId, Rates>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Ok(CellMetrics),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub attack: String,
    pub outcome: CellOutcome,
}

impl Cell {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match &self.outcome {
            CellOutcome::Ok(m) => Some(m),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub detectors: Vec<BackendId>,
    pub fusion_weights: Vec<f64>,
    /// Mean host SNR of the watermarked pool; absent when undefined.
    pub snr_db: Option<f64>,
    pub stoi: Option<f64>,
    pub clipped_samples: usize,
    /// Means over the mode's populated cells.
    pub macro_auc: Option<f64>,
    pub macro_tpr: Vec<f64>,
    pub failed_cells: usize,
    pub embed_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Seeds,
    pub n_utterances: usize,
    pub sample_rate: u32,
    pub backends: Vec<BackendId>,
    pub target_fprs: Vec<f64>,
    pub attacks: Vec<String>,
    pub modes: Vec<ModeSummary>,
    /// Mode-major: all attacks of the first mode, then the next.
    pub cells: Vec<Cell>,
}

impl EvalReport {
    pub fn cell(&self, mode: Mode, attack: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.mode == mode && c.attack == attack)
    }

    pub fn summary(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// The configured dataset, or the synthetic corpus when none is set.
pub fn load_corpus(cfg: &BenchConfig) -> Result<Vec<Utterance>> {
    match &cfg.dataset_dir {
        Some(dir) => {
            let u = ingest_dataset(dir, cfg.utterance_cap, cfg.sample_rate)?;
            if u.len() < 2 {
                return Err(Error::Dataset(format!("{}: need at least 2 utterances", dir.display())));
            }
            Ok(u)
        }
        None => Ok(synthetic_corpus(
            cfg.utterance_cap,
            cfg.seeds.corpus,
            cfg.utterance_secs,
            cfg.sample_rate,
        )),
    }
}

/// Key of `backend` for utterance `u`.
pub fn utterance_key(seeds: &Seeds, u: usize, backend: BackendId) -> WatermarkKey {
    let idx = BackendId::ALL.iter().position(|&b| b == backend).unwrap_or(0) as u64;
    WatermarkKey::new(pn::word(seeds.keys, KEY_STREAM, 4 * u as u64 + idx), backend)
}

pub fn utterance_payload(seeds: &Seeds, u: usize, backend: BackendId, bits: usize) -> Result<Payload> {
    let idx = BackendId::ALL.iter().position(|&b| b == backend).unwrap_or(0) as u64;
    Payload::random(pn::word(seeds.keys, PAYLOAD_STREAM, 4 * u as u64 + idx), bits)
}

/// Attack seed of utterance `u`, shared by its positive and negative.
pub fn attack_seed(seeds: &Seeds, u: usize) -> u64 {
    pn::word(seeds.attacks, ATTACK_SEED_STREAM, u as u64)
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let utterances = load_corpus(cfg)?;
    run_on(cfg, &utterances)
}

/// [`run_benchmark`] on an explicit utterance list.
pub fn run_on(cfg: &BenchConfig, utterances: &[Utterance]) -> Result<EvalReport> {
    cfg.validate()?;
    if utterances.len() < 2 {
        return Err(Error::Dataset("need at least 2 utterances".into()));
    }
    in_pool(cfg.jobs, || Runner::new(cfg, utterances)?.run(&cfg.attacks))
}

pub(crate) fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(f),
    }
}

/// Watermarks `x` under `mode`. `stages` are the watermarks in `seq_AB`
/// order (one stage for the single modes); `deltas[i]` is stage `i`'s
/// perturbation on `x`, unused by the sequential modes, which re-embed on
/// each intermediate signal. `cfg.mux_alpha` weights every watermark of
/// the non-sequential modes.
pub fn mux_mode(
    x: &AudioBuffer,
    mode: Mode,
    stages: &[Stage],
    deltas: &[Perturbation],
    cfg: &BenchConfig,
) -> Result<MuxOutput> {
    if stages.is_empty() {
        return Err(Error::param("no watermarks to embed"));
    }
    if let Some(b) = mode.single() {
        if stages.len() != 1 || stages[0].backend != b {
            return Err(Error::param(format!("mode {mode} embeds exactly one {b} watermark")));
        }
    }
    if !mode.is_sequential() && deltas.len() != stages.len() {
        return Err(Error::Dimension(format!("{} deltas for {} watermarks", deltas.len(), stages.len())));
    }
    let stft_cfg = StftConfig::default();
    let n = stages.len();
    let alphas = vec![cfg.mux_alpha; n];
    let shape = GridShape::of(x, stft_cfg);
    match mode {
        Mode::SingleSs | Mode::SingleQim | Mode::SinglePhase | Mode::Parallel => mux_parallel(x, deltas, &alphas),
        Mode::SeqAb => mux_sequential(x, stages),
        Mode::SeqBa => {
            let reversed: Vec<Stage> = stages.iter().rev().cloned().collect();
            mux_sequential(x, &reversed)
        }
        Mode::Fdm => {
            let plan = match &cfg.fdm_bands {
                Some(b) => BandPlan::new(b.clone())?,
                None => BandPlan::default_for(n, x.sample_rate())?,
            };
            let masks = make_fdm_masks(&plan, &alphas, &shape)?;
            apply_tf_routing(x, deltas, &masks, &stft_cfg)
        }
        Mode::Tdm => {
            let masks = make_tdm_masks(&SlotPlan::new(cfg.slot_len_ms)?, &alphas, &shape)?;
            apply_tf_routing(x, deltas, &masks, &stft_cfg)
        }
        Mode::Patfm => Ok(pa_tfm_route(x, deltas, &alphas, &cfg.patfm, &stft_cfg)?.mux),
    }
}

/// [`mux_mode`] computing each stage's delta on `x` first.
pub fn embed_mode(x: &AudioBuffer, mode: Mode, stages: &[Stage], cfg: &BenchConfig) -> Result<MuxOutput> {
    let deltas: Vec<Perturbation> = if mode.is_sequential() {
        Vec::new()
    } else {
        stages
            .iter()
            .map(|s| s.backend.embed(x, &s.payload, &s.key, s.strength))
            .collect::<Result<_>>()?
    };
    mux_mode(x, mode, stages, &deltas, cfg)
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

type Scores = BTreeMap<BackendId, f64>;

/// Watermarked pool of one mode.
struct Embedded {
    audio: Vec<AudioBuffer>,
    clipped: usize,
}

pub(crate) struct Runner<'a> {
    cfg: &'a BenchConfig,
    utterances: &'a [Utterance],
    codecs: CodecContext,
    limiter: ProcessLimiter,
    /// Per utterance, each needed backend's delta on the clean host.
    deltas: Vec<BTreeMap<BackendId, std::result::Result<Perturbation, String>>>,
}

impl<'a> Runner<'a> {
    pub(crate) fn new(cfg: &'a BenchConfig, utterances: &'a [Utterance]) -> Result<Self> {
        let mut needed: Vec<BackendId> = cfg.modes.iter().filter_map(|m| m.single()).collect();
        if cfg.modes.iter().any(|m| m.single().is_none()) {
            needed.extend(&cfg.backends);
        }
        needed.sort();
        needed.dedup();
        let deltas = utterances
            .par_iter()
            .enumerate()
            .map(|(u, utt)| {
                needed
                    .iter()
                    .map(|&b| {
                        let d = utterance_payload(&cfg.seeds, u, b, cfg.payload_bits).and_then(|p| {
                            b.embed(&utt.audio, &p, &utterance_key(&cfg.seeds, u, b), cfg.strengths.of(b))
                        });
                        (b, d.map_err(|e| e.to_string()))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg,
            utterances,
            codecs: cfg.codec_context()?,
            limiter: ProcessLimiter::new(cfg.max_processes),
            deltas,
        })
    }

    fn detectors(&self, mode: Mode) -> Vec<BackendId> {
        match mode.single() {
            Some(b) => vec![b],
            None => self.cfg.backends.clone(),
        }
    }

    fn all_detectors(&self) -> Vec<BackendId> {
        let mut all: Vec<BackendId> = self.cfg.modes.iter().flat_map(|&m| self.detectors(m)).collect();
        all.sort();
        all.dedup();
        all
    }

    fn delta(&self, u: usize, b: BackendId) -> Result<&Perturbation> {
        match self.deltas[u].get(&b) {
            Some(Ok(d)) => Ok(d),
            Some(Err(e)) => Err(Error::param(format!("{} embedding failed: {e}", b))),
            None => Err(Error::param(format!("no {b} delta prepared"))),
        }
    }

    fn stages(&self, u: usize) -> Result<Vec<Stage>> {
        self.cfg
            .backends
            .iter()
            .map(|&b| {
                Ok(Stage {
                    backend: b,
                    payload: utterance_payload(&self.cfg.seeds, u, b, self.cfg.payload_bits)?,
                    key: utterance_key(&self.cfg.seeds, u, b),
                    strength: self.cfg.strengths.of(b),
                })
            })
            .collect()
    }

    /// Watermarks utterance `u` under `mode`.
    fn embed_one(&self, mode: Mode, u: usize) -> Result<MuxOutput> {
        let x = &self.utterances[u].audio;
        let stages = match mode.single() {
            Some(b) => vec![Stage {
                backend: b,
                payload: utterance_payload(&self.cfg.seeds, u, b, self.cfg.payload_bits)?,
                key: utterance_key(&self.cfg.seeds, u, b),
                strength: self.cfg.strengths.of(b),
            }],
            None => self.stages(u)?,
        };
        let deltas: Vec<Perturbation> = if mode.is_sequential() {
            Vec::new()
        } else {
            stages.iter().map(|s| self.delta(u, s.backend).cloned()).collect::<Result<_>>()?
        };
        mux_mode(x, mode, &stages, &deltas, self.cfg)
    }

    fn embed(&self, mode: Mode) -> Result<Embedded> {
        let out: Vec<MuxOutput> = (0..self.utterances.len())
            .into_par_iter()
            .map(|u| self.embed_one(mode, u))
            .collect::<Result<_>>()?;
        let clipped = out.iter().map(|o| o.clipped).sum();
        Ok(Embedded {
            audio: out.into_iter().map(|o| o.audio).collect(),
            clipped,
        })
    }

    fn score(&self, y: &AudioBuffer, u: usize, detectors: &[BackendId]) -> Result<Scores> {
        detectors
            .iter()
            .map(|&b| Ok((b, b.detect(y, &utterance_key(&self.cfg.seeds, u, b))?.logit)))
            .collect()
    }

    fn attack(&self, x: &AudioBuffer, spec: &AttackSpec, u: usize) -> Result<AudioBuffer> {
        let seed = attack_seed(&self.cfg.seeds, u);
        if spec.is_external() {
            self.limiter.run(|| attack_apply_with(x, spec, seed, &self.codecs))
        } else {
            attack_apply_with(x, spec, seed, &self.codecs)
        }
    }

    /// Scores of every attacked signal in `pool`, in utterance order.
    fn score_pool(&self, pool: &[AudioBuffer], spec: &AttackSpec, detectors: &[BackendId]) -> Result<Vec<Scores>> {
        pool.par_iter()
            .enumerate()
            .map(|(u, x)| {
                let y = self.attack(x, spec, u)?;
                self.score(&y, u, detectors)
            })
            .collect()
    }

    fn fusion_weights(&self, mode: Mode, embedded: &Embedded, clean_neg: Option<&[Scores]>) -> Result<FusionWeights> {
        let detectors = self.detectors(mode);
        match (self.cfg.fusion, clean_neg) {
            (FusionMode::Calibrated, Some(neg)) if detectors.len() > 1 => {
                let pos = self.score_pool(&embedded.audio, &AttackSpec::None, &detectors)?;
                let separations: Vec<f64> = detectors
                    .iter()
                    .map(|b| {
                        let mp = mean(pos.iter().map(|s| s[b])).unwrap_or(0.0);
                        let mn = mean(neg.iter().map(|s| s[b])).unwrap_or(0.0);
                        mp - mn
                    })
                    .collect();
                FusionWeights::from_separations(&separations).or_else(|_| FusionWeights::uniform(detectors.len()))
            }
            _ => FusionWeights::uniform(detectors.len()),
        }
    }

    fn cell_metrics(
        &self,
        detectors: &[BackendId],
        weights: &FusionWeights,
        pos: &[Scores],
        neg: &[Scores],
    ) -> Result<CellMetrics> {
        let fprs = &self.cfg.target_fprs;
        let fuse = |pool: &[Scores]| -> Result<Vec<f64>> {
            pool.iter()
                .map(|s| {
                    let scores: Vec<_> = detectors
                        .iter()
                        .map(|b| crate::backends::DetectionScore::from_z(s[b], s[b]))
                        .collect();
                    Ok(fuse_scores(&scores, weights)?.logit)
                })
                .collect()
        };
        let mut per = BTreeMap::new();
        for b in detectors {
            let p: Vec<f64> = pos.iter().map(|s| s[b]).collect();
            let n: Vec<f64> = neg.iter().map(|s| s[b]).collect();
            per.insert(*b, Rates::of(&p, &n, fprs)?);
        }
        Ok(CellMetrics {
            fused: Rates::of(&fuse(pos)?, &fuse(neg)?, fprs)?,
            detectors: per,
            n_pos: pos.len(),
            n_neg: neg.len(),
        })
    }

    pub(crate) fn run(&self, attacks: &[AttackSpec]) -> Result<EvalReport> {
        let cfg = self.cfg;
        let clean: Vec<AudioBuffer> = self.utterances.iter().map(|u| u.audio.clone()).collect();
        let all = self.all_detectors();
        let negatives: Vec<std::result::Result<Vec<Scores>, String>> = attacks
            .iter()
            .map(|a| self.score_pool(&clean, a, &all).map_err(|e| e.to_string()))
            .collect();
        let clean_neg = match cfg.fusion {
            FusionMode::Calibrated => Some(self.score_pool(&clean, &AttackSpec::None, &all)?),
            FusionMode::Uniform => None,
        };

        let mut cells = Vec::with_capacity(cfg.modes.len() * attacks.len());
        let mut modes = Vec::with_capacity(cfg.modes.len());
        for &mode in &cfg.modes {
            let detectors = self.detectors(mode);
            let failed = |reason: String| CellOutcome::Failed { reason };
            let embedded = match self.embed(mode) {
                Ok(e) => e,
                Err(e) => {
                    let reason = format!("embedding failed: {e}");
                    for a in attacks {
                        cells.push(Cell {
                            mode,
                            attack: a.label(),
                            outcome: failed(reason.clone()),
                        });
                    }
                    modes.push(ModeSummary {
                        mode,
                        detectors,
                        fusion_weights: Vec::new(),
                        snr_db: None,
                        stoi: None,
                        clipped_samples: 0,
                        macro_auc: None,
                        macro_tpr: Vec::new(),
                        failed_cells: attacks.len(),
                        embed_error: Some(reason),
                    });
                    continue;
                }
            };
            let quality: Vec<(f64, Option<f64>)> = clean
                .par_iter()
                .zip(&embedded.audio)
                .map(|(x, y)| (snr_db(x, y).unwrap_or(f64::NAN), stoi(x, y).ok()))
                .collect();
            let weights = self.fusion_weights(mode, &embedded, clean_neg.as_deref())?;

            let first = cells.len();
            for (a, neg) in attacks.iter().zip(&negatives) {
                let outcome = match neg {
                    Err(e) => failed(format!("attack on negatives failed: {e}")),
                    Ok(neg) => match self
                        .score_pool(&embedded.audio, a, &detectors)
                        .and_then(|pos| self.cell_metrics(&detectors, &weights, &pos, neg))
                    {
                        Ok(m) => CellOutcome::Ok(m),
                        Err(e) => failed(e.to_string()),
                    },
                };
                cells.push(Cell {
                    mode,
                    attack: a.label(),
                    outcome,
                });
            }
            let ok: Vec<&CellMetrics> = cells[first..].iter().filter_map(Cell::metrics).collect();
            let snrs: Vec<f64> = quality.iter().map(|q| q.0).filter(|v| v.is_finite()).collect();
            modes.push(ModeSummary {
                mode,
                detectors,
                fusion_weights: weights.weights().to_vec(),
                snr_db: if snrs.len() == quality.len() { mean(snrs) } else { None },
                stoi: mean(quality.iter().filter_map(|q| q.1)),
                clipped_samples: embedded.clipped,
                macro_auc: mean(ok.iter().map(|m| m.fused.auc)),
                macro_tpr: if ok.is_empty() {
                    Vec::new()
                } else {
                    (0..cfg.target_fprs.len())
                        .map(|i| mean(ok.iter().map(|m| m.fused.tpr[i])).unwrap_or(0.0))
                        .collect()
                },
                failed_cells: attacks.len() - ok.len(),
                embed_error: None,
            });
        }
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash: cfg.hash(),
            seeds: cfg.seeds,
            n_utterances: self.utterances.len(),
            sample_rate: cfg.sample_rate,
            backends: cfg.backends.clone(),
            target_fprs: cfg.target_fprs.clone(),
            attacks: attacks.iter().map(AttackSpec::label).collect(),
            modes,
            cells,
        })
    }
}

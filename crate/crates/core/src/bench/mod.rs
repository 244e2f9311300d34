//! Benchmark orchestration and report emission.

pub mod case;
pub mod config;
pub mod corpus;
pub mod report;
pub mod run;
pub mod sweep;

pub use case::{case_study, dump_case_study, Panel};
pub use config::{BenchConfig, FusionMode, Mode, Seeds, Strengths};
pub use report::{emit_report, read_report, ReportFormat};
pub use run::{
    attack_seed, embed_mode, load_corpus, mux_mode, run_benchmark, run_on, utterance_key, utterance_payload, Cell, CellMetrics,
    CellOutcome, EvalReport, ModeSummary, Rates,
};
pub use sweep::{attack_at_strength, emit_sweep, strength_sweep, strength_sweep_on, SweepReport};

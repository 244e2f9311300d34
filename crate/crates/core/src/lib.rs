//! Training-free multiplexing of audio watermarks and a robustness
//! benchmark for the multiplexed signals.

pub mod attacks;
pub mod audio;
pub mod backends;
pub mod bench;
pub mod error;
pub mod metrics;
pub mod mux;
pub mod patfm;
pub mod pn;
pub mod stft;

pub use audio::{load_wav, save_wav, AudioBuffer, WavEncoding};
pub use backends::{BackendId, DetectionScore, Payload, Perturbation, WatermarkKey};
pub use error::{Error, Result};
pub use stft::{istft, stft, Spectrogram, StftConfig};

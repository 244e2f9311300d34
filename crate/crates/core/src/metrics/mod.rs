//! Transparency, intelligibility and detection metrics.

pub mod roc;
pub mod stoi;

pub use roc::{calibrate_threshold, roc_auc, threshold_at_fpr, tpr_at_fpr};
pub use stoi::stoi;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// `10 log10(|ref|^2 / |ref - test|^2)`; `+inf` when the signals match.
pub fn snr_db(reference: &AudioBuffer, test: &AudioBuffer) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::Dimension(format!(
            "snr: reference has {} samples, test {}",
            reference.len(),
            test.len()
        )));
    }
    let signal = reference.energy();
    if signal == 0.0 {
        return Err(Error::param("snr: reference is all zeros"));
    }
    let noise: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::new(v, 16_000).unwrap()
    }

    #[test]
    fn snr_cases() {
        let x = buf((0..1000).map(|i| (i as f64 * 0.1).sin() * 0.5).collect());
        assert_eq!(snr_db(&x, &x).unwrap(), f64::INFINITY);
        let neg = buf(x.samples().iter().map(|v| -v).collect());
        assert!((snr_db(&x, &neg).unwrap() + 20.0 * 2f64.log10()).abs() < 1e-12);
        // noise with one hundredth of the reference energy
        let e: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let g = (x.energy() / 100.0 / 1000.0).sqrt();
        let y = buf(x.samples().iter().zip(&e).map(|(a, b)| a + g * b).collect());
        assert!((snr_db(&x, &y).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn snr_errors() {
        let z = AudioBuffer::zeros(10, 16_000).unwrap();
        assert!(snr_db(&z, &z).is_err());
        let x = buf(vec![0.1; 10]);
        assert!(snr_db(&x, &buf(vec![0.1; 11])).is_err());
    }
}

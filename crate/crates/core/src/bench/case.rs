//! Spectrogram panels of one example, for plotting the watermark and attack
//! effects side by side.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::stft::{stft, Spectrogram, StftConfig};

/// dB value of an exactly zero cell.
pub const DB_FLOOR: f64 = -200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: &'static str,
    pub n_frames: usize,
    pub n_bins: usize,
    /// Magnitude in dB, `[frame][bin]` row-major, floored at [`DB_FLOOR`].
    pub db: Vec<f64>,
}

fn to_db(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * power.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

fn panel(name: &'static str, spec: &Spectrogram) -> Panel {
    let (n_frames, n_bins) = spec.dims();
    Panel {
        name,
        n_frames,
        n_bins,
        db: spec.power().into_iter().map(to_db).collect(),
    }
}

fn diff(a: &AudioBuffer, b: &AudioBuffer) -> Result<AudioBuffer> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} samples", a.len(), b.len())));
    }
    a.with_samples(a.samples().iter().zip(b.samples()).map(|(x, y)| x - y).collect())
}

/// Original, watermarked, watermark difference, attacked, and attack
/// difference (attacked minus watermarked).
pub fn case_study(x: &AudioBuffer, watermarked: &AudioBuffer, attacked: &AudioBuffer) -> Result<Vec<Panel>> {
    let cfg = StftConfig::default();
    Ok(vec![
        panel("original", &stft(x, &cfg)?),
        panel("watermarked", &stft(watermarked, &cfg)?),
        panel("difference", &stft(&diff(watermarked, x)?, &cfg)?),
        panel("attacked", &stft(attacked, &cfg)?),
        panel("attack_difference", &stft(&diff(attacked, watermarked)?, &cfg)?),
    ])
}

/// Writes each panel as `<name>.txt`: a `#` header line, then one line of
/// space-separated dB values per frame.
pub fn dump_case_study(
    x: &AudioBuffer,
    watermarked: &AudioBuffer,
    attacked: &AudioBuffer,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = StftConfig::default();
    let mut written = Vec::new();
    for p in case_study(x, watermarked, attacked)? {
        let path = out_dir.join(format!("{}.txt", p.name));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(&path, e);
        writeln!(
            w,
            "# {} frames={} bins={} sample_rate={} frame_len={} hop={} unit=dB",
            p.name,
            p.n_frames,
            p.n_bins,
            x.sample_rate(),
            cfg.frame_len,
            cfg.hop
        )
        .map_err(io)?;
        for row in p.db.chunks(p.n_bins) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        w.flush().map_err(io)?;
        written.push(path);
    }
    Ok(written)
}

//! External codecs run as subprocesses.
//!
//! A [`CodecCommand`] template names an executable and its arguments, with
//! `{in}` and `{out}` standing for WAV paths. The input is written as PCM16
//! to a private temp directory, the command runs without a shell, and its
//! output WAV is read back and fitted to the input length. Exit code 0 means
//! success; stderr is kept for diagnostics.

use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::audio::{load_wav, save_wav, AudioBuffer, WavEncoding};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT_SECS: u64 = 120;
const STDERR_TAIL: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecCommand {
    pub name: String,
    pub template: String,
}

impl CodecCommand {
    pub fn new(name: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let cmd = Self {
            name: name.into(),
            template: template.into(),
        };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.template.contains("{in}") || !self.template.contains("{out}") {
            return Err(Error::Config(format!(
                "codec `{}`: template must contain {{in}} and {{out}}",
                self.name
            )));
        }
        self.argv(Path::new("in.wav"), Path::new("out.wav")).map(|_| ())
    }

    /// Argument vector with placeholders replaced.
    pub fn argv(&self, input: &Path, output: &Path) -> Result<Vec<String>> {
        let words = shell_words::split(&self.template)
            .map_err(|e| Error::Config(format!("codec `{}`: {e}", self.name)))?;
        if words.is_empty() {
            return Err(Error::Config(format!("codec `{}`: empty template", self.name)));
        }
        let (i, o) = (input.to_string_lossy(), output.to_string_lossy());
        Ok(words
            .into_iter()
            .map(|w| w.replace("{in}", &i).replace("{out}", &o))
            .collect())
    }

    /// MP3 round trip through ffmpeg at `kbps`.
    pub fn ffmpeg_mp3(kbps: u32) -> Self {
        Self {
            name: format!("mp3_{kbps}k"),
            template: format!(
                "sh -c \"ffmpeg -nostdin -loglevel error -y -i {{in}} -c:a libmp3lame -b:a {kbps}k -f mp3 - \
                 | ffmpeg -nostdin -loglevel error -y -i - -ar 16000 -ac 1 -c:a pcm_s16le {{out}}\""
            ),
        }
    }

    /// Opus round trip through ffmpeg at `kbps`.
    pub fn ffmpeg_opus(kbps: u32) -> Self {
        Self {
            name: format!("opus_{kbps}k"),
            template: format!(
                "sh -c \"ffmpeg -nostdin -loglevel error -y -i {{in}} -c:a libopus -b:a {kbps}k -f ogg - \
                 | ffmpeg -nostdin -loglevel error -y -i - -ar 16000 -ac 1 -c:a pcm_s16le {{out}}\""
            ),
        }
    }
}

/// Counting semaphore capping concurrent codec processes.
pub struct ProcessLimiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl ProcessLimiter {
    pub fn new(cap: usize) -> Self {
        Self {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.cv.notify_one();
        out
    }
}

fn codec_err(cmd: &CodecCommand, message: impl Into<String>) -> Error {
    Error::Codec {
        name: cmd.name.clone(),
        message: message.into(),
    }
}

fn tail(s: &str) -> &str {
    let start = s.len().saturating_sub(STDERR_TAIL);
    let start = (start..s.len()).find(|&i| s.is_char_boundary(i)).unwrap_or(s.len());
    s[start..].trim()
}

/// Runs `cmd` on `x` inside a fresh temp directory under `workdir` (or the
/// system temp dir).
pub fn external_codec_attack(
    x: &AudioBuffer,
    cmd: &CodecCommand,
    workdir: Option<&Path>,
    timeout: Duration,
) -> Result<AudioBuffer> {
    cmd.validate()?;
    let dir = match workdir {
        Some(w) => tempfile::tempdir_in(w),
        None => tempfile::tempdir(),
    }
    .map_err(|e| codec_err(cmd, format!("cannot create temp dir: {e}")))?;
    let input = dir.path().join("in.wav");
    let output = dir.path().join("out.wav");
    let log = dir.path().join("stderr.log");
    save_wav(x, &input, WavEncoding::Pcm16)?;
    let argv = cmd.argv(&input, &output)?;
    let stderr = std::fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(stderr)
        .spawn()
        .map_err(|e| codec_err(cmd, format!("cannot start `{}`: {e}", argv[0])))?;
    let status = match child
        .wait_timeout(timeout)
        .map_err(|e| codec_err(cmd, format!("wait failed: {e}")))?
    {
        Some(s) => s,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(codec_err(cmd, format!("timed out after {} s", timeout.as_secs())));
        }
    };
    let diag = std::fs::read_to_string(&log).unwrap_or_default();
    if !status.success() {
        return Err(codec_err(cmd, format!("exit status {status}; stderr: {}", tail(&diag))));
    }
    let y = load_wav(&output).map_err(|e| codec_err(cmd, format!("unreadable output: {e}; stderr: {}", tail(&diag))))?;
    if y.sample_rate() != x.sample_rate() {
        return Err(codec_err(
            cmd,
            format!("output at {} Hz, expected {} Hz", y.sample_rate(), x.sample_rate()),
        ));
    }
    y.fit_length(x.len())
}

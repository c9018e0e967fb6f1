use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wavebench_core::bench::write_atomic;
use wavebench_core::env::hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// What a subcommand ran on and what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Arguments after the program name, thread settings removed.
    pub command: Vec<String>,
    pub config_hash: String,
    /// Canonical text of every setting in effect.
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    /// Relative to the manifest's directory when below it.
    pub artifacts: Vec<FileDigest>,
    pub tool_version: String,
    pub wall_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// The invocation without `--threads`.
pub fn command_line() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--threads" {
            args.next();
        } else if !a.starts_with("--threads=") {
            out.push(a);
        }
    }
    out
}

pub struct Recorder {
    path: PathBuf,
    clock: Instant,
    manifest: RunManifest,
}

impl Recorder {
    /// Starts timing a run whose manifest goes to `path`.
    pub fn start(path: PathBuf, config_hash: String, config: String) -> Self {
        Recorder {
            path,
            clock: Instant::now(),
            manifest: RunManifest {
                command: command_line(),
                config_hash,
                config,
                seeds: Vec::new(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_seconds: 0.0,
            },
        }
    }

    pub fn seeds(&mut self, seeds: impl IntoIterator<Item = u64>) {
        self.manifest.seeds.extend(seeds);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.manifest.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let base = self.path.parent().unwrap_or(Path::new(""));
        let shown = path.strip_prefix(base).unwrap_or(path);
        self.manifest.artifacts.push(FileDigest { path: shown.display().to_string(), sha256 });
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.wall_seconds = self.clock.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        write_atomic(&self.path, text.as_bytes())?;
        Ok(self.manifest)
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn beside(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

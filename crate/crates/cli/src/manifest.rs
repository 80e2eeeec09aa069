use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rulemine::seed::fingerprint;

use crate::config::RunConfig;
use crate::Command;

pub const MANIFEST_FORMAT: &str = "manifest/v1";

/// Everything needed to re-run a command: the resolved config, the command
/// with its arguments, and fingerprints of what went in and came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: Command,
    pub config: RunConfig,
    /// Absolute input path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the output directory -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub durations_ms: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        anyhow::ensure!(m.format == MANIFEST_FORMAT, "unsupported manifest format `{}`", m.format);
        Ok(m)
    }
}

pub fn manifest_name(command: &Command) -> String {
    format!("manifest-{}.json", command.slug())
}

/// Collects inputs, artifacts and stage timings while a command runs.
pub struct RunContext {
    pub out_dir: PathBuf,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    durations_ms: BTreeMap<String, u64>,
}

impl RunContext {
    pub fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(RunContext {
            out_dir: out_dir.to_path_buf(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            durations_ms: BTreeMap::new(),
        })
    }

    /// Reads an input file and records its fingerprint.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), fingerprint(&bytes));
        Ok(bytes)
    }

    pub fn read_input_text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read_input(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    pub fn write_artifact(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes.as_ref()).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.insert(name.to_string(), fingerprint(bytes.as_ref()));
        Ok(path)
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).with_context(|| format!("stage `{stage}`"))?;
        *self.durations_ms.entry(stage.to_string()).or_default() += start.elapsed().as_millis() as u64;
        Ok(out)
    }

    pub fn finish(self, command: &Command, config: &RunConfig) -> Result<RunManifest> {
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            command: command.clone(),
            config: config.clone(),
            inputs: self.inputs,
            artifacts: self.artifacts,
            versions: BTreeMap::from([
                ("rulemine".to_string(), env!("CARGO_PKG_VERSION").to_string()),
                ("rulebook_format".to_string(), rulemine::ruleeval::RULEBOOK_FORMAT.to_string()),
            ]),
            durations_ms: self.durations_ms,
        };
        let path = self.out_dir.join(manifest_name(command));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

//! Run manifests: every command writes one next to its primary output, and
//! every artifact references the manifest that produced it.

use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct RunManifest {
    command: String,
    resolved_config: String,
    root_seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, resolved_config: String, root_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            resolved_config,
            root_seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Manifest path for a primary output.
    pub fn path_for(primary_output: &Path) -> PathBuf {
        let mut name = primary_output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        name.push_str(".manifest");
        primary_output.with_file_name(name)
    }

    /// Write the manifest. Wall-clock duration is recorded here and only
    /// here, so primary outputs stay byte-identical across reruns.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = String::from("scbf-manifest v1\n");
        text.push_str(&format!("command {}\n", self.command));
        text.push_str(&format!("version {}\n", env!("CARGO_PKG_VERSION")));
        text.push_str(&format!("root-seed {}\n", self.root_seed));
        text.push_str(&format!("config {}\n", self.resolved_config));
        for p in &self.inputs {
            text.push_str(&format!("input {}\n", p.display()));
        }
        for p in &self.outputs {
            text.push_str(&format!("output {}\n", p.display()));
        }
        text.push_str(&format!(
            "duration-secs {:.3}\n",
            self.started.elapsed().as_secs_f64()
        ));
        std::fs::write(path, text)
    }
}

/// Resolve an output path against `SCBF_OUT_DIR` when it is set and the path
/// is relative.
pub fn resolve_out_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("SCBF_OUT_DIR") {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

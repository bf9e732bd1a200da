//! Run manifests: one plain-text record per run directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use regflow::Result;

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    resolved: String,
    seeds: Vec<(String, u64)>,
    output: PathBuf,
    started: u64,
    status: String,
    notes: Vec<String>,
}

impl RunManifest {
    pub fn start(command: &str, config_path: Option<&Path>, output: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            resolved: String::new(),
            seeds: Vec::new(),
            output: output.to_path_buf(),
            started: unix_now(),
            status: "ok".into(),
            notes: Vec::new(),
        }
    }

    pub fn resolved(&mut self, text: &str) {
        self.resolved.push_str(text);
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.push((name.to_string(), value));
    }

    pub fn status(&mut self, status: &str) {
        self.status = status.to_string();
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(s, "code_version=regflow {}", env!("CARGO_PKG_VERSION"));
        let config = self.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "(defaults)".into());
        let _ = writeln!(s, "config_path={config}");
        let _ = writeln!(s, "output={}", self.output.display());
        for (k, v) in &self.seeds {
            let _ = writeln!(s, "seed.{k}={v}");
        }
        let _ = writeln!(s, "status={}", self.status);
        for n in &self.notes {
            let _ = writeln!(s, "note={n}");
        }
        let _ = writeln!(s, "started_unix={}", self.started);
        let _ = writeln!(s, "finished_unix={}", unix_now());
        s.push_str("# resolved configuration\n");
        for line in self.resolved.lines() {
            let _ = writeln!(s, "config.{line}");
        }
        s
    }

    /// Writes the manifest into `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Manifest location: `manifest.txt` inside output directories, and
/// `<file>.manifest` beside single output files.
pub fn manifest_for_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}

pub fn manifest_for_file(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest");
    file.with_file_name(name)
}

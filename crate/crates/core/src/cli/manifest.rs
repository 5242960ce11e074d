use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::write_atomic;
use crate::error::Result;

/// Record of one command run: configuration echo, files, phase timings.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per named phase, in execution order.
    pub phases: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            entries: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Runs `f`, recording its wall-clock time under `name`.
    pub fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.phases.push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("command={}\nversion={}\n", self.command, env!("CARGO_PKG_VERSION"));
        for (k, v) in &self.entries {
            s.push_str(&format!("{k}={v}\n"));
        }
        for p in &self.inputs {
            s.push_str(&format!("input={}\n", p.display()));
        }
        for p in &self.outputs {
            s.push_str(&format!("output={}\n", p.display()));
        }
        for (name, secs) in &self.phases {
            s.push_str(&format!("time_{name}_s={secs:.6}\n"));
        }
        s
    }

    /// Prints the manifest and, when `path` is given, writes it there.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        print!("{}", self.to_text());
        if let Some(p) = path {
            write_atomic(p, self.to_text().as_bytes())?;
        }
        Ok(())
    }
}

/// `<output>.manifest` next to a primary output file.
pub fn default_manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

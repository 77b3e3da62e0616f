//! Artifact files with a provenance header, and the MANIFEST listing them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "MANIFEST";

pub struct Artifacts {
    dir: PathBuf,
    header: Value,
    written: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Artifacts {
    pub fn create(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.output_dir)?;
        Ok(Self {
            dir: cfg.output_dir.clone(),
            header: json!({
                "program": "maglorentz",
                "version": VERSION,
                "seed": cfg.seed,
                "config": cfg,
            }),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn header_lines(&self, prefix: &str) -> String {
        format!(
            "{prefix} maglorentz {VERSION}\n{prefix} seed: {}\n{prefix} config: {}\n",
            self.header["seed"], self.header["config"]
        )
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.dir.join(name), bytes)?;
        self.written.retain(|(n, _)| n != name);
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut text = self.header_lines("#");
        text.push_str(&columns.join(","));
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        self.put(name, text.as_bytes())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, data: &T) -> Result<(), CliError> {
        let doc = json!({ "header": self.header, "data": data });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn svg(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let header = self.header_lines("").replace("--", "- -");
        let text = format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!--\n{header}-->\n{body}");
        self.put(name, text.as_bytes())
    }

    /// Writes the MANIFEST; `error` marks the artifact set as incomplete.
    pub fn finish(&self, error: Option<&str>) -> Result<(), CliError> {
        let mut text = self.header_lines("#");
        match error {
            None => text.push_str("status: complete\n"),
            Some(e) => {
                let _ = writeln!(text, "status: incomplete");
                let _ = writeln!(text, "error: {}", e.replace('\n', " "));
            }
        }
        for (name, hash) in &self.written {
            let _ = writeln!(text, "{hash}  {name}");
        }
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(())
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// `<out>/<run-id>/`.
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &RunConfig, command: &str) -> Result<Self> {
        let id = cfg.run_id(command);
        let path = cfg.out.join(&id);
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(RunDir { id, path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes `metadata.json`: the effective config plus command-specific extras.
    pub fn write_metadata(&self, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
        let mut meta = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "run_id": self.id,
            "config": cfg,
        });
        if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
            m.extend(e);
        }
        write_json(&self.file("metadata.json"), &meta)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// One JSON object per line, flushed as it goes.
pub struct JsonLines {
    out: BufWriter<File>,
    path: PathBuf,
}

impl JsonLines {
    pub fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonLines {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn append(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.out, value)?;
        self.out.write_all(b"\n")?;
        self.out
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))
    }
}

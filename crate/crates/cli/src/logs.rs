//! Line-delimited structured event logs, one file per command.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};

pub struct EventLog {
    writer: std::io::BufWriter<std::fs::File>,
}

impl EventLog {
    pub fn open(dir: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create log dir {}", dir.display()))?;
        let path = dir.join(format!("{command}.jsonl"));
        let file = std::fs::File::create(&path)
            .with_context(|| format!("cannot create log {}", path.display()))?;
        Ok(Self {
            writer: std::io::BufWriter::new(file),
        })
    }

    pub fn emit(&mut self, event: serde_json::Value) -> Result<()> {
        serde_json::to_writer(&mut self.writer, &event)?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

//! The `manifest.json` written beside every run's outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use icessm::Result;
use serde::Serialize;

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub outputs: Vec<&'a str>,
    pub created_unix: u64,
}

impl<'a> Manifest<'a> {
    pub fn new(
        command: &'a str,
        seed: Option<u64>,
        config: impl Serialize,
        outputs: &[&'a str],
    ) -> Result<Self> {
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: std::env::args().skip(1).collect(),
            seed,
            config: serde_json::to_value(config)?,
            outputs: outputs.to_vec(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let out = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

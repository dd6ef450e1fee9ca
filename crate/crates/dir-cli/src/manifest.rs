//! Run manifests: every output directory records the command line, the
//! resolved configuration, input file hashes, the code version, and the
//! wall-clock duration. Re-running with identical flags reproduces every
//! output byte except the duration field.

use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::errors::CliError;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub dataset_hash: serde_json::Value,
    pub version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: String, config: serde_json::Value) -> Self {
        RunManifest {
            command,
            config,
            dataset_hash: serde_json::Value::Null,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// FNV-1a 64-bit hash of a file, as fixed-width hex.
pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(path)?;
    let mut buf = [0u8; 64 * 1024];
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        for &b in &buf[..n] {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    Ok(format!("{h:016x}"))
}

/// Hashes the three split files of a dataset directory.
pub fn dataset_hashes(data_dir: &Path) -> Result<serde_json::Value, CliError> {
    let mut map = serde_json::Map::new();
    for split in ["train", "val", "test"] {
        let path = data_dir.join(format!("{split}.jsonl"));
        if path.exists() {
            map.insert(split.to_string(), serde_json::json!(file_hash(&path)?));
        }
    }
    Ok(serde_json::Value::Object(map))
}

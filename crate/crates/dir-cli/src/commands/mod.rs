pub mod eval;
pub mod export;
pub mod generate;
pub mod sweep;
pub mod train;

use std::path::Path;

use dir_core::graph::{load_jsonl, Dataset};

use crate::errors::CliError;

/// Loads the three split files of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let mut graphs = Vec::new();
    for split in ["train", "val", "test"] {
        let path = dir.join(format!("{split}.jsonl"));
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "dataset file {} does not exist",
                path.display()
            )));
        }
        graphs.extend(load_jsonl(&path)?);
    }
    Ok(Dataset::new(graphs))
}

/// The bias label recorded by `generate`, used in CSV file names; "na" when
/// the dataset directory carries no manifest.
pub fn bias_label(data_dir: &Path) -> String {
    let path = data_dir.join("manifest.json");
    let Ok(text) = std::fs::read_to_string(path) else {
        return "na".to_string();
    };
    let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) else {
        return "na".to_string();
    };
    match &v["config"]["bias"] {
        serde_json::Value::Number(n) => n.to_string(),
        _ => "na".to_string(),
    }
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pipehess::pipeline::PipelineSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Version of the vector file layout.
pub const VECTOR_VERSION: u32 = 1;

/// `{"version": 1, "values": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFile {
    pub version: u32,
    pub values: Vec<f64>,
}

impl VectorFile {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            version: VECTOR_VERSION,
            values,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let file: VectorFile = serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if file.version != VECTOR_VERSION {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            message: format!("unsupported vector version {}", file.version),
        });
    }
    Ok(file.values)
}

pub fn read_spec(path: &Path) -> Result<PipelineSpec, CliError> {
    PipelineSpec::from_json(&read(path)?).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `text` to `out`, or stdout when absent.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| {
                    if text.ends_with('\n') {
                        Ok(())
                    } else {
                        stdout.write_all(b"\n")
                    }
                })
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

/// Serializes rows with a header derived from their fields.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
}

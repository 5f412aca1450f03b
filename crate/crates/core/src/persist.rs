//! Versioned on-disk persistence for built indexes.
//!
//! A bundle holds the lexical and vector indexes built over one catalog.
//! The format is JSON with an explicit `format_version`; loading any other
//! version is an error rather than a guess.

use crate::lexical::LexIndex;
use crate::semantic::VecIndex;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Current index file format version.
pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("cannot access index file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("index file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported index format version {found} (supported: {INDEX_FORMAT_VERSION})")]
    Version { found: u32 },
}

/// Both indexes over one catalog, as persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexBundle {
    pub format_version: u32,
    pub lexical: LexIndex,
    pub vector: VecIndex,
}

impl IndexBundle {
    pub fn new(lexical: LexIndex, vector: VecIndex) -> Self {
        IndexBundle {
            format_version: INDEX_FORMAT_VERSION,
            lexical,
            vector,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PersistError> {
        let io_err = |source| PersistError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io_err)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let file = std::fs::File::open(path).map_err(|source| PersistError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bundle: IndexBundle = serde_json::from_reader(std::io::BufReader::new(file))?;
        if bundle.format_version != INDEX_FORMAT_VERSION {
            return Err(PersistError::Version {
                found: bundle.format_version,
            });
        }
        Ok(bundle)
    }
}

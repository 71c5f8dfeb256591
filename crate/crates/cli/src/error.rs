use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse {
        path: PathBuf,
        message: String,
        byte_offset: Option<usize>,
    },
    #[error("{path}: invalid feeder")]
    Network { path: PathBuf, diagnostics: Vec<String> },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Compute(String),
    #[error("{failed} of {total} snapshots failed")]
    Snapshots { failed: usize, total: usize },
}

#[derive(Serialize)]
struct Payload<'a> {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    byte_offset: Option<usize>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    diagnostics: &'a [String],
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Network { .. } => "network",
            CliError::Input(_) => "input",
            CliError::Compute(_) => "compute",
            CliError::Snapshots { .. } => "snapshots",
        }
    }

    /// Single-line JSON object for standard error.
    pub fn to_json(&self) -> String {
        let (path, byte_offset, diagnostics): (_, _, &[String]) = match self {
            CliError::Io { path, .. } => (Some(path.as_path()), None, &[]),
            CliError::Parse { path, byte_offset, .. } => (Some(path.as_path()), *byte_offset, &[]),
            CliError::Network { path, diagnostics } => (Some(path.as_path()), None, diagnostics),
            _ => (None, None, &[]),
        };
        let payload = Payload {
            kind: self.kind(),
            message: self.to_string(),
            path,
            byte_offset,
            diagnostics,
        };
        serde_json::json!({ "error": payload }).to_string()
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, text: &str, e: &serde_json::Error) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
            byte_offset: byte_offset(text, e.line(), e.column()),
        }
    }
}

/// Byte offset of a 1-based line and column, clamped to the text length.
pub fn byte_offset(text: &str, line: usize, column: usize) -> Option<usize> {
    if line == 0 {
        return None;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    Some((start + column.saturating_sub(1)).min(text.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        let text = "{\n  \"a\": 1,\n  x\n}";
        assert_eq!(byte_offset(text, 1, 1), Some(0));
        assert_eq!(byte_offset(text, 3, 3), Some(14));
        assert_eq!(&text[14..15], "x");
        assert_eq!(byte_offset(text, 0, 0), None);
    }

    #[test]
    fn serde_json_error_points_at_the_bad_byte() {
        let text = "{\"a\": [1, 2,, 3]}";
        let e = serde_json::from_str::<serde_json::Value>(text).unwrap_err();
        let off = byte_offset(text, e.line(), e.column()).unwrap();
        assert_eq!(off, 12);
    }
}

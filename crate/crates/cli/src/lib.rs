//! Command implementations behind the `ichain` binary. Every command is a
//! function of the run config and the files already in the output
//! directory.

pub mod config;
pub mod eval;
pub mod generate;
pub mod layout;
pub mod report;
pub mod tools;
pub mod train;

use ichain::Error;

pub use config::RunConfig;

/// Process exit code for an error: 1 for validation, 3 for divergence,
/// 2 for anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownToken { .. } => 1,
        Error::Divergence { .. } => 3,
        _ => 2,
    }
}

pub(crate) fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

pub(crate) fn io_error(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one JSON document per line.
pub(crate) fn write_jsonl<T: serde::Serialize>(path: &std::path::Path, rows: &[T]) -> ichain::Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    layout::write_file(path, text.as_bytes())
}

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};
use voicefilter::error::ErrorKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] voicefilter::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Numerical => 3,
                ErrorKind::Data | ErrorKind::Io => 2,
            },
        }
    }
}

/// Result of one subcommand: JSON payload plus human-readable text.
#[derive(Debug)]
pub struct Output {
    pub command: &'static str,
    pub seed: u64,
    pub result: Value,
    pub text: String,
    pub exit_code: u8,
}

impl Output {
    pub fn new(result: impl Serialize, text: impl Into<String>) -> Result<Self, CliError> {
        Ok(Output {
            command: "",
            seed: 0,
            result: serde_json::to_value(result).map_err(voicefilter::Error::from)?,
            text: text.into(),
            exit_code: 0,
        })
    }

    pub fn envelope(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "seed": self.seed,
            "result": self.result,
        })
    }

    /// Write to stdout; a closed pipe is not an error.
    pub fn print(&self, json: bool) {
        let mut body = if json {
            serde_json::to_string_pretty(&self.envelope()).expect("JSON value")
        } else {
            self.text.clone()
        };
        if !body.ends_with('\n') {
            body.push('\n');
        }
        let _ = std::io::stdout().lock().write_all(body.as_bytes());
    }
}

use serde::Serialize;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Error reported on stderr as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            kind: "runtime",
            message: message.into(),
        }
    }

    /// Errors while loading a config or spec: I/O stays I/O, anything else is a bad config.
    pub fn from_config(e: refine3d::Error) -> Self {
        match e {
            refine3d::Error::Io { .. } => Self::io(e.to_string()),
            other => Self::config(other.to_string()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"code\":{},\"kind\":\"{}\"}}", self.code, self.kind))
    }
}

impl From<refine3d::Error> for CliError {
    fn from(e: refine3d::Error) -> Self {
        match e {
            refine3d::Error::Io { .. } => Self::io(e.to_string()),
            refine3d::Error::Config(_) => Self::config(e.to_string()),
            refine3d::Error::Json(_) | refine3d::Error::Format(_) => Self::io(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}

use serde::Serialize;

use rprs_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Config,
    Data,
    Internal,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Internal => 4,
        }
    }
}

/// A command failure, printed to stderr as one JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: Kind,
    pub code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            code: kind.exit_code(),
            message: message.into(),
            violations: Vec::new(),
        }
    }

    pub fn config(violations: Vec<String>) -> Self {
        Failure {
            message: format!("{} configuration problem(s)", violations.len()),
            violations,
            ..Failure::new(Kind::Config, "")
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match e {
            Error::InvalidParam(_) => Kind::Config,
            Error::LengthMismatch { .. } => Kind::Internal,
            _ => Kind::Data,
        };
        Failure::new(kind, e.to_string())
    }
}

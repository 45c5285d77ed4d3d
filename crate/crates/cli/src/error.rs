use serde::Serialize;

/// Machine-readable record of a numerical failure.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub command: String,
    pub J: Option<f64>,
    pub channel: Option<usize>,
    pub message: String,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or output location.
    Usage(String),
    Numerical(FailureRecord),
    /// A cache entry that does not match its manifest.
    Cache(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Cache(_) => 3,
        }
    }

    pub fn numerical(command: &str, j: Option<f64>, channel: Option<usize>, e: impl std::fmt::Display) -> Self {
        CliError::Numerical(FailureRecord { command: command.into(), J: j, channel, message: e.to_string() })
    }

    /// One-line JSON object describing the error.
    pub fn to_json(&self) -> String {
        let value = match self {
            CliError::Usage(m) => serde_json::json!({ "kind": "usage", "exit": 1, "message": m }),
            CliError::Numerical(r) => serde_json::json!({ "kind": "numerical", "exit": 2, "failure": r }),
            CliError::Cache(m) => serde_json::json!({ "kind": "cache", "exit": 3, "message": m }),
        };
        value.to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Numerical(r) => {
                write!(f, "{} failed", r.command)?;
                if let Some(j) = r.J {
                    write!(f, " at J = {j}")?;
                }
                if let Some(c) = r.channel {
                    write!(f, " on channel {c}")?;
                }
                write!(f, ": {}", r.message)
            }
            CliError::Cache(m) => write!(f, "cache corrupted: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("i/o: {e}"))
    }
}

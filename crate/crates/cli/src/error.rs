use std::fmt;

/// Failure of a CLI stage, rendered as one `key=value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: &'static str,
    pub stage: &'static str,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            stage: "cli",
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new("input", message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    pub fn missing(path: &std::path::Path, producer: &str) -> Self {
        Self::new(
            "missing-prerequisite",
            format!("{} not found; run `{producer}` first", path.display()),
        )
    }

    pub fn at(mut self, stage: &'static str) -> Self {
        if self.stage == "cli" {
            self.stage = stage;
        }
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "error stage={} kind={} message=\"",
            self.stage, self.kind
        )?;
        for c in self.message.chars() {
            match c {
                '"' => f.write_str("\\\"")?,
                '\\' => f.write_str("\\\\")?,
                '\n' => f.write_str("\\n")?,
                '\r' => f.write_str("\\r")?,
                c => write!(f, "{c}")?,
            }
        }
        f.write_str("\"")
    }
}

impl std::error::Error for CliError {}

impl From<vids_core::Error> for CliError {
    fn from(err: vids_core::Error) -> Self {
        use vids_core::Error as E;
        let kind = match &err {
            E::Dimension { .. } | E::Input(_) => "input",
            E::Config(_) => "config",
            E::NonFinite { .. } | E::EmptyCluster { .. } => "numeric",
            E::SupportViolation { .. } | E::Irreducible | E::Domain(_) => "domain",
        };
        CliError::new(kind, err.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::new("input", err.to_string())
    }
}

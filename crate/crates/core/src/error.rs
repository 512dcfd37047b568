use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {stage} at iteration {iteration}: {detail}")]
    NonFinite {
        stage: &'static str,
        iteration: usize,
        detail: String,
    },
    #[error("support violation: bin {bin} has positive mass in q but zero mass in p")]
    SupportViolation { bin: usize },
    #[error("irreducible: target distribution has no mass inside the support of p")]
    Irreducible,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("k-means produced an empty cluster after {attempts} reseeds")]
    EmptyCluster { attempts: usize },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}

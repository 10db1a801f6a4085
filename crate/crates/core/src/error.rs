use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A non-finite coordinate appeared. `iteration` is the 1-based meta
    /// iteration, `step` the 1-based local step inside it.
    #[error("diverged: non-finite weights{}", divergence_site(*iteration, *learner, *step))]
    Divergence {
        iteration: Option<usize>,
        learner: Option<usize>,
        step: Option<usize>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn divergence_site(iteration: Option<usize>, learner: Option<usize>, step: Option<usize>) -> String {
    let parts: Vec<String> = [("meta iteration", iteration), ("learner", learner), ("local step", step)]
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| format!("{name} {v}")))
        .collect();
    if parts.is_empty() {
        String::new()
    } else {
        format!(" at {}", parts.join(", "))
    }
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn parse(line: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Parse { .. } | Error::Io(_) => 1,
            Error::Infeasible(_) => 2,
            Error::Divergence { .. } => 3,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::argument(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}

use std::fmt;
use std::path::Path;

/// Exit code 2: the invocation itself is wrong.
pub const EXIT_USAGE: i32 = 2;
/// Exit code 1: the invocation was valid but the run failed.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// `kind` is a short machine-readable tag (`io`, `corpus`, `train`, ...).
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    pub fn runtime(kind: &'static str, message: impl fmt::Display) -> Self {
        CliError::Runtime {
            kind,
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::runtime("io", format!("{}: {e}", path.display()))
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime { message: m, .. } => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime { kind, .. } => kind,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }

    /// One line on stderr: `offeval: error[<kind>]: <message>`.
    pub fn render(&self) -> String {
        let flat: String = self
            .message()
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!("offeval: error[{}]: {}", self.kind(), flat)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

macro_rules! runtime_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::runtime($kind, e)
            }
        })*
    };
}

runtime_from! {
    offeval::corpus::CorpusError => "corpus",
    offeval::tokenizer::TokenizerError => "tokenizer",
    offeval::encoder::EncoderError => "encoder",
    offeval::encoder::CheckpointError => "checkpoint",
    offeval::training::TrainError => "train",
    offeval::distillation::DistillError => "distill",
    offeval::ensemble::EnsembleError => "ensemble",
    offeval::evaluation::EvalError => "eval",
    serde_json::Error => "json",
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_rendering() {
        let e = CliError::runtime("io", "a\nb");
        assert_eq!(e.render(), "offeval: error[io]: a b");
        assert_eq!(e.exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}

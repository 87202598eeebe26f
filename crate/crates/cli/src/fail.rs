use sgformer::training::TrainingError;

pub const USAGE: u8 = 1;
pub const VALIDATION: u8 = 2;
pub const RUNTIME: u8 = 3;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: VALIDATION,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl From<TrainingError> for Failure {
    fn from(e: TrainingError) -> Self {
        let code = if e.is_validation() { VALIDATION } else { RUNTIME };
        Failure { code, error: e.into() }
    }
}

pub trait Classify<T> {
    /// Bad input or settings: exit code 2.
    fn invalid(self) -> Result<T, Failure>;
    /// Failure while running: exit code 3.
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: VALIDATION,
            error: e.into(),
        })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: RUNTIME,
            error: e.into(),
        })
    }
}

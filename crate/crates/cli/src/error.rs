use std::fmt;

use satdev::census::CensusError;
use satdev::econ::EconError;
use satdev::nn::NnError;
use satdev::pipeline::PipelineError;
use satdev::spatial::SpatialError;
use satdev::transfer::TransferError;

/// A failure reported as `error[class]: message` on one line.
#[derive(Debug)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: Vec<&str> = self.message.split_whitespace().collect();
        write!(f, "error[{}]: {}", self.class, flat.join(" "))
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        let class = match e {
            NnError::NonFinite { .. } => "numeric",
            NnError::Format(_) => "format",
            NnError::Io(_) => "io",
            _ => "input",
        };
        Self::new(class, e.to_string())
    }
}

impl From<CensusError> for CliError {
    fn from(e: CensusError) -> Self {
        let class = match e {
            CensusError::Degenerate { .. } | CensusError::Singular => "numeric",
            CensusError::Format(_) | CensusError::Csv(_) => "format",
            CensusError::Io(_) => "io",
            _ => "input",
        };
        Self::new(class, e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Nn(e) => e.into(),
            PipelineError::Census(e) => e.into(),
            e => {
                let class = match e {
                    PipelineError::Input(_) => "input",
                    PipelineError::Image(_) | PipelineError::Csv(_) | PipelineError::Json(_) => "format",
                    PipelineError::Io(_) => "io",
                    _ => "numeric",
                };
                Self::new(class, e.to_string())
            }
        }
    }
}

impl From<TransferError> for CliError {
    fn from(e: TransferError) -> Self {
        match e {
            TransferError::Pipeline(e) => e.into(),
            TransferError::Nn(e) => e.into(),
            TransferError::Csv(e) => Self::new("format", e.to_string()),
            e => Self::new("input", e.to_string()),
        }
    }
}

impl From<SpatialError> for CliError {
    fn from(e: SpatialError) -> Self {
        match e {
            SpatialError::Pipeline(e) => e.into(),
            SpatialError::Io { .. } => Self::new("io", e.to_string()),
            SpatialError::Input(_) => Self::new("input", e.to_string()),
            e => Self::new("format", e.to_string()),
        }
    }
}

impl From<EconError> for CliError {
    fn from(e: EconError) -> Self {
        let class = match e {
            EconError::RankDeficient { .. } | EconError::Degenerate { .. } => "numeric",
            EconError::Csv(_) => "format",
            EconError::Io(_) => "io",
            EconError::Input(_) => "input",
        };
        Self::new(class, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new("format", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("format", e.to_string())
    }
}

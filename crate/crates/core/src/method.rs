use std::fmt;
use std::str::FromStr;

/// The unlearning procedures and baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    OutputPerturbation,
    GradientClipping,
    ModelClipping,
    Retrain,
    DpSgdGroup,
    FinetuneOnly,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::OutputPerturbation,
        Method::GradientClipping,
        Method::ModelClipping,
        Method::Retrain,
        Method::DpSgdGroup,
        Method::FinetuneOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::OutputPerturbation => "output_perturbation",
            Method::GradientClipping => "gradient_clipping",
            Method::ModelClipping => "model_clipping",
            Method::Retrain => "retrain",
            Method::DpSgdGroup => "dp_sgd_group",
            Method::FinetuneOnly => "finetune_only",
        }
    }

    /// Whether the method injects Gaussian noise in its unlearning phase.
    pub fn is_noisy(&self) -> bool {
        matches!(
            self,
            Method::OutputPerturbation
                | Method::GradientClipping
                | Method::ModelClipping
                | Method::DpSgdGroup
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownMethod(pub String);

impl fmt::Display for UnknownMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown method `{}`", self.0)
    }
}

impl std::error::Error for UnknownMethod {}

impl FromStr for Method {
    type Err = UnknownMethod;

    /// Accepts both `snake_case` and `kebab-case` spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

//! Break-even arithmetic: when does asking for shorter answers and rebuilding
//! them locally cost less than generating full answers?

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{read_pair_rows, MetricError};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("price `{name}` must be non-negative and finite, got {value}")]
    InvalidPrice { name: &'static str, value: f64 },
    #[error("usage `{name}` must be non-negative and finite, got {value}")]
    InvalidUsage { name: &'static str, value: f64 },
    #[error("generation output price must be positive to compute a minimum gain")]
    ZeroOutputPrice,
    #[error("words-to-tokens factor must be positive, got {0}")]
    InvalidFactor(f64),
    #[error("results file has no pair rows")]
    NoPairs,
    #[error("pricing file: {0}")]
    Pricing(String),
    #[error(transparent)]
    Results(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prices per token for the generation model (D) and the reconstruction model (R).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub gen_input_price: f64,
    pub gen_output_price: f64,
    #[serde(default)]
    pub recon_input_price: f64,
    #[serde(default)]
    pub recon_output_price: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, value) in [
            ("gen_input_price", self.gen_input_price),
            ("gen_output_price", self.gen_output_price),
            ("recon_input_price", self.recon_input_price),
            ("recon_output_price", self.recon_output_price),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CostError::InvalidPrice { name, value });
            }
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CostParams {
            gen_input_price: self.gen_input_price * factor,
            gen_output_price: self.gen_output_price * factor,
            recon_input_price: self.recon_input_price * factor,
            recon_output_price: self.recon_output_price * factor,
        }
    }
}

/// Pricing file contents: the four per-token prices plus a currency label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    #[serde(flatten)]
    pub params: CostParams,
    #[serde(default = "default_currency")]
    pub currency: String,
}

fn default_currency() -> String {
    "USD".to_string()
}

impl Pricing {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let p: Pricing = serde_json::from_str(text).map_err(|e| CostError::Pricing(e.to_string()))?;
        p.params.validate()?;
        Ok(p)
    }
}

/// Token counts for one query. `extra_input` is the length of the added
/// instruction, `gained_output` the tokens the generator no longer emits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageProfile {
    pub extra_input: f64,
    pub gained_output: f64,
    pub recon_input: f64,
    pub recon_output: f64,
}

impl UsageProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, value) in [
            ("extra_input", self.extra_input),
            ("gained_output", self.gained_output),
            ("recon_input", self.recon_input),
            ("recon_output", self.recon_output),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CostError::InvalidUsage { name, value });
            }
        }
        Ok(())
    }

    /// Converts word counts to billing tokens.
    pub fn scaled(&self, words_to_tokens: f64) -> Result<Self, CostError> {
        if !(words_to_tokens.is_finite() && words_to_tokens > 0.0) {
            return Err(CostError::InvalidFactor(words_to_tokens));
        }
        Ok(UsageProfile {
            extra_input: self.extra_input * words_to_tokens,
            gained_output: self.gained_output * words_to_tokens,
            recon_input: self.recon_input * words_to_tokens,
            recon_output: self.recon_output * words_to_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakEven {
    /// Money saved on generation output.
    pub lhs: f64,
    /// Money spent on the longer prompt and on reconstruction.
    pub rhs: f64,
    pub saves: bool,
    pub margin: f64,
}

fn overhead(params: &CostParams, extra_input: f64, recon_input: f64, recon_output: f64) -> f64 {
    params.gen_input_price * extra_input
        + params.recon_input_price * recon_input
        + params.recon_output_price * recon_output
}

/// Evaluates `C_out_D * G >= C_in_D * I + C_in_R * I_R + C_out_R * O_R`.
pub fn break_even(params: &CostParams, profile: &UsageProfile) -> BreakEven {
    let lhs = params.gen_output_price * profile.gained_output;
    let rhs = overhead(params, profile.extra_input, profile.recon_input, profile.recon_output);
    BreakEven {
        lhs,
        rhs,
        saves: lhs >= rhs,
        margin: lhs - rhs,
    }
}

/// Smallest gained output that pays for the overhead.
pub fn min_gain(
    params: &CostParams,
    extra_input: f64,
    recon_input: f64,
    recon_output: f64,
) -> Result<f64, CostError> {
    if params.gen_output_price <= 0.0 {
        return Err(CostError::ZeroOutputPrice);
    }
    Ok(overhead(params, extra_input, recon_input, recon_output) / params.gen_output_price)
}

/// Averages a per-pair results file into a usage profile: reconstruction reads
/// the distilled text and writes the original length, and the gain is the
/// difference. `extra_input` is left for the caller.
pub fn profile_from_results<R: Read>(r: R, extra_input: f64) -> Result<UsageProfile, CostError> {
    let rows = read_pair_rows(r)?;
    if rows.is_empty() {
        return Err(CostError::NoPairs);
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&crate::metrics::MetricReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let profile = UsageProfile {
        extra_input,
        gained_output: mean(&|m| m.original_tokens as f64 - m.distilled_tokens as f64),
        recon_input: mean(&|m| m.distilled_tokens as f64),
        recon_output: mean(&|m| m.original_tokens as f64),
    };
    profile.validate()?;
    Ok(profile)
}

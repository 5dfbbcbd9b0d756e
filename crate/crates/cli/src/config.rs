//! TOML run configuration: schema, defaults, and validation.
//!
//! Unknown keys are rejected, and every invariant violation is reported
//! with the key path that caused it, before any computation starts.

use std::path::{Path, PathBuf};

use lambda_mutual_core::economy::{DeviationScaling, IncomeDistribution, MechanismConfig};
use lambda_mutual_core::utility::UtilitySpec;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    utility: UtilitySection,
    economy: EconomySection,
    mechanism: MechanismSection,
    #[serde(default)]
    rng: RngSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtilitySection {
    family: String,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EconomySection {
    support: Vec<f64>,
    probs: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MechanismSection {
    beta: f64,
    lambda0: f64,
    deviation_scaling: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngSection {
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    panel: Option<PathBuf>,
    stats: Option<PathBuf>,
    check_ic: Option<PathBuf>,
    baseline: Option<PathBuf>,
}

/// Default file output paths, used when the matching flag is absent.
#[derive(Debug, Default, Clone)]
pub struct OutputPaths {
    pub panel: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub check_ic: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub utility: UtilitySpec<f64>,
    pub economy: IncomeDistribution<f64>,
    pub mechanism: MechanismConfig<f64>,
    pub seed: u64,
    pub output: OutputPaths,
}

fn invalid(path: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{path}: {reason}"))
}

/// Loads and validates a TOML run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;

    let utility = match file.utility.family.as_str() {
        "log" => {
            if file.utility.gamma.is_some() {
                return Err(invalid(
                    "utility.gamma",
                    "only valid with family = \"crra\"",
                ));
            }
            UtilitySpec::log()
        }
        "crra" => {
            let gamma = file.utility.gamma.ok_or_else(|| {
                invalid("utility.gamma", "required when family = \"crra\"")
            })?;
            UtilitySpec::crra(gamma).map_err(|e| invalid("utility.gamma", e))?
        }
        "cara" => {
            return Err(invalid(
                "utility.family",
                "\"cara\" is not supported: its marginal utility is bounded and does not \
                 map the positive reals onto the positive reals, so the weight recursion \
                 has no exact inverse",
            ));
        }
        other => {
            return Err(invalid(
                "utility.family",
                format!("unknown family \"{other}\"; expected \"log\" or \"crra\""),
            ));
        }
    };

    // Validate the probability block under its own key path before handing
    // both arrays to the distribution.
    if let Some(probs) = &file.economy.probs {
        if probs.len() != file.economy.support.len() {
            return Err(invalid(
                "economy.probs",
                format!(
                    "has {} entries but economy.support has {}",
                    probs.len(),
                    file.economy.support.len()
                ),
            ));
        }
        if probs.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(invalid(
                "economy.probs",
                "entries must be finite and strictly positive",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "economy.probs",
                format!("must sum to 1, got {total}"),
            ));
        }
    }
    let economy = match &file.economy.probs {
        Some(probs) => IncomeDistribution::new(file.economy.support, probs.clone()),
        None => IncomeDistribution::uniform(file.economy.support),
    }
    .map_err(|e| invalid("economy.support", e))?;

    if !(file.mechanism.beta.is_finite()
        && file.mechanism.beta > 0.0
        && file.mechanism.beta < 1.0)
    {
        return Err(invalid(
            "mechanism.beta",
            format!("must lie strictly inside (0, 1), got {}", file.mechanism.beta),
        ));
    }
    if !(file.mechanism.lambda0.is_finite() && file.mechanism.lambda0 > 0.0) {
        return Err(invalid(
            "mechanism.lambda0",
            format!("must be finite and positive, got {}", file.mechanism.lambda0),
        ));
    }
    let scaling = match file.mechanism.deviation_scaling.as_deref() {
        None | Some("definition") => DeviationScaling::Definition,
        Some("prop1") => DeviationScaling::Prop1,
        Some(other) => {
            return Err(invalid(
                "mechanism.deviation_scaling",
                format!("unknown value \"{other}\"; expected \"definition\" or \"prop1\""),
            ));
        }
    };
    let mechanism =
        MechanismConfig::new(file.mechanism.beta, file.mechanism.lambda0, scaling)
            .map_err(|e| invalid("mechanism", e))?;

    Ok(RunConfig {
        utility,
        economy,
        mechanism,
        seed: file.rng.seed.unwrap_or(0),
        output: OutputPaths {
            panel: file.output.panel,
            stats: file.output.stats,
            check_ic: file.output.check_ic,
            baseline: file.output.baseline,
        },
    })
}

/// Parses a deviation-scaling CLI override.
pub fn parse_convention(text: &str) -> Result<DeviationScaling, CliError> {
    match text {
        "definition" => Ok(DeviationScaling::Definition),
        "prop1" => Ok(DeviationScaling::Prop1),
        other => Err(CliError::config(format!(
            "--convention: unknown value \"{other}\"; expected \"definition\" or \"prop1\""
        ))),
    }
}

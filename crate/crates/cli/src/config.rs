//! TOML run configuration.

use std::path::Path;

use pqlearn::estimators::SolverOptions;
use pqlearn::inference::ZeroSetSign;
use pqlearn::penalty::{PenaltyFamily, PenaltySpec, DEFAULT_ALPHA, DEFAULT_SCAD_A};
use pqlearn::pipeline::{LambdaChoice, PipelineOptions};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub stages: Vec<StageSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Word(LambdaWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaWord {
    Cv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub family: PenaltyFamily,
    pub lambda: LambdaSetting,
    pub alpha: f64,
    pub scad_a: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection {
            family: PenaltyFamily::AdaptiveLasso,
            lambda: LambdaSetting::Word(LambdaWord::Cv),
            alpha: DEFAULT_ALPHA,
            scad_a: DEFAULT_SCAD_A,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub lqa_steps: usize,
    pub zero_tolerance: f64,
    pub cv_folds: usize,
    pub cv_grid_size: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let LambdaChoice::CrossValidated { folds, grid_size } = LambdaChoice::default() else {
            unreachable!("cross-validation is the default")
        };
        SolverSection {
            lqa_steps: solver.lqa_steps,
            zero_tolerance: solver.zero_tolerance,
            cv_folds: folds,
            cv_grid_size: grid_size,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub zero_sign: ZeroSetSign,
    pub sigma_correction: bool,
    pub level: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            zero_sign: ZeroSetSign::Zeroed,
            sigma_correction: false,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Column holding subject identifiers; row numbers are used without it.
    pub id: Option<String>,
}

/// Column terms for one stage. A term is a column name, `"1"` for the
/// intercept, or a product such as `"O1*A1"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub main: Vec<String>,
    pub interaction: Vec<String>,
    pub action: String,
    pub reward: String,
    /// Overrides the penalty level for this stage.
    pub lambda: Option<LambdaSetting>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.penalty_spec().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.solver_options().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.solver.cv_folds < 2 {
            return Err(CliError::Config("solver.cv_folds must be at least 2".into()));
        }
        if self.solver.cv_grid_size < 2 {
            return Err(CliError::Config("solver.cv_grid_size must be at least 2".into()));
        }
        if !(self.inference.level > 0.0 && self.inference.level < 1.0) {
            return Err(CliError::Config(format!(
                "inference.level must lie in (0, 1), got {}",
                self.inference.level
            )));
        }
        let lambdas = std::iter::once(Some(self.penalty.lambda)).chain(self.stages.iter().map(|s| s.lambda));
        for l in lambdas.flatten() {
            if let LambdaSetting::Value(v) = l {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("lambda must be a nonnegative number or \"cv\", got {v}")));
                }
            }
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.interaction.is_empty() {
                return Err(CliError::Config(format!("stages[{k}].interaction is empty")));
            }
        }
        Ok(())
    }

    pub fn penalty_spec(&self) -> PenaltySpec {
        let lambda = match self.penalty.lambda {
            LambdaSetting::Value(v) => v,
            LambdaSetting::Word(_) => 0.0,
        };
        match self.penalty.family {
            PenaltyFamily::AdaptiveLasso => PenaltySpec::adaptive_lasso(lambda, self.penalty.alpha),
            PenaltyFamily::Scad => PenaltySpec::scad(lambda, self.penalty.scad_a),
            PenaltyFamily::None => PenaltySpec::none(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            lqa_steps: self.solver.lqa_steps,
            zero_tolerance: self.solver.zero_tolerance,
            penalty: self.penalty_spec(),
        }
    }

    pub fn lambda_choice(&self, setting: LambdaSetting) -> LambdaChoice {
        match setting {
            LambdaSetting::Value(v) => LambdaChoice::Fixed(v),
            LambdaSetting::Word(LambdaWord::Cv) => LambdaChoice::CrossValidated {
                folds: self.solver.cv_folds,
                grid_size: self.solver.cv_grid_size,
            },
        }
    }

    pub fn default_lambda(&self) -> LambdaChoice {
        self.lambda_choice(self.penalty.lambda)
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            solver: self.solver_options(),
            zero_sign: self.inference.zero_sign,
            sigma_correction: self.inference.sigma_correction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        let c: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn empty_config_uses_defaults() {
        let c = parse("").unwrap();
        assert_eq!(c.default_lambda(), LambdaChoice::default());
        assert_eq!(c.solver_options(), SolverOptions::default());
    }

    #[test]
    fn fixed_and_cross_validated_lambda() {
        let c = parse("[penalty]\nfamily = \"scad\"\nlambda = 0.5\nalpha = 1\nscad_a = 3.7\n").unwrap();
        assert_eq!(c.default_lambda(), LambdaChoice::Fixed(0.5));
        assert_eq!(c.penalty_spec().family, PenaltyFamily::Scad);
        let c = parse("[penalty]\nfamily = \"none\"\n").unwrap();
        assert!(matches!(c.default_lambda(), LambdaChoice::CrossValidated { .. }));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(parse("[penalty]\nfamily = \"lasso\"\nlambda = 1\nalpha = 1\nscad_a = 3.7\n").is_err());
        assert!(parse("[penalty]\nfamily = \"scad\"\nlambda = -1\nalpha = 1\nscad_a = 3.7\n").is_err());
        assert!(parse("[penalty]\nfamily = \"scad\"\nlambda = \"auto\"\nalpha = 1\nscad_a = 3.7\n").is_err());
        assert!(parse("[solver]\nzero_tolerance = 0\n").is_err());
        assert!(parse("[inference]\nlevel = 1.5\n").is_err());
        assert!(parse("[solver]\nunknown = 1\n").is_err());
    }

    #[test]
    fn stage_sections() {
        let c = parse(
            "[[stages]]\nmain = [\"1\", \"O1\"]\ninteraction = [\"1\"]\naction = \"A1\"\nreward = \"R1\"\nlambda = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.stages.len(), 1);
        assert_eq!(c.stages[0].lambda, Some(LambdaSetting::Value(0.2)));
        assert!(parse("[[stages]]\nmain = []\ninteraction = []\naction = \"A\"\nreward = \"R\"\n").is_err());
    }
}

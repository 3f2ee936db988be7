//! The `fit` command: backward-recursive fit of user data and its result
//! document.

use pqlearn::estimators::ols_fit;
use pqlearn::inference::wald_ci;
use pqlearn::model::Action;
use pqlearn::multistage::{backward_fit, stage_designs, MultiStageSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::error::CliResult;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct FitDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub n_subjects: usize,
    pub level: f64,
    pub penalty: pqlearn::penalty::PenaltySpec,
    /// Stage 1 first.
    pub stages: Vec<StageResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageResult {
    pub stage: usize,
    pub penalized: bool,
    pub lambda: f64,
    pub residual_variance: f64,
    pub zero_set_size: usize,
    pub coefficients: Vec<Coefficient>,
    pub subjects: Vec<SubjectResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub block: &'static str,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubjectResult {
    pub id: String,
    /// `|ψ̂ᵀS_i2|` from least squares on the same response.
    pub abs_effect_initial: f64,
    /// After the penalized solve, before the zero tolerance is applied.
    pub abs_effect_penalized: f64,
    pub abs_effect_selected: f64,
    pub selected_zero: bool,
    /// Recommended action, `sgn(ψ̂ᵀS_i2)` with ties to −1.
    pub decision: i8,
}

pub fn run(data: &Dataset, config: &RunConfig) -> CliResult<FitDocument> {
    let u = config.stages.len();
    let mut spec = MultiStageSpec::uniform(u, config.solver_options());
    spec.lambdas = config
        .stages
        .iter()
        .map(|s| config.lambda_choice(s.lambda.unwrap_or(config.penalty.lambda)))
        .collect();
    spec.zero_sign = config.inference.zero_sign;
    spec.sigma_correction = config.inference.sigma_correction;

    let fits = backward_fit(&data.trajectories, &spec)?;
    let (designs, rewards) = stage_designs(&data.trajectories, u)?;
    let level = config.inference.level;

    let mut stages = Vec::with_capacity(u);
    for t in 1..=u {
        let fit = &fits[u - t];
        let design = &designs[t - 1];
        let response = if t == u {
            rewards[u - 1].clone()
        } else {
            fits[u - t - 1]
                .pseudo_outcomes
                .clone()
                .expect("later stages carry pseudo-outcomes")
        };
        let initial = ols_fit(design, &response)?;
        let se = fit.std_errors().unwrap_or_default();
        let theta = fit.theta();
        let p_main = design.p_main();
        let coefficients = theta
            .iter()
            .enumerate()
            .map(|(k, &estimate)| {
                let (block, term) = if k < p_main {
                    ("main", data.main_names[t - 1][k].clone())
                } else {
                    ("interaction", data.interaction_names[t - 1][k - p_main].clone())
                };
                let ci = wald_ci(estimate, se[k], level);
                Coefficient {
                    name: format!("{}[{term}]", if block == "main" { "beta" } else { "psi" }),
                    block,
                    term,
                    estimate,
                    std_error: se[k],
                    ci_lower: ci.lower,
                    ci_upper: ci.upper,
                }
            })
            .collect();
        let subjects = data
            .trajectories
            .iter()
            .enumerate()
            .map(|(i, traj)| SubjectResult {
                id: traj.subject_id.clone(),
                abs_effect_initial: initial.raw_effects[i].abs(),
                abs_effect_penalized: fit.raw_effects[i].abs(),
                abs_effect_selected: fit.effects[i].abs(),
                selected_zero: fit.is_zero(i),
                decision: Action::from_sign(fit.effects[i]).value() as i8,
            })
            .collect();
        let penalized = t >= 2 || u == 1;
        stages.push(StageResult {
            stage: t,
            penalized,
            lambda: if penalized { fit.penalty.lambda } else { 0.0 },
            residual_variance: fit.residual_variance,
            zero_set_size: fit.zero_set.len(),
            coefficients,
            subjects,
        });
    }
    Ok(FitDocument {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        n_subjects: data.trajectories.len(),
        level,
        penalty: config.penalty_spec(),
        stages,
    })
}

/// Short text summary of a fit for the terminal.
pub fn summary(doc: &FitDocument) -> String {
    let mut out = format!("{} subjects, {} stages\n", doc.n_subjects, doc.stages.len());
    for s in &doc.stages {
        out += &format!(
            "stage {} (lambda {:.4e}, {} zero effects)\n",
            s.stage, s.lambda, s.zero_set_size
        );
        for c in &s.coefficients {
            out += &format!(
                "  {:<24} {:>10.4} {:>9.4}  [{:.4}, {:.4}]\n",
                c.name, c.estimate, c.std_error, c.ci_lower, c.ci_upper
            );
        }
    }
    out
}

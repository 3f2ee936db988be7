//! The two-stage Q-learning pipeline under each estimator: fit the last
//! stage, form pseudo-outcomes, regress stage one on them, and (for the
//! penalized and oracle estimators) attach plug-in covariances.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    hard_threshold_pseudo, hardmax_pseudo, ols_fit, soft_threshold_pseudo, stage1_fit, PqSolver,
    SoftLambda, SolverOptions, StageFit,
};
use crate::inference::{
    cov_stage1, cov_stage1_with_signs, cov_stage2, CovarianceReport, Resample, Stage2Variant, ZeroSetSign,
};
use crate::model::{build_design, DesignMatrix, Trajectory};
use crate::simstudy::{cv_select_lambda, default_lambda_grid};

/// Both stages of a cohort in model form.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageData {
    pub stage1: DesignMatrix,
    pub stage2: DesignMatrix,
    pub rewards1: DVector<f64>,
    pub rewards2: DVector<f64>,
}

impl TwoStageData {
    pub fn from_trajectories(data: &[Trajectory]) -> Result<TwoStageData> {
        for t in data {
            if t.stages.len() != 2 {
                return Err(Error::invalid(format!(
                    "subject {} has {} stages, expected 2",
                    t.subject_id,
                    t.stages.len()
                )));
            }
        }
        let stage = |k: usize| build_design(data.iter().map(|t| (t.subject_id.as_str(), &t.stages[k])));
        let rewards = |k: usize| DVector::from_iterator(data.len(), data.iter().map(|t| t.stages[k].reward));
        Ok(TwoStageData {
            stage1: stage(0)?,
            stage2: stage(1)?,
            rewards1: rewards(0),
            rewards2: rewards(1),
        })
    }

    pub fn n(&self) -> usize {
        self.stage1.n()
    }
}

impl Resample for TwoStageData {
    fn len(&self) -> usize {
        self.n()
    }

    fn resample(&self, idx: &[usize]) -> Self {
        TwoStageData {
            stage1: self.stage1.subset(idx),
            stage2: self.stage2.subset(idx),
            rewards1: self.rewards1.select_rows(idx),
            rewards2: self.rewards2.select_rows(idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    /// k-fold cross-validation over the default log-spaced grid.
    CrossValidated { folds: usize, grid_size: usize },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidated { folds: 5, grid_size: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Knows which subjects have no true treatment effect.
    Oracle { true_psi: DVector<f64> },
    Pq { lambda: LambdaChoice },
    HardMax,
    HardThreshold { alpha: f64 },
    SoftThreshold(SoftLambda),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    /// Penalty family, exponent, and solver settings. The penalty's `lambda`
    /// is replaced by the estimator's [`LambdaChoice`].
    pub solver: SolverOptions,
    pub zero_sign: ZeroSetSign,
    pub sigma_correction: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            solver: SolverOptions::default(),
            zero_sign: ZeroSetSign::Zeroed,
            sigma_correction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageFit {
    pub stage2: StageFit,
    pub stage1: StageFit,
    /// Plug-in covariances; only the oracle and penalized estimators have them.
    pub covariance: Option<CovarianceReport>,
    /// Penalty level used at stage two (0 for unpenalized estimators).
    pub lambda: f64,
}

impl TwoStageFit {
    /// Stage-one treatment coefficients `ψ̂₁`.
    pub fn psi1(&self) -> &DVector<f64> {
        &self.stage1.model.psi
    }

    /// Standard errors of `ψ̂₁`, when available.
    pub fn psi1_std_errors(&self) -> Option<Vec<f64>> {
        let p1 = self.stage1.model.beta.len();
        self.covariance.as_ref().map(|c| c.std_errors1[p1..].to_vec())
    }
}

/// Chooses the stage-two penalty level.
pub fn resolve_lambda(
    design: &DesignMatrix,
    y: &DVector<f64>,
    choice: LambdaChoice,
    solver: &SolverOptions,
) -> Result<f64> {
    match choice {
        LambdaChoice::Fixed(l) => Ok(l),
        LambdaChoice::CrossValidated { folds, grid_size } => {
            let grid = default_lambda_grid(design, y, solver, grid_size)?;
            cv_select_lambda(design, y, &grid, folds, solver)
        }
    }
}

pub fn fit_two_stage(data: &TwoStageData, estimator: &Estimator, opts: &PipelineOptions) -> Result<TwoStageFit> {
    let d2 = &data.stage2;
    let d1 = &data.stage1;
    if d1.n() != d2.n() {
        return Err(Error::Dimension {
            what: "subjects in stage one",
            got: d1.n(),
            expected: d2.n(),
        });
    }
    let y2 = &data.rewards2;
    let r1 = &data.rewards1;

    let (mut fit2, lambda, signs) = match estimator {
        Estimator::Pq { lambda } => {
            let lambda = resolve_lambda(d2, y2, *lambda, &opts.solver)?;
            let solver_opts = SolverOptions {
                penalty: opts.solver.penalty.with_lambda(lambda),
                ..opts.solver
            };
            let fit = PqSolver::new(d2, y2)?.fit(&solver_opts)?;
            (fit, lambda, None)
        }
        Estimator::Oracle { true_psi } => {
            let mut fit = ols_fit(d2, y2)?;
            let truth = d2.effects(true_psi);
            let mut signs = Vec::with_capacity(truth.len());
            fit.zero_set.clear();
            for (i, t) in truth.iter().enumerate() {
                if t.abs() < 1e-12 {
                    fit.effects[i] = 0.0;
                    fit.zero_set.push(i);
                    signs.push(0.0);
                } else {
                    signs.push(t.signum());
                }
            }
            (fit, 0.0, Some(signs))
        }
        _ => (ols_fit(d2, y2)?, 0.0, None),
    };
    fit2.model.stage = 2;

    let pseudo = match estimator {
        Estimator::HardThreshold { alpha } => hard_threshold_pseudo(&fit2, r1, d2, *alpha)?,
        Estimator::SoftThreshold(rule) => soft_threshold_pseudo(&fit2, r1, d2, rule)?,
        _ => hardmax_pseudo(&fit2, r1, d2)?,
    };
    let mut fit1 = stage1_fit(d1, &pseudo)?;
    fit2.pseudo_outcomes = Some(pseudo);

    let covariance = match estimator {
        Estimator::Pq { .. } | Estimator::Oracle { .. } => {
            let correction = opts.sigma_correction.then_some(&fit2.penalty);
            let cov2 = cov_stage2(&fit2, d2, correction)?;
            let cov1 = match &signs {
                Some(s) => cov_stage1_with_signs(&fit1, d1, &cov2, d2, s)?,
                None => cov_stage1(&fit1, d1, &fit2, &cov2, d2, opts.zero_sign)?,
            };
            fit1.covariance = Some(cov1.clone());
            fit2.covariance = Some(cov2.clone());
            let variant = if opts.sigma_correction {
                Stage2Variant::SigmaCorrected
            } else {
                Stage2Variant::LeastSquares
            };
            Some(CovarianceReport::new(cov1, cov2, variant, opts.zero_sign))
        }
        _ => None,
    };

    Ok(TwoStageFit {
        stage2: fit2,
        stage1: fit1,
        covariance,
        lambda,
    })
}

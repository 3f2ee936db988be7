//! Backward-recursive PQ-learning for any number of stages.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{hardmax_pseudo, stage1_fit, PqSolver, SolverOptions, StageFit};
use crate::inference::{cov_stage1, cov_stage2, ZeroSetSign};
use crate::model::{build_design, DesignMatrix, Trajectory};
use crate::pipeline::{resolve_lambda, LambdaChoice};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStageSpec {
    /// Solver settings for stages `2..=U`, indexed by stage − 1. Entry 0 is
    /// unused because stage one is plain least squares.
    pub solvers: Vec<SolverOptions>,
    /// How each penalized stage picks its penalty level; same indexing.
    pub lambdas: Vec<LambdaChoice>,
    pub zero_sign: ZeroSetSign,
    pub sigma_correction: bool,
}

impl MultiStageSpec {
    /// `stages` stages sharing one solver configuration and its fixed
    /// penalty level.
    pub fn uniform(stages: usize, solver: SolverOptions) -> Self {
        MultiStageSpec {
            solvers: vec![solver; stages],
            lambdas: vec![LambdaChoice::Fixed(solver.penalty.lambda); stages],
            zero_sign: ZeroSetSign::Zeroed,
            sigma_correction: false,
        }
    }

    pub fn stages(&self) -> usize {
        self.solvers.len()
    }
}

/// Per-stage designs and rewards of a cohort, stage one first.
pub fn stage_designs(data: &[Trajectory], stages: usize) -> Result<(Vec<DesignMatrix>, Vec<DVector<f64>>)> {
    for t in data {
        if t.stages.len() != stages {
            return Err(Error::invalid(format!(
                "subject {} has {} stages, expected {stages}",
                t.subject_id,
                t.stages.len()
            )));
        }
    }
    let mut designs = Vec::with_capacity(stages);
    let mut rewards = Vec::with_capacity(stages);
    for k in 0..stages {
        designs.push(build_design(data.iter().map(|t| (t.subject_id.as_str(), &t.stages[k]))).map_err(|e| e.at_stage(k + 1))?);
        rewards.push(DVector::from_iterator(data.len(), data.iter().map(|t| t.stages[k].reward)));
    }
    Ok((designs, rewards))
}

/// Fits stage `U` on its rewards, then each earlier stage on the hard-max
/// pseudo-outcome of the stage after it. Stages `≥ 2` are penalized; stage
/// one is least squares. Each stage's covariance is the plug-in form with
/// the following stage's covariance in place of the last-stage one.
///
/// Returned fits run from stage `U` down to stage 1.
pub fn backward_fit(data: &[Trajectory], spec: &MultiStageSpec) -> Result<Vec<StageFit>> {
    let u = spec.stages();
    if u == 0 {
        return Err(Error::invalid("at least one stage is required"));
    }
    if spec.lambdas.len() != u {
        return Err(Error::Dimension {
            what: "per-stage penalty choices",
            got: spec.lambdas.len(),
            expected: u,
        });
    }
    let (designs, rewards) = stage_designs(data, u)?;
    let mut fits: Vec<StageFit> = Vec::with_capacity(u);
    let mut response = rewards[u - 1].clone();
    for t in (1..=u).rev() {
        let design = &designs[t - 1];
        let at = |e: Error| e.at_stage(t);
        let mut fit = if t >= 2 || u == 1 {
            let base = &spec.solvers[t - 1];
            let lambda = resolve_lambda(design, &response, spec.lambdas[t - 1], base).map_err(at)?;
            let opts = SolverOptions {
                penalty: base.penalty.with_lambda(lambda),
                ..*base
            };
            PqSolver::new(design, &response).and_then(|s| s.fit(&opts)).map_err(at)?
        } else {
            stage1_fit(design, &response).map_err(at)?
        };
        fit.model.stage = t;
        let cov = match fits.last() {
            None => {
                let correction = spec.sigma_correction.then_some(&fit.penalty);
                cov_stage2(&fit, design, correction).map_err(at)?
            }
            Some(next) => {
                let cov_next = next.covariance.as_ref().expect("covariance set on every stage");
                cov_stage1(&fit, design, next, cov_next, &designs[t], spec.zero_sign).map_err(at)?
            }
        };
        fit.covariance = Some(cov);
        if t >= 2 {
            let pseudo = hardmax_pseudo(&fit, &rewards[t - 2], design).map_err(at)?;
            fit.pseudo_outcomes = Some(pseudo.clone());
            response = pseudo;
        }
        fits.push(fit);
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Action, StageObservation};
    use crate::penalty::PenaltySpec;
    use crate::pipeline::{fit_two_stage, Estimator, PipelineOptions, TwoStageData};
    use crate::rng::stream_rng;
    use crate::simstudy::{generate, SimSetting};
    use rand::Rng;

    fn three_stage(n: usize, noise: f64, seed: u64) -> Vec<Trajectory> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|i| {
                let stages = (0..3)
                    .map(|_| {
                        let o: f64 = rng.random_range(-1.0..1.0);
                        let a = if rng.random::<bool>() { Action::Plus } else { Action::Minus };
                        StageObservation {
                            s_main: vec![1.0, o],
                            s_interact: vec![1.0, o],
                            action: a,
                            reward: noise * rng.random_range(-1.0..1.0),
                        }
                    })
                    .collect();
                Trajectory {
                    subject_id: i.to_string(),
                    stages,
                }
            })
            .collect()
    }

    #[test]
    fn two_stages_match_the_dedicated_pipeline() {
        let s = SimSetting::standard(6, 300).unwrap();
        let data = generate(&s, &mut stream_rng(31, 0));
        let solver = SolverOptions::with_penalty(PenaltySpec::adaptive_lasso(0.4, 2.0));
        let fits = backward_fit(&data, &MultiStageSpec::uniform(2, solver)).unwrap();
        let two = fit_two_stage(
            &TwoStageData::from_trajectories(&data).unwrap(),
            &Estimator::Pq {
                lambda: LambdaChoice::Fixed(0.4),
            },
            &PipelineOptions {
                solver,
                ..PipelineOptions::default()
            },
        )
        .unwrap();
        assert_eq!(fits[0].theta(), two.stage2.theta());
        assert_eq!(fits[1].theta(), two.stage1.theta());
        assert_eq!(fits[0].zero_set, two.stage2.zero_set);
        assert_eq!(fits[0].pseudo_outcomes, two.stage2.pseudo_outcomes);
        let cov = two.covariance.unwrap();
        assert_eq!(fits[1].covariance.as_ref().unwrap(), &cov.cov1);
        assert_eq!(fits[0].covariance.as_ref().unwrap(), &cov.cov2);
    }

    #[test]
    fn cross_validated_two_stages_match_the_pipeline() {
        let s = SimSetting::standard(3, 200).unwrap();
        let data = generate(&s, &mut stream_rng(32, 0));
        let mut spec = MultiStageSpec::uniform(2, SolverOptions::default());
        spec.lambdas = vec![LambdaChoice::default(); 2];
        let fits = backward_fit(&data, &spec).unwrap();
        let two = fit_two_stage(
            &TwoStageData::from_trajectories(&data).unwrap(),
            &Estimator::Pq {
                lambda: LambdaChoice::default(),
            },
            &PipelineOptions::default(),
        )
        .unwrap();
        assert_eq!(fits[0].penalty.lambda, two.lambda);
        assert_eq!(fits[1].theta(), two.stage1.theta());
    }

    #[test]
    fn single_stage_is_one_penalized_fit() {
        let data = three_stage(80, 1.0, 2);
        let one: Vec<Trajectory> = data
            .iter()
            .map(|t| Trajectory {
                subject_id: t.subject_id.clone(),
                stages: vec![t.stages[0].clone()],
            })
            .collect();
        let solver = SolverOptions::with_penalty(PenaltySpec::adaptive_lasso(0.1, 2.0));
        let fits = backward_fit(&one, &MultiStageSpec::uniform(1, solver)).unwrap();
        assert_eq!(fits.len(), 1);
        assert!(fits[0].pseudo_outcomes.is_none());
        let (d, r) = stage_designs(&one, 1).unwrap();
        let direct = crate::estimators::pq_fit(&d[0], &r[0], &solver).unwrap();
        assert_eq!(fits[0].theta(), direct.theta());
    }

    #[test]
    fn zero_rewards_give_zero_coefficients() {
        let data = three_stage(60, 0.0, 3);
        let fits = backward_fit(&data, &MultiStageSpec::uniform(3, SolverOptions::default())).unwrap();
        assert_eq!(fits.len(), 3);
        for (k, f) in fits.iter().enumerate() {
            assert_eq!(f.model.stage, 3 - k);
            assert!(f.theta().amax() < 1e-12, "{:?}", f.theta());
        }
    }

    #[test]
    fn noisy_three_stage_covariances_are_psd() {
        let data = three_stage(200, 1.0, 4);
        let fits = backward_fit(&data, &MultiStageSpec::uniform(3, SolverOptions::default())).unwrap();
        for f in &fits {
            let c = f.covariance.as_ref().unwrap();
            assert!(crate::asymmetry(c) < 1e-12);
            assert!(crate::min_eigenvalue(c) > -1e-12);
        }
    }

    #[test]
    fn stage_errors_carry_the_stage() {
        let mut data = three_stage(3, 1.0, 5);
        data.truncate(2);
        let err = backward_fit(&data, &MultiStageSpec::uniform(3, SolverOptions::default())).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: 3, .. }), "{err:?}");
        let short = &three_stage(10, 1.0, 6)[..];
        assert!(backward_fit(short, &MultiStageSpec::uniform(2, SolverOptions::default())).is_err());
    }

    #[test]
    fn pseudo_outcome_grows_with_effect_size() {
        let data = three_stage(100, 1.0, 7);
        let fits = backward_fit(&data, &MultiStageSpec::uniform(2, SolverOptions::default()));
        assert!(fits.is_err());
        let spec = MultiStageSpec::uniform(3, SolverOptions::default());
        let fits = backward_fit(&data, &spec).unwrap();
        let (d, r) = stage_designs(&data, 3).unwrap();
        let mut bigger = fits[0].clone();
        bigger.effects[0] *= 2.0;
        let a = hardmax_pseudo(&fits[0], &r[1], &d[2]).unwrap();
        let b = hardmax_pseudo(&bigger, &r[1], &d[2]).unwrap();
        assert!(b[0] >= a[0]);
    }
}

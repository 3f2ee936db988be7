//! Stage-wise estimators: least squares, the penalized fit solved by one or
//! more local quadratic approximation (LQA) rounds, and the pseudo-outcomes
//! handed to the previous stage.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gram, spd_inverse, symmetrize, weighted_gram};
use crate::model::{DesignMatrix, StageModel};
use crate::penalty::{PenaltySpec, WEIGHT_FLOOR};

pub const DEFAULT_ZERO_TOLERANCE: f64 = 1e-3;

/// A fitted stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFit {
    pub model: StageModel,
    /// Finite-sample covariance of `(β̂, ψ̂)`; `None` until inference fills it.
    pub covariance: Option<DMatrix<f64>>,
    pub residual_variance: f64,
    pub residuals: DVector<f64>,
    /// `ψ̂ᵀS_i2` before zero-thresholding.
    pub raw_effects: Vec<f64>,
    /// `ψ̂ᵀS_i2` with the zero set forced to exactly 0.
    pub effects: Vec<f64>,
    /// Subjects whose treatment effect was selected as zero.
    pub zero_set: Vec<usize>,
    /// Pseudo-outcomes this fit produced for the previous stage, if any.
    pub pseudo_outcomes: Option<DVector<f64>>,
    /// Penalty the fit was computed with (`None` family for least squares).
    pub penalty: PenaltySpec,
}

impl StageFit {
    pub fn theta(&self) -> DVector<f64> {
        self.model.theta()
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero_set.binary_search(&i).is_ok()
    }

    /// Standard errors from the stored covariance.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub lqa_steps: usize,
    pub zero_tolerance: f64,
    pub penalty: PenaltySpec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            lqa_steps: 1,
            zero_tolerance: DEFAULT_ZERO_TOLERANCE,
            penalty: PenaltySpec::default(),
        }
    }
}

impl SolverOptions {
    pub fn with_penalty(penalty: PenaltySpec) -> Self {
        SolverOptions {
            penalty,
            ..SolverOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if self.lqa_steps == 0 {
            return Err(Error::invalid("lqa_steps must be positive"));
        }
        if !(self.zero_tolerance > 0.0) {
            return Err(Error::invalid("zero_tolerance must be positive"));
        }
        Ok(())
    }
}

fn check_response(design: &DesignMatrix, y: &DVector<f64>) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::Dimension {
            what: "response",
            got: y.len(),
            expected: design.n(),
        });
    }
    if design.n() <= design.p() {
        return Err(Error::TooFewSubjects {
            n: design.n(),
            params: design.p(),
        });
    }
    Ok(())
}

fn gram_inverse(x: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    spd_inverse(&gram(x)).map_err(|condition| Error::SingularDesign {
        context: context.to_string(),
        condition,
    })
}

fn residual_variance(residuals: &DVector<f64>, n: usize, p: usize) -> f64 {
    residuals.norm_squared() / (n - p) as f64
}

/// Ordinary least squares of `y` on the full design.
pub fn ols_fit(design: &DesignMatrix, y: &DVector<f64>) -> Result<StageFit> {
    check_response(design, y)?;
    let zz_inv = gram_inverse(&design.z, "least squares")?;
    let theta = &zz_inv * design.z.tr_mul(y);
    let residuals = y - &design.z * &theta;
    let sigma2 = residual_variance(&residuals, design.n(), design.p());
    let model = StageModel::from_theta(0, &theta, design.p_main());
    let raw = design.effects(&model.psi);
    Ok(StageFit {
        model,
        covariance: Some(zz_inv * sigma2),
        residual_variance: sigma2,
        residuals,
        effects: raw.clone(),
        raw_effects: raw,
        zero_set: Vec::new(),
        pseudo_outcomes: None,
        penalty: PenaltySpec::none(),
    })
}

/// First-stage least squares on the pseudo-outcome. The covariance is left
/// for [`crate::inference::cov_stage1`].
pub fn stage1_fit(design: &DesignMatrix, pseudo_y: &DVector<f64>) -> Result<StageFit> {
    let mut fit = ols_fit(design, pseudo_y)?;
    fit.covariance = None;
    fit.model.stage = 1;
    Ok(fit)
}

/// Penalized stage fit with the Gram blocks precomputed, so that many
/// penalties can be tried against one design.
#[derive(Debug, Clone)]
pub struct PqSolver<'a> {
    design: &'a DesignMatrix,
    y: &'a DVector<f64>,
    initial: StageFit,
    main_gram_inv: DMatrix<f64>,
    cross: DMatrix<f64>,
    main_rhs: DVector<f64>,
    /// `X2ᵀ(I − P1)X2`.
    reduced: DMatrix<f64>,
    /// `X2ᵀ(I − P1)Y`.
    reduced_rhs: DVector<f64>,
    curvature_cap: f64,
}

/// Largest per-subject LQA curvature, relative to the average per-subject
/// diagonal of `X2ᵀ(I − P1)X2`. Past it the shrinkage is already complete
/// and larger values only destroy the other entries in floating point.
pub const CURVATURE_CAP: f64 = 1e10;

impl<'a> PqSolver<'a> {
    pub fn new(design: &'a DesignMatrix, y: &'a DVector<f64>) -> Result<Self> {
        let initial = ols_fit(design, y)?;
        let main_gram_inv = gram_inverse(&design.x_main, "main-effect block")?;
        let cross = design.x_main.tr_mul(&design.x_interact);
        let main_rhs = design.x_main.tr_mul(y);
        let projected = main_gram_inv.clone() * &cross;
        let reduced = symmetrize(&(gram(&design.x_interact) - cross.tr_mul(&projected)));
        let reduced_rhs = design.x_interact.tr_mul(y) - projected.tr_mul(&main_rhs);
        let curvature_cap = CURVATURE_CAP * reduced.trace() / (reduced.nrows().max(1) * design.n()) as f64;
        Ok(PqSolver {
            design,
            y,
            initial,
            main_gram_inv,
            cross,
            main_rhs,
            reduced,
            reduced_rhs,
            curvature_cap,
        })
    }

    /// The least-squares initial estimate.
    pub fn initial(&self) -> &StageFit {
        &self.initial
    }

    /// Runs `opts.lqa_steps` LQA rounds starting from least squares.
    pub fn fit(&self, opts: &SolverOptions) -> Result<StageFit> {
        opts.validate()?;
        let design = self.design;
        let n = design.n();
        let penalty = &opts.penalty;
        let weights: Vec<f64> = self.initial.raw_effects.iter().map(|e| e.abs()).collect();
        let mut point = self.initial.raw_effects.clone();
        let mut pinned = vec![false; n];
        let mut psi = self.initial.model.psi.clone();
        let mut curvature = vec![0.0; n];
        for _ in 0..opts.lqa_steps {
            for i in 0..n {
                let at = point[i].abs();
                if at < WEIGHT_FLOOR || weights[i] < WEIGHT_FLOOR {
                    pinned[i] = true;
                }
                curvature[i] = if pinned[i] {
                    0.0
                } else {
                    (0.5 * penalty.deriv(at, weights[i]) / at).min(self.curvature_cap)
                };
            }
            let system = &self.reduced + weighted_gram(&design.s_interact, &curvature);
            let chol = symmetrize(&system).cholesky().ok_or(Error::SingularPenalized {
                lambda: penalty.lambda,
                condition: f64::INFINITY,
            })?;
            psi = chol.solve(&self.reduced_rhs);
            point = design.effects(&psi);
        }
        let beta = &self.main_gram_inv * (&self.main_rhs - &self.cross * &psi);
        let model = StageModel::new(0, beta, psi);
        let theta = model.theta();
        let residuals = self.y - &design.z * &theta;
        let sigma2 = residual_variance(&residuals, n, design.p());
        let zz_inv = self
            .initial
            .covariance
            .as_ref()
            .map(|c| c / self.initial.residual_variance)
            .expect("least squares fit carries a covariance");
        let mut effects = point.clone();
        let mut zero_set = Vec::new();
        for i in 0..n {
            if pinned[i] || effects[i].abs() < opts.zero_tolerance {
                effects[i] = 0.0;
                zero_set.push(i);
            }
        }
        Ok(StageFit {
            model,
            covariance: Some(zz_inv * sigma2),
            residual_variance: sigma2,
            residuals,
            raw_effects: point,
            effects,
            zero_set,
            pseudo_outcomes: None,
            penalty: *penalty,
        })
    }

    /// Curvature weights `D_ii` of the first LQA round at `penalty`.
    pub fn first_round_curvature(&self, penalty: &PenaltySpec) -> Vec<f64> {
        self.initial
            .raw_effects
            .iter()
            .map(|e| {
                let at = e.abs();
                if at < WEIGHT_FLOOR {
                    0.0
                } else {
                    (0.5 * penalty.deriv(at, at) / at).min(self.curvature_cap)
                }
            })
            .collect()
    }
}

/// Penalized least squares via LQA, initialized at least squares.
pub fn pq_fit(design: &DesignMatrix, y: &DVector<f64>, opts: &SolverOptions) -> Result<StageFit> {
    PqSolver::new(design, y)?.fit(opts)
}

fn check_rewards(design: &DesignMatrix, r: &DVector<f64>) -> Result<()> {
    if r.len() != design.n() {
        return Err(Error::Dimension {
            what: "previous-stage rewards",
            got: r.len(),
            expected: design.n(),
        });
    }
    Ok(())
}

/// `R_i + β̂ᵀS_i1` for the stage fitted in `fit`.
fn base_pseudo(fit: &StageFit, rewards: &DVector<f64>, design: &DesignMatrix) -> Result<DVector<f64>> {
    check_rewards(design, rewards)?;
    if fit.model.beta.len() != design.p_main() || fit.effects.len() != design.n() {
        return Err(Error::Dimension {
            what: "fit versus design",
            got: fit.model.beta.len(),
            expected: design.p_main(),
        });
    }
    Ok(rewards + &design.x_main * &fit.model.beta)
}

/// Hard-max pseudo-outcome `R_i + β̂ᵀS_i1 + |ψ̂ᵀS_i2|`, using the fit's
/// thresholded effects.
pub fn hardmax_pseudo(fit: &StageFit, rewards: &DVector<f64>, design: &DesignMatrix) -> Result<DVector<f64>> {
    let mut y = base_pseudo(fit, rewards, design)?;
    for (yi, e) in y.iter_mut().zip(&fit.effects) {
        *yi += e.abs();
    }
    Ok(y)
}

/// Per-subject `S_i2ᵀ Cov(ψ̂) S_i2`, the variance of the fitted effect.
pub fn effect_variances(fit: &StageFit, design: &DesignMatrix) -> Result<Vec<f64>> {
    let cov = fit
        .covariance
        .as_ref()
        .ok_or_else(|| Error::invalid("fit has no covariance"))?;
    let (p1, p2) = (design.p_main(), design.p_interact());
    let block = cov.view((p1, p1), (p2, p2));
    Ok((0..design.n())
        .map(|i| {
            let s = design.s_interact.row(i);
            (s * block * s.transpose())[(0, 0)]
        })
        .collect())
}

/// Upper `q` quantile of the standard normal.
pub fn normal_upper_quantile(q: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - q)
}

/// Hard-threshold pseudo-outcome: `|ψ̂ᵀS_i2|` is kept only when its
/// standardized size exceeds `z_{α/2}`.
pub fn hard_threshold_pseudo(
    fit: &StageFit,
    rewards: &DVector<f64>,
    design: &DesignMatrix,
    alpha: f64,
) -> Result<DVector<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("threshold level must lie in (0, 1), got {alpha}")));
    }
    let mut y = base_pseudo(fit, rewards, design)?;
    let variances = effect_variances(fit, design)?;
    let cutoff = normal_upper_quantile(alpha / 2.0);
    for (i, yi) in y.iter_mut().enumerate() {
        let e = fit.effects[i].abs();
        let v = variances[i];
        if !(v > 0.0) {
            return Err(Error::DegenerateVariance { subject: i, variance: v });
        }
        if e / v.sqrt() > cutoff {
            *yi += e;
        }
    }
    Ok(y)
}

/// How the soft-threshold shrinkage `λ_i` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SoftLambda {
    /// Explicit per-subject values.
    PerSubject(Vec<f64>),
    /// `c` times the standard error of each subject's fitted effect.
    StdErrMultiple(f64),
}

impl Default for SoftLambda {
    fn default() -> Self {
        SoftLambda::StdErrMultiple(3.0)
    }
}

/// Soft-threshold pseudo-outcome with the effect term `(|ψ̂ᵀS_i2| − λ_i)⁺`.
pub fn soft_threshold_pseudo(
    fit: &StageFit,
    rewards: &DVector<f64>,
    design: &DesignMatrix,
    rule: &SoftLambda,
) -> Result<DVector<f64>> {
    let mut y = base_pseudo(fit, rewards, design)?;
    let lambdas = match rule {
        SoftLambda::PerSubject(l) => {
            if l.len() != design.n() {
                return Err(Error::Dimension {
                    what: "soft-threshold lambdas",
                    got: l.len(),
                    expected: design.n(),
                });
            }
            l.clone()
        }
        SoftLambda::StdErrMultiple(c) => {
            if !(*c >= 0.0) {
                return Err(Error::invalid(format!("soft-threshold multiple must be >= 0, got {c}")));
            }
            effect_variances(fit, design)?
                .into_iter()
                .map(|v| c * v.max(0.0).sqrt())
                .collect()
        }
    };
    for (i, yi) in y.iter_mut().enumerate() {
        let l = lambdas[i];
        if !(l >= 0.0) {
            return Err(Error::invalid(format!("negative soft-threshold lambda {l} for subject {i}")));
        }
        *yi += (fit.effects[i].abs() - l).max(0.0);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Action;
    use crate::penalty::PenaltySpec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_design(rng: &mut ChaCha8Rng, n: usize, p1: usize, p2: usize) -> DesignMatrix {
        let s1 = DMatrix::from_fn(n, p1, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let s2 = DMatrix::from_fn(n, p2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let actions = (0..n)
            .map(|_| if rng.random::<bool>() { Action::Plus } else { Action::Minus })
            .collect();
        DesignMatrix::from_parts(s1, s2, actions).unwrap()
    }

    fn noisy_response(rng: &mut ChaCha8Rng, d: &DesignMatrix) -> DVector<f64> {
        let theta = DVector::from_fn(d.p(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &d.z * theta + DVector::from_fn(d.n(), |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn scalar_design(x: &[f64]) -> DesignMatrix {
        let n = x.len();
        DesignMatrix::from_parts(DMatrix::from_column_slice(n, 1, x), DMatrix::zeros(n, 0), vec![Action::Plus; n])
            .unwrap()
    }

    #[test]
    fn scalar_regression_by_hand() {
        let d = scalar_design(&[1.0, 2.0, 3.0]);
        let fit = ols_fit(&d, &DVector::from_vec(vec![2.0, 4.0, 6.0])).unwrap();
        assert_relative_eq!(fit.model.beta[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn orthonormal_design_gives_projection() {
        // Columns of a 4×2 orthonormal matrix.
        let h = 0.5;
        let d = DesignMatrix::from_parts(
            DMatrix::from_column_slice(4, 1, &[h, h, h, h]),
            DMatrix::from_column_slice(4, 1, &[h, h, h, h]),
            vec![Action::Plus, Action::Minus, Action::Plus, Action::Minus],
        )
        .unwrap();
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let fit = ols_fit(&d, &y).unwrap();
        let expect = d.z.tr_mul(&y);
        assert_relative_eq!(fit.theta(), expect, epsilon = 1e-14);
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_design(&mut rng, 40, 3, 2);
        let theta = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.7, -0.2]);
        let fit = ols_fit(&d, &(&d.z * &theta)).unwrap();
        assert_relative_eq!(fit.theta(), theta, epsilon = 1e-12);
        assert!(fit.zero_set.is_empty());
    }

    #[test]
    fn singular_design_is_reported() {
        let s = DMatrix::from_element(10, 2, 1.0);
        let d = DesignMatrix::from_parts(s.clone(), s, vec![Action::Plus; 10]).unwrap();
        assert!(matches!(ols_fit(&d, &DVector::zeros(10)), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = random_design(&mut rng, 60, 4, 3);
            let y = noisy_response(&mut rng, &d);
            let fit = ols_fit(&d, &y).unwrap();
            let score = d.z.tr_mul(&fit.residuals);
            assert!(score.amax() <= 1e-8 * y.norm());
        }
    }

    #[test]
    fn unpenalized_pq_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_design(&mut rng, 80, 4, 3);
        let y = noisy_response(&mut rng, &d);
        let ols = ols_fit(&d, &y).unwrap();
        for penalty in [PenaltySpec::none(), PenaltySpec::adaptive_lasso(0.0, 2.0)] {
            let pq = pq_fit(&d, &y, &SolverOptions::with_penalty(penalty)).unwrap();
            assert_relative_eq!(pq.theta(), ols.theta(), epsilon = 1e-10);
        }
    }

    #[test]
    fn penalized_solution_satisfies_surrogate_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for lambda in [0.01, 0.5, 5.0] {
            let d = random_design(&mut rng, 100, 3, 3);
            let y = noisy_response(&mut rng, &d);
            let solver = PqSolver::new(&d, &y).unwrap();
            let penalty = PenaltySpec::adaptive_lasso(lambda, 2.0);
            let fit = solver.fit(&SolverOptions::with_penalty(penalty)).unwrap();
            // gradient of ½‖Y − Zθ‖² + ½Σ D_ii (ψᵀS_i2)²
            let w = solver.first_round_curvature(&penalty);
            let mut grad = -d.z.tr_mul(&(&y - &d.z * fit.theta()));
            let pen = weighted_gram(&d.s_interact, &w) * &fit.model.psi;
            let p1 = d.p_main();
            for k in 0..d.p_interact() {
                grad[p1 + k] += pen[k];
            }
            assert!(grad.amax() <= 1e-8 * y.norm(), "lambda {lambda}: {}", grad.amax());
        }
    }

    #[test]
    fn heavy_penalty_zeroes_every_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_design(&mut rng, 100, 2, 2);
        let y = noisy_response(&mut rng, &d);
        let fit = pq_fit(&d, &y, &SolverOptions::with_penalty(PenaltySpec::adaptive_lasso(1e9, 2.0))).unwrap();
        assert_eq!(fit.zero_set.len(), 100);
        assert!(fit.effects.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn extra_lqa_rounds_keep_selected_subjects_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_design(&mut rng, 120, 2, 2);
        let y = noisy_response(&mut rng, &d);
        let penalty = PenaltySpec::adaptive_lasso(2.0, 2.0);
        let one = pq_fit(&d, &y, &SolverOptions::with_penalty(penalty)).unwrap();
        let three = pq_fit(&d, &y, &SolverOptions { lqa_steps: 3, ..SolverOptions::with_penalty(penalty) }).unwrap();
        for i in &one.zero_set {
            assert!(three.raw_effects[*i].abs() < 1e-3);
        }
    }

    #[test]
    fn scad_penalty_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let d = random_design(&mut rng, 120, 2, 2);
        let y = noisy_response(&mut rng, &d);
        let fit = pq_fit(&d, &y, &SolverOptions::with_penalty(PenaltySpec::scad(0.3, 3.7))).unwrap();
        assert!(fit.theta().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_options_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_design(&mut rng, 30, 2, 2);
        let y = noisy_response(&mut rng, &d);
        let bad = SolverOptions { zero_tolerance: 0.0, ..SolverOptions::default() };
        assert!(pq_fit(&d, &y, &bad).is_err());
        let bad = SolverOptions { lqa_steps: 0, ..SolverOptions::default() };
        assert!(pq_fit(&d, &y, &bad).is_err());
    }

    fn fake_fit(beta: f64, effect: f64, se: f64) -> (StageFit, DesignMatrix) {
        let d = DesignMatrix::from_parts(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            vec![Action::Plus],
        )
        .unwrap();
        let fit = StageFit {
            model: StageModel::new(2, DVector::from_element(1, beta), DVector::from_element(1, effect)),
            covariance: Some(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, se * se]))),
            residual_variance: 1.0,
            residuals: DVector::zeros(1),
            raw_effects: vec![effect],
            effects: vec![effect],
            zero_set: vec![],
            pseudo_outcomes: None,
            penalty: PenaltySpec::none(),
        };
        (fit, d)
    }

    #[test]
    fn hardmax_pseudo_by_hand() {
        let (fit, d) = fake_fit(2.0, -1.0, 1.0);
        let y = hardmax_pseudo(&fit, &DVector::zeros(1), &d).unwrap();
        assert_eq!(y[0], 3.0);
        let (flat, d) = fake_fit(2.0, 0.0, 1.0);
        assert_eq!(hardmax_pseudo(&flat, &DVector::from_element(1, 0.5), &d).unwrap()[0], 2.5);
    }

    #[test]
    fn hard_threshold_keeps_large_statistic() {
        // α = 0.08 compares against the upper 4% point, z ≈ 1.7507
        let (fit, d) = fake_fit(0.0, 5.0, 1.0);
        assert_eq!(hard_threshold_pseudo(&fit, &DVector::zeros(1), &d, 0.08).unwrap()[0], 5.0);
        let (fit, d) = fake_fit(0.0, 1.8, 1.0);
        assert_eq!(hard_threshold_pseudo(&fit, &DVector::zeros(1), &d, 0.08).unwrap()[0], 1.8);
        let (fit, d) = fake_fit(0.0, 1.7, 1.0);
        assert_eq!(hard_threshold_pseudo(&fit, &DVector::zeros(1), &d, 0.08).unwrap()[0], 0.0);
        let (fit, d) = fake_fit(0.0, 0.0, 1.0);
        assert_eq!(hard_threshold_pseudo(&fit, &DVector::zeros(1), &d, 0.999).unwrap()[0], 0.0);
        assert_relative_eq!(normal_upper_quantile(0.04), 1.7506861, epsilon = 1e-6);
    }

    #[test]
    fn hard_threshold_degenerate_variance() {
        let (fit, d) = fake_fit(0.0, 1.0, 0.0);
        assert!(matches!(
            hard_threshold_pseudo(&fit, &DVector::zeros(1), &d, 0.08),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn soft_threshold_by_hand() {
        let (fit, d) = fake_fit(0.0, 2.0, 1.0);
        let r = DVector::zeros(1);
        assert_eq!(soft_threshold_pseudo(&fit, &r, &d, &SoftLambda::PerSubject(vec![1.0])).unwrap()[0], 1.0);
        let (fit, d) = fake_fit(0.0, 0.5, 1.0);
        assert_eq!(soft_threshold_pseudo(&fit, &r, &d, &SoftLambda::PerSubject(vec![1.0])).unwrap()[0], 0.0);
        assert!(soft_threshold_pseudo(&fit, &r, &d, &SoftLambda::PerSubject(vec![-1.0])).is_err());
    }

    #[test]
    fn pseudo_outcome_ordering_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let d = random_design(&mut rng, 40, 2, 2);
            let y = noisy_response(&mut rng, &d);
            let fit = ols_fit(&d, &y).unwrap();
            let r: DVector<f64> = DVector::from_fn(40, |_, _| rng.random::<f64>());
            let hm = hardmax_pseudo(&fit, &r, &d).unwrap();
            // brute-force maximum over the two actions
            for i in 0..40 {
                let q = |a: f64| r[i] + (d.x_main.row(i) * &fit.model.beta)[0] + a * (d.s_interact.row(i) * &fit.model.psi)[0];
                assert_relative_eq!(hm[i], q(1.0).max(q(-1.0)), epsilon = 1e-12);
            }
            let zero = SoftLambda::PerSubject(vec![0.0; 40]);
            assert_eq!(soft_threshold_pseudo(&fit, &r, &d, &zero).unwrap(), hm);
            let st = soft_threshold_pseudo(&fit, &r, &d, &SoftLambda::default()).unwrap();
            let dropped = r.clone() + &d.x_main * &fit.model.beta;
            for i in 0..40 {
                assert!(st[i] >= dropped[i] && st[i] <= hm[i]);
            }
            // α close to 1 keeps every nonzero statistic
            let ht = hard_threshold_pseudo(&fit, &r, &d, 1.0 - 1e-12).unwrap();
            assert_relative_eq!(ht, hm, epsilon = 1e-12);
        }
    }

    #[test]
    fn stage1_fit_of_zero_pseudo_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_design(&mut rng, 30, 2, 2);
        let fit = stage1_fit(&d, &DVector::zeros(30)).unwrap();
        assert!(fit.theta().iter().all(|v| *v == 0.0));
        assert!(fit.covariance.is_none());
    }
}

//! Penalties applied to each subject's treatment effect `|ψᵀS_i2|`, with the
//! derivatives the local quadratic approximation needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial-estimate magnitudes below this are treated as already zero: the
/// adaptive-lasso weight would be infinite.
pub const WEIGHT_FLOOR: f64 = 1e-10;

pub const DEFAULT_ALPHA: f64 = 3.0;
pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    AdaptiveLasso,
    Scad,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    /// Adaptive-lasso exponent on the initial estimate.
    pub alpha: f64,
    /// SCAD shape constant.
    pub scad_a: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec::adaptive_lasso(0.0, DEFAULT_ALPHA)
    }
}

impl PenaltySpec {
    pub fn adaptive_lasso(lambda: f64, alpha: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::AdaptiveLasso,
            lambda,
            alpha,
            scad_a: DEFAULT_SCAD_A,
        }
    }

    pub fn scad(lambda: f64, a: f64) -> Self {
        PenaltySpec {
            family: PenaltyFamily::Scad,
            lambda,
            alpha: DEFAULT_ALPHA,
            scad_a: a,
        }
    }

    pub fn none() -> Self {
        PenaltySpec {
            family: PenaltyFamily::None,
            lambda: 0.0,
            alpha: DEFAULT_ALPHA,
            scad_a: DEFAULT_SCAD_A,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PenaltySpec { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.scad_a > 2.0) {
            return Err(Error::invalid(format!("SCAD a must be > 2, got {}", self.scad_a)));
        }
        Ok(())
    }

    /// `p_λ(θ)`. For the adaptive lasso `subject_weight` is `|θ⁽⁰⁾|`; a weight
    /// under [`WEIGHT_FLOOR`] gives `+∞` for any `θ > 0`.
    pub fn value(&self, theta: f64, subject_weight: f64) -> f64 {
        debug_assert!(theta >= 0.0);
        let lambda = self.lambda;
        match self.family {
            PenaltyFamily::None => 0.0,
            PenaltyFamily::AdaptiveLasso => {
                if theta == 0.0 || lambda == 0.0 {
                    0.0
                } else {
                    lambda * theta * self.adaptive_factor(subject_weight)
                }
            }
            PenaltyFamily::Scad => {
                let a = self.scad_a;
                if theta <= lambda {
                    lambda * theta
                } else if theta <= a * lambda {
                    (2.0 * a * lambda * theta - theta * theta - lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * lambda * lambda / 2.0
                }
            }
        }
    }

    /// `p′_λ(θ)`.
    pub fn deriv(&self, theta: f64, subject_weight: f64) -> f64 {
        let lambda = self.lambda;
        match self.family {
            PenaltyFamily::None => 0.0,
            PenaltyFamily::AdaptiveLasso => {
                if lambda == 0.0 {
                    0.0
                } else {
                    lambda * self.adaptive_factor(subject_weight)
                }
            }
            PenaltyFamily::Scad => {
                let a = self.scad_a;
                if theta <= lambda {
                    lambda
                } else if theta <= a * lambda {
                    (a * lambda - theta) / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// `p″_λ(θ)`; zero for the adaptive lasso.
    pub fn second_deriv(&self, theta: f64, _subject_weight: f64) -> f64 {
        match self.family {
            PenaltyFamily::None | PenaltyFamily::AdaptiveLasso => 0.0,
            PenaltyFamily::Scad => {
                let (lambda, a) = (self.lambda, self.scad_a);
                if theta > lambda && theta <= a * lambda {
                    -1.0 / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    fn adaptive_factor(&self, weight: f64) -> f64 {
        if weight.abs() < WEIGHT_FLOOR {
            f64::INFINITY
        } else {
            weight.abs().powf(-self.alpha)
        }
    }

    /// Minimizer of `½(z − θ)² + p_λ(|θ|)` over θ, the one-dimensional
    /// thresholding rule the penalty induces. For the adaptive lasso the
    /// weight is `|z|` itself.
    pub fn threshold(&self, z: f64) -> f64 {
        let az = z.abs();
        let shrunk = match self.family {
            PenaltyFamily::None => az,
            PenaltyFamily::AdaptiveLasso => {
                (az - self.lambda * self.adaptive_factor(az)).max(0.0)
            }
            PenaltyFamily::Scad => {
                let (lambda, a) = (self.lambda, self.scad_a);
                if az <= 2.0 * lambda {
                    (az - lambda).max(0.0)
                } else if az <= a * lambda {
                    ((a - 1.0) * az - a * lambda) / (a - 2.0)
                } else {
                    az
                }
            }
        };
        shrunk.copysign(z)
    }
}

/// Which of the two asymptotic penalty conditions a schedule satisfies on a
/// finite grid of sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub n_grid: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// `√n · p_{λn}(θ)` at the fixed nonzero θ; must fall toward zero.
    pub vanishing_sequence: Vec<f64>,
    /// `n · p_{λn}(M/√n)` for an effect of order `n^{-1/2}`; must grow.
    pub diverging_sequence: Vec<f64>,
    pub vanishing_pass: bool,
    pub diverging_pass: bool,
}

/// Evaluates both conditions for `schedule` at the grid sizes. The adaptive
/// lasso weight is taken as the effect's own size, as for a root-n consistent
/// initial estimate.
pub fn check_asymptotic_conditions<F>(
    family: PenaltyFamily,
    alpha: f64,
    schedule: F,
    theta_fixed: f64,
    n_grid: &[usize],
) -> Result<ConditionReport>
where
    F: Fn(usize) -> f64,
{
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n_grid must have at least two increasing sizes"));
    }
    if !(theta_fixed > 0.0) {
        return Err(Error::invalid("theta_fixed must be positive"));
    }
    const M: f64 = 1.0;
    let mut lambdas = Vec::with_capacity(n_grid.len());
    let mut vanishing = Vec::with_capacity(n_grid.len());
    let mut diverging = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let lambda = schedule(n);
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("schedule gave lambda = {lambda} at n = {n}")));
        }
        let spec = PenaltySpec {
            family,
            lambda,
            alpha,
            scad_a: DEFAULT_SCAD_A,
        };
        let root_n = (n as f64).sqrt();
        let small = M / root_n;
        lambdas.push(lambda);
        vanishing.push(root_n * spec.value(theta_fixed, theta_fixed));
        diverging.push(n as f64 * spec.value(small, small));
    }
    let vanishing_pass = vanishing.iter().all(|v| *v == 0.0)
        || vanishing.windows(2).all(|w| w[1] < w[0]);
    let diverging_pass = diverging.windows(2).all(|w| w[1] > w[0]);
    Ok(ConditionReport {
        n_grid: n_grid.to_vec(),
        lambdas,
        vanishing_sequence: vanishing,
        diverging_sequence: diverging,
        vanishing_pass,
        diverging_pass,
    })
}

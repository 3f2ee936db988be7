//! Plug-in covariance for both stages, Wald intervals, and the percentile and
//! hybrid bootstrap intervals used as comparators.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{normal_upper_quantile, StageFit};
use crate::linalg::{gram, spd_inverse, symmetrize, weighted_gram};
use crate::model::DesignMatrix;
use crate::penalty::PenaltySpec;
use crate::rng::{attempt_stream, stream_rng};

/// Redraws allowed for a bootstrap replicate whose fit fails.
pub const MAX_REDRAWS: usize = 10;

/// How subjects in the selected zero set enter `S̄₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSetSign {
    /// Their interaction block is dropped: a zeroed effect does not move
    /// with `ψ̂`.
    #[default]
    Zeroed,
    /// `sgn(0) = −1`, as in the decision rule.
    MinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Variant {
    /// `σ̂²(ZᵀZ)⁻¹`.
    LeastSquares,
    /// Sandwich with the penalty curvature correction.
    SigmaCorrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub cov1: DMatrix<f64>,
    pub cov2: DMatrix<f64>,
    pub std_errors1: Vec<f64>,
    pub std_errors2: Vec<f64>,
    pub stage2_variant: Stage2Variant,
    pub zero_set_sign: ZeroSetSign,
}

impl CovarianceReport {
    pub fn new(
        cov1: DMatrix<f64>,
        cov2: DMatrix<f64>,
        stage2_variant: Stage2Variant,
        zero_set_sign: ZeroSetSign,
    ) -> Self {
        CovarianceReport {
            std_errors1: std_errors(&cov1),
            std_errors2: std_errors(&cov2),
            cov1,
            cov2,
            stage2_variant,
            zero_set_sign,
        }
    }
}

pub fn std_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

fn singular(context: &str) -> impl Fn(f64) -> Error + '_ {
    move |condition| Error::SingularDesign {
        context: context.to_string(),
        condition,
    }
}

/// Covariance of the last-stage estimate. Without a correction this is
/// `σ̂²(ZᵀZ)⁻¹`; with one it is `σ̂²(H + Σ̂)⁻¹ H (H + Σ̂)⁻¹` where `H = ZᵀZ`
/// and `Σ̂ = ½ Σ_i p″(|ψ̂ᵀS_i2|) S_i2 S_i2ᵀ` on the ψ block.
pub fn cov_stage2(
    fit: &StageFit,
    design: &DesignMatrix,
    correction: Option<&PenaltySpec>,
) -> Result<DMatrix<f64>> {
    if fit.effects.len() != design.n() {
        return Err(Error::Dimension {
            what: "stage fit versus design",
            got: fit.effects.len(),
            expected: design.n(),
        });
    }
    let h = gram(&design.z);
    let h_inv = spd_inverse(&h).map_err(singular("stage covariance"))?;
    let Some(penalty) = correction else {
        return Ok(h_inv * fit.residual_variance);
    };
    let curvature: Vec<f64> = fit
        .effects
        .iter()
        .zip(&fit.raw_effects)
        .map(|(e, raw)| {
            if *e == 0.0 {
                0.0
            } else {
                0.5 * penalty.second_deriv(e.abs(), raw.abs())
            }
        })
        .collect();
    if curvature.iter().all(|c| *c == 0.0) {
        return Ok(h_inv * fit.residual_variance);
    }
    let p1 = design.p_main();
    let p2 = design.p_interact();
    let mut bread = h.clone();
    let sigma = weighted_gram(&design.s_interact, &curvature);
    let mut block = bread.view_mut((p1, p1), (p2, p2));
    block += sigma;
    let bread_inv = symmetrize(&bread)
        .try_inverse()
        .ok_or_else(|| singular("corrected stage covariance")(f64::INFINITY))?;
    Ok(symmetrize(&(&bread_inv * h * &bread_inv)) * fit.residual_variance)
}

/// Per-subject signs entering `S̄₂ = (S_i1ᵀ, sign_i · S_i2ᵀ)ᵀ`.
pub fn plug_in_signs(fit: &StageFit, zero_sign: ZeroSetSign) -> Vec<f64> {
    fit.effects
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if fit.is_zero(i) {
                match zero_sign {
                    ZeroSetSign::Zeroed => 0.0,
                    ZeroSetSign::MinusOne => -1.0,
                }
            } else if *e > 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Covariance of the earlier-stage estimate fitted on a pseudo-outcome:
/// `A⁻¹ M A⁻¹ + A⁻¹ B cov_next Bᵀ A⁻¹` with `A = Z₁ᵀZ₁`, the robust meat
/// `M = Σ z_i z_iᵀ ε̂_i²`, and `B = Σ z_i S̄₂,iᵀ`.
pub fn cov_stage1(
    fit1: &StageFit,
    design1: &DesignMatrix,
    fit2: &StageFit,
    cov2: &DMatrix<f64>,
    design2: &DesignMatrix,
    zero_sign: ZeroSetSign,
) -> Result<DMatrix<f64>> {
    cov_stage1_with_signs(fit1, design1, cov2, design2, &plug_in_signs(fit2, zero_sign))
}

/// [`cov_stage1`] with the `S̄₂` signs supplied directly.
pub fn cov_stage1_with_signs(
    fit1: &StageFit,
    design1: &DesignMatrix,
    cov2: &DMatrix<f64>,
    design2: &DesignMatrix,
    signs: &[f64],
) -> Result<DMatrix<f64>> {
    let n = design1.n();
    if design2.n() != n || signs.len() != n || fit1.residuals.len() != n {
        return Err(Error::Dimension {
            what: "subjects across stages",
            got: design2.n(),
            expected: n,
        });
    }
    if cov2.nrows() != design2.p() || cov2.ncols() != design2.p() {
        return Err(Error::Dimension {
            what: "next-stage covariance",
            got: cov2.nrows(),
            expected: design2.p(),
        });
    }
    let a_inv = spd_inverse(&gram(&design1.z)).map_err(singular("stage-1 covariance"))?;
    let sq: Vec<f64> = fit1.residuals.iter().map(|e| e * e).collect();
    let meat = weighted_gram(&design1.z, &sq);

    let (p1, p2) = (design2.p_main(), design2.p_interact());
    let mut s_bar = DMatrix::zeros(n, p1 + p2);
    s_bar.columns_mut(0, p1).copy_from(&design2.x_main);
    for i in 0..n {
        for k in 0..p2 {
            s_bar[(i, p1 + k)] = signs[i] * design2.s_interact[(i, k)];
        }
    }
    let b = design1.z.tr_mul(&s_bar);
    let plug_in = &b * cov2 * b.transpose();
    Ok(symmetrize(&(&a_inv * (meat + plug_in) * &a_inv)))
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `θ ± z · se` at confidence `level`.
pub fn wald_ci(theta: f64, se: f64, level: f64) -> Interval {
    let z = normal_upper_quantile((1.0 - level) / 2.0);
    Interval {
        lower: theta - z * se,
        upper: theta + z * se,
    }
}

/// A dataset whose subjects can be drawn with replacement.
pub trait Resample: Sized {
    fn len(&self) -> usize;
    fn resample(&self, idx: &[usize]) -> Self;
}

impl<T: Clone> Resample for Vec<T> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn resample(&self, idx: &[usize]) -> Self {
        idx.iter().map(|&i| self[i].clone()).collect()
    }
}

/// Point estimate and bootstrap replicates of a vector statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSample {
    pub estimate: Vec<f64>,
    /// `replicates[b][k]` is component k in draw b.
    pub replicates: Vec<Vec<f64>>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl BootstrapSample {
    fn sorted_component(&self, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.replicates.iter().map(|r| r[k]).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `(q_{α/2}, q_{1−α/2})` per component.
    pub fn percentile(&self, level: f64) -> Vec<Interval> {
        let tail = (1.0 - level) / 2.0;
        (0..self.estimate.len())
            .map(|k| {
                let s = self.sorted_component(k);
                Interval {
                    lower: quantile_sorted(&s, tail),
                    upper: quantile_sorted(&s, 1.0 - tail),
                }
            })
            .collect()
    }

    /// Basic interval `(2θ̂ − q_{1−α/2}, 2θ̂ − q_{α/2})` per component.
    pub fn hybrid(&self, level: f64) -> Vec<Interval> {
        self.percentile(level)
            .into_iter()
            .zip(&self.estimate)
            .map(|(p, &t)| Interval {
                lower: 2.0 * t - p.upper,
                upper: 2.0 * t - p.lower,
            })
            .collect()
    }
}

/// Runs `pipeline` on the data and on `b` resamples drawn from seed-derived
/// streams. A failing draw is redrawn up to [`MAX_REDRAWS`] times.
pub fn bootstrap<D, F>(data: &D, pipeline: F, b: usize, seed: u64) -> Result<BootstrapSample>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<Vec<f64>> + Sync,
{
    if b < 100 {
        return Err(Error::invalid(format!("bootstrap needs B >= 100, got {b}")));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("bootstrap of an empty dataset"));
    }
    let estimate = pipeline(data)?;
    let replicates = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut last = None;
            for attempt in 0..MAX_REDRAWS {
                let mut rng = stream_rng(seed, attempt_stream(rep, attempt));
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                match pipeline(&data.resample(&idx)) {
                    Ok(v) => return Ok(v),
                    Err(e) => last = Some(e),
                }
            }
            Err(Error::Bootstrap {
                replicate: rep,
                attempts: MAX_REDRAWS,
                source: Box::new(last.expect("at least one attempt")),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapSample { estimate, replicates })
}

pub fn percentile_bootstrap_ci<D, F>(data: &D, pipeline: F, b: usize, level: f64, seed: u64) -> Result<Vec<Interval>>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<Vec<f64>> + Sync,
{
    Ok(bootstrap(data, pipeline, b, seed)?.percentile(level))
}

pub fn hybrid_bootstrap_ci<D, F>(data: &D, pipeline: F, b: usize, level: f64, seed: u64) -> Result<Vec<Interval>>
where
    D: Resample + Sync,
    F: Fn(&D) -> Result<Vec<f64>> + Sync,
{
    Ok(bootstrap(data, pipeline, b, seed)?.hybrid(level))
}

/// Column means, used by the bootstrap tests and reports.
pub fn mean(v: &DVector<f64>) -> f64 {
    v.sum() / v.len() as f64
}

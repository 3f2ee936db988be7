//! The two-stage simulation design with binary covariates, its analytic true
//! parameters, cross-validated penalty selection, and the Monte Carlo harness.

use std::fmt;
use std::io;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{PqSolver, SoftLambda, SolverOptions};
use crate::inference::wald_ci;
use crate::model::{Action, StageObservation, Trajectory};
use crate::penalty::PenaltyFamily;
use crate::pipeline::{fit_two_stage, Estimator, LambdaChoice, PipelineOptions, TwoStageData};
use crate::rng::{attempt_stream, stream_rng};

/// Redraws allowed for one replication before the study gives up.
pub const MAX_REPLICATION_ATTEMPTS: usize = 20;

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generative parameters of one study setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    /// Coefficients of `R₂` on `(1, O₁, A₁, O₁A₁, A₂, O₂A₂, A₁A₂)`.
    pub gamma: [f64; 7],
    pub delta1: f64,
    pub delta2: f64,
    pub n: usize,
}

impl SimSetting {
    /// The six standard settings, numbered 1 to 6.
    pub fn standard(id: usize, n: usize) -> Result<SimSetting> {
        let (gamma, delta1, delta2) = match id {
            1 => ([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.5, 0.5),
            2 => ([0.0, 0.0, 0.0, 0.0, 0.01, 0.0, 0.0], 0.5, 0.5),
            3 => ([0.0, 0.0, -0.5, 0.0, 0.5, 0.0, 0.5], 0.5, 0.5),
            4 => ([0.0, 0.0, -0.5, 0.0, 0.5, 0.0, 0.49], 0.5, 0.5),
            5 => ([0.0, 0.0, -0.5, 0.0, 1.0, 0.5, 0.5], 1.0, 0.0),
            6 => ([0.0, 0.0, -0.5, 0.0, 0.25, 0.5, 0.5], 0.1, 0.1),
            _ => return Err(Error::invalid(format!("setting must be 1..=6, got {id}"))),
        };
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(SimSetting { gamma, delta1, delta2, n })
    }

    /// True stage-two coefficients on `S₂₁ = (1, O₁, A₁, O₁A₁)`.
    pub fn true_beta2(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.gamma[..4])
    }

    /// True stage-two coefficients on `S₂₂ = (1, O₂, A₁)`.
    pub fn true_psi2(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.gamma[4..])
    }
}

fn coin<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draws `setting.n` two-stage trajectories with `R₁ = 0`.
pub fn generate<R: Rng>(setting: &SimSetting, rng: &mut R) -> Vec<Trajectory> {
    let g = &setting.gamma;
    (0..setting.n)
        .map(|i| {
            let o1 = coin(rng);
            let a1 = coin(rng);
            let p = expit(setting.delta1 * o1 + setting.delta2 * a1);
            let o2 = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
            let a2 = coin(rng);
            let eps: f64 = rng.sample(StandardNormal);
            let r2 = g[0] + g[1] * o1 + g[2] * a1 + g[3] * o1 * a1 + g[4] * a2 + g[5] * o2 * a2 + g[6] * a1 * a2 + eps;
            Trajectory {
                subject_id: format!("{}", i + 1),
                stages: vec![
                    StageObservation {
                        s_main: vec![1.0, o1],
                        s_interact: vec![1.0, o1],
                        action: Action::from_sign(a1),
                        reward: 0.0,
                    },
                    StageObservation {
                        s_main: vec![1.0, o1, a1, o1 * a1],
                        s_interact: vec![1.0, o2, a1],
                        action: Action::from_sign(a2),
                        reward: r2,
                    },
                ],
            }
        })
        .collect()
}

/// Support points of `S₂₂ = (1, O₂, A₁)` in table order.
pub const S22_SUPPORT: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [1.0, -1.0, -1.0]];

/// `ψ₂₀ᵀS₂₂` at each support point of [`S22_SUPPORT`].
pub fn true_psi2_effects(setting: &SimSetting) -> [([f64; 3], f64); 4] {
    let psi = setting.true_psi2();
    S22_SUPPORT.map(|s| (s, psi[0] * s[0] + psi[1] * s[1] + psi[2] * s[2]))
}

/// True stage-one treatment coefficients and the intermediates that produce them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePsi1 {
    pub psi110: f64,
    pub psi120: f64,
    pub q1: f64,
    pub q2: f64,
    pub q1p: f64,
    pub q2p: f64,
    pub f: [f64; 4],
}

pub fn true_psi1(setting: &SimSetting) -> TruePsi1 {
    let g = &setting.gamma;
    let (d1, d2) = (setting.delta1, setting.delta2);
    let q1 = 0.25 * (expit(d1 + d2) + expit(-d1 + d2));
    let q2 = 0.25 * (expit(d1 - d2) + expit(-d1 - d2));
    let q1p = 0.25 * (expit(d1 + d2) - expit(-d1 + d2));
    let q2p = 0.25 * (expit(d1 - d2) - expit(-d1 - d2));
    let f = [g[4] + g[5] + g[6], g[4] + g[5] - g[6], g[4] - g[5] + g[6], g[4] - g[5] - g[6]];
    let a = f.map(f64::abs);
    let psi110 = g[2] + q1 * a[0] - q2 * a[1] + (0.5 - q1) * a[2] - (0.5 - q2) * a[3];
    let psi120 = g[3] + q1p * a[0] - q2p * a[1] - q1p * a[2] + q2p * a[3];
    TruePsi1 { psi110, psi120, q1, q2, q1p, q2p, f }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if let Some(l) = grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::invalid(format!("lambda grid contains {l}")));
    }
    Ok(())
}

/// Per-subject held-out prediction `β̂ᵀS₁ + A·(thresholded ψ̂ᵀS₂)`.
fn held_out_sse(
    design: &crate::model::DesignMatrix,
    y: &DVector<f64>,
    fit: &crate::estimators::StageFit,
    tol: f64,
) -> f64 {
    let main = &design.x_main * &fit.model.beta;
    let effects = design.effects(&fit.model.psi);
    (0..design.n())
        .map(|i| {
            let e = if effects[i].abs() < tol { 0.0 } else { effects[i] };
            let r = y[i] - main[i] - design.actions[i].value() * e;
            r * r
        })
        .sum()
}

/// Cross-validation score (mean held-out squared error) of every grid value.
/// Fold `k` holds the subjects with index `i % folds == k`.
pub fn cv_scores(
    design: &crate::model::DesignMatrix,
    y: &DVector<f64>,
    grid: &[f64],
    folds: usize,
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let n = design.n();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("folds must lie in 2..={n}, got {folds}")));
    }
    let mut sse = vec![0.0; grid.len()];
    for k in 0..folds {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % folds == k);
        let d_train = design.subset(&train);
        let y_train = y.select_rows(&train);
        let d_test = design.subset(&test);
        let y_test = y.select_rows(&test);
        let solver = PqSolver::new(&d_train, &y_train)?;
        for (j, &lambda) in grid.iter().enumerate() {
            let o = SolverOptions {
                penalty: opts.penalty.with_lambda(lambda),
                ..*opts
            };
            let fit = solver.fit(&o)?;
            sse[j] += held_out_sse(&d_test, &y_test, &fit, opts.zero_tolerance);
        }
    }
    Ok(sse.into_iter().map(|s| s / n as f64).collect())
}

/// Grid value with the smallest cross-validation score; ties go to the
/// larger penalty.
pub fn cv_select_lambda(
    design: &crate::model::DesignMatrix,
    y: &DVector<f64>,
    grid: &[f64],
    folds: usize,
    opts: &SolverOptions,
) -> Result<f64> {
    let scores = cv_scores(design, y, grid, folds, opts)?;
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for (&l, &s) in grid.iter().zip(&scores) {
        if s < best.0 || (s == best.0 && l > best.1) {
            best = (s, l);
        }
    }
    Ok(best.1)
}

/// Smallest penalty level (to bisection accuracy) whose one-round fit puts
/// every subject in the zero set.
pub fn lambda_max(design: &crate::model::DesignMatrix, y: &DVector<f64>, opts: &SolverOptions) -> Result<f64> {
    let solver = PqSolver::new(design, y)?;
    let all_zero = |lambda: f64| -> Result<bool> {
        let o = SolverOptions {
            penalty: opts.penalty.with_lambda(lambda),
            ..*opts
        };
        Ok(solver.fit(&o)?.zero_set.len() == design.n())
    };
    let mut hi = 1.0;
    let mut tries = 0;
    while !all_zero(hi)? {
        hi *= 4.0;
        tries += 1;
        if tries > 40 {
            return Err(Error::invalid("no penalty level zeroes every effect"));
        }
    }
    let mut lo = hi / 4.0;
    if tries == 0 {
        while all_zero(lo)? {
            lo /= 4.0;
            if lo < 1e-300 {
                return Ok(0.0);
            }
        }
        hi = lo * 4.0;
    }
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if all_zero(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Ratio of the smallest to the largest level of the default grid.
pub const LAMBDA_GRID_DEPTH: f64 = 1e-8;

/// `size` log-spaced levels from `LAMBDA_GRID_DEPTH·λ_max` to `λ_max`; `{0}`
/// when the penalty family is `None`.
pub fn default_lambda_grid(
    design: &crate::model::DesignMatrix,
    y: &DVector<f64>,
    opts: &SolverOptions,
    size: usize,
) -> Result<Vec<f64>> {
    if opts.penalty.family == PenaltyFamily::None {
        return Ok(vec![0.0]);
    }
    if size < 2 {
        return Err(Error::invalid("lambda grid needs at least two points"));
    }
    let top = lambda_max(design, y, opts)?;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    let (a, b) = ((top * LAMBDA_GRID_DEPTH).ln(), top.ln());
    Ok((0..size)
        .map(|k| (a + (b - a) * k as f64 / (size - 1) as f64).exp())
        .collect())
}

/// Estimators compared in the studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EstimatorKind {
    Oracle,
    Pq,
    HardMax,
    HardThreshold(f64),
    SoftThreshold,
}

impl EstimatorKind {
    pub fn estimator(&self, setting: &SimSetting, lambda: LambdaChoice) -> Estimator {
        match *self {
            EstimatorKind::Oracle => Estimator::Oracle {
                true_psi: setting.true_psi2(),
            },
            EstimatorKind::Pq => Estimator::Pq { lambda },
            EstimatorKind::HardMax => Estimator::HardMax,
            EstimatorKind::HardThreshold(alpha) => Estimator::HardThreshold { alpha },
            EstimatorKind::SoftThreshold => Estimator::SoftThreshold(SoftLambda::default()),
        }
    }

    /// Whether plug-in standard errors exist for this estimator.
    pub fn has_std_errors(&self) -> bool {
        matches!(self, EstimatorKind::Oracle | EstimatorKind::Pq)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Oracle => write!(f, "oracle"),
            EstimatorKind::Pq => write!(f, "pq"),
            EstimatorKind::HardMax => write!(f, "hardmax"),
            EstimatorKind::HardThreshold(a) => write!(f, "ht{a}"),
            EstimatorKind::SoftThreshold => write!(f, "soft"),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "oracle" => Ok(EstimatorKind::Oracle),
            "pq" => Ok(EstimatorKind::Pq),
            "hardmax" | "hm" => Ok(EstimatorKind::HardMax),
            "soft" | "st" | "soft_threshold" => Ok(EstimatorKind::SoftThreshold),
            _ => {
                let rest = s
                    .strip_prefix("hard_threshold")
                    .or_else(|| s.strip_prefix("ht"))
                    .ok_or_else(|| Error::invalid(format!("unknown estimator '{s}'")))?;
                let rest = rest.trim_start_matches(['_', '(']).trim_end_matches(')');
                let alpha: f64 = if rest.is_empty() {
                    0.08
                } else {
                    rest.parse()
                        .map_err(|_| Error::invalid(format!("bad hard-threshold level in '{s}'")))?
                };
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!("hard-threshold level must lie in (0,1), got {alpha}")));
                }
                Ok(EstimatorKind::HardThreshold(alpha))
            }
        }
    }
}

/// Configuration of a Monte Carlo study.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub setting_id: usize,
    pub n: usize,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub lambda: LambdaChoice,
    pub pipeline: PipelineOptions,
    pub level: f64,
}

impl McConfig {
    pub fn new(setting_id: usize, n: usize, reps: usize, estimators: Vec<EstimatorKind>, seed: u64) -> Self {
        McConfig {
            setting_id,
            n,
            reps,
            estimators,
            seed,
            lambda: LambdaChoice::default(),
            pipeline: PipelineOptions::default(),
            level: 0.95,
        }
    }
}

/// One estimator's output in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub psi1: [f64; 2],
    pub std_errors: Option<[f64; 2]>,
    pub covers: Option<[bool; 2]>,
    pub lambda: f64,
    /// Stage-two effects (after selection).
    pub effects2: Vec<f64>,
    pub zero_set: Vec<usize>,
    pub psi2: DVector<f64>,
}

/// Everything recorded for one replication, per estimator in config order.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub attempts: usize,
    /// True `ψ₂₀ᵀS₂₂ᵢ` per subject.
    pub true_effects: Vec<f64>,
    pub records: Vec<EstimateRecord>,
}

/// One row of a Monte Carlo summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub setting: usize,
    pub estimator: String,
    pub coefficient: String,
    pub bias: f64,
    pub std_mc: f64,
    pub std: Option<f64>,
    pub cp: Option<f64>,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub rows: Vec<McRow>,
    /// Replications that had to be redrawn after an estimator failed.
    pub redraws: usize,
    pub replications: Vec<Replication>,
    pub truth: TruePsi1,
}

impl McReport {
    pub fn row(&self, estimator: &str, coefficient: &str) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.coefficient == coefficient)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

pub const COEFFICIENT_NAMES: [&str; 2] = ["psi11", "psi12"];

pub(crate) fn write_rows<W: io::Write, T: Serialize>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| Error::Report(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Report(e.to_string()))
}

/// Reads rows written by [`McReport::write_csv`].
pub fn read_mc_rows<R: io::Read>(r: R) -> Result<Vec<McRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<McRow>, _>>()
        .map_err(|e| Error::Report(e.to_string()))?;
    Ok(rows)
}

fn record(fit: &crate::pipeline::TwoStageFit, truth: &TruePsi1, level: f64) -> EstimateRecord {
    let psi1 = [fit.psi1()[0], fit.psi1()[1]];
    let std_errors = fit.psi1_std_errors().map(|s| [s[0], s[1]]);
    let covers = std_errors.map(|se| {
        [
            wald_ci(psi1[0], se[0], level).contains(truth.psi110),
            wald_ci(psi1[1], se[1], level).contains(truth.psi120),
        ]
    });
    EstimateRecord {
        psi1,
        std_errors,
        covers,
        lambda: fit.lambda,
        effects2: fit.stage2.effects.clone(),
        zero_set: fit.stage2.zero_set.clone(),
        psi2: fit.stage2.model.psi.clone(),
    }
}

/// Runs one replication, redrawing data when any estimator fails.
fn replicate(config: &McConfig, setting: &SimSetting, truth: &TruePsi1, index: usize) -> Result<Replication> {
    let estimators: Vec<Estimator> = config
        .estimators
        .iter()
        .map(|k| k.estimator(setting, config.lambda))
        .collect();
    let mut last_err = None;
    for attempt in 0..MAX_REPLICATION_ATTEMPTS {
        let mut rng = stream_rng(config.seed, attempt_stream(index, attempt));
        let trajectories = generate(setting, &mut rng);
        let data = TwoStageData::from_trajectories(&trajectories)?;
        let fits: Result<Vec<_>> = estimators
            .iter()
            .map(|e| fit_two_stage(&data, e, &config.pipeline))
            .collect();
        match fits {
            Ok(fits) => {
                return Ok(Replication {
                    index,
                    attempts: attempt + 1,
                    true_effects: data.stage2.effects(&setting.true_psi2()),
                    records: fits.iter().map(|f| record(f, truth, config.level)).collect(),
                })
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Replications run in parallel; each draws from its own seed-derived stream
/// and results are aggregated in replication order.
pub fn run_mc(config: &McConfig) -> Result<McReport> {
    if config.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if config.estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    let setting = SimSetting::standard(config.setting_id, config.n)?;
    let truth = true_psi1(&setting);
    let replications: Vec<Replication> = (0..config.reps)
        .into_par_iter()
        .map(|i| replicate(config, &setting, &truth, i))
        .collect::<Result<_>>()?;
    let redraws = replications.iter().map(|r| r.attempts - 1).sum();
    let true_values = [truth.psi110, truth.psi120];
    let mut rows = Vec::new();
    for (e, kind) in config.estimators.iter().enumerate() {
        for (c, name) in COEFFICIENT_NAMES.iter().enumerate() {
            let est: Vec<f64> = replications.iter().map(|r| r.records[e].psi1[c]).collect();
            let (m, sd) = mean_sd(&est);
            let (std, cp) = if kind.has_std_errors() {
                let se: Vec<f64> = replications
                    .iter()
                    .map(|r| r.records[e].std_errors.expect("plug-in SE")[c])
                    .collect();
                let hits = replications
                    .iter()
                    .filter(|r| r.records[e].covers.expect("coverage")[c])
                    .count();
                (
                    Some(mean_sd(&se).0),
                    Some(100.0 * hits as f64 / replications.len() as f64),
                )
            } else {
                (None, None)
            };
            rows.push(McRow {
                setting: config.setting_id,
                estimator: kind.to_string(),
                coefficient: name.to_string(),
                bias: m - true_values[c],
                std_mc: sd,
                std,
                cp,
                reps: config.reps,
                seed: config.seed,
            });
        }
    }
    Ok(McReport {
        rows,
        redraws,
        replications,
        truth,
    })
}

/// Stage-two parameter error `‖ψ̂₂ − ψ₂₀‖` for a fitted replication.
pub fn psi2_error(record: &EstimateRecord, setting: &SimSetting) -> f64 {
    (&record.psi2 - setting.true_psi2()).norm()
}

/// Fraction of true-zero subjects that landed in the selected zero set.
pub fn zero_selection_rate(replication: &Replication, estimator: usize) -> Option<f64> {
    let zero_set = &replication.records[estimator].zero_set;
    let truly_zero: Vec<usize> = replication
        .true_effects
        .iter()
        .enumerate()
        .filter(|(_, t)| t.abs() < 1e-12)
        .map(|(i, _)| i)
        .collect();
    if truly_zero.is_empty() {
        return None;
    }
    let hit = truly_zero.iter().filter(|i| zero_set.binary_search(i).is_ok()).count();
    Some(hit as f64 / truly_zero.len() as f64)
}

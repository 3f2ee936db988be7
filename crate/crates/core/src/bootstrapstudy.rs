//! Monte Carlo study of percentile and hybrid bootstrap intervals for the
//! stage-one treatment coefficients.

use std::fmt;
use std::io;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{bootstrap, BootstrapSample, Interval};
use crate::pipeline::{fit_two_stage, Estimator, LambdaChoice, PipelineOptions, TwoStageData};
use crate::rng::{attempt_stream, stream_rng};
use crate::simstudy::{
    generate, true_psi1, write_rows, EstimatorKind, SimSetting, COEFFICIENT_NAMES, MAX_REPLICATION_ATTEMPTS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CiMethod {
    /// Percentile interval.
    Pb,
    /// Hybrid (basic) interval.
    Hb,
}

impl CiMethod {
    pub fn interval(&self, sample: &BootstrapSample, level: f64) -> Vec<Interval> {
        match self {
            CiMethod::Pb => sample.percentile(level),
            CiMethod::Hb => sample.hybrid(level),
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Pb => "PB",
            CiMethod::Hb => "HB",
        })
    }
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pb" | "percentile" => Ok(CiMethod::Pb),
            "hb" | "hybrid" | "basic" => Ok(CiMethod::Hb),
            other => Err(Error::invalid(format!("unknown interval method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootConfig {
    pub setting_id: usize,
    pub n: usize,
    pub reps: usize,
    pub boot_b: usize,
    pub estimators: Vec<EstimatorKind>,
    pub ci_methods: Vec<CiMethod>,
    pub seed: u64,
    pub lambda: LambdaChoice,
    pub pipeline: PipelineOptions,
    pub level: f64,
}

impl BootConfig {
    pub fn new(setting_id: usize, n: usize, reps: usize, boot_b: usize, seed: u64) -> Self {
        BootConfig {
            setting_id,
            n,
            reps,
            boot_b,
            estimators: vec![
                EstimatorKind::HardMax,
                EstimatorKind::HardThreshold(0.08),
                EstimatorKind::HardThreshold(0.20),
                EstimatorKind::SoftThreshold,
            ],
            ci_methods: vec![CiMethod::Pb, CiMethod::Hb],
            seed,
            lambda: LambdaChoice::default(),
            pipeline: PipelineOptions::default(),
            level: 0.95,
        }
    }
}

/// One row of a bootstrap study summary. `bias` is truth minus the mean
/// estimate and `var` the sample variance of the estimates, so both repeat
/// across the interval methods of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootRow {
    pub setting: usize,
    pub estimator: String,
    pub ci_method: String,
    pub coefficient: String,
    pub bias: f64,
    pub var: f64,
    pub cp: f64,
    pub mean_width: f64,
    pub boot_b: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootReport {
    pub rows: Vec<BootRow>,
    pub redraws: usize,
    /// `estimates[rep][e]` holds `ψ̂₁` of estimator `e`.
    pub estimates: Vec<Vec<[f64; 2]>>,
}

impl BootReport {
    pub fn row(&self, estimator: &str, ci_method: &str, coefficient: &str) -> Option<&BootRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.ci_method == ci_method && r.coefficient == coefficient)
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<()> {
        write_rows(&self.rows, w)
    }
}

pub fn read_boot_rows<R: io::Read>(r: R) -> Result<Vec<BootRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<Vec<BootRow>, _>>()
        .map_err(|e| Error::Report(e.to_string()))
}

struct RepOutcome {
    attempts: usize,
    estimates: Vec<[f64; 2]>,
    /// `intervals[m][e]` for method `m`, estimator `e`.
    intervals: Vec<Vec<[Interval; 2]>>,
}

fn psi1_all(data: &TwoStageData, estimators: &[Estimator], opts: &PipelineOptions) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * estimators.len());
    for e in estimators {
        let fit = fit_two_stage(data, e, opts)?;
        out.extend_from_slice(&fit.psi1().as_slice()[..2]);
    }
    Ok(out)
}

fn boot_replicate(config: &BootConfig, setting: &SimSetting, estimators: &[Estimator], index: usize) -> Result<RepOutcome> {
    let mut last = None;
    for attempt in 0..MAX_REPLICATION_ATTEMPTS {
        let mut rng = stream_rng(config.seed, attempt_stream(index, attempt));
        let trajectories = generate(setting, &mut rng);
        let boot_seed: u64 = rng.random();
        let data = TwoStageData::from_trajectories(&trajectories)?;
        let sample = bootstrap(&data, |d| psi1_all(d, estimators, &config.pipeline), config.boot_b, boot_seed);
        match sample {
            Ok(sample) => {
                let estimates = sample.estimate.chunks(2).map(|c| [c[0], c[1]]).collect();
                let intervals = config
                    .ci_methods
                    .iter()
                    .map(|m| {
                        m.interval(&sample, config.level)
                            .chunks(2)
                            .map(|c| [c[0], c[1]])
                            .collect()
                    })
                    .collect();
                return Ok(RepOutcome {
                    attempts: attempt + 1,
                    estimates,
                    intervals,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Replications and bootstrap draws both run in parallel on seed-derived
/// streams. All estimators share each replication's resamples.
pub fn run_boot_mc(config: &BootConfig) -> Result<BootReport> {
    if config.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if config.boot_b < 100 {
        return Err(Error::invalid(format!("bootstrap needs B >= 100, got {}", config.boot_b)));
    }
    if config.estimators.is_empty() || config.ci_methods.is_empty() {
        return Err(Error::invalid("no estimators or interval methods requested"));
    }
    let setting = SimSetting::standard(config.setting_id, config.n)?;
    let truth = true_psi1(&setting);
    let truth = [truth.psi110, truth.psi120];
    let estimators: Vec<Estimator> = config
        .estimators
        .iter()
        .map(|k| k.estimator(&setting, config.lambda))
        .collect();
    let outcomes: Vec<RepOutcome> = (0..config.reps)
        .into_par_iter()
        .map(|i| boot_replicate(config, &setting, &estimators, i))
        .collect::<Result<_>>()?;
    let reps = outcomes.len() as f64;
    let mut rows = Vec::new();
    for (e, kind) in config.estimators.iter().enumerate() {
        for (c, name) in COEFFICIENT_NAMES.iter().enumerate() {
            let est: Vec<f64> = outcomes.iter().map(|o| o.estimates[e][c]).collect();
            let m = est.iter().sum::<f64>() / reps;
            let var = if est.len() > 1 {
                est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1.0)
            } else {
                0.0
            };
            for (k, method) in config.ci_methods.iter().enumerate() {
                let ints = outcomes.iter().map(|o| o.intervals[k][e][c]);
                let hits = ints.clone().filter(|iv| iv.contains(truth[c])).count();
                let width = ints.map(|iv| iv.width()).sum::<f64>() / reps;
                rows.push(BootRow {
                    setting: config.setting_id,
                    estimator: kind.to_string(),
                    ci_method: method.to_string(),
                    coefficient: name.to_string(),
                    bias: truth[c] - m,
                    var,
                    cp: 100.0 * hits as f64 / reps,
                    mean_width: width,
                    boot_b: config.boot_b,
                    reps: config.reps,
                    seed: config.seed,
                });
            }
        }
    }
    Ok(BootReport {
        rows,
        redraws: outcomes.iter().map(|o| o.attempts - 1).sum(),
        estimates: outcomes.into_iter().map(|o| o.estimates).collect(),
    })
}

//! Browser bindings. Every exported function takes plain numbers and
//! returns a JSON string; the same computations are available as typed
//! Rust functions for native callers and tests.

use pqlearn::penalty::PenaltySpec;
use pqlearn::pipeline::{fit_two_stage, Estimator, LambdaChoice, PipelineOptions, TwoStageData};
use pqlearn::rng::stream_rng;
use pqlearn::simstudy::{generate, run_mc, true_psi2_effects, EstimatorKind, McConfig, SimSetting};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_DEMO_REPS: usize = 2000;
pub const MAX_DEMO_N: usize = 5000;

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCurves {
    pub z: Vec<f64>,
    pub hard: Vec<f64>,
    pub adaptive_lasso: Vec<f64>,
    pub scad: Vec<f64>,
}

/// Penalized estimate as a function of the unpenalized one, for `points`
/// values of `z` spread evenly over `[-z_max, z_max]`.
pub fn threshold_curves(lambda: f64, alpha: f64, scad_a: f64, z_max: f64, points: usize) -> pqlearn::Result<ThresholdCurves> {
    if points < 2 || !(z_max > 0.0) {
        return Err(pqlearn::Error::InvalidArgument("need at least two points over a positive range".into()));
    }
    let al = PenaltySpec::adaptive_lasso(lambda, alpha);
    let scad = PenaltySpec::scad(lambda, scad_a);
    al.validate()?;
    scad.validate()?;
    let z: Vec<f64> = (0..points)
        .map(|i| -z_max + 2.0 * z_max * i as f64 / (points - 1) as f64)
        .collect();
    Ok(ThresholdCurves {
        hard: z.iter().map(|&v| if v.abs() > lambda { v } else { 0.0 }).collect(),
        adaptive_lasso: z.iter().map(|&v| al.threshold(v)).collect(),
        scad: z.iter().map(|&v| scad.threshold(v)).collect(),
        z,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorDraws {
    pub name: String,
    pub psi11: Vec<f64>,
    pub bias: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Distribution {
    pub setting: usize,
    pub n: usize,
    pub truth: f64,
    pub estimators: Vec<EstimatorDraws>,
}

/// Monte Carlo draws of the first stage-one treatment coefficient under the
/// oracle, penalized and hard-max estimators.
pub fn psi11_distribution(setting: usize, n: usize, reps: usize, seed: u64) -> pqlearn::Result<Distribution> {
    check_size(n, reps)?;
    let kinds = vec![EstimatorKind::Oracle, EstimatorKind::Pq, EstimatorKind::HardMax];
    let report = run_mc(&McConfig::new(setting, n, reps, kinds.clone(), seed))?;
    let estimators = kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let name = kind.to_string();
            let row = report.row(&name, "psi11").expect("every estimator has a psi11 row");
            EstimatorDraws {
                psi11: report.replications.iter().map(|r| r.records[k].psi1[0]).collect(),
                bias: row.bias,
                sd: row.std_mc,
                name,
            }
        })
        .collect();
    Ok(Distribution {
        setting,
        n,
        truth: report.truth.psi110,
        estimators,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportPoint {
    /// `(1, O2, A1)`.
    pub s: [f64; 3],
    pub true_effect: f64,
    pub fitted_effect: f64,
    pub subjects: usize,
    /// Fraction of those subjects whose effect was set to zero.
    pub zeroed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub lambda: f64,
    pub psi2: Vec<f64>,
    pub points: Vec<SupportPoint>,
}

/// Penalized stage-two fit on one simulated cohort, summarized per support
/// point. A negative `lambda` selects it by cross-validation.
pub fn stage2_selection(setting: usize, n: usize, seed: u64, lambda: f64) -> pqlearn::Result<Selection> {
    check_size(n, 1)?;
    let s = SimSetting::standard(setting, n)?;
    let traj = generate(&s, &mut stream_rng(seed, 0));
    let data = TwoStageData::from_trajectories(&traj)?;
    let choice = if lambda < 0.0 {
        LambdaChoice::default()
    } else {
        LambdaChoice::Fixed(lambda)
    };
    let fit = fit_two_stage(&data, &Estimator::Pq { lambda: choice }, &PipelineOptions::default())?;
    let psi = &fit.stage2.model.psi;
    let points = true_psi2_effects(&s)
        .iter()
        .map(|&(sp, true_effect)| {
            let members: Vec<usize> = traj
                .iter()
                .enumerate()
                .filter(|(_, t)| t.stages[1].s_interact == sp)
                .map(|(i, _)| i)
                .collect();
            let zeroed = members.iter().filter(|i| fit.stage2.zero_set.binary_search(i).is_ok()).count();
            SupportPoint {
                s: sp,
                true_effect,
                fitted_effect: psi.iter().zip(sp).map(|(a, b)| a * b).sum(),
                subjects: members.len(),
                zeroed: if members.is_empty() { 0.0 } else { zeroed as f64 / members.len() as f64 },
            }
        })
        .collect();
    Ok(Selection {
        lambda: fit.lambda,
        psi2: psi.iter().copied().collect(),
        points,
    })
}

fn check_size(n: usize, reps: usize) -> pqlearn::Result<()> {
    if n > MAX_DEMO_N || reps > MAX_DEMO_REPS {
        return Err(pqlearn::Error::InvalidArgument(format!(
            "the demo is limited to n ≤ {MAX_DEMO_N} and reps ≤ {MAX_DEMO_REPS}"
        )));
    }
    Ok(())
}

fn to_js<T: Serialize>(r: pqlearn::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = thresholdCurves)]
pub fn threshold_curves_js(lambda: f64, alpha: f64, scad_a: f64, z_max: f64, points: usize) -> Result<String, JsError> {
    to_js(threshold_curves(lambda, alpha, scad_a, z_max, points))
}

#[wasm_bindgen(js_name = psi11Distribution)]
pub fn psi11_distribution_js(setting: usize, n: usize, reps: usize, seed: u32) -> Result<String, JsError> {
    to_js(psi11_distribution(setting, n, reps, seed as u64))
}

#[wasm_bindgen(js_name = stage2Selection)]
pub fn stage2_selection_js(setting: usize, n: usize, seed: u32, lambda: f64) -> Result<String, JsError> {
    to_js(stage2_selection(setting, n, seed as u64, lambda))
}

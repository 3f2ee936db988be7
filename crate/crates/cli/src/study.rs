//! The `simulate`, `bootstrap` and `generate` commands.

use std::io::Write;

use pqlearn::bootstrapstudy::{run_boot_mc, BootConfig, BootReport, CiMethod};
use pqlearn::rng::stream_rng;
use pqlearn::simstudy::{generate, run_mc, EstimatorKind, McConfig, McReport, SimSetting};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn parse_list<T: std::str::FromStr<Err = pqlearn::Error>>(list: &str, flag: &str) -> CliResult<Vec<T>> {
    let items: Vec<T> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<T>().map_err(|e| CliError::Config(format!("--{flag}: {e}"))))
        .collect::<CliResult<_>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("--{flag} is empty")));
    }
    Ok(items)
}

pub struct StudyArgs {
    pub setting: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
}

fn check_setting(setting: usize, n: usize) -> CliResult<SimSetting> {
    SimSetting::standard(setting, n).map_err(|e| CliError::Config(e.to_string()))
}

pub fn simulate(args: &StudyArgs, config: &RunConfig) -> CliResult<McReport> {
    check_setting(args.setting, args.n)?;
    if args.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let mut mc = McConfig::new(args.setting, args.n, args.reps, args.estimators.clone(), args.seed);
    mc.lambda = config.default_lambda();
    mc.pipeline = config.pipeline_options();
    mc.level = config.inference.level;
    Ok(run_mc(&mc)?)
}

pub fn bootstrap(args: &StudyArgs, boot_b: usize, methods: Vec<CiMethod>, config: &RunConfig) -> CliResult<BootReport> {
    check_setting(args.setting, args.n)?;
    if args.reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    if boot_b < 100 {
        return Err(CliError::Config(format!("--boot-B must be at least 100, got {boot_b}")));
    }
    let mut bc = BootConfig::new(args.setting, args.n, args.reps, boot_b, args.seed);
    bc.estimators = args.estimators.clone();
    bc.ci_methods = methods;
    bc.lambda = config.default_lambda();
    bc.pipeline = config.pipeline_options();
    bc.level = config.inference.level;
    Ok(run_boot_mc(&bc)?)
}

/// Writes one simulated cohort in the column layout of the bundled
/// two-stage config.
pub fn write_cohort(setting: usize, n: usize, seed: u64, w: &mut dyn Write) -> CliResult<()> {
    let s = check_setting(setting, n)?;
    let data = generate(&s, &mut stream_rng(seed, 0));
    let mut out = csv::Writer::from_writer(w);
    let fail = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    out.write_record(["id", "O1", "A1", "R1", "O2", "A2", "R2"]).map_err(fail)?;
    for t in &data {
        let (s1, s2) = (&t.stages[0], &t.stages[1]);
        out.write_record([
            t.subject_id.clone(),
            s1.s_main[1].to_string(),
            s1.action.value().to_string(),
            s1.reward.to_string(),
            s2.s_interact[1].to_string(),
            s2.action.value().to_string(),
            format!("{:?}", s2.reward),
        ])
        .map_err(fail)?;
    }
    out.flush()?;
    Ok(())
}

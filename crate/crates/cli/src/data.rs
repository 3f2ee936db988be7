//! Loading subject trajectories from a CSV file.

use std::collections::HashMap;
use std::path::Path;

use pqlearn::model::{Action, StageObservation, Trajectory};

use crate::config::{RunConfig, StageSection};
use crate::error::{CliError, CliResult};

/// A model term resolved against the CSV header.
#[derive(Debug, Clone, PartialEq)]
enum Term {
    Intercept,
    Product(Vec<usize>),
}

fn resolve_term(term: &str, header: &HashMap<&str, usize>, field: &str) -> CliResult<Term> {
    let term = term.trim();
    if term == "1" {
        return Ok(Term::Intercept);
    }
    term.split('*')
        .map(|name| {
            let name = name.trim();
            header
                .get(name)
                .copied()
                .ok_or_else(|| CliError::Config(format!("{field}: column '{name}' is not in the data header")))
        })
        .collect::<CliResult<Vec<usize>>>()
        .map(Term::Product)
}

struct StageColumns {
    main: Vec<Term>,
    interaction: Vec<Term>,
    action: usize,
    reward: usize,
}

fn column(header: &HashMap<&str, usize>, name: &str, field: &str) -> CliResult<usize> {
    header
        .get(name)
        .copied()
        .ok_or_else(|| CliError::Config(format!("{field}: column '{name}' is not in the data header")))
}

fn stage_columns(k: usize, s: &StageSection, header: &HashMap<&str, usize>) -> CliResult<StageColumns> {
    let terms = |list: &[String], what: &str| {
        list.iter()
            .map(|t| resolve_term(t, header, &format!("stages[{k}].{what}")))
            .collect::<CliResult<Vec<_>>>()
    };
    Ok(StageColumns {
        main: terms(&s.main, "main")?,
        interaction: terms(&s.interaction, "interaction")?,
        action: column(header, &s.action, &format!("stages[{k}].action"))?,
        reward: column(header, &s.reward, &format!("stages[{k}].reward"))?,
    })
}

/// Parsed trajectories plus the display names of every stage's terms.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub main_names: Vec<Vec<String>>,
    pub interaction_names: Vec<Vec<String>>,
}

pub fn load(path: &Path, config: &RunConfig) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read(file, config)
}

pub fn read<R: std::io::Read>(input: R, config: &RunConfig) -> CliResult<Dataset> {
    if config.stages.is_empty() {
        return Err(CliError::Config("no [[stages]] declared".into()));
    }
    let mut rdr = csv::Reader::from_reader(input);
    let header_row = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .clone();
    let mut header = HashMap::new();
    for (i, name) in header_row.iter().enumerate() {
        if header.insert(name.trim(), i).is_some() {
            return Err(CliError::Data(format!("duplicate column '{name}' in header")));
        }
    }
    let stages = config
        .stages
        .iter()
        .enumerate()
        .map(|(k, s)| stage_columns(k, s, &header))
        .collect::<CliResult<Vec<_>>>()?;
    let id_col = match &config.data.id {
        Some(name) => Some(column(&header, name, "data.id")?),
        None => None,
    };

    let mut trajectories = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        let number = |col: usize| -> CliResult<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::Data(format!("line {line}, column '{}': expected a number, got '{raw}'", &header_row[col]))
                })
        };
        let eval = |terms: &[Term]| -> CliResult<Vec<f64>> {
            terms
                .iter()
                .map(|t| match t {
                    Term::Intercept => Ok(1.0),
                    Term::Product(cols) => cols.iter().try_fold(1.0, |acc, &c| Ok(acc * number(c)?)),
                })
                .collect()
        };
        let mut obs = Vec::with_capacity(stages.len());
        for s in &stages {
            let a = number(s.action)?;
            let action = Action::try_from(a).map_err(|_| {
                CliError::Data(format!(
                    "line {line}, column '{}': action must be -1 or 1, got '{}'",
                    &header_row[s.action],
                    record.get(s.action).unwrap_or("").trim()
                ))
            })?;
            obs.push(StageObservation {
                s_main: eval(&s.main)?,
                s_interact: eval(&s.interaction)?,
                action,
                reward: number(s.reward)?,
            });
        }
        let subject_id = match id_col {
            Some(c) => record.get(c).unwrap_or("").trim().to_string(),
            None => (r + 1).to_string(),
        };
        trajectories.push(Trajectory {
            subject_id,
            stages: obs,
        });
    }
    if trajectories.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let names = |pick: fn(&StageSection) -> &Vec<String>| {
        config
            .stages
            .iter()
            .map(|s| pick(s).iter().map(|t| t.trim().to_string()).collect())
            .collect()
    };
    Ok(Dataset {
        trajectories,
        main_names: names(|s| &s.main),
        interaction_names: names(|s| &s.interaction),
    })
}

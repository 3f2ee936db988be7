//! Text rendering of study summaries.

use pqlearn::bootstrapstudy::{read_boot_rows, BootRow};
use pqlearn::simstudy::{read_mc_rows, McRow};

use crate::error::{CliError, CliResult};

/// Coverage outside this band differs from 95% beyond Monte Carlo error at
/// 1000 replications.
pub const COVERAGE_BAND: (f64, f64) = (93.7, 96.3);

pub enum Rows {
    Study(Vec<McRow>),
    Bootstrap(Vec<BootRow>),
}

fn star(cp: f64) -> &'static str {
    if cp < COVERAGE_BAND.0 || cp > COVERAGE_BAND.1 {
        "*"
    } else {
        ""
    }
}

pub fn parse(text: &str) -> CliResult<Rows> {
    let header = text
        .lines()
        .next()
        .filter(|l| !l.trim().is_empty())
        .ok_or_else(|| CliError::Data("empty report".into()))?;
    let rows = if header.split(',').any(|c| c.trim() == "ci_method") {
        Rows::Bootstrap(read_boot_rows(text.as_bytes()).map_err(|e| CliError::Data(e.to_string()))?)
    } else {
        Rows::Study(read_mc_rows(text.as_bytes()).map_err(|e| CliError::Data(e.to_string()))?)
    };
    let empty = match &rows {
        Rows::Study(r) => r.is_empty(),
        Rows::Bootstrap(r) => r.is_empty(),
    };
    if empty {
        return Err(CliError::Data("report has a header but no rows".into()));
    }
    Ok(rows)
}

fn align(table: Vec<Vec<String>>) -> String {
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c < 3 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        out += cells.join("  ").trim_end();
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn render(rows: &Rows) -> String {
    match rows {
        Rows::Study(rows) => {
            let mut t = vec![["setting", "estimator", "coef", "Bias", "Std-MC", "Std", "CP"].map(String::from).to_vec()];
            for r in rows {
                t.push(vec![
                    r.setting.to_string(),
                    r.estimator.clone(),
                    r.coefficient.clone(),
                    format!("{:.4}", r.bias),
                    format!("{:.3}", r.std_mc),
                    opt(r.std, 3),
                    r.cp.map_or_else(|| "-".into(), |cp| format!("{cp:.1}{}", star(cp))),
                ]);
            }
            align(t)
        }
        Rows::Bootstrap(rows) => {
            let mut t = vec![["setting", "estimator", "coef", "CI", "Bias", "Var", "CP"].map(String::from).to_vec()];
            for r in rows {
                t.push(vec![
                    r.setting.to_string(),
                    r.estimator.clone(),
                    r.coefficient.clone(),
                    r.ci_method.clone(),
                    format!("{:.4}", r.bias),
                    format!("{:.4}", r.var),
                    format!("{:.1}{}", r.cp, star(r.cp)),
                ]);
            }
            align(t)
        }
    }
}

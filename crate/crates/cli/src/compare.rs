//! `compare`: ACF overlays, KS tests and RMSE-vs-iteration curves of several
//! runs against a reference run.

use std::fs;
use std::path::Path;

use pgas::diagnostics::{acf, ks_two_sample, posterior_rmse};

use crate::error::CliError;

/// Post-burn-in samples of one component, `columns[t][i]`.
pub struct RunSamples {
    pub name: String,
    pub columns: Vec<Vec<f64>>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

pub fn read_run(dir: &Path, component: usize) -> Result<RunSamples, CliError> {
    let text = fs::read_to_string(dir.join("chain.csv"))
        .map_err(|e| invalid(format!("{}: {e}", dir.join("chain.csv").display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| invalid("empty chain"))?
        .split(',')
        .collect();
    let burn_col = header
        .iter()
        .position(|h| *h == "burn_in")
        .ok_or_else(|| invalid("chain has no burn_in column"))?;
    let suffix = format!("_{component}");
    let picks: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('x') && h.ends_with(&suffix))
        .map(|(i, _)| i)
        .collect();
    if picks.is_empty() {
        return Err(invalid(format!("chain has no state component {component}")));
    }
    let mut columns = vec![Vec::new(); picks.len()];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(invalid(format!("chain row {} is truncated", row + 1)));
        }
        if fields[burn_col] != "0" {
            continue;
        }
        for (col, &i) in columns.iter_mut().zip(&picks) {
            let v = fields[i]
                .parse::<f64>()
                .map_err(|e| invalid(format!("chain row {}: {e}", row + 1)))?;
            col.push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(invalid(format!(
            "{} has no post-burn-in rows",
            dir.display()
        )));
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunSamples { name, columns })
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median over `t` of the ACF at each lag; times with a constant chain are skipped.
fn median_acf(run: &RunSamples, max_lag: usize) -> Result<Vec<f64>, CliError> {
    let mut per_t = Vec::new();
    for col in &run.columns {
        match acf(col, max_lag.min(col.len() - 1)) {
            Ok(r) => per_t.push(r),
            Err(pgas::Error::ZeroVariance) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok((0..=max_lag)
        .map(|lag| median(per_t.iter().filter_map(|r| r.get(lag).copied()).collect()))
        .collect())
}

fn means(columns: &[Vec<f64>]) -> Vec<f64> {
    columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

pub fn cmd_compare(
    reference: &Path,
    runs: &[std::path::PathBuf],
    out: &Path,
    component: usize,
    max_lag: usize,
) -> Result<(), CliError> {
    let reference = read_run(reference, component)?;
    let runs: Vec<RunSamples> = runs
        .iter()
        .map(|d| read_run(d, component))
        .collect::<Result<_, _>>()?;
    for run in &runs {
        if run.columns.len() != reference.columns.len() {
            return Err(invalid(format!(
                "{} has horizon {}, the reference has {}",
                run.name,
                run.columns.len(),
                reference.columns.len()
            )));
        }
    }
    fs::create_dir_all(out)?;

    let all: Vec<&RunSamples> = std::iter::once(&reference).chain(&runs).collect();
    let curves: Vec<Vec<f64>> = all
        .iter()
        .map(|r| median_acf(r, max_lag))
        .collect::<Result<_, _>>()?;
    let mut acf_csv = String::from("lag,reference");
    for r in &runs {
        acf_csv.push_str(&format!(",{}", r.name));
    }
    acf_csv.push('\n');
    for lag in 0..=max_lag {
        acf_csv.push_str(&lag.to_string());
        for c in &curves {
            acf_csv.push_str(&format!(",{:?}", c[lag]));
        }
        acf_csv.push('\n');
    }
    fs::write(out.join("acf_overlay.csv"), acf_csv)?;

    let mut ks = String::from("run,t,statistic,p_value\n");
    for run in &runs {
        for (t, (a, b)) in run.columns.iter().zip(&reference.columns).enumerate() {
            let r = ks_two_sample(a, b)?;
            ks.push_str(&format!(
                "{},{t},{:?},{:?}\n",
                run.name, r.statistic, r.p_value
            ));
        }
    }
    fs::write(out.join("ks.csv"), ks)?;

    // Running posterior-mean estimate after k kept rows against the reference's full-chain mean.
    let truth = means(&reference.columns);
    let longest = runs.iter().map(|r| r.columns[0].len()).max().unwrap_or(0);
    let mut rmse = String::from("rows");
    for run in &runs {
        rmse.push_str(&format!(",{}", run.name));
    }
    rmse.push('\n');
    let mut sums: Vec<Vec<f64>> = runs.iter().map(|r| vec![0.0; r.columns.len()]).collect();
    for k in 0..longest {
        rmse.push_str(&(k + 1).to_string());
        for (run, sum) in runs.iter().zip(sums.iter_mut()) {
            if k < run.columns[0].len() {
                for (s, col) in sum.iter_mut().zip(&run.columns) {
                    *s += col[k];
                }
                let estimate: Vec<f64> = sum.iter().map(|s| s / (k + 1) as f64).collect();
                rmse.push_str(&format!(",{:?}", posterior_rmse(&estimate, &truth)?));
            } else {
                rmse.push(',');
            }
        }
        rmse.push('\n');
    }
    fs::write(out.join("rmse.csv"), rmse)?;
    Ok(())
}

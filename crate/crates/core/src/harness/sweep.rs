//! Grid sweeps over dotted config keys.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::train::{train, MetricsRow, METRICS_HEADER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// `(key, value)` for every grid axis, in grid order.
    pub assignment: Vec<(String, String)>,
    pub run_dir: String,
    pub final_metrics: MetricsRow,
}

/// Parses a `key=v1,v2,...` grid argument.
pub fn parse_grid_arg(arg: &str) -> Result<(String, Vec<String>)> {
    let (k, vs) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid entry '{arg}' must look like key=v1,v2")))?;
    let values: Vec<String> = vs.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("grid entry '{arg}' has no values")));
    }
    Ok((k.trim().to_string(), values))
}

/// Cartesian product of the grid, first axis varying slowest.
pub fn grid_combinations(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
}

fn run_dir_name(assignment: &[(String, String)]) -> String {
    if assignment.is_empty() {
        return "baseline".into();
    }
    assignment
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("__")
}

/// Trains one run per grid point under `out_dir/<key=value__...>/` and
/// writes `out_dir/summary.csv`. Every grid point is validated before the
/// first run starts.
pub fn sweep(base: &TrainConfig, grid: &[(String, Vec<String>)], out_dir: &Path) -> Result<Vec<SweepRow>> {
    let mut seen = std::collections::HashSet::new();
    for (k, _) in grid {
        if !seen.insert(k.as_str()) {
            return Err(Error::Config(format!("grid key '{k}' given twice")));
        }
        if k == "train.out_dir" {
            return Err(Error::Config("train.out_dir cannot be swept".into()));
        }
    }
    let mut plans = Vec::new();
    for assignment in grid_combinations(grid) {
        let mut cfg = base.clone();
        for (k, v) in &assignment {
            cfg.set(k, v)?;
        }
        let dir = run_dir_name(&assignment);
        cfg.out_dir = out_dir.join(&dir);
        cfg.validate()?;
        plans.push((assignment, dir, cfg));
    }
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(plans.len());
    for (assignment, dir, cfg) in plans {
        let outcome = train(&cfg)?;
        let final_metrics = outcome
            .metrics
            .last()
            .cloned()
            .ok_or_else(|| Error::State("run produced no metrics".into()))?;
        rows.push(SweepRow { assignment, run_dir: dir, final_metrics });
        write_summary(grid, &rows, out_dir)?;
    }
    Ok(rows)
}

fn write_summary(grid: &[(String, Vec<String>)], rows: &[SweepRow], out_dir: &Path) -> Result<()> {
    let mut s = String::new();
    for (k, _) in grid {
        let _ = write!(s, "{k},");
    }
    let _ = writeln!(s, "run_dir,{METRICS_HEADER}");
    for r in rows {
        for (_, v) in &r.assignment {
            let _ = write!(s, "{v},");
        }
        let _ = writeln!(s, "{},{}", r.run_dir, r.final_metrics.to_csv());
    }
    fs::write(out_dir.join("summary.csv"), s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing_and_product() {
        let (k, v) = parse_grid_arg("kfac.damping=0.4,0.8").unwrap();
        assert_eq!(k, "kfac.damping");
        assert_eq!(v, vec!["0.4", "0.8"]);
        assert!(parse_grid_arg("kfac.damping").is_err());
        assert!(parse_grid_arg("kfac.damping=").is_err());

        let grid = vec![
            ("a".to_string(), vec!["1".to_string(), "2".to_string()]),
            ("b".to_string(), vec!["x".to_string(), "y".to_string(), "z".to_string()]),
        ];
        let combos = grid_combinations(&grid);
        assert_eq!(combos.len(), 6);
        assert_eq!(combos[1], vec![("a".into(), "1".into()), ("b".into(), "y".into())]);
        assert_eq!(grid_combinations(&[]), vec![Vec::<(String, String)>::new()]);
    }

    #[test]
    fn invalid_key_fails_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let grid = vec![("kfac.dampin".to_string(), vec!["0.4".to_string()])];
        let err = sweep(&TrainConfig::default(), &grid, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(!dir.path().join("summary.csv").exists());
    }
}

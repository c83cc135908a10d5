//! Grids of runs executed on a worker pool.
//!
//! A grid file is TOML with a `[base]` table (any run-config keys) and an
//! `[axes]` table mapping config keys to arrays of values. The runs are the
//! cartesian product of the axes, first axis varying slowest.
//!
//! ```toml
//! schema_version = 1
//! [base]
//! epochs = 50
//! [axes]
//! label_smoothing = [0.0, 0.8]
//! seed = [0, 1, 2]
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Deserialize;

use super::config::{TrainConfig, SCHEMA_VERSION};
use super::metrics::RunArtifact;
use super::train::run;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    schema_version: u32,
    #[serde(default)]
    base: toml::Table,
    #[serde(default)]
    axes: toml::Table,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Array(a) => a.iter().map(value_label).collect::<Vec<_>>().join("x"),
        other => other.to_string(),
    }
}

/// Expands a grid file into named run configs.
pub fn parse_grid(text: &str) -> Result<Vec<SweepRun>> {
    parse_grid_seeded(text, None)
}

/// As [`parse_grid`], with `seed` replacing the base seed. A `seed` axis
/// still takes precedence.
pub fn parse_grid_seeded(text: &str, seed: Option<u64>) -> Result<Vec<SweepRun>> {
    let mut grid: GridFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(seed) = seed {
        let seed =
            i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} too large")))?;
        grid.base.insert("seed".into(), toml::Value::Integer(seed));
    }
    if grid.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "grid schema_version {}",
            grid.schema_version
        )));
    }
    let mut axes = Vec::new();
    for (key, values) in &grid.axes {
        let values = values
            .as_array()
            .ok_or_else(|| Error::Config(format!("axis {key} must be an array")))?;
        if values.is_empty() {
            return Err(Error::Config(format!("axis {key} is empty")));
        }
        axes.push((key.clone(), values.clone()));
    }

    let mut runs = Vec::new();
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    for mut idx in 0..total {
        let mut table = grid.base.clone();
        table.insert(
            "schema_version".into(),
            toml::Value::Integer(SCHEMA_VERSION as i64),
        );
        let mut picks = vec![0; axes.len()];
        for (a, (_, values)) in axes.iter().enumerate().rev() {
            picks[a] = idx % values.len();
            idx /= values.len();
        }
        let mut parts = Vec::new();
        for (a, (key, values)) in axes.iter().enumerate() {
            let v = &values[picks[a]];
            table.insert(key.clone(), v.clone());
            parts.push(format!("{key}={}", value_label(v)));
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        let config = TrainConfig::from_toml(&text)?;
        let name = if parts.is_empty() {
            format!("run{:03}", runs.len())
        } else {
            format!("run{:03}_{}", runs.len(), parts.join("_"))
        };
        runs.push(SweepRun { name, config });
    }
    Ok(runs)
}

/// Runs every config with `workers` threads. Results keep input order.
pub fn sweep(runs: &[SweepRun], workers: usize) -> Vec<Result<RunArtifact>> {
    sweep_with(runs, workers, |r| {
        run(r.config.clone()).map(|mut a| {
            a.name = r.name.clone();
            a
        })
    })
}

pub fn sweep_with<F>(runs: &[SweepRun], workers: usize, f: F) -> Vec<Result<RunArtifact>>
where
    F: Fn(&SweepRun) -> Result<RunArtifact> + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunArtifact>>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    let workers = workers.clamp(1, runs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= runs.len() {
                    break;
                }
                let r = f(&runs[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every run visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
schema_version = 1
[base]
epochs = 2
n_train = 40
n_test = 20
dim = 4
n_classes = 4
hidden = [8]
feature_dim = 4
batch_size = 20
warmup_epochs = 1
probe_epochs = 10
[axes]
label_smoothing = [0.0, 0.8]
seed = [0, 1, 2]
"#;

    #[test]
    fn cartesian_product_in_order() {
        let runs = parse_grid(GRID).unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[0].config.label_smoothing, 0.0);
        assert_eq!(runs[0].config.seed, 0);
        assert_eq!(runs[1].config.seed, 1);
        assert_eq!(runs[3].config.label_smoothing, 0.8);
        assert_eq!(runs[3].config.seed, 0);
        assert!(runs.iter().all(|r| r.config.epochs == 2));
        assert_eq!(runs[4].name, "run004_label_smoothing=0.8_seed=1");
    }

    #[test]
    fn bad_grids() {
        assert!(parse_grid("schema_version = 2").is_err());
        assert!(parse_grid("schema_version = 1\n[axes]\nseed = 3").is_err());
        assert!(parse_grid("schema_version = 1\n[axes]\nseed = []").is_err());
        assert!(parse_grid("schema_version = 1\n[axes]\nnot_a_key = [1]").is_err());
        assert_eq!(parse_grid("schema_version = 1").unwrap().len(), 1);
    }

    #[test]
    fn seed_override_yields_to_seed_axis() {
        let runs = parse_grid_seeded("schema_version = 1\n[base]\nseed = 3", Some(9)).unwrap();
        assert_eq!(runs[0].config.seed, 9);
        let runs = parse_grid_seeded(GRID, Some(9)).unwrap();
        assert_eq!(
            runs.iter().map(|r| r.config.seed).collect::<Vec<_>>(),
            vec![0, 1, 2, 0, 1, 2]
        );
    }

    #[test]
    fn parallel_matches_serial() {
        let runs = parse_grid(GRID).unwrap();
        let serial = sweep(&runs, 1);
        let parallel = sweep(&runs, 4);
        for (a, b) in serial.iter().zip(&parallel) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a.same_numbers(b));
        }
        assert_eq!(parallel[5].as_ref().unwrap().name, runs[5].name);
    }

    #[test]
    fn failures_stay_per_run() {
        let runs = parse_grid(GRID).unwrap();
        let out = sweep_with(&runs, 3, |r| {
            if r.config.seed == 1 {
                Err(Error::Config("boom".into()))
            } else {
                run(r.config.clone())
            }
        });
        assert_eq!(out.iter().filter(|r| r.is_err()).count(), 2);
        assert!(out[1].is_err() && out[4].is_err());
    }
}

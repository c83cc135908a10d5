//! Rank correlation between final training loss and probe accuracy.

use serde::Serialize;

use super::metrics::RunArtifact;
use crate::error::{Error, Result};

/// Minimum number of runs per smoothing value for a correlation.
pub const MIN_RUNS: usize = 3;

/// Fractional ranks (1-based), ties get the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant or the
/// lengths differ or are below 2.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunPoint {
    pub name: String,
    pub final_loss: f64,
    pub probe_top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingGroup {
    pub label_smoothing: f64,
    pub runs: Vec<RunPoint>,
    /// `None` when loss or accuracy is constant across the group.
    pub spearman: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub groups: Vec<SmoothingGroup>,
}

/// Groups runs by label smoothing and correlates final loss with the final
/// probe accuracy inside each group.
pub fn correlation_report(runs: &[RunArtifact]) -> Result<CorrelationReport> {
    let mut groups: Vec<SmoothingGroup> = Vec::new();
    for r in runs {
        let (Some(loss), Some(acc)) = (r.final_loss(), r.final_probe()) else {
            return Err(Error::Report(format!(
                "run {} has no final loss or probe",
                r.name
            )));
        };
        let alpha = r.config.label_smoothing;
        let point = RunPoint {
            name: r.name.clone(),
            final_loss: loss,
            probe_top1: acc,
        };
        match groups.iter_mut().find(|g| g.label_smoothing == alpha) {
            Some(g) => g.runs.push(point),
            None => groups.push(SmoothingGroup {
                label_smoothing: alpha,
                runs: vec![point],
                spearman: None,
            }),
        }
    }
    if groups.is_empty() {
        return Err(Error::Report("no runs".into()));
    }
    groups.sort_by(|a, b| a.label_smoothing.total_cmp(&b.label_smoothing));
    for g in &mut groups {
        if g.runs.len() < MIN_RUNS {
            return Err(Error::Report(format!(
                "label_smoothing {} has {} runs (need {MIN_RUNS})",
                g.label_smoothing,
                g.runs.len()
            )));
        }
        let loss: Vec<f64> = g.runs.iter().map(|p| p.final_loss).collect();
        let acc: Vec<f64> = g.runs.iter().map(|p| p.probe_top1).collect();
        g.spearman = spearman(&loss, &acc);
    }
    Ok(CorrelationReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::TrainConfig;
    use crate::harness::metrics::MetricsRecord;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn perfect_monotone_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&x, &[1.0, 8.0, 27.0, 64.0, 125.0]), Some(1.0));
        assert_eq!(spearman(&x, &[0.3; 5]), None);
        assert_eq!(spearman(&x[..1], &x[..1]), None);
    }

    #[test]
    fn matches_rank_difference_formula_without_ties() {
        let loss = [2.1, 1.4, 3.3, 0.9, 2.8];
        let acc = [0.61, 0.70, 0.55, 0.72, 0.64];
        // ranks: loss 3,2,5,1,4 ; acc 2,4,1,5,3 ; d = 1,-2,4,-4,1 ; sum d^2 = 38
        let expected = 1.0 - 6.0 * 38.0 / (5.0 * 24.0);
        assert!((spearman(&loss, &acc).unwrap() - expected).abs() < 1e-12);
    }

    fn artifact(name: &str, alpha: f64, loss: f64, acc: f64) -> RunArtifact {
        RunArtifact {
            name: name.into(),
            config: TrainConfig {
                label_smoothing: alpha,
                ..TrainConfig::default()
            },
            metrics: vec![MetricsRecord {
                epoch: 1,
                train_loss: loss,
                lr: 0.0,
                probe_top1: Some(acc),
                wall_clock_s: 0.0,
                config_hash: String::new(),
            }],
            checkpoint: None,
        }
    }

    #[test]
    fn groups_by_smoothing() {
        let runs = vec![
            artifact("a", 0.8, 3.0, 0.5),
            artifact("b", 0.8, 2.0, 0.6),
            artifact("c", 0.8, 1.0, 0.7),
            artifact("d", 0.0, 1.0, 0.7),
            artifact("e", 0.0, 2.0, 0.7),
            artifact("f", 0.0, 3.0, 0.7),
        ];
        let rep = correlation_report(&runs).unwrap();
        assert_eq!(rep.groups.len(), 2);
        assert_eq!(rep.groups[0].label_smoothing, 0.0);
        assert_eq!(rep.groups[0].spearman, None);
        assert_eq!(rep.groups[1].spearman, Some(-1.0));
    }

    #[test]
    fn too_few_runs_is_an_error() {
        let runs = vec![artifact("a", 0.8, 3.0, 0.5), artifact("b", 0.8, 2.0, 0.6)];
        assert!(matches!(correlation_report(&runs), Err(Error::Report(_))));
        assert!(matches!(correlation_report(&[]), Err(Error::Report(_))));
    }
}

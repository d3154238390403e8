//! Closed-loop accuracy evaluation: the 12-row trial grid, error metrics,
//! generalization sweeps and the report bundle.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EvalBlock;
use crate::controller::{ControllerConfig, Outcome};
use crate::dataset::{derive_seed, run_and_log, FeedbackSource, TrialConfig, TrialLog, TrialSetup};
use crate::scene::DEFAULT_RECEIVER_HEIGHT;
use crate::units::ml_to_newtons;
use crate::{Error, Result};

/// One row of the evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub id: usize,
    /// [ml/s]
    pub speed: f64,
    /// [ml]
    pub source: f64,
    /// [ml]
    pub target: f64,
}

const fn row(id: usize, speed: f64, source: f64, target: f64) -> GridRow {
    GridRow {
        id,
        speed,
        source,
        target,
    }
}

pub const EVAL_GRID: [GridRow; 12] = [
    row(1, 15.0, 220.0, 120.0),
    row(2, 45.0, 220.0, 120.0),
    row(3, 80.0, 220.0, 120.0),
    row(4, 15.0, 220.0, 180.0),
    row(5, 45.0, 220.0, 180.0),
    row(6, 80.0, 220.0, 180.0),
    row(7, 15.0, 320.0, 150.0),
    row(8, 45.0, 320.0, 150.0),
    row(9, 80.0, 320.0, 150.0),
    row(10, 15.0, 320.0, 260.0),
    row(11, 45.0, 320.0, 260.0),
    row(12, 80.0, 320.0, 260.0),
];

/// Grid rows by 1-based id.
pub fn grid_rows(ids: &[usize]) -> Result<Vec<GridRow>> {
    ids.iter()
        .map(|&id| {
            EVAL_GRID
                .iter()
                .find(|r| r.id == id)
                .copied()
                .ok_or_else(|| Error::Argument(format!("no grid row {id}")))
        })
        .collect()
}

/// Where a grid run takes place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub pour_location: [f64; 3],
    /// [mm]
    pub grasp_offset: f64,
}

impl Variant {
    pub fn nominal(pour_location: [f64; 3]) -> Self {
        Variant {
            pour_location,
            grasp_offset: 0.0,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "loc_{:+.3}_{:+.3}_{:+.3}_grasp_{:+.1}",
            self.pour_location[0], self.pour_location[1], self.pour_location[2], self.grasp_offset
        )
    }
}

impl GridRow {
    /// Controller gains come from `base`; the speed is converted to N/s.
    pub fn trial_config(&self, base: &ControllerConfig, variant: &Variant, seed: u64) -> TrialConfig {
        TrialConfig {
            kp: base.kp,
            kd: base.kd,
            pour_rate: ml_to_newtons(self.speed),
            source_volume: self.source,
            target_weight: ml_to_newtons(self.target),
            grasp_offset: variant.grasp_offset,
            pour_location: variant.pour_location,
            seed: derive_seed(seed, self.id as u64),
            receiver_height: DEFAULT_RECEIVER_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub trial_id: usize,
    pub estimator: String,
    pub variant: Variant,
    pub target: f64,
    pub poured: f64,
    /// `poured − target`; positive is an over-pour [ml].
    pub error: f64,
    pub outcome: Outcome,
    pub emptied_source: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub avg: f64,
    pub rmse: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn rmse(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|e| e * e).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// Sample (n − 1) standard deviation; 0 for fewer than two values.
pub fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn summarize(errors: &[f64]) -> MetricsSummary {
    MetricsSummary {
        avg: mean(errors),
        rmse: rmse(errors),
        std: sample_std(errors),
        n: errors.len(),
    }
}

pub fn summarize_records(records: &[AccuracyRecord]) -> MetricsSummary {
    summarize(&records.iter().map(|r| r.error).collect::<Vec<_>>())
}

/// Prediction against shifted ground truth for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub trial_id: usize,
    pub variant: Variant,
    pub t: Vec<f64>,
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
}

impl Trace {
    fn from_log(id: usize, variant: Variant, log: &TrialLog, feedback: FeedbackSource<'_>) -> Self {
        let pred = log
            .frames
            .iter()
            .map(|f| match feedback {
                FeedbackSource::Plate => f.plate_force_raw,
                FeedbackSource::GroundTruth => f.gt_poured,
                FeedbackSource::Estimator(e) => e.predict(&f.conditioned()),
            })
            .collect();
        Trace {
            trial_id: id,
            variant,
            t: log.frames.iter().map(|f| f.t).collect(),
            gt: log.frames.iter().map(|f| f.gt_poured).collect(),
            pred,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,gt,pred\n");
        for i in 0..self.t.len() {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", self.t[i], self.gt[i], self.pred[i]);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSet {
    pub records: Vec<AccuracyRecord>,
    pub summary: MetricsSummary,
    pub traces: Vec<Trace>,
}

/// Runs `rows` under `variant` in parallel on the current rayon pool.
/// Results are in row order regardless of scheduling.
pub fn run_rows(
    setup: &TrialSetup,
    rows: &[GridRow],
    variant: Variant,
    feedback: FeedbackSource<'_>,
    label: &str,
    seed: u64,
) -> Result<RunSet> {
    let runs: Vec<(AccuracyRecord, Trace)> = rows
        .par_iter()
        .map(|row| {
            let config = row.trial_config(&setup.controller, &variant, seed);
            let log = run_and_log(setup, &config, feedback)?;
            let record = AccuracyRecord {
                trial_id: row.id,
                estimator: label.to_owned(),
                variant,
                target: row.target,
                poured: log.final_poured,
                error: log.final_poured - row.target,
                outcome: log.outcome,
                emptied_source: log.outcome == Outcome::EmptiedSource,
            };
            Ok((record, Trace::from_log(row.id, variant, &log, feedback)))
        })
        .collect::<Result<_>>()?;
    let (records, traces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    Ok(RunSet {
        summary: summarize_records(&records),
        records,
        traces,
    })
}

/// All 12 grid rows at the nominal location and grasp.
pub fn eval_grid(
    setup: &TrialSetup,
    feedback: FeedbackSource<'_>,
    label: &str,
    pour_location: [f64; 3],
    seed: u64,
) -> Result<RunSet> {
    run_rows(setup, &EVAL_GRID, Variant::nominal(pour_location), feedback, label, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub novel_location: RunSet,
    pub novel_grasp: RunSet,
}

fn merge(sets: Vec<RunSet>) -> RunSet {
    let mut records = Vec::new();
    let mut traces = Vec::new();
    for s in sets {
        records.extend(s.records);
        traces.extend(s.traces);
    }
    RunSet {
        summary: summarize_records(&records),
        records,
        traces,
    }
}

/// The sweep rows at each lateral location shift, then at each grasp offset.
pub fn generalization_sweep(
    setup: &TrialSetup,
    feedback: FeedbackSource<'_>,
    label: &str,
    eval: &EvalBlock,
    seed: u64,
) -> Result<SweepResult> {
    let rows = grid_rows(&eval.sweep_trials)?;
    let base = eval.pour_location;
    let locations = eval
        .novel_location_shifts
        .iter()
        .map(|dy| {
            let v = Variant::nominal([base[0], base[1] + dy, base[2]]);
            run_rows(setup, &rows, v, feedback, label, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let grasps = eval
        .novel_grasp_offsets
        .iter()
        .map(|&offset| {
            let v = Variant {
                pour_location: base,
                grasp_offset: offset,
            };
            run_rows(setup, &rows, v, feedback, label, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        novel_location: merge(locations),
        novel_grasp: merge(grasps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub rmse: f64,
    pub std: f64,
}

impl From<MetricsSummary> for SpreadSummary {
    fn from(m: MetricsSummary) -> Self {
        SpreadSummary { rmse: m.rmse, std: m.std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummaries {
    pub novel_location: SpreadSummary,
    pub novel_grasp: SpreadSummary,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub estimator: String,
    pub grid: Vec<AccuracyRecord>,
    pub summary: MetricsSummary,
    pub variants: Option<VariantSummaries>,
    /// Sweep runs behind `variants`.
    #[serde(default)]
    pub variant_runs: Vec<AccuracyRecord>,
}

impl Report {
    pub fn new(estimator: &str, grid: &RunSet, sweep: Option<&SweepResult>) -> Self {
        Report {
            estimator: estimator.to_owned(),
            grid: grid.records.clone(),
            summary: grid.summary,
            variants: sweep.map(|s| VariantSummaries {
                novel_location: s.novel_location.summary.into(),
                novel_grasp: s.novel_grasp.summary.into(),
            }),
            variant_runs: sweep
                .map(|s| {
                    s.novel_location
                        .records
                        .iter()
                        .chain(&s.novel_grasp.records)
                        .cloned()
                        .collect()
                })
                .unwrap_or_default(),
        }
    }

    pub fn empty(estimator: &str) -> Self {
        Report {
            estimator: estimator.to_owned(),
            grid: Vec::new(),
            summary: summarize(&[]),
            variants: None,
            variant_runs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Plain-text accuracy tables.
    pub fn tables(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "estimator: {}", self.estimator);
        let _ = writeln!(s, "{:>5} {:>10} {:>10} {:>10}  outcome", "trial", "target", "poured", "error");
        for r in &self.grid {
            let _ = writeln!(
                s,
                "{:>5} {:>10.2} {:>10.2} {:>+10.2}  {}{}",
                r.trial_id,
                r.target,
                r.poured,
                r.error,
                r.outcome.as_str(),
                if r.emptied_source { " *" } else { "" }
            );
        }
        let m = &self.summary;
        let _ = writeln!(s, "\n{:>10} {:>10} {:>10}", "avg", "rmse", "std");
        let _ = writeln!(s, "{:>+10.2} {:>10.2} {:>10.2}", m.avg, m.rmse, m.std);
        if let Some(v) = &self.variants {
            let _ = writeln!(s, "\n{:<16} {:>10} {:>10}", "variant", "rmse", "std");
            for (name, x) in [("novel location", v.novel_location), ("novel grasp", v.novel_grasp)] {
                let _ = writeln!(s, "{:<16} {:>10.2} {:>10.2}", name, x.rmse, x.std);
            }
        }
        s
    }
}

/// Writes `report.json`, `tables.txt` and one `traces/<trial>_<variant>.csv`
/// per run into `dir`.
pub fn write_report(dir: &Path, report: &Report, traces: &[Trace]) -> Result<()> {
    let write = |p: &Path, text: &str| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("tables.txt"), &report.tables())?;
    let trace_dir = dir.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    for t in traces {
        let name = format!("trial_{:02}_{}.csv", t.trial_id, t.variant.label());
        write(&trace_dir.join(name), &t.to_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DEFAULT_POUR_LOCATION;

    #[test]
    fn published_analytical_row_metrics() {
        let e = [-18., -14., -6., -21., -19., -20., -20., -10., -6., -22., -24., -16.];
        let m = summarize(&e);
        assert!((m.avg + 16.33).abs() < 0.01, "{}", m.avg);
        assert!((m.rmse - 17.34).abs() < 0.01, "{}", m.rmse);
        assert!((m.std - 6.10).abs() < 0.01, "{}", m.std);
    }

    #[test]
    fn rmse_identity() {
        let e = [1.0, -3.0, 2.5, 0.0];
        let m = summarize(&e);
        let pop_var = m.std * m.std * 3.0 / 4.0;
        assert!((m.rmse * m.rmse - (m.avg * m.avg + pop_var)).abs() < 1e-12);
    }

    #[test]
    fn pour_rate_conversion() {
        let c = EVAL_GRID[4].trial_config(&ControllerConfig::default(), &Variant::nominal(DEFAULT_POUR_LOCATION), 0);
        assert!((c.pour_rate - 0.441).abs() < 1e-12);
        assert!((c.target_weight - 1.764).abs() < 1e-12);
    }

    #[test]
    fn empty_report_is_valid() {
        let r = Report::empty("proprioceptive");
        let back = Report::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.tables().contains("avg"));
    }

    #[test]
    fn trace_has_three_columns() {
        let t = Trace {
            trial_id: 1,
            variant: Variant::nominal(DEFAULT_POUR_LOCATION),
            t: vec![0.0, 0.01],
            gt: vec![0.0, 0.1],
            pred: vec![0.0, 0.2],
        };
        assert!(t.to_csv().lines().all(|l| l.split(',').count() == 3));
    }

    #[test]
    fn grid_row_lookup() {
        let rows = grid_rows(&[1, 6, 8, 12]).unwrap();
        assert_eq!(rows.iter().map(|r| r.speed).collect::<Vec<_>>(), vec![15.0, 80.0, 45.0, 80.0]);
        assert!(grid_rows(&[13]).is_err());
    }
}

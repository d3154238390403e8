//! The five stages behind the command line: collect, train, eval-offline,
//! eval-loop and report. Each stage writes into a fresh output directory that
//! only appears once everything inside it has been written.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::dataset::{
    derive_seed, read_manifest, read_trial, run_and_log, sample_config, split_trials, write_manifest, write_trial,
    DatasetManifest, FeedbackSource, ManifestEntry, Split, TrialLog, MANIFEST_FILE,
};
use crate::estimator::{evaluate_mse, train, Estimator, EstimatorKind, LossCurves, Scored, TrainedModel};
use crate::evalkit::{eval_grid, generalization_sweep, grid_rows, run_rows, Report, Variant, EVAL_GRID};
use crate::{Error, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Collect,
    Train,
    EvalOffline,
    EvalLoop,
    Report,
}

/// Output file name and its SHA-256.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Persisted next to every stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputFile>,
}

/// Seed and worker count shared by all stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads; `None` uses the rayon default.
    pub jobs: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = io(dir, fs::read_dir(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// Runs `body` against a staging directory next to `out`, writes the run
/// manifest, then renames the staging directory into place. An existing
/// `out` is only replaced if it holds a run manifest of its own.
fn in_output_dir<T>(
    out: &Path,
    stage: Stage,
    opts: &RunOptions,
    config: &ExperimentConfig,
    inputs: Vec<PathBuf>,
    body: impl FnOnce(&Path) -> Result<T>,
) -> Result<T> {
    if out.exists() && !out.join(RUN_MANIFEST_FILE).is_file() {
        let empty = out.is_dir() && io(out, fs::read_dir(out))?.next().is_none();
        if !empty {
            return Err(Error::Argument(format!(
                "{} exists and is not a previous output directory",
                out.display()
            )));
        }
    }
    let name = out
        .file_name()
        .ok_or_else(|| Error::Argument(format!("bad output directory {}", out.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    io(parent, fs::create_dir_all(parent))?;
    let staging = parent.join(format!(".{name}.staging-{}", std::process::id()));
    if staging.exists() {
        io(&staging, fs::remove_dir_all(&staging))?;
    }
    io(&staging, fs::create_dir(&staging))?;

    let result = body(&staging).and_then(|value| {
        let mut files = Vec::new();
        list_files(&staging, &staging, &mut files)?;
        let outputs = files
            .into_iter()
            .map(|rel| {
                let p = staging.join(&rel);
                Ok(OutputFile {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_hex(&io(&p, fs::read(&p))?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            stage,
            config_path: opts.config_path.clone(),
            output_dir: out.to_path_buf(),
            seed: opts.seed,
            inputs,
            config: config.clone(),
            outputs,
        };
        let p = staging.join(RUN_MANIFEST_FILE);
        io(&p, fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(value)
    });
    let value = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    if out.exists() {
        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        io(out, fs::rename(out, &old))?;
        io(out, fs::rename(&staging, out))?;
        io(&old, fs::remove_dir_all(&old))?;
    } else {
        io(out, fs::rename(&staging, out))?;
    }
    Ok(value)
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?
            .install(f),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectSummary {
    pub manifest: DatasetManifest,
    /// SHA-256 of the written `manifest.json`.
    pub manifest_hash: String,
}

const STREAM_CONFIGS: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_EVAL: u64 = 4;

/// Samples and simulates `n_trials` plate-feedback trials, writes them with a
/// manifest and the train/val/test assignment.
pub fn collect(config: &ExperimentConfig, n_trials: usize, opts: &RunOptions, out: &Path) -> Result<CollectSummary> {
    config.validate()?;
    let counts = config.trial.split;
    if n_trials < counts.total() {
        return Err(Error::InsufficientTrials {
            needed: counts.total(),
            available: n_trials,
        });
    }
    let setup = config.setup()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, STREAM_CONFIGS));
    let configs: Vec<_> = (0..n_trials)
        .map(|_| {
            let mut c = sample_config(&mut rng);
            c.receiver_height = config.trial.receiver_height;
            c
        })
        .collect();
    let split_seed = derive_seed(opts.seed, STREAM_SPLIT);
    let ids: Vec<usize> = (0..n_trials).collect();
    let (train_ids, val_ids, _) = split_trials(&ids, counts, split_seed)?;

    in_output_dir(out, Stage::Collect, opts, config, Vec::new(), |dir| {
        let names = with_jobs(opts.jobs, || {
            configs
                .par_iter()
                .enumerate()
                .map(|(id, c)| {
                    let log = run_and_log(&setup, c, FeedbackSource::Plate)?;
                    write_trial(dir, id, &log)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let trials = names
            .into_iter()
            .enumerate()
            .map(|(id, (csv, sidecar, commands))| ManifestEntry {
                id,
                csv,
                sidecar,
                commands,
                split: if train_ids.binary_search(&id).is_ok() {
                    Split::Train
                } else if val_ids.binary_search(&id).is_ok() {
                    Split::Val
                } else {
                    Split::Test
                },
            })
            .collect();
        let manifest = DatasetManifest {
            seed: opts.seed,
            split_seed,
            counts,
            trials,
        };
        let path = write_manifest(dir, &manifest)?;
        let manifest_hash = sha256_hex(&io(&path, fs::read(&path))?);
        Ok(CollectSummary { manifest, manifest_hash })
    })
}

/// Trials of one split, in id order.
pub fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<TrialLog>> {
    let (dir, manifest) = read_manifest(manifest_path)?;
    manifest.entries(split).map(|e| read_trial(&dir, e)).collect()
}

fn manifest_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model: TrainedModel,
    pub curves: LossCurves,
}

pub const MODEL_FILE: &str = "model.json";
pub const FINAL_MODEL_FILE: &str = "model_final.json";

/// Fits `kind` on the train split, validating on val. Writes the best and
/// final weights and the loss curves.
pub fn train_stage(
    config: &ExperimentConfig,
    manifest: &Path,
    kind: EstimatorKind,
    opts: &RunOptions,
    out: &Path,
) -> Result<TrainSummary> {
    if !kind.is_trainable() {
        return Err(Error::Argument(format!("{kind} has nothing to train")));
    }
    let train_set = load_split(manifest, Split::Train)?;
    let val_set = load_split(manifest, Split::Val)?;
    let seed = derive_seed(opts.seed, STREAM_TRAIN);
    let outcome = train(kind, &train_set, &val_set, &config.train, seed)?;
    in_output_dir(out, Stage::Train, opts, config, vec![manifest_file(manifest)], |dir| {
        outcome.best.save(&dir.join(MODEL_FILE))?;
        outcome.last.save(&dir.join(FINAL_MODEL_FILE))?;
        let p = dir.join("loss_curves.json");
        io(&p, fs::write(&p, serde_json::to_string_pretty(&outcome.curves)? + "\n"))?;
        let mut csv = String::from("epoch,train,val\n");
        for (e, (t, v)) in outcome.curves.train.iter().zip(&outcome.curves.val).enumerate() {
            csv.push_str(&format!("{e},{t:.9},{v:.9}\n"));
        }
        let p = dir.join("loss_curves.csv");
        io(&p, fs::write(&p, csv))?;
        Ok(TrainSummary {
            model: outcome.best.clone(),
            curves: outcome.curves.clone(),
        })
    })
}

/// What to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalSource {
    /// A model file written by [`train_stage`].
    Model(PathBuf),
    AnalyticalFz,
    /// Exact labels: scores zero offline, ground-truth feedback in closed loop.
    Oracle,
}

impl EvalSource {
    pub fn label(&self) -> Result<String> {
        Ok(match self {
            EvalSource::Model(p) => TrainedModel::load(p)?.kind().to_string(),
            EvalSource::AnalyticalFz => EstimatorKind::AnalyticalFz.to_string(),
            EvalSource::Oracle => "oracle".into(),
        })
    }

    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            EvalSource::Model(p) => vec![p.clone()],
            _ => Vec::new(),
        }
    }

    fn load(&self) -> Result<Option<Estimator>> {
        Ok(match self {
            EvalSource::Model(p) => Some(Estimator::Trained(TrainedModel::load(p)?)),
            EvalSource::AnalyticalFz => Some(Estimator::AnalyticalFz),
            EvalSource::Oracle => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineResult {
    pub estimator: String,
    pub split: Split,
    pub n_trials: usize,
    pub n_frames: usize,
    /// [N²]
    pub mse: f64,
}

/// Frame-level MSE on the test split.
pub fn eval_offline(
    config: &ExperimentConfig,
    manifest: &Path,
    source: &EvalSource,
    opts: &RunOptions,
    out: &Path,
) -> Result<OfflineResult> {
    let test = load_split(manifest, Split::Test)?;
    let estimator = source.load()?;
    let scored = match &estimator {
        Some(e) => Scored::Estimator(e),
        None => Scored::Oracle,
    };
    let result = OfflineResult {
        estimator: source.label()?,
        split: Split::Test,
        n_trials: test.len(),
        n_frames: test.iter().map(|t| t.frames.len()).sum(),
        mse: evaluate_mse(scored, &test)?,
    };
    let mut inputs = vec![manifest_file(manifest)];
    inputs.extend(source.inputs());
    in_output_dir(out, Stage::EvalOffline, opts, config, inputs, |dir| {
        let p = dir.join("mse.json");
        io(&p, fs::write(&p, serde_json::to_string_pretty(&result)? + "\n"))?;
        Ok(result.clone())
    })
}

/// Closed-loop grid (all 12 rows unless `grid` names a subset) plus, when
/// `sweep` is set, the novel location and grasp runs.
pub fn eval_loop(
    config: &ExperimentConfig,
    source: &EvalSource,
    grid: Option<&[usize]>,
    sweep: bool,
    opts: &RunOptions,
    out: &Path,
) -> Result<Report> {
    let setup = config.setup()?;
    let estimator = source.load()?;
    let feedback = match &estimator {
        Some(e) => FeedbackSource::Estimator(e),
        None => FeedbackSource::GroundTruth,
    };
    let label = source.label()?;
    let seed = derive_seed(opts.seed, STREAM_EVAL);
    let location = config.eval.pour_location;
    let (grid_set, sweep_set) = with_jobs(opts.jobs, || {
        let grid_set = match grid {
            None => eval_grid(&setup, feedback, &label, location, seed)?,
            Some(ids) => run_rows(&setup, &grid_rows(ids)?, Variant::nominal(location), feedback, &label, seed)?,
        };
        let sweep_set = if sweep {
            Some(generalization_sweep(&setup, feedback, &label, &config.eval, seed)?)
        } else {
            None
        };
        Ok((grid_set, sweep_set))
    })?;
    let report = Report::new(&label, &grid_set, sweep_set.as_ref());
    let mut traces = grid_set.traces.clone();
    if let Some(s) = &sweep_set {
        traces.extend(s.novel_location.traces.iter().cloned());
        traces.extend(s.novel_grasp.traces.iter().cloned());
    }
    in_output_dir(out, Stage::EvalLoop, opts, config, source.inputs(), |dir| {
        crate::evalkit::write_report(dir, &report, &traces)?;
        Ok(report.clone())
    })
}

/// Side-by-side summary of several `eval-loop` outputs.
pub fn report(config: &ExperimentConfig, inputs: &[PathBuf], opts: &RunOptions, out: &Path) -> Result<Vec<Report>> {
    let reports = inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
            let text = io(&file, fs::read_to_string(&file))?;
            Report::from_json(&text).map_err(|e| Error::format(&file, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = format!(
        "{:<16} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "estimator", "runs", "avg", "rmse", "std", "loc rmse", "grasp rmse"
    );
    for r in &reports {
        let (loc, grasp) = r
            .variants
            .as_ref()
            .map(|v| (format!("{:.2}", v.novel_location.rmse), format!("{:.2}", v.novel_grasp.rmse)))
            .unwrap_or(("-".into(), "-".into()));
        text.push_str(&format!(
            "{:<16} {:>6} {:>+9.2} {:>9.2} {:>9.2} {:>9} {:>9}\n",
            r.estimator, r.summary.n, r.summary.avg, r.summary.rmse, r.summary.std, loc, grasp
        ));
    }
    in_output_dir(out, Stage::Report, opts, config, inputs.to_vec(), |dir| {
        let p = dir.join("summary.txt");
        io(&p, fs::write(&p, &text))?;
        for r in &reports {
            let p = dir.join(format!("tables_{}.txt", r.estimator));
            io(&p, fs::write(&p, r.tables()))?;
        }
        let p = dir.join("reports.json");
        io(&p, fs::write(&p, serde_json::to_string_pretty(&reports)? + "\n"))?;
        Ok(reports.clone())
    })
}

/// Number of rows in the default closed-loop grid.
pub const DEFAULT_GRID_LEN: usize = EVAL_GRID.len();

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn collect_rejects_too_few_trials() {
        let dir = tempfile::tempdir().unwrap();
        let err = collect(&ExperimentConfig::default(), 3, &RunOptions::default(), &dir.path().join("ds")).unwrap_err();
        assert!(matches!(err, Error::InsufficientTrials { needed: 250, available: 3 }));
        assert!(!dir.path().join("ds").exists());
    }

    #[test]
    fn refuses_foreign_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("keep.txt"), "x").unwrap();
        let r = in_output_dir(dir.path(), Stage::Report, &RunOptions::default(), &ExperimentConfig::default(), vec![], |_| Ok(()));
        assert!(r.is_err());
        assert!(dir.path().join("keep.txt").exists());
    }

    #[test]
    fn failed_stage_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let r: Result<()> = in_output_dir(&out, Stage::Report, &RunOptions::default(), &ExperimentConfig::default(), vec![], |d| {
            fs::write(d.join("partial"), "x").unwrap();
            Err(Error::Argument("boom".into()))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn output_dir_is_replaced_whole() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let opts = RunOptions::default();
        let cfg = ExperimentConfig::default();
        in_output_dir(&out, Stage::Report, &opts, &cfg, vec![], |d| Ok(fs::write(d.join("a"), "1").unwrap())).unwrap();
        in_output_dir(&out, Stage::Report, &opts, &cfg, vec![], |d| Ok(fs::write(d.join("b"), "2").unwrap())).unwrap();
        assert!(!out.join("a").exists() && out.join("b").exists());
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(out.join(RUN_MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"2"));
    }
}

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{quantize, SensorFrame, Split, SplitCounts, TrialConfig, TrialLog};
use crate::controller::{CommandRecord, Outcome};
use crate::{Error, Result};

/// Column order of the per-trial CSV, identical to [`SensorFrame`] field order.
pub const TRIAL_CSV_HEADER: &str = "t,wrist_pos,wrist_vel,fx,fy,fz,tx,ty,tz,\
ta00,ta01,ta02,ta03,ta04,ta05,ta06,ta07,ta08,ta09,ta10,ta11,ta12,ta13,ta14,ta15,ta16,ta17,ta18,\
tb00,tb01,tb02,tb03,tb04,tb05,tb06,tb07,tb08,tb09,tb10,tb11,tb12,tb13,tb14,tb15,tb16,tb17,tb18,\
plate_raw,gt_poured";

const COMMANDS_HEADER: &str = "t,state,ref,measured,u";

/// Everything about a trial that is not a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSidecar {
    pub config: TrialConfig,
    pub outcome: Outcome,
    pub final_poured_ml: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: usize,
    pub csv: String,
    pub sidecar: String,
    pub commands: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub split_seed: u64,
    pub counts: SplitCounts,
    pub trials: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.trials.iter().filter(move |e| e.split == split)
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn fmt6(v: f64) -> String {
    format!("{:.6}", quantize(v))
}

pub fn write_trial_csv(path: &Path, frames: &[SensorFrame]) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    let mut text = String::with_capacity(frames.len() * 400);
    text.push_str(TRIAL_CSV_HEADER);
    text.push('\n');
    for f in frames {
        let row: Vec<String> = f.to_row().into_iter().map(fmt6).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trial_csv(path: &Path) -> Result<Vec<SensorFrame>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.join(",") != TRIAL_CSV_HEADER {
        return Err(Error::format(path, "unexpected header"));
    }
    let mut frames = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        let frame = SensorFrame::from_row(&row)
            .ok_or_else(|| Error::format(path, format!("row {}: wrong column count", line + 1)))?;
        frames.push(frame);
    }
    Ok(frames)
}

fn write_commands_csv(path: &Path, commands: &[CommandRecord]) -> Result<()> {
    let mut text = String::from(COMMANDS_HEADER);
    text.push('\n');
    for c in commands {
        let reference = if c.reference.is_nan() { String::new() } else { fmt6(c.reference) };
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt6(c.t),
            c.state,
            reference,
            fmt6(c.measured),
            fmt6(c.command)
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `(t, state, ref, measured, u)`; `ref` is NaN outside regulation.
pub fn read_commands_csv(path: &Path) -> Result<Vec<(f64, String, f64, f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::format(path, e))?;
        let num = |i: usize| -> Result<f64> {
            let s = r.get(i).unwrap_or("");
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                s.parse().map_err(|e| Error::format(path, e))
            }
        };
        out.push((num(0)?, r.get(1).unwrap_or("").to_owned(), num(2)?, num(3)?, num(4)?));
    }
    Ok(out)
}

fn trial_stem(id: usize) -> String {
    format!("trial_{id:04}")
}

/// Writes the frame CSV, JSON sidecar and command log for trial `id` into
/// `dir`, returning the three file names.
pub fn write_trial(dir: &Path, id: usize, log: &TrialLog) -> Result<(String, String, String)> {
    let stem = trial_stem(id);
    let csv_name = format!("{stem}.csv");
    let json_name = format!("{stem}.json");
    let cmd_name = format!("{stem}_commands.csv");
    write_trial_csv(&dir.join(&csv_name), &log.frames)?;
    let sidecar = TrialSidecar {
        config: log.config.clone(),
        outcome: log.outcome,
        final_poured_ml: log.final_poured,
        n_frames: log.frames.len(),
    };
    let json_path = dir.join(&json_name);
    fs::write(&json_path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    write_commands_csv(&dir.join(&cmd_name), &log.commands)?;
    Ok((csv_name, json_name, cmd_name))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::format(path, format!("{} at `{}`", e.inner(), e.path())))
}

/// Frames and sidecar of one manifest entry. The command log is not loaded.
pub fn read_trial(dir: &Path, entry: &ManifestEntry) -> Result<TrialLog> {
    let frames = read_trial_csv(&dir.join(&entry.csv))?;
    let sidecar: TrialSidecar = read_json(&dir.join(&entry.sidecar))?;
    if sidecar.n_frames != frames.len() {
        return Err(Error::format(
            dir.join(&entry.csv),
            format!("sidecar lists {} frames, file has {}", sidecar.n_frames, frames.len()),
        ));
    }
    Ok(TrialLog {
        config: sidecar.config,
        frames,
        outcome: sidecar.outcome,
        final_poured: sidecar.final_poured_ml,
        commands: Vec::new(),
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Accepts the manifest file itself or the directory holding it.
pub fn read_manifest(path: &Path) -> Result<(PathBuf, DatasetManifest)> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, read_json(&file)?))
}

#[cfg(test)]
mod tests {
    use super::super::sample_config;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn header_has_one_column_per_value() {
        assert_eq!(TRIAL_CSV_HEADER.split(',').count(), SensorFrame::N_COLUMNS);
    }

    #[test]
    fn trial_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<SensorFrame> = (0..50)
            .map(|i| {
                let x = i as f64 * 0.013_777_777_7;
                SensorFrame {
                    t: 3.0 + i as f64 * 0.01,
                    wrist_pos: x,
                    wrist_vel: -x,
                    ee_wrench: [x, 2.0 * x, -3.0 * x, 1e-7, -1e-7, 0.5],
                    tactile_a: std::array::from_fn(|c| c as f64 * x),
                    tactile_b: std::array::from_fn(|c| -(c as f64) * x),
                    plate_force_raw: x * x,
                    gt_poured: x,
                }
                .quantized()
            })
            .collect();
        let log = TrialLog {
            config: sample_config(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1)),
            frames,
            outcome: Outcome::Completed,
            final_poured: 120.5,
            commands: vec![CommandRecord {
                t: 3.0,
                state: "tilt",
                reference: f64::NAN,
                measured: 0.0,
                command: 0.1,
            }],
        };
        let (csv, sidecar, commands) = write_trial(dir.path(), 7, &log).unwrap();
        let entry = ManifestEntry {
            id: 7,
            csv,
            sidecar,
            commands: commands.clone(),
            split: Split::Train,
        };
        let back = read_trial(dir.path(), &entry).unwrap();
        assert_eq!(back.frames, log.frames);
        assert_eq!(back.config, log.config);
        assert_eq!(back.final_poured, log.final_poured);
        let cmds = read_commands_csv(&dir.path().join(commands)).unwrap();
        assert_eq!(cmds.len(), 1);
        assert!(cmds[0].2.is_nan());
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_trial_csv(&p), Err(Error::Format { .. })));
    }
}

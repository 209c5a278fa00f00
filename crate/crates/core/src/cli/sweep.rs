use super::{io_err, load_dataset, CliError, ExperimentConfig, Point, Result};
use crate::sampling::DesignMatrix;
use crate::training::run_folds;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// One fold of one sweep point. Failed folds carry an `error` and no
/// accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dim: usize,
    pub multiplier: usize,
    pub e: usize,
    pub h: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub fold: usize,
    pub test_accuracy: Option<f64>,
    pub epochs_run: Option<usize>,
    pub wall_seconds: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

type Key = (usize, usize, usize, usize, usize, usize);

impl SweepRow {
    pub fn key(&self) -> Key {
        (
            self.dim,
            self.multiplier,
            self.e,
            self.h,
            self.layers,
            self.fold,
        )
    }

    pub fn point(&self) -> Point {
        Point {
            dim: self.dim,
            multiplier: self.multiplier,
            e: self.e,
            h: self.h,
            layers: self.layers,
        }
    }

    fn failed(point: Point, fold: usize, seed: u64, error: String) -> Self {
        Self {
            dim: point.dim,
            multiplier: point.multiplier,
            e: point.e,
            h: point.h,
            layers: point.layers,
            fold,
            test_accuracy: None,
            epochs_run: None,
            wall_seconds: None,
            seed,
            error: Some(error),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepOptions {
    pub jobs: usize,
    /// Record per-fold wall time. Off makes the CSV reproducible byte for
    /// byte.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            timing: true,
        }
    }
}

fn check_unique(rows: &[SweepRow]) -> Result<()> {
    for w in rows.windows(2) {
        if w[0].key() == w[1].key() {
            let k = w[0].key();
            return Err(CliError::Runtime(format!(
                "duplicate sweep row for dim={} multiplier={} e={} h={} L={} fold={}",
                k.0, k.1, k.2, k.3, k.4, k.5
            )));
        }
    }
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    rows.sort_by_key(SweepRow::key);
    check_unique(&rows)?;
    Ok(rows)
}

/// Sorts by key, rejects duplicates and replaces `path` atomically.
pub fn write_sweep_csv(path: &Path, rows: &mut [SweepRow]) -> Result<()> {
    rows.sort_by_key(SweepRow::key);
    check_unique(rows)?;
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", tmp.display())))?;
        for r in rows.iter() {
            w.serialize(r)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", tmp.display())))?;
        }
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn run_point(
    point: Point,
    dataset: &[DesignMatrix],
    cfg: &ExperimentConfig,
    opts: SweepOptions,
) -> Vec<SweepRow> {
    let train_cfg = cfg.train_config();
    let folds = train_cfg.folds;
    let runs = match run_folds(&point.model_config(), dataset, &train_cfg, opts.jobs) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{}: {e}", point.tag());
            return (0..folds)
                .map(|k| SweepRow::failed(point, k, cfg.seed, e.to_string()))
                .collect();
        }
    };
    runs.into_iter()
        .map(|run| match run.outcome {
            Ok((fold, _)) => SweepRow {
                dim: point.dim,
                multiplier: point.multiplier,
                e: point.e,
                h: point.h,
                layers: point.layers,
                fold: run.fold_index,
                test_accuracy: Some(fold.test_accuracy),
                epochs_run: Some(fold.epochs_run),
                wall_seconds: opts
                    .timing
                    .then(|| (run.wall_seconds * 1000.0).round() / 1000.0),
                seed: cfg.seed,
                error: None,
            },
            Err(e) => {
                log::error!("{} fold {}: {e}", point.tag(), run.fold_index);
                SweepRow::failed(point, run.fold_index, cfg.seed, e.to_string())
            }
        })
        .collect()
}

/// Runs every valid grid point and keeps the sweep CSV sorted and current
/// after each point. Points already complete in an existing CSV are kept and
/// not re-run; incomplete ones are re-run.
pub fn cmd_sweep(cfg: &ExperimentConfig, opts: SweepOptions) -> Result<PathBuf> {
    cfg.validate()?;
    let points = cfg.points();
    if points.is_empty() {
        return Err(CliError::Config("the grid has no valid (e, h) pair".into()));
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let path = cfg.sweep_csv();
    let mut rows = if path.exists() {
        read_sweep_csv(&path)?
    } else {
        Vec::new()
    };
    let folds = cfg.train.folds;
    let mut loaded: Option<((usize, usize), Vec<DesignMatrix>)> = None;
    for point in points {
        let existing: Vec<&SweepRow> = rows.iter().filter(|r| r.point() == point).collect();
        if let Some(r) = existing.iter().find(|r| r.seed != cfg.seed) {
            return Err(CliError::Config(format!(
                "{} already holds {} results for seed {}, not {}; use another output directory",
                path.display(),
                point.tag(),
                r.seed,
                cfg.seed
            )));
        }
        if existing.len() == folds && existing.iter().all(|r| r.fold < folds) {
            log::info!("{}: already complete, skipping", point.tag());
            continue;
        }
        rows.retain(|r| r.point() != point);

        let key = (point.dim, point.multiplier);
        if loaded.as_ref().map(|(k, _)| *k) != Some(key) {
            // Free the previous dataset before reading the next one.
            drop(loaded.take());
            loaded = Some((key, load_dataset(cfg, point.dim, point.multiplier)?));
        }
        let dataset = &loaded.as_ref().expect("just loaded").1;
        log::info!("{}: training {folds} folds", point.tag());
        let new = run_point(point, dataset, cfg, opts);
        let ok: Vec<f64> = new.iter().filter_map(|r| r.test_accuracy).collect();
        if !ok.is_empty() {
            log::info!(
                "{}: mean test accuracy {:.4} over {} folds",
                point.tag(),
                ok.iter().sum::<f64>() / ok.len() as f64,
                ok.len()
            );
        }
        rows.extend(new);
        write_sweep_csv(&path, &mut rows)?;
    }
    if !path.exists() {
        write_sweep_csv(&path, &mut rows)?;
    }
    Ok(path)
}

//! Experiment front door: dataset cache, single cross-validated runs, grid
//! sweeps and markdown reports.
//!
//! Exit codes of the binary: `0` success, `2` configuration or usage error,
//! `3` dataset cache error, `4` runtime failure.

mod cache;
mod report;
mod sweep;

pub use cache::{
    cmd_generate, design_path, load_dataset, read_design, write_design, CacheEntry, Manifest,
    MANIFEST_FILE,
};
pub use report::{cmd_report, render_report, BAND};
pub use sweep::{cmd_sweep, read_sweep_csv, write_sweep_csv, SweepOptions, SweepRow};

use crate::fnsuite::NUM_CLASSES;
use crate::model::{save_checkpoint, ModelConfig};
use crate::sampling::Multiplier;
use crate::training::{aggregate, run_folds, CVReport, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset cache error: {0}")]
    Cache(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Cache(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Grid of model shapes; every combination is one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub e: Vec<usize>,
    pub h: Vec<usize>,
    #[serde(rename = "L")]
    pub layers: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            e: vec![30],
            h: vec![1, 2, 3],
            layers: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub instances_per_class: u64,
    pub multipliers: Vec<usize>,
    pub grid: Grid,
    /// Training overrides; `train.seed` is replaced by `seed`.
    pub train: TrainConfig,
    /// Seeds both dataset generation and training.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: vec![3, 20],
            instances_per_class: 100,
            multipliers: vec![50, 100],
            grid: Grid::default(),
            train: TrainConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("transopt-out"),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub dim: Option<usize>,
    pub multiplier: Option<usize>,
    pub embed: Option<usize>,
    pub heads: Option<usize>,
    pub layers: Option<usize>,
    pub instances_per_class: Option<u64>,
}

/// One model shape on one dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub dim: usize,
    pub multiplier: usize,
    pub e: usize,
    pub h: usize,
    pub layers: usize,
}

impl Point {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.dim, self.e, self.h, self.layers)
    }

    pub fn tag(&self) -> String {
        format!(
            "d{}_m{}_e{}_h{}_L{}",
            self.dim, self.multiplier, self.e, self.h, self.layers
        )
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.dim {
            self.dims = vec![v];
        }
        if let Some(v) = o.multiplier {
            self.multipliers = vec![v];
        }
        if let Some(v) = o.embed {
            self.grid.e = vec![v];
        }
        if let Some(v) = o.heads {
            self.grid.h = vec![v];
        }
        if let Some(v) = o.layers {
            self.grid.layers = vec![v];
        }
        if let Some(v) = o.instances_per_class {
            self.instances_per_class = v;
        }
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let lists = [
            ("dims", &self.dims),
            ("multipliers", &self.multipliers),
            ("grid.e", &self.grid.e),
            ("grid.h", &self.grid.h),
            ("grid.L", &self.grid.layers),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
            if list.contains(&0) {
                return bad(format!("{name} entries must be positive"));
            }
        }
        if let Some(&d) = self.dims.iter().find(|&&d| d < 2) {
            return bad(format!("dimension {d} is below 2"));
        }
        for &m in &self.multipliers {
            Multiplier::new(m).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.instances_per_class == 0 {
            return bad("instances_per_class must be >= 1".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if (self.instances_per_class as usize) < self.train.folds {
            return bad(format!(
                "instances_per_class = {} cannot fill {} stratified folds",
                self.instances_per_class, self.train.folds
            ));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output_dir.join("cache")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.output_dir.join("sweep.csv")
    }

    /// Every valid grid point, in key order. Points with `e mod h ≠ 0` are
    /// skipped with a warning.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for &dim in &self.dims {
            for &multiplier in &self.multipliers {
                for &e in &self.grid.e {
                    for &h in &self.grid.h {
                        if e % h != 0 {
                            log::warn!("skipping e={e}, h={h}: {e} mod {h} != 0");
                            continue;
                        }
                        for &layers in &self.grid.layers {
                            out.push(Point {
                                dim,
                                multiplier,
                                e,
                                h,
                                layers,
                            });
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// The point a single `train` run uses: the first entry of every list.
    pub fn single_point(&self) -> Point {
        let first = |name: &str, l: &[usize]| {
            if l.len() > 1 {
                log::info!("{name} lists {} values; using {}", l.len(), l[0]);
            }
            l[0]
        };
        Point {
            dim: first("dims", &self.dims),
            multiplier: first("multipliers", &self.multipliers),
            e: first("grid.e", &self.grid.e),
            h: first("grid.h", &self.grid.h),
            layers: first("grid.L", &self.grid.layers),
        }
    }
}

pub struct TrainOutput {
    pub report: CVReport,
    pub report_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Cross-validates the single configured point on the cached dataset and
/// writes `report.json`, `summary.txt` and one checkpoint per fold.
pub fn cmd_train(cfg: &ExperimentConfig, jobs: usize) -> Result<TrainOutput> {
    cfg.validate()?;
    let point = cfg.single_point();
    let model_cfg = point.model_config();
    model_cfg
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let dataset = load_dataset(cfg, point.dim, point.multiplier)?;
    let train_cfg = cfg.train_config();
    let runs = run_folds(&model_cfg, &dataset, &train_cfg, jobs)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let dir = cfg.output_dir.join("train").join(point.tag());
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut folds = Vec::with_capacity(runs.len());
    for run in runs {
        let (fold, model) = run
            .outcome
            .map_err(|e| CliError::Runtime(format!("fold {}: {e}", run.fold_index)))?;
        let ckpt = dir.join(format!("fold{}.topt", run.fold_index));
        save_checkpoint(&model, &ckpt).map_err(|e| CliError::Runtime(e.to_string()))?;
        folds.push(fold);
    }
    let report = aggregate(&model_cfg, &dataset, &train_cfg, folds);

    let report_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
    fs::write(&report_path, json + "\n").map_err(|e| io_err(&report_path, e))?;
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, summary_text(&point, cfg.seed, &report))
        .map_err(|e| io_err(&summary_path, e))?;
    log::info!(
        "{}: mean accuracy {:.4} ± {:.4}",
        point.tag(),
        report.mean_accuracy,
        report.std_accuracy
    );
    Ok(TrainOutput {
        report,
        report_path,
        summary_path,
    })
}

/// Human-readable run summary: mean ± std, per-fold accuracies and the
/// confusion matrix.
pub fn summary_text(point: &Point, seed: u64, report: &CVReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "dim={} multiplier={} e={} h={} L={} seed={} designs={} folds={} parameters={}",
        point.dim,
        point.multiplier,
        point.e,
        point.h,
        point.layers,
        seed,
        report.data.designs,
        report.folds.len(),
        report.parameter_count
    );
    let _ = writeln!(
        s,
        "mean accuracy {:.4} ± {:.4} (population std over {} folds; chance {:.4})",
        report.mean_accuracy,
        report.std_accuracy,
        report.folds.len(),
        1.0 / NUM_CLASSES as f64
    );
    for f in &report.folds {
        let _ = writeln!(
            s,
            "fold {:>2}: test {:.4}  train {:.4}  epochs {:>3}  best epoch {:>3}  best val loss {:.5}",
            f.fold_index, f.test_accuracy, f.train_accuracy, f.epochs_run, f.best_epoch, f.best_val_loss
        );
    }
    let _ = writeln!(
        s,
        "\nconfusion matrix (rows: true class, columns: predicted)"
    );
    let n = report.confusion_matrix.len();
    let _ = write!(s, "    ");
    for c in 1..=n {
        let _ = write!(s, "{c:>4}");
    }
    s.push('\n');
    for (i, row) in report.confusion_matrix.iter().enumerate() {
        let _ = write!(s, "{:>4}", i + 1);
        for v in row {
            let _ = write!(s, "{v:>4}");
        }
        s.push('\n');
    }
    s
}

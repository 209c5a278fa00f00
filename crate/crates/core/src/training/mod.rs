//! Cross-entropy training with Adam, early stopping on a stratified
//! validation split, and stratified k-fold cross-validation.

mod early_stop;
mod optim;

pub use early_stop::{stopping_epoch, EarlyStopping};
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPS};

use crate::fnsuite::ClassId;
use crate::model::{Mode, ModelConfig, ModelError, TransOptModel};
use crate::sampling::DesignMatrix;
use crate::tensor::{Graph, SplitRng, Tensor, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("stratification: {0}")]
    Stratification(String),
    #[error("data: {0}")]
    Data(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            max_epochs: 200,
            patience: 5,
            min_delta: 0.001,
            batch_size: 32,
            folds: 10,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.folds < 2 {
            return bad("folds must be >= 2");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must lie in (0, 0.5)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0");
        }
        Ok(())
    }
}

/// Indices grouped by class, classes in ascending order.
fn by_class(labels: &[ClassId]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut groups: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

/// Fold index for every position of `labels`.
///
/// Members of each class (classes in ascending id order) are shuffled and
/// dealt round-robin into the `k` folds. The deal for each class starts where
/// the previous class stopped, so both per-class and total fold sizes differ
/// by at most one.
pub fn stratified_kfold(labels: &[ClassId], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(TrainError::Stratification(format!(
            "k must be >= 2, got {k}"
        )));
    }
    let mut rng = SplitRng::new(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut members) in by_class(labels) {
        if members.len() < k {
            return Err(TrainError::Stratification(format!(
                "class {class} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for idx in members {
            folds[idx] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

/// Splits `pool` into (train, validation) with `fraction` of every class in
/// validation (rounded, at least one, leaving at least one for training).
fn stratified_holdout(
    pool: &[usize],
    labels: &[ClassId],
    fraction: f64,
    rng: &mut SplitRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let pool_labels: Vec<ClassId> = pool.iter().map(|&i| labels[i]).collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, members) in by_class(&pool_labels) {
        let mut members: Vec<usize> = members.into_iter().map(|j| pool[j]).collect();
        if members.len() < 2 {
            return Err(TrainError::Data(format!(
                "class {class} has {} training designs; need 2 for a validation split",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n_val =
            ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        val.extend_from_slice(&members[..n_val]);
        train.extend_from_slice(&members[n_val..]);
    }
    Ok((train, val))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `[b, n]` logits whose argmax equals the label index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, n) = logits.dims2("accuracy")?;
    if b != labels.len() || b == 0 {
        return Err(TrainError::Shape(format!(
            "{b} logit rows for {} labels",
            labels.len()
        )));
    }
    let hits = logits
        .data()
        .chunks_exact(n)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / b as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Position in the dataset.
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
    pub best_val_loss: f64,
    pub predictions: Vec<Prediction>,
}

/// Labels as zero-based class indices.
fn label_indices(dataset: &[DesignMatrix]) -> Vec<usize> {
    dataset.iter().map(|d| d.class_label.index()).collect()
}

/// Forward + backward over one minibatch; returns the mean loss and the
/// gradient of the mean loss for every parameter.
///
/// Each design gets its own small tape whose loss is pre-divided by the batch
/// size, and the per-design gradients are summed. This equals one tape over
/// the whole batch but keeps the working set in cache.
fn batch_gradients(
    model: &TransOptModel,
    batch: &[&DesignMatrix],
    rng: &mut SplitRng,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = model.config().n_classes;
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads: Vec<Vec<f64>> = model
        .parameter_tensors()
        .iter()
        .map(|t| vec![0.0; t.len()])
        .collect();
    let mut total = 0.0;
    for des in batch {
        let mut g = Graph::new();
        let params = model.bind(&mut g, true);
        let logits = model
            .forward(&mut g, &params, des, Mode::Train, rng)?
            .logits;
        let row = g.reshape(logits, &[1, n])?;
        let ce = g.cross_entropy_logits(row, &[des.class_label.index()])?;
        total += g.value(ce).data()[0];
        let loss = g.scale(ce, inv_b);
        g.backward(loss)?;
        for (acc, p) in grads.iter_mut().zip(&params) {
            if let Some(gp) = g.grad(*p) {
                acc.iter_mut().zip(gp).for_each(|(a, v)| *a += v);
            }
        }
    }
    Ok((total * inv_b, grads))
}

/// Eval-mode logits for the given designs, stacked as `[b, n_classes]`.
pub fn predict_logits(model: &TransOptModel, designs: &[&DesignMatrix]) -> Result<Tensor> {
    let n = model.config().n_classes;
    let mut data = Vec::with_capacity(designs.len() * n);
    for des in designs {
        data.extend_from_slice(model.predict(des)?.data());
    }
    Ok(Tensor::new(vec![designs.len(), n], data)?)
}

/// Eval-mode mean cross-entropy.
fn mean_loss(model: &TransOptModel, designs: &[&DesignMatrix]) -> Result<f64> {
    let logits = predict_logits(model, designs)?;
    let labels: Vec<usize> = designs.iter().map(|d| d.class_label.index()).collect();
    let mut g = Graph::new();
    let l = g.constant(logits);
    let loss = g.cross_entropy_logits(l, &labels)?;
    Ok(g.value(loss).data()[0])
}

fn check_dataset(model_cfg: &ModelConfig, dataset: &[DesignMatrix]) -> Result<()> {
    if dataset.is_empty() {
        return Err(TrainError::Data("empty dataset".into()));
    }
    if let Some(bad) = dataset.iter().find(|d| d.d != model_cfg.d) {
        return Err(TrainError::Data(format!(
            "design of dimension {} in a d={} experiment",
            bad.d, model_cfg.d
        )));
    }
    if let Some(bad) = dataset
        .iter()
        .find(|d| d.class_label.index() >= model_cfg.n_classes)
    {
        return Err(TrainError::Data(format!(
            "label {} outside the model's {} classes",
            bad.class_label, model_cfg.n_classes
        )));
    }
    Ok(())
}

/// Trains a fresh model on every fold except `fold_index` and evaluates it on
/// `fold_index`. All randomness comes from `SplitRng::new(seed).split(fold)`.
pub fn train_fold(
    model_cfg: &ModelConfig,
    dataset: &[DesignMatrix],
    fold_assignment: &[usize],
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    train_fold_model(model_cfg, dataset, fold_assignment, fold_index, cfg).map(|(r, _)| r)
}

/// [`train_fold`], also returning the restored best model.
pub fn train_fold_model(
    model_cfg: &ModelConfig,
    dataset: &[DesignMatrix],
    fold_assignment: &[usize],
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<(FoldResult, TransOptModel)> {
    cfg.validate()?;
    check_dataset(model_cfg, dataset)?;
    if fold_assignment.len() != dataset.len() {
        return Err(TrainError::Data(format!(
            "{} fold assignments for {} designs",
            fold_assignment.len(),
            dataset.len()
        )));
    }
    let fold_rng = SplitRng::new(cfg.seed).split(fold_index as u32);
    let mut init_rng = fold_rng.split(0);
    let mut split_rng = fold_rng.split(1);
    let mut shuffle_rng = fold_rng.split(2);
    let mut dropout_rng = fold_rng.split(3);

    let labels: Vec<ClassId> = dataset.iter().map(|d| d.class_label).collect();
    let test: Vec<usize> = (0..dataset.len())
        .filter(|&i| fold_assignment[i] == fold_index)
        .collect();
    let rest: Vec<usize> = (0..dataset.len())
        .filter(|&i| fold_assignment[i] != fold_index)
        .collect();
    if test.is_empty() || rest.is_empty() {
        return Err(TrainError::Data(format!(
            "fold {fold_index} leaves an empty test or training split"
        )));
    }
    let (mut train, val) = stratified_holdout(&rest, &labels, cfg.val_fraction, &mut split_rng)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &dataset[i]).collect::<Vec<_>>();
    let val_set = pick(&val);

    let mut model = TransOptModel::init(*model_cfg, &mut init_rng)?;
    let mut adam = AdamState::new(model.parameter_tensors());
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best_params = model.parameter_tensors().to_vec();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        shuffle_rng.shuffle(&mut train);
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let batch = pick(chunk);
            let (loss, grads) = batch_gradients(&model, &batch, &mut dropout_rng)?;
            adam_step(model.parameter_tensors_mut(), &grads, &mut adam, cfg.lr)?;
            total += loss * chunk.len() as f64;
        }
        train_curve.push(total / train.len() as f64);
        let val_loss = mean_loss(&model, &val_set)?;
        val_curve.push(val_loss);
        log::debug!(
            "fold {fold_index} epoch {epoch}: train loss {:.5}, val loss {val_loss:.5}",
            train_curve[epoch - 1]
        );
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.clone_from_slice(model.parameter_tensors());
        }
        if stopper.observe(val_loss) {
            break;
        }
    }
    model.parameter_tensors_mut().clone_from_slice(&best_params);

    let test_set = pick(&test);
    let test_logits = predict_logits(&model, &test_set)?;
    let n = model_cfg.n_classes;
    let predictions: Vec<Prediction> = test
        .iter()
        .zip(test_logits.data().chunks_exact(n))
        .map(|(&i, row)| Prediction {
            index: i,
            label: labels[i].index(),
            predicted: argmax(row),
        })
        .collect();
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i].index()).collect();
    let test_accuracy = accuracy(&test_logits, &test_labels)?;
    train.sort_unstable();
    let train_set = pick(&train);
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i].index()).collect();
    let train_accuracy = accuracy(&predict_logits(&model, &train_set)?, &train_labels)?;

    Ok((
        FoldResult {
            fold_index,
            test_accuracy,
            train_accuracy,
            epochs_run: train_curve.len(),
            best_epoch,
            train_loss_curve: train_curve,
            val_loss_curve: val_curve,
            best_val_loss: best_val,
            predictions,
        },
        model,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataEcho {
    pub designs: usize,
    pub dim: usize,
    pub samples_per_design: usize,
    pub per_class: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataEcho,
    pub parameter_count: usize,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
    /// `confusion[true][predicted]`, summed over folds.
    pub confusion_matrix: Vec<Vec<usize>>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Outcome of one fold as produced by [`run_folds`].
#[derive(Debug)]
pub struct FoldRun {
    pub fold_index: usize,
    pub outcome: Result<(FoldResult, TransOptModel)>,
    pub wall_seconds: f64,
}

/// Runs `folds` folds on a pool of `jobs` workers (1 = run in place) and
/// returns them ordered by fold index. A failing fold does not stop the rest.
pub fn run_folds(
    model_cfg: &ModelConfig,
    dataset: &[DesignMatrix],
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<Vec<FoldRun>> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_dataset(model_cfg, dataset)?;
    let labels: Vec<ClassId> = dataset.iter().map(|d| d.class_label).collect();
    let assignment = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    let one = |k: usize| {
        let start = Instant::now();
        let outcome = train_fold_model(model_cfg, dataset, &assignment, k, cfg);
        if let Ok((f, _)) = &outcome {
            log::info!(
                "fold {k}: test accuracy {:.4} after {} epochs (best {})",
                f.test_accuracy,
                f.epochs_run,
                f.best_epoch
            );
        }
        FoldRun {
            fold_index: k,
            outcome,
            wall_seconds: start.elapsed().as_secs_f64(),
        }
    };
    if jobs <= 1 {
        return Ok((0..cfg.folds).map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| TrainError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| (0..cfg.folds).into_par_iter().map(one).collect()))
}

/// Stratified k-fold cross-validation with a fresh model per fold.
pub fn cross_validate(
    model_cfg: &ModelConfig,
    dataset: &[DesignMatrix],
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CVReport> {
    let folds = run_folds(model_cfg, dataset, cfg, jobs)?
        .into_iter()
        .map(|r| r.outcome.map(|(f, _)| f))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(model_cfg, dataset, cfg, folds))
}

pub fn aggregate(
    model_cfg: &ModelConfig,
    dataset: &[DesignMatrix],
    cfg: &TrainConfig,
    folds: Vec<FoldResult>,
) -> CVReport {
    let n = model_cfg.n_classes;
    let mut confusion = vec![vec![0; n]; n];
    for p in folds.iter().flat_map(|f| &f.predictions) {
        confusion[p.label][p.predicted] += 1;
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.test_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    let mut per_class = vec![0; n];
    for l in label_indices(dataset) {
        per_class[l] += 1;
    }
    CVReport {
        model: *model_cfg,
        train: *cfg,
        data: DataEcho {
            designs: dataset.len(),
            dim: model_cfg.d,
            samples_per_design: dataset.first().map_or(0, |d| d.s),
            per_class,
        },
        parameter_count: model_cfg.parameter_count(),
        folds,
        mean_accuracy,
        std_accuracy,
        confusion_matrix: confusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(spec: &[(u32, usize)]) -> Vec<ClassId> {
        spec.iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(ClassId::new(c).unwrap(), n))
            .collect()
    }

    #[test]
    fn kfold_24_by_50() {
        let l = labels(&(1..=24).map(|c| (c, 50)).collect::<Vec<_>>());
        let f = stratified_kfold(&l, 10, 3).unwrap();
        for fold in 0..10 {
            let members: Vec<usize> = (0..l.len()).filter(|&i| f[i] == fold).collect();
            assert_eq!(members.len(), 120);
            for c in ClassId::all() {
                assert_eq!(members.iter().filter(|&&i| l[i] == c).count(), 5);
            }
        }
    }

    #[test]
    fn kfold_24_by_999() {
        let l = labels(&(1..=24).map(|c| (c, 999)).collect::<Vec<_>>());
        let f = stratified_kfold(&l, 10, 1).unwrap();
        for c in ClassId::all() {
            let mut counts = [0usize; 10];
            for i in 0..l.len() {
                if l[i] == c {
                    counts[f[i]] += 1;
                }
            }
            assert!(counts.iter().all(|&n| n == 99 || n == 100), "{counts:?}");
        }
    }

    #[test]
    fn kfold_two_by_two() {
        let l = labels(&[(1, 2), (2, 2)]);
        let f = stratified_kfold(&l, 2, 0).unwrap();
        assert_ne!(f[0], f[1]);
        assert_ne!(f[2], f[3]);
    }

    #[test]
    fn kfold_rejects_small_classes() {
        let l = labels(&[(1, 10), (2, 3)]);
        assert!(matches!(
            stratified_kfold(&l, 5, 0),
            Err(TrainError::Stratification(_))
        ));
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let l = labels(&[(1, 20), (2, 30)]);
        let pool: Vec<usize> = (0..50).collect();
        let (tr, va) = stratified_holdout(&pool, &l, 0.1, &mut SplitRng::new(0)).unwrap();
        assert_eq!(va.len(), 5);
        assert_eq!(tr.len() + va.len(), 50);
        assert!(va.iter().all(|i| !tr.contains(i)));
    }

    #[test]
    fn accuracy_examples() {
        let t = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![2.0, 0.0],
            vec![0.5, 0.5],
        ])
        .unwrap();
        assert_eq!(accuracy(&t, &[0, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&t, &[1, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&t, &[0, 1, 0, 1]).unwrap(), 0.75);
        assert!(accuracy(&t, &[0]).is_err());
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 24]), 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            folds: 1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            val_fraction: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}

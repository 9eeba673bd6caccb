//! Task definitions and the evaluation bed for the evolver.
//!
//! A task restricts the shared classifier to a subset of its output labels
//! and supplies the data used for the loss objective. The default suite
//! draws one Gaussian cluster per class and splits the classes across
//! tasks, so tasks are related through the shared input distribution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::genome::GroupedMask;
use crate::net::{
    self, Architecture, Batch, Labels, LossKind, ReferenceNet, TrainHyper,
};

/// Loss during evolution is measured on at most this many training rows.
pub const EVAL_SUBSET_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    GaussianClusters,
    Csv,
}

/// Recipe for a task suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub generator: GeneratorKind,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub task_splits: Vec<Vec<usize>>,
    pub seed: u64,
    /// Source file when `generator` is `csv`.
    #[serde(default)]
    pub csv_path: Option<String>,
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::validation("suite.n_classes", "need at least 1 class"));
        }
        if self.samples_per_class < 2 {
            return Err(Error::validation(
                "suite.samples_per_class",
                "need at least 2 samples per class for an 80/20 split",
            ));
        }
        if self.input_dim == 0 {
            return Err(Error::validation("suite.input_dim", "need at least 1 feature"));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::validation(
                "suite.cluster_spread",
                "spread must be positive",
            ));
        }
        if self.task_splits.is_empty() {
            return Err(Error::validation("suite.task_splits", "need at least one task"));
        }
        if self.generator == GeneratorKind::Csv && self.csv_path.is_none() {
            return Err(Error::validation(
                "suite.csv_path",
                "csv generator needs a source path",
            ));
        }
        let mut seen = vec![false; self.n_classes];
        for (t, split) in self.task_splits.iter().enumerate() {
            if split.is_empty() {
                return Err(Error::validation(
                    "suite.task_splits",
                    format!("task split {t} is empty"),
                ));
            }
            for &c in split {
                if c >= self.n_classes {
                    return Err(Error::validation(
                        "suite.task_splits",
                        format!("class {c} out of range in split {t}"),
                    ));
                }
                if seen[c] {
                    return Err(Error::validation(
                        "suite.task_splits",
                        format!("class {c} appears in two splits"),
                    ));
                }
                seen[c] = true;
            }
        }
        Ok(())
    }
}

/// One specialization target: restricted label set plus its data.
#[derive(Debug, Clone)]
pub struct Task {
    /// 1-based task id.
    pub id: usize,
    pub train: Batch,
    pub test: Batch,
    /// Fixed row indices into `train` used for the loss objective.
    pub eval_subset: Vec<usize>,
    /// Pre-gathered `train[eval_subset]`, the evolver's hot path.
    eval_batch: Batch,
    pub loss_kind: LossKind,
    /// Sorted global class indices this task predicts over.
    pub label_subspace: Vec<usize>,
}

impl Task {
    fn build(
        id: usize,
        train: Batch,
        test: Batch,
        label_subspace: Vec<usize>,
    ) -> Result<Task> {
        let eval_subset = eval_subset_indices(train.n());
        let eval_batch = train.select(&eval_subset)?;
        Ok(Task {
            id,
            train,
            test,
            eval_subset,
            eval_batch,
            loss_kind: LossKind::CrossEntropy,
            label_subspace,
        })
    }

    pub fn eval_batch(&self) -> &Batch {
        &self.eval_batch
    }
}

/// Deterministic subset: everything when small enough, otherwise evenly
/// strided rows (rows are class-ordered, so classes stay represented).
fn eval_subset_indices(n: usize) -> Vec<usize> {
    if n <= EVAL_SUBSET_CAP {
        (0..n).collect()
    } else {
        (0..EVAL_SUBSET_CAP)
            .map(|k| k * n / EVAL_SUBSET_CAP)
            .collect()
    }
}

/// A generated or loaded suite: per-task data plus the pooled stores used
/// for pretraining the shared net.
#[derive(Debug, Clone)]
pub struct Suite {
    pub tasks: Vec<Task>,
    pub full_train: Batch,
    pub full_test: Batch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskManifest {
    pub id: usize,
    pub label_subspace: Vec<usize>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub eval_subset: Vec<usize>,
}

/// Enough to reproduce the suite exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub spec: SuiteSpec,
    pub tasks: Vec<TaskManifest>,
}

impl Suite {
    pub fn manifest(&self, spec: &SuiteSpec) -> SuiteManifest {
        SuiteManifest {
            spec: spec.clone(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskManifest {
                    id: t.id,
                    label_subspace: t.label_subspace.clone(),
                    train_rows: t.train.n(),
                    test_rows: t.test.n(),
                    eval_subset: t.eval_subset.clone(),
                })
                .collect(),
        }
    }
}

fn class_of(batch: &Batch, row: usize) -> usize {
    batch.class_label(row).expect("suite batches carry class labels")
}

/// Rows of `batch` whose class is in `split`, in batch order.
fn restrict_to_classes(batch: &Batch, split: &[usize]) -> Result<Batch> {
    let idx: Vec<usize> = (0..batch.n())
        .filter(|&i| split.contains(&class_of(batch, i)))
        .collect();
    batch.select(&idx)
}

fn build_tasks(full_train: &Batch, full_test: &Batch, splits: &[Vec<usize>]) -> Result<Vec<Task>> {
    let mut tasks = Vec::with_capacity(splits.len());
    for (t, split) in splits.iter().enumerate() {
        let mut subspace = split.clone();
        subspace.sort_unstable();
        let train = restrict_to_classes(full_train, &subspace)?;
        let test = restrict_to_classes(full_test, &subspace)?;
        tasks.push(Task::build(t + 1, train, test, subspace)?);
    }
    Ok(tasks)
}

/// Draw the Gaussian-cluster suite: one mean per class uniform in the unit
/// hypercube scaled to [-1, 1], isotropic spread, stratified 80/20
/// train/test split per class (train = first 80% of each class's draws).
pub fn generate_suite(spec: &SuiteSpec) -> Result<Suite> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;

    let means: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    let mut train_rows: Vec<Vec<f64>> = Vec::new();
    let mut train_labels: Vec<usize> = Vec::new();
    let mut test_rows: Vec<Vec<f64>> = Vec::new();
    let mut test_labels: Vec<usize> = Vec::new();
    for (c, mean) in means.iter().enumerate() {
        let n_train = spec.samples_per_class * 4 / 5;
        for s in 0..spec.samples_per_class {
            let row: Vec<f64> = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.cluster_spread * z
                })
                .collect();
            if s < n_train {
                train_rows.push(row);
                train_labels.push(c);
            } else {
                test_rows.push(row);
                test_labels.push(c);
            }
        }
    }

    let full_train = Batch::from_rows(&train_rows, Labels::Classes(train_labels))?;
    let full_test = Batch::from_rows(&test_rows, Labels::Classes(test_labels))?;
    let tasks = build_tasks(&full_train, &full_test, &spec.task_splits)?;
    Ok(Suite {
        tasks,
        full_train,
        full_test,
    })
}

/// Write the suite's rows as CSV: float feature columns, integer `label`
/// last. Train rows come first so the 80/20-per-class reload reproduces
/// the same split.
pub fn export_suite_csv(suite: &Suite, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let dim = suite.full_train.dim();
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for batch in [&suite.full_train, &suite.full_test] {
        for i in 0..batch.n() {
            let mut record: Vec<String> =
                batch.row(i).iter().map(|v| format!("{v}")).collect();
            record.push(format!("{}", class_of(batch, i)));
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Load a CSV suite: header row, numeric feature columns, integer label
/// last. Within each class the first 80% of rows (file order) become
/// training data.
pub fn load_csv_suite(path: &Path, task_splits: &[Vec<usize>]) -> Result<Suite> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(0),
            column: 0,
            msg: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                column: 1,
                msg: "need at least one feature column and a label".to_string(),
            });
        }
        let mut row = Vec::with_capacity(record.len() - 1);
        for (col, field) in record.iter().take(record.len() - 1).enumerate() {
            row.push(field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                msg: format!("expected a number, got `{field}`"),
            })?);
        }
        let label_field = record.get(record.len() - 1).unwrap();
        let label = label_field
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse {
                line,
                column: record.len(),
                msg: format!("expected an integer label, got `{label_field}`"),
            })?;
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let n_classes = labels.iter().max().unwrap() + 1;
    for split in task_splits {
        for &c in split {
            if c >= n_classes || !labels.contains(&c) {
                return Err(Error::UnknownLabel { label: c });
            }
        }
    }

    // Per-class 80/20 split by file order.
    let mut seen = vec![0usize; n_classes];
    let counts = labels.iter().fold(vec![0usize; n_classes], |mut acc, &c| {
        acc[c] += 1;
        acc
    });
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        if seen[c] < counts[c] * 4 / 5 {
            train_idx.push(i);
        } else {
            test_idx.push(i);
        }
        seen[c] += 1;
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::validation(
            "suite.samples_per_class",
            "not enough rows per class for an 80/20 split",
        ));
    }

    let gather = |idx: &[usize]| -> Result<Batch> {
        let picked: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let lab: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        Batch::from_rows(&picked, Labels::Classes(lab))
    };
    let full_train = gather(&train_idx)?;
    let full_test = gather(&test_idx)?;
    let tasks = build_tasks(&full_train, &full_test, task_splits)?;
    Ok(Suite {
        tasks,
        full_train,
        full_test,
    })
}

/// Train the shared net on the pooled training data. Task heads are output
/// slices of the single softmax layer, so one net serves every task.
pub fn pretrain_jat(
    arch: &Architecture,
    full_train: &Batch,
    hyper: &TrainHyper,
) -> Result<ReferenceNet> {
    arch.validate()?;
    let max_class = (0..full_train.n())
        .map(|i| class_of(full_train, i))
        .max()
        .unwrap_or(0);
    if arch.output_dim() <= max_class {
        return Err(Error::validation(
            "arch.layer_sizes",
            format!(
                "output dim {} too small for {} classes",
                arch.output_dim(),
                max_class + 1
            ),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let net = ReferenceNet::random(arch.clone(), &mut rng)?;
    net::train(&net, None, full_train, hyper)
}

/// The loss objective: mean restricted-head loss of the masked net over the
/// task's fixed evaluation subset. Pure in (mask bits, net params, task).
pub fn evaluate(mask: &GroupedMask, jat: &ReferenceNet, task: &Task) -> Result<f64> {
    net::loss_with_head(
        jat,
        Some(mask),
        task.eval_batch(),
        task.loss_kind,
        Some(&task.label_subspace),
    )
}

/// Fraction of rows whose restricted-head argmax matches the label.
pub fn restricted_accuracy(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    batch: &Batch,
    subspace: &[usize],
) -> Result<f64> {
    let out_dim = net.arch().output_dim();
    let outputs = net::forward(net, mask, batch.inputs(), batch.n())?;
    let mut correct = 0usize;
    for i in 0..batch.n() {
        let row = &outputs[i * out_dim..(i + 1) * out_dim];
        let best = subspace
            .iter()
            .copied()
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        if best == class_of(batch, i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.n() as f64)
}

/// The shared net's own restricted-head quality per task, the yardstick the
/// specialists are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JatBaseline {
    pub task_id: usize,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

pub fn jat_baselines(jat: &ReferenceNet, tasks: &[Task]) -> Result<Vec<JatBaseline>> {
    tasks
        .iter()
        .map(|task| {
            Ok(JatBaseline {
                task_id: task.id,
                test_loss: net::loss_with_head(
                    jat,
                    None,
                    &task.test,
                    task.loss_kind,
                    Some(&task.label_subspace),
                )?,
                test_accuracy: restricted_accuracy(
                    jat,
                    None,
                    &task.test,
                    &task.label_subspace,
                )?,
            })
        })
        .collect()
}

//! Synthetic task-sequence generators and CSV ingestion.
//!
//! Generators are pure functions of their arguments (seed included).
//! The on-disk interchange format is a pair of CSV files, one per split,
//! with header `x0,...,x{d-1},label,task`: floats in decimal notation,
//! label and task nonnegative integers.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::seed::{rng_from, tag};

/// One task: train and test splits plus class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub train: Batch,
    pub test: Batch,
    pub task_id: usize,
    pub class_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetadata {
    pub generator: String,
    pub seed: u64,
    /// Input-coordinate permutations, when the generator used them.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub permutations: Option<Vec<Vec<usize>>>,
}

/// Ordered labeled datasets D_1..D_T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<TaskData>,
    pub metadata: SequenceMetadata,
}

impl TaskSequence {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map(|t| t.train.dim).unwrap_or(0)
    }
}

/// Gaussian-blob task sequence: per task, `classes_per_task` unit-covariance
/// blobs with means on a sphere of radius `separation` (re-drawn until the
/// means are pairwise at least `separation` apart, so classes are actually
/// distinguishable at the stated scale). 80/20 train/test split per class.
pub fn gen_split_gaussians(
    n_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<TaskSequence> {
    if n_tasks == 0 || classes_per_task == 0 || dim == 0 || n_per_class == 0 {
        return Err(Error::Config(
            "split_gaussians: all counts must be >= 1".into(),
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!(
            "split_gaussians.separation: must be finite and >= 0, got {separation}"
        )));
    }
    let test_per_class = (n_per_class / 5).max(1).min(n_per_class);
    let train_per_class = n_per_class - test_per_class;
    if train_per_class == 0 {
        return Err(Error::Config(
            "split_gaussians: n_per_class too small for an 80/20 split".into(),
        ));
    }

    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let mut rng = rng_from(seed, tag::data_task(t));
        let means = draw_separated_means(&mut rng, classes_per_task, dim, separation);

        let mut train_inputs = Vec::new();
        let mut train_labels = Vec::new();
        let mut test_inputs = Vec::new();
        let mut test_labels = Vec::new();
        for (class, mean) in means.iter().enumerate() {
            for i in 0..n_per_class {
                let sample: Vec<f64> = mean.iter().map(|&mu| mu + gauss(&mut rng)).collect();
                if i < train_per_class {
                    train_inputs.extend_from_slice(&sample);
                    train_labels.push(class);
                } else {
                    test_inputs.extend_from_slice(&sample);
                    test_labels.push(class);
                }
            }
        }
        tasks.push(TaskData {
            train: Batch::new(train_inputs, train_labels, dim, t)?,
            test: Batch::new(test_inputs, test_labels, dim, t)?,
            task_id: t,
            class_count: classes_per_task,
        });
    }
    Ok(TaskSequence {
        tasks,
        metadata: SequenceMetadata {
            generator: "split_gaussians".into(),
            seed,
            permutations: None,
        },
    })
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn draw_separated_means(
    rng: &mut impl Rng,
    classes: usize,
    dim: usize,
    separation: f64,
) -> Vec<Vec<f64>> {
    const MAX_ATTEMPTS: usize = 1000;
    let draw_one = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.iter().map(|x| x * separation / norm).collect();
            }
        }
    };
    if separation == 0.0 {
        return vec![vec![0.0; dim]; classes];
    }
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut candidate = draw_one(rng);
        for _ in 0..MAX_ATTEMPTS {
            let ok = means.iter().all(|m| {
                let d2: f64 = m
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= separation
            });
            if ok {
                break;
            }
            candidate = draw_one(rng);
        }
        means.push(candidate);
    }
    means
}

/// Permuted-input task sequence: task 0 is the base task unchanged, every
/// later task applies its own fixed random coordinate permutation.
pub fn gen_permuted(base_task: &TaskData, n_tasks: usize, seed: u64) -> Result<TaskSequence> {
    if n_tasks == 0 {
        return Err(Error::Config("permuted: n_tasks must be >= 1".into()));
    }
    let dim = base_task.train.dim;
    let mut permutations = Vec::with_capacity(n_tasks);
    let mut tasks = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let perm: Vec<usize> = if t == 0 {
            (0..dim).collect()
        } else {
            let mut rng = rng_from(seed, tag::data_task(t));
            let mut p: Vec<usize> = (0..dim).collect();
            p.shuffle(&mut rng);
            p
        };
        tasks.push(TaskData {
            train: permute_batch(&base_task.train, &perm, t),
            test: permute_batch(&base_task.test, &perm, t),
            task_id: t,
            class_count: base_task.class_count,
        });
        permutations.push(perm);
    }
    Ok(TaskSequence {
        tasks,
        metadata: SequenceMetadata {
            generator: "permuted".into(),
            seed,
            permutations: Some(permutations),
        },
    })
}

fn permute_batch(batch: &Batch, perm: &[usize], task_id: usize) -> Batch {
    let dim = batch.dim;
    let mut inputs = vec![0.0; batch.inputs.len()];
    for ex in 0..batch.n() {
        let src = batch.row(ex);
        for (j, &p) in perm.iter().enumerate() {
            inputs[ex * dim + j] = src[p];
        }
    }
    Batch {
        inputs,
        labels: batch.labels.clone(),
        dim,
        task_id,
    }
}

fn format_header(dim: usize) -> String {
    let mut header = String::new();
    for j in 0..dim {
        let _ = write!(header, "x{j},");
    }
    header.push_str("label,task");
    header
}

fn write_split(path: &Path, sequence: &TaskSequence, split: impl Fn(&TaskData) -> &Batch) -> Result<()> {
    let dim = sequence.input_dim();
    let mut out = String::new();
    out.push_str(&format_header(dim));
    out.push('\n');
    for task in &sequence.tasks {
        let batch = split(task);
        for ex in 0..batch.n() {
            for v in batch.row(ex) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{},{}", batch.labels[ex], task.task_id);
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Materialize a sequence as `{stem}_train.csv` and `{stem}_test.csv`.
pub fn save_csv(sequence: &TaskSequence, stem: &Path) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let train = csv_split_path(stem, "train");
    let test = csv_split_path(stem, "test");
    write_split(&train, sequence, |t| &t.train)?;
    write_split(&test, sequence, |t| &t.test)?;
    Ok((train, test))
}

pub fn csv_split_path(stem: &Path, split: &str) -> std::path::PathBuf {
    let name = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.with_file_name(format!("{name}_{split}.csv"))
}

#[derive(Debug)]
struct ParsedSplit {
    dim: usize,
    /// (inputs, labels) per task id.
    tasks: Vec<(Vec<f64>, Vec<usize>)>,
}

fn read_split(path: &Path) -> Result<ParsedSplit> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                display.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::CsvParse {
                path: display.clone(),
                line: 1,
                message: e.to_string(),
            },
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            path: display.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "task" {
        return Err(Error::CsvParse {
            path: display,
            line: 1,
            message: "header must be x0,...,x{d-1},label,task".into(),
        });
    }
    let dim = cols.len() - 2;
    for (j, col) in cols[..dim].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(Error::CsvParse {
                path: display,
                line: 1,
                message: format!("expected column x{j}, found {col}"),
            });
        }
    }

    let mut tasks: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::CsvParse {
            path: display.clone(),
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::CsvParse {
            path: display.clone(),
            line,
            message,
        };
        if record.len() != cols.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                cols.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(dim);
        for j in 0..dim {
            let raw = record.get(j).unwrap();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(format!("column x{j}: not a number: {raw:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("column x{j}: non-finite value {raw:?}")));
            }
            row.push(v);
        }
        let label: usize = record
            .get(dim)
            .unwrap()
            .parse()
            .map_err(|_| parse_err(format!("column label: not a nonnegative integer: {:?}", record.get(dim).unwrap())))?;
        let task: usize = record
            .get(dim + 1)
            .unwrap()
            .parse()
            .map_err(|_| parse_err(format!("column task: not a nonnegative integer: {:?}", record.get(dim + 1).unwrap())))?;
        if tasks.len() <= task {
            tasks.resize_with(task + 1, || (Vec::new(), Vec::new()));
        }
        tasks[task].0.extend_from_slice(&row);
        tasks[task].1.push(label);
    }
    if tasks.is_empty() {
        return Err(Error::CsvParse {
            path: display,
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(ParsedSplit { dim, tasks })
}

/// Load a sequence from the pair of split files written by [`save_csv`].
/// Rows are partitioned into tasks by the `task` column; task ids must form
/// a contiguous range starting at 0 in both splits.
pub fn load_csv(train_path: &Path, test_path: &Path) -> Result<TaskSequence> {
    let train = read_split(train_path)?;
    let test = read_split(test_path)?;
    if train.dim != test.dim {
        return Err(Error::Dimension(format!(
            "train dim {} != test dim {}",
            train.dim, test.dim
        )));
    }
    if train.tasks.len() != test.tasks.len() {
        return Err(Error::Dimension(format!(
            "train has {} task(s), test has {}",
            train.tasks.len(),
            test.tasks.len()
        )));
    }
    let mut tasks = Vec::with_capacity(train.tasks.len());
    for (t, ((train_inputs, train_labels), (test_inputs, test_labels))) in train
        .tasks
        .into_iter()
        .zip(test.tasks)
        .enumerate()
    {
        if train_labels.is_empty() || test_labels.is_empty() {
            return Err(Error::Dimension(format!(
                "task {t} has an empty split (task ids must be contiguous)"
            )));
        }
        let class_count = train_labels
            .iter()
            .chain(&test_labels)
            .max()
            .map(|&m| m + 1)
            .unwrap_or(1);
        tasks.push(TaskData {
            train: Batch::new(train_inputs, train_labels, train.dim, t)?,
            test: Batch::new(test_inputs, test_labels, train.dim, t)?,
            task_id: t,
            class_count,
        });
    }
    Ok(TaskSequence {
        tasks,
        metadata: SequenceMetadata {
            generator: "csv".into(),
            seed: 0,
            permutations: None,
        },
    })
}

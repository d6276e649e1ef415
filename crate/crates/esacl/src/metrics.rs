//! Evaluation metrics, efficiency accounting, and result emission.
//!
//! A run produces one deterministic JSON report, a line-per-event JSONL
//! training log, and a plot-ready CSV of per-epoch curves. Wall-clock
//! timings go to the event log only, so that identical configs and seeds
//! produce byte-identical report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Mean of the final row of the accuracy matrix.
pub fn acc_t(r: &[Vec<f64>]) -> Result<f64> {
    let last = r.last().ok_or(Error::EmptyBatch)?;
    if last.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Training FLOPs: (add-multiplies per forward) × 2 × examples × 3 × epochs,
/// with per-layer add-multiply counts scaled by that epoch's layer density.
/// `density_schedule` holds one row per epoch, one density per layer.
pub fn training_flops(
    layer_dims: &[usize],
    n_examples: u64,
    n_epochs: u64,
    density_schedule: &[Vec<f64>],
) -> Result<u64> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(
            "training_flops: need at least two layer dims".into(),
        ));
    }
    let n_layers = layer_dims.len() - 1;
    if density_schedule.len() as u64 != n_epochs {
        return Err(Error::Config(format!(
            "training_flops: schedule has {} row(s) for {} epoch(s)",
            density_schedule.len(),
            n_epochs
        )));
    }
    let mut total = 0.0f64;
    for row in density_schedule {
        if row.len() != n_layers {
            return Err(Error::Config(format!(
                "training_flops: schedule row has {} densities for {} layer(s)",
                row.len(),
                n_layers
            )));
        }
        let mut add_multiplies = 0.0;
        for (l, &density) in row.iter().enumerate() {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::Config(format!(
                    "training_flops: density must lie in (0, 1], got {density}"
                )));
            }
            add_multiplies += (layer_dims[l] * layer_dims[l + 1]) as f64 * density;
        }
        total += add_multiplies * 2.0 * n_examples as f64 * 3.0;
    }
    Ok(total.round() as u64)
}

/// Capacity = (1 − S) + (1 − γ)·T / 32, as a fraction.
///
/// Inputs and outputs are decimal fractions; the result is rounded to 12
/// decimal places so that e.g. S = 0.8, γ = 0.75, T = 10 yields exactly
/// 0.278125 rather than a neighbouring binary float.
pub fn capacity(sparsity: f64, gamma: f64, n_tasks: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Config(format!(
            "capacity: sparsity must lie in [0, 1], got {sparsity}"
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!(
            "capacity: gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if n_tasks == 0 {
        return Err(Error::Config("capacity: need at least one task".into()));
    }
    let raw = (1.0 - sparsity) + (1.0 - gamma) * n_tasks as f64 / 32.0;
    Ok((raw * 1e12).round() / 1e12)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub params_bytes: u64,
    pub gradients_bytes: u64,
    pub activations_bytes: u64,
    pub masks_bytes: u64,
    pub total_bytes: u64,
}

/// Memory footprint estimate: parameters + gradients + activations at
/// 8 bytes per value, plus bit-packed masks (trainable, frozen, and one
/// snapshot per completed task).
pub fn memory_footprint(
    spec: &NetworkSpec,
    per_task_masks: usize,
    batch_size: usize,
) -> MemoryBreakdown {
    let d = spec.param_len() as u64;
    let params_bytes = d * 8;
    let gradients_bytes = d * 8;
    // intermediate outputs of one forward pass: body layers plus one head
    let act_values: u64 = spec.layer_dims[1..]
        .iter()
        .map(|&x| x as u64)
        .sum::<u64>();
    let activations_bytes = act_values * batch_size as u64 * 8;
    let mask_bits = (per_task_masks as u64 + 2) * d;
    let masks_bytes = mask_bits.div_ceil(8);
    MemoryBreakdown {
        params_bytes,
        gradients_bytes,
        activations_bytes,
        masks_bytes,
        total_bytes: params_bytes + gradients_bytes + activations_bytes + masks_bytes,
    }
}

/// Per-task statistics frozen into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub task: usize,
    /// Accuracy on this task's test set right before pruning.
    pub pre_prune_accuracy: f64,
    /// Accuracy right after pruning (same mask, pruned values zeroed).
    pub post_prune_accuracy: f64,
    /// Zero fraction among this task's trainable coordinates after pruning.
    pub zero_fraction_at_prune: f64,
    pub trainable_count: usize,
    pub kept_count: usize,
    pub frozen_after: usize,
    /// Per-example gradient evaluations per epoch.
    pub grad_evals_per_epoch: Vec<u64>,
    /// Cumulative gradient evaluations when the prune fired and at task end;
    /// equality certifies that no gradient step followed the prune.
    pub grad_evals_at_prune: u64,
    pub grad_evals_at_task_end: u64,
    /// Training FLOPs spent on this task.
    pub flops: u64,
}

/// Wall-clock timings; reported through the event log, never the report
/// file (reports must be byte-identical across reruns).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub per_task_ms: Vec<u64>,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub status: crate::runner::RunStatus,
    /// Lower-triangular accuracy matrix: `r[t][i]` = accuracy on task i
    /// after training task t.
    pub r: Vec<Vec<f64>>,
    pub acc_t: f64,
    pub flops: u64,
    pub capacity_weights_only: f64,
    pub capacity_with_masks: f64,
    pub memory: MemoryBreakdown,
    pub grad_evals_total: u64,
    pub task_stats: Vec<TaskStats>,
    pub config: ConfigEcho,
    #[serde(skip)]
    pub timings: Timings,
}

/// The inputs that produced the run, echoed verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub network: NetworkSpec,
    pub train: crate::runner::TrainConfig,
    pub data: crate::data::SequenceMetadata,
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrainEvent {
    TaskStart {
        schema_version: u32,
        task: usize,
        trainable: usize,
        frozen: usize,
    },
    Epoch {
        schema_version: u32,
        task: usize,
        epoch: usize,
        loss: f64,
        accuracy: f64,
        sharpness: f64,
        grad_evals: u64,
    },
    Prune {
        schema_version: u32,
        task: usize,
        pre_accuracy: f64,
        post_accuracy: f64,
        zero_fraction: f64,
    },
    RunComplete {
        schema_version: u32,
        tasks: usize,
        wall_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitPaths {
    pub report: PathBuf,
    pub events: PathBuf,
    pub curves: PathBuf,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Write `report.json`, `events.jsonl`, and `curves.csv` under `dir`.
/// Files are written atomically (temp + rename).
pub fn emit(report: &RunReport, events: &[TrainEvent], dir: &Path) -> Result<EmitPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let paths = EmitPaths {
        report: dir.join("report.json"),
        events: dir.join("events.jsonl"),
        curves: dir.join("curves.csv"),
    };

    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_atomic(&paths.report, &json)?;

    let mut log = String::new();
    for event in events {
        let _ = writeln!(
            log,
            "{}",
            serde_json::to_string(event).expect("event serializes")
        );
    }
    write_atomic(&paths.events, &log)?;

    let mut csv = String::from("schema_version,task,epoch,loss,accuracy,sharpness\n");
    for event in events {
        if let TrainEvent::Epoch {
            task,
            epoch,
            loss,
            accuracy,
            sharpness,
            ..
        } = event
        {
            let _ = writeln!(
                csv,
                "{SCHEMA_VERSION},{task},{epoch},{loss},{accuracy},{sharpness}"
            );
        }
    }
    write_atomic(&paths.curves, &csv)?;
    Ok(paths)
}

/// Parse a previously emitted report file.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Checkpoint(format!("bad report JSON: {e}")))
}

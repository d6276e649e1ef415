//! Task-sequence orchestration: per-task training with sharpness-aware
//! gradients and sparse Frank-Wolfe updates, one-shot magnitude pruning,
//! freezing the survivors, and reinitializing the rest for the next task.
//!
//! Mask bookkeeping rules:
//! - `trainable` is what the current task may update: the non-frozen body
//!   plus the current task's head. Heads of other tasks are neither frozen
//!   nor trainable until their task arrives.
//! - `frozen` is the union of every completed task's survivors; frozen
//!   coordinates are bit-identical across all later steps.
//! - `per_task_masks[t]` snapshots the survivors at task t's prune. Because
//!   the snapshot is a subset of every later `frozen`, evaluating task t
//!   through its snapshot gives the same result forever: zero structural
//!   forgetting by construction.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TaskData, TaskSequence};
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::metrics::{
    self, ConfigEcho, RunReport, TaskStats, Timings, TrainEvent, SCHEMA_VERSION,
};
use crate::nn::{self, Batch, NetworkSpec, ParamVector};
use crate::sam::{self, SamConfig};
use crate::seed::{self, tag};
use crate::select::{self, EreSource, SelectionConfig};
use crate::sfw::{self, KSparsePolytope, MomentumState};
use crate::{ceil_frac, checkpoint};

/// Algorithm inputs for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Frank-Wolfe step size, in [0, 1].
    pub eta: f64,
    /// Momentum step size.
    pub alpha: f64,
    /// Sharpness perturbation radius; 0 disables the ascent step.
    pub rho: f64,
    /// Fraction of trainable weights zeroed at each task's prune, in [0, 1).
    pub sparsity: f64,
    /// Polytope radius.
    pub tau: f64,
    /// Polytope sparsity fraction, in (0, 1].
    pub k_frac: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub seed: u64,
    /// Momentum decay per step; 1.0 is plain accumulation.
    #[serde(default = "default_momentum_decay")]
    pub momentum_decay: f64,
    /// Radius of the per-epoch sharpness probe written to the curves log.
    #[serde(default = "default_probe_rho")]
    pub probe_rho: f64,
    #[serde(default = "default_probe_dirs")]
    pub probe_dirs: usize,
    /// Mask compression rate used in the capacity report.
    #[serde(default = "default_mask_gamma")]
    pub mask_gamma: f64,
}

fn default_momentum_decay() -> f64 {
    1.0
}

fn default_probe_rho() -> f64 {
    0.05
}

fn default_probe_dirs() -> usize {
    8
}

fn default_mask_gamma() -> f64 {
    0.75
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "train.eta: must lie in [0, 1], got {}",
                self.eta
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "train.alpha: must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!(
                "train.rho: must be finite and >= 0, got {}",
                self.rho
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!(
                "train.sparsity: must lie in [0, 1), got {}",
                self.sparsity
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "train.tau: must be positive, got {}",
                self.tau
            )));
        }
        if !(self.k_frac > 0.0 && self.k_frac <= 1.0) {
            return Err(Error::Config(format!(
                "train.k_frac: must lie in (0, 1], got {}",
                self.k_frac
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be >= 1".into()));
        }
        self.selection.validate()?;
        if !(0.0..=1.0).contains(&self.momentum_decay) {
            return Err(Error::Config(format!(
                "train.momentum_decay: must lie in [0, 1], got {}",
                self.momentum_decay
            )));
        }
        if !(self.probe_rho >= 0.0 && self.probe_rho.is_finite()) {
            return Err(Error::Config(format!(
                "train.probe_rho: must be finite and >= 0, got {}",
                self.probe_rho
            )));
        }
        if self.probe_dirs == 0 {
            return Err(Error::Config("train.probe_dirs: must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_gamma) {
            return Err(Error::Config(format!(
                "train.mask_gamma: must lie in [0, 1], got {}",
                self.mask_gamma
            )));
        }
        Ok(())
    }

    pub fn polytope(&self) -> Result<KSparsePolytope> {
        KSparsePolytope::new(self.k_frac, self.tau)
    }
}

/// Trainable / frozen / per-task snapshot masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskState {
    pub trainable: BitMask,
    pub frozen: BitMask,
    pub per_task_masks: Vec<BitMask>,
}

impl MaskState {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.trainable.len() != d || self.frozen.len() != d {
            return Err(Error::Dimension("mask state length mismatch".into()));
        }
        if !self.trainable.is_disjoint(&self.frozen) {
            return Err(Error::Dimension(
                "a coordinate is both trainable and frozen".into(),
            ));
        }
        for (t, m) in self.per_task_masks.iter().enumerate() {
            if m.len() != d {
                return Err(Error::Dimension(format!("snapshot {t} length mismatch")));
            }
            if !m.is_subset_of(&self.frozen) {
                return Err(Error::Dimension(format!(
                    "snapshot {t} contains non-frozen coordinates"
                )));
            }
        }
        Ok(())
    }

    /// Coordinates that take part in the current task's forward pass.
    pub fn active(&self) -> BitMask {
        self.trainable.union(&self.frozen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Training stopped early: nothing left to train for `task`.
    CapacityExhausted { task: usize },
}

/// Accumulated results, carried across checkpoint save/resume so a resumed
/// run reproduces the uninterrupted run's report exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunProgress {
    pub r: Vec<Vec<f64>>,
    pub task_stats: Vec<TaskStats>,
    pub grad_evals_total: u64,
}

/// Full training state between tasks.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    pub masks: MaskState,
    pub momentum: MomentumState,
    pub completed_tasks: usize,
    pub rng: ChaCha8Rng,
    pub progress: RunProgress,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.params == other.params
            && self.masks == other.masks
            && self.momentum == other.momentum
            && self.completed_tasks == other.completed_tasks
            && self.rng.get_seed() == other.rng.get_seed()
            && self.rng.get_word_pos() == other.rng.get_word_pos()
            && self.rng.get_stream() == other.rng.get_stream()
            && self.progress == other.progress
    }
}

/// The shuffle order used for one epoch; exposed so tests can replay the
/// exact batching of a training run.
pub fn epoch_shuffle(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn uniform_fan_in_init(
    spec: &NetworkSpec,
    params: &mut ParamVector,
    rng: &mut ChaCha8Rng,
    mut reinit: impl FnMut(usize) -> bool,
) {
    for seg in spec.segments() {
        let bound = 1.0 / (seg.fan_in() as f64).sqrt();
        for i in seg.offset..seg.end() {
            if reinit(i) {
                params.as_mut_slice()[i] = rng.gen_range(-bound..bound);
            }
        }
    }
}

/// Trainable set for `task`: non-frozen body plus that task's head.
fn trainable_for_task(spec: &NetworkSpec, frozen: &BitMask, task: usize) -> BitMask {
    let other_heads = spec.other_head_mask(task.min(spec.heads - 1));
    BitMask::from_fn(spec.param_len(), |i| {
        if frozen.get(i) {
            return false;
        }
        if task >= spec.heads {
            // no further head to train; body only
            let head_start = spec.head_segment(0).unwrap().offset;
            return i < head_start;
        }
        !other_heads.get(i)
    })
}

/// Per-task training outcome used for efficiency accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTrainStats {
    pub grad_evals_per_epoch: Vec<u64>,
    pub layer_densities: Vec<f64>,
    pub flops: u64,
}

impl Checkpoint {
    /// Fresh state before task 0.
    pub fn init(spec: NetworkSpec, cfg: &TrainConfig) -> Result<Checkpoint> {
        cfg.validate()?;
        let d = spec.param_len();
        let mut params = ParamVector::zeros(d);
        let mut init_rng = seed::rng_from(cfg.seed, tag::PARAM_INIT);
        uniform_fan_in_init(&spec, &mut params, &mut init_rng, |_| true);
        let frozen = BitMask::zeros(d);
        let trainable = trainable_for_task(&spec, &frozen, 0);
        Ok(Checkpoint {
            momentum: MomentumState::zeros(d, cfg.alpha).with_decay(cfg.momentum_decay),
            masks: MaskState {
                trainable,
                frozen,
                per_task_masks: Vec::new(),
            },
            completed_tasks: 0,
            rng: seed::rng_from(cfg.seed, tag::TRAIN),
            progress: RunProgress::default(),
            spec,
            params,
        })
    }

    /// Fraction of mask-active weight-matrix coordinates per layer
    /// (body layers first, then the head used by `task`).
    pub fn layer_densities(&self, task: usize) -> Vec<f64> {
        let active = self.masks.active();
        let mut segs = self.spec.body_segments();
        segs.push(self.spec.head_segment(task.min(self.spec.heads - 1)).unwrap());
        segs.iter()
            .map(|seg| {
                let weight_coords = seg.rows * seg.cols;
                let on = (seg.offset..seg.offset + weight_coords)
                    .filter(|&i| active.get(i))
                    .count();
                on as f64 / weight_coords as f64
            })
            .collect()
    }

    /// One task of Algorithm-style training: per iteration, sample a batch,
    /// select support examples, take the ascent perturbation on them,
    /// take the descent gradient on the redundancy-reduced subset, accumulate
    /// momentum, and move toward the LMO vertex. Frozen coordinates are
    /// bit-identical before and after.
    pub fn train_task(
        &mut self,
        task: &TaskData,
        cfg: &TrainConfig,
        events: &mut Vec<TrainEvent>,
    ) -> Result<TaskTrainStats> {
        cfg.validate()?;
        self.masks.validate(self.spec.param_len())?;
        let task_idx = self.completed_tasks;
        if task.train.n() == 0 {
            return Err(Error::EmptyBatch);
        }
        if self.masks.trainable.count_ones() == 0 {
            return Err(Error::CapacityExhausted { task: task_idx });
        }
        let poly = cfg.polytope()?;
        let sam_cfg = SamConfig::new(cfg.rho)?;
        let active = self.masks.active();
        let densities = self.layer_densities(task_idx);

        let mut train_batch = task.train.clone();
        train_batch.task_id = task_idx;

        let mut grad_evals_per_epoch = Vec::with_capacity(cfg.epochs_per_task);
        let mut flops = 0u64;
        for epoch in 0..cfg.epochs_per_task {
            let order = epoch_shuffle(train_batch.n(), &mut self.rng);
            let mut epoch_evals = 0u64;
            for chunk in order.chunks(cfg.batch_size) {
                let batch = train_batch.subset(chunk);
                let support =
                    select::select_support(&self.spec, &self.params, &active, &batch, &cfg.selection)?;
                let descent_source = match cfg.selection.ere_from {
                    EreSource::Support => &support,
                    EreSource::Batch => &batch,
                };
                let descent = select::eliminate_redundant(
                    &self.spec,
                    &self.params,
                    &active,
                    descent_source,
                    &cfg.selection,
                )?;
                let g = sam::sam_gradient_split(
                    &self.spec,
                    &self.params,
                    &active,
                    &support,
                    &descent,
                    &sam_cfg,
                )?;
                let evals = (support.n() + descent.n()) as u64;
                epoch_evals += evals;
                self.progress.grad_evals_total += evals;

                // momentum lives on the trainable support
                let mut g_train = g.as_slice().to_vec();
                for (i, v) in g_train.iter_mut().enumerate() {
                    if !self.masks.trainable.get(i) {
                        *v = 0.0;
                    }
                }
                self.momentum = sfw::momentum_update(&self.momentum, &g_train);
                let vertex = sfw::lmo(&self.momentum.m, &poly, &self.masks.trainable)?;
                self.params = sfw::sfw_update(&self.params, &vertex, cfg.eta, &self.masks.trainable)?;
            }
            flops += metrics::training_flops(
                &self.spec.layer_dims,
                epoch_evals,
                1,
                std::slice::from_ref(&densities),
            )?;
            grad_evals_per_epoch.push(epoch_evals);

            let loss = nn::loss_on_batch(&self.spec, &self.params, &active, &train_batch)?;
            let accuracy = self.evaluate(task_idx, &task.test)?;
            let sharpness = sam::sharpness_probe(
                &self.spec,
                &self.params,
                &active,
                &train_batch,
                cfg.probe_rho,
                cfg.probe_dirs,
                seed::subseed(cfg.seed, tag::probe(task_idx, epoch)),
            )?;
            events.push(TrainEvent::Epoch {
                schema_version: SCHEMA_VERSION,
                task: task_idx,
                epoch,
                loss,
                accuracy,
                sharpness,
                grad_evals: epoch_evals,
            });
        }
        Ok(TaskTrainStats {
            grad_evals_per_epoch,
            layer_densities: densities,
            flops,
        })
    }

    /// Accuracy on `task_index`: completed tasks are evaluated through their
    /// survivor snapshot, the in-progress task through the current active
    /// mask, with the matching output head.
    pub fn evaluate(&self, task_index: usize, test_set: &Batch) -> Result<f64> {
        let mask = if task_index < self.masks.per_task_masks.len() {
            self.masks.per_task_masks[task_index].clone()
        } else if task_index == self.completed_tasks {
            self.masks.active()
        } else {
            return Err(Error::UnknownTask {
                task: task_index,
                completed: self.completed_tasks,
            });
        };
        let mut batch = test_set.clone();
        batch.task_id = task_index;
        let logits = nn::forward(&self.spec, &self.params, &mask, &batch)?;
        nn::accuracy(&logits, &batch.labels, self.spec.classes())
    }

    /// Freeze the prune survivors as this task's snapshot, reinitialize all
    /// remaining coordinates (uniform ±1/√fan_in per layer, momentum zeroed),
    /// and mark the next task's pool trainable.
    pub fn freeze_and_expand(&mut self, survivors: BitMask) -> Result<()> {
        let d = self.spec.param_len();
        if survivors.len() != d {
            return Err(Error::Dimension("survivor mask length mismatch".into()));
        }
        self.masks.frozen = self.masks.frozen.union(&survivors);
        self.masks.per_task_masks.push(survivors);
        self.completed_tasks += 1;

        let frozen = self.masks.frozen.clone();
        uniform_fan_in_init(&self.spec, &mut self.params, &mut self.rng, |i| {
            !frozen.get(i)
        });
        for i in 0..d {
            if !frozen.get(i) {
                self.momentum.m[i] = 0.0;
            }
        }
        self.masks.trainable = trainable_for_task(&self.spec, &frozen, self.completed_tasks);
        if self.masks.trainable.count_ones() == 0 && self.completed_tasks < self.spec.heads {
            return Err(Error::CapacityExhausted {
                task: self.completed_tasks,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        checkpoint::load(path)
    }
}

/// One-shot magnitude prune over the currently trainable coordinates: the
/// top (1 − sparsity) fraction by |θ| survives (ties to lower index), the
/// rest are zeroed. Frozen coordinates are untouched survivors. Returns the
/// full survivor mask (frozen ∪ kept trainable).
pub fn prune(params: &mut ParamVector, sparsity: f64, masks: &MaskState) -> BitMask {
    let mut trainable_idx: Vec<usize> = masks.trainable.iter_ones().collect();
    let n = trainable_idx.len();
    let zero_count = ceil_frac(sparsity, n);
    let keep_count = n - zero_count;
    let values = params.as_slice();
    trainable_idx.sort_unstable_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then_with(|| a.cmp(&b))
    });
    let mut survivors = masks.frozen.clone();
    for &i in trainable_idx.iter().take(keep_count) {
        survivors.set(i, true);
    }
    let slice = params.as_mut_slice();
    for &i in trainable_idx.iter().skip(keep_count) {
        slice[i] = 0.0;
    }
    survivors
}

/// Everything a finished (or capacity-stopped) run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub events: Vec<TrainEvent>,
    pub checkpoint: Checkpoint,
}

/// Train the whole sequence from scratch.
pub fn run_sequence(
    tasks: &TaskSequence,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<RunOutput> {
    let state = Checkpoint::init(spec.clone(), cfg)?;
    run_sequence_from(state, tasks, cfg)
}

/// Continue a run from a checkpoint. `state.completed_tasks` tasks are
/// assumed done (their rows and stats ride along in the checkpoint).
pub fn run_sequence_from(
    mut state: Checkpoint,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    if tasks.n_tasks() == 0 {
        return Err(Error::Config("task sequence is empty".into()));
    }
    if state.spec.heads < tasks.n_tasks() {
        return Err(Error::Config(format!(
            "network.heads: {} head(s) for {} task(s)",
            state.spec.heads,
            tasks.n_tasks()
        )));
    }
    for task in &tasks.tasks {
        if task.class_count > state.spec.classes() {
            return Err(Error::Config(format!(
                "task {} has {} classes but heads emit {}",
                task.task_id,
                task.class_count,
                state.spec.classes()
            )));
        }
    }
    if state.completed_tasks > tasks.n_tasks() {
        return Err(Error::Config(format!(
            "checkpoint has {} completed task(s), sequence only {}",
            state.completed_tasks,
            tasks.n_tasks()
        )));
    }

    let run_start = Instant::now();
    let mut events = Vec::new();
    let mut timings = Timings::default();
    let mut status = RunStatus::Complete;

    for t in state.completed_tasks..tasks.n_tasks() {
        let task = &tasks.tasks[t];
        let task_start = Instant::now();
        events.push(TrainEvent::TaskStart {
            schema_version: SCHEMA_VERSION,
            task: t,
            trainable: state.masks.trainable.count_ones(),
            frozen: state.masks.frozen.count_ones(),
        });

        let train_stats = match state.train_task(task, cfg, &mut events) {
            Ok(stats) => stats,
            Err(Error::CapacityExhausted { task }) => {
                status = RunStatus::CapacityExhausted { task };
                break;
            }
            Err(e) => return Err(e),
        };

        let pre_prune_accuracy = state.evaluate(t, &task.test)?;
        let trainable_count = state.masks.trainable.count_ones();
        let survivors = prune(&mut state.params, cfg.sparsity, &state.masks);
        let grad_evals_at_prune = state.progress.grad_evals_total;
        let kept_count = survivors.count_ones() - state.masks.frozen.count_ones();
        let zero_among_trainable = state
            .masks
            .trainable
            .iter_ones()
            .filter(|&i| state.params.as_slice()[i] == 0.0)
            .count();
        let zero_fraction_at_prune = zero_among_trainable as f64 / trainable_count as f64;
        let post_prune_accuracy = state.evaluate(t, &task.test)?;
        events.push(TrainEvent::Prune {
            schema_version: SCHEMA_VERSION,
            task: t,
            pre_accuracy: pre_prune_accuracy,
            post_accuracy: post_prune_accuracy,
            zero_fraction: zero_fraction_at_prune,
        });

        let capacity_error = match state.freeze_and_expand(survivors) {
            Ok(()) => None,
            Err(Error::CapacityExhausted { task }) => Some(task),
            Err(e) => return Err(e),
        };

        let mut row = Vec::with_capacity(t + 1);
        for i in 0..=t {
            row.push(state.evaluate(i, &tasks.tasks[i].test)?);
        }
        state.progress.r.push(row);
        state.progress.task_stats.push(TaskStats {
            task: t,
            pre_prune_accuracy,
            post_prune_accuracy,
            zero_fraction_at_prune,
            trainable_count,
            kept_count,
            frozen_after: state.masks.frozen.count_ones(),
            grad_evals_per_epoch: train_stats.grad_evals_per_epoch.clone(),
            grad_evals_at_prune,
            grad_evals_at_task_end: state.progress.grad_evals_total,
            flops: train_stats.flops,
        });
        timings
            .per_task_ms
            .push(task_start.elapsed().as_millis() as u64);

        if let Some(task) = capacity_error {
            if state.completed_tasks < tasks.n_tasks() {
                status = RunStatus::CapacityExhausted { task };
                break;
            }
        }
    }

    timings.total_ms = run_start.elapsed().as_millis() as u64;
    events.push(TrainEvent::RunComplete {
        schema_version: SCHEMA_VERSION,
        tasks: state.completed_tasks,
        wall_ms: timings.total_ms,
    });

    let acc_t = metrics::acc_t(&state.progress.r)?;
    let flops: u64 = state.progress.task_stats.iter().map(|s| s.flops).sum();
    let completed = state.completed_tasks.max(1);
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        status,
        r: state.progress.r.clone(),
        acc_t,
        flops,
        capacity_weights_only: 1.0 - cfg.sparsity,
        capacity_with_masks: metrics::capacity(cfg.sparsity, cfg.mask_gamma, completed)?,
        memory: metrics::memory_footprint(
            &state.spec,
            state.masks.per_task_masks.len(),
            cfg.batch_size,
        ),
        grad_evals_total: state.progress.grad_evals_total,
        task_stats: state.progress.task_stats.clone(),
        config: ConfigEcho {
            network: state.spec.clone(),
            train: cfg.clone(),
            data: tasks.metadata.clone(),
        },
        timings,
    };
    Ok(RunOutput {
        report,
        events,
        checkpoint: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_split_gaussians;
    use crate::nn::Activation;

    fn test_config(seed: u64) -> TrainConfig {
        TrainConfig {
            eta: 0.1,
            alpha: 0.1,
            rho: 0.05,
            sparsity: 0.5,
            tau: 1.0,
            k_frac: 0.25,
            epochs_per_task: 1,
            batch_size: 16,
            selection: SelectionConfig::default(),
            seed,
            momentum_decay: 1.0,
            probe_rho: 0.05,
            probe_dirs: 2,
            mask_gamma: 0.75,
        }
    }

    fn small_spec(heads: usize) -> NetworkSpec {
        NetworkSpec::new(vec![2, 6, 2], Activation::Tanh, heads).unwrap()
    }

    #[test]
    fn prune_magnitude_example() {
        let mut params = ParamVector::from_vec(vec![0.5, -0.1, 0.3]);
        let masks = MaskState {
            trainable: BitMask::ones(3),
            frozen: BitMask::zeros(3),
            per_task_masks: vec![],
        };
        let survivors = prune(&mut params, 2.0 / 3.0, &masks);
        assert_eq!(survivors.iter_ones().collect::<Vec<_>>(), vec![0]);
        assert_eq!(params.as_slice(), &[0.5, 0.0, 0.0]);
    }

    #[test]
    fn prune_zero_sparsity_is_identity() {
        let mut params = ParamVector::from_vec(vec![0.5, -0.1, 0.3]);
        let mut frozen = BitMask::zeros(3);
        frozen.set(2, true);
        let masks = MaskState {
            trainable: BitMask::from_bools(&[true, true, false]),
            frozen,
            per_task_masks: vec![],
        };
        let survivors = prune(&mut params, 0.0, &masks);
        assert_eq!(survivors.count_ones(), 3);
        assert_eq!(params.as_slice(), &[0.5, -0.1, 0.3]);
    }

    #[test]
    fn prune_fraction_matches_sort_oracle() {
        use rand::Rng;
        let mut rng = crate::seed::rng_from(5, 99);
        let values: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut params = ParamVector::from_vec(values.clone());
        let masks = MaskState {
            trainable: BitMask::ones(20),
            frozen: BitMask::zeros(20),
            per_task_masks: vec![],
        };
        let survivors = prune(&mut params, 0.8, &masks);
        // zero fraction exactly 0.8 for d = 20
        let zeros = params.as_slice().iter().filter(|v| **v == 0.0).count();
        assert_eq!(zeros, 16);
        assert_eq!(survivors.count_ones(), 4);
        // sort oracle: survivors are the 4 largest |values|
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| values[b].abs().partial_cmp(&values[a].abs()).unwrap());
        for &i in order.iter().take(4) {
            assert!(survivors.get(i), "coord {i} should survive");
        }
    }

    #[test]
    fn prune_ties_keep_lower_index() {
        let mut params = ParamVector::from_vec(vec![0.5, -0.5, 0.5]);
        let masks = MaskState {
            trainable: BitMask::ones(3),
            frozen: BitMask::zeros(3),
            per_task_masks: vec![],
        };
        let survivors = prune(&mut params, 2.0 / 3.0, &masks);
        assert_eq!(survivors.iter_ones().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn epochs_zero_changes_only_bookkeeping() {
        let spec = small_spec(1);
        let mut cfg = test_config(3);
        cfg.epochs_per_task = 0;
        let tasks = gen_split_gaussians(1, 2, 2, 10, 3.0, 11).unwrap();
        let mut state = Checkpoint::init(spec, &cfg).unwrap();
        let before = state.clone();
        let mut events = Vec::new();
        let stats = state.train_task(&tasks.tasks[0], &cfg, &mut events).unwrap();
        assert_eq!(state.params, before.params);
        assert_eq!(state.momentum, before.momentum);
        assert_eq!(state.rng.get_word_pos(), before.rng.get_word_pos());
        assert!(stats.grad_evals_per_epoch.is_empty());
        assert!(events.is_empty());
    }

    #[test]
    fn single_iteration_matches_hand_stepped_trace() {
        let spec = small_spec(1);
        let mut cfg = test_config(21);
        cfg.selection.inner_frac = 1.0;
        cfg.selection.outer_frac = 1.0;
        cfg.rho = 0.0;
        cfg.epochs_per_task = 1;
        cfg.batch_size = 64; // one batch covers the whole task
        let tasks = gen_split_gaussians(1, 2, 2, 10, 3.0, 7).unwrap();
        let task = &tasks.tasks[0];

        let mut state = Checkpoint::init(spec.clone(), &cfg).unwrap();
        let theta0 = state.params.clone();
        let momentum0 = state.momentum.clone();
        let trainable = state.masks.trainable.clone();
        let active = state.masks.active();
        let mut replay_rng = state.rng.clone();

        let mut events = Vec::new();
        state.train_task(task, &cfg, &mut events).unwrap();

        // hand-step the same iteration with the module operations
        let order = epoch_shuffle(task.train.n(), &mut replay_rng);
        let mut batch = task.train.subset(&order);
        batch.task_id = 0;
        let g = nn::grad(&spec, &theta0, &active, &batch).unwrap();
        let mut g_train = g.as_slice().to_vec();
        for (i, v) in g_train.iter_mut().enumerate() {
            if !trainable.get(i) {
                *v = 0.0;
            }
        }
        let m1 = sfw::momentum_update(&momentum0, &g_train);
        let poly = cfg.polytope().unwrap();
        let v = sfw::lmo(&m1.m, &poly, &trainable).unwrap();
        let theta1 = sfw::sfw_update(&theta0, &v, cfg.eta, &trainable).unwrap();

        assert_eq!(state.momentum.m, m1.m);
        assert_eq!(state.params.as_slice(), theta1.as_slice());
    }

    #[test]
    fn frozen_coordinates_are_bit_identical_through_training() {
        let spec = small_spec(2);
        let cfg = test_config(5);
        let tasks = gen_split_gaussians(2, 2, 2, 15, 3.0, 13).unwrap();
        let mut state = Checkpoint::init(spec, &cfg).unwrap();
        let mut events = Vec::new();
        state.train_task(&tasks.tasks[0], &cfg, &mut events).unwrap();
        let survivors = prune(&mut state.params, cfg.sparsity, &state.masks);
        state.freeze_and_expand(survivors).unwrap();

        let frozen_values: Vec<(usize, f64)> = state
            .masks
            .frozen
            .iter_ones()
            .map(|i| (i, state.params.as_slice()[i]))
            .collect();
        state.train_task(&tasks.tasks[1], &cfg, &mut events).unwrap();
        for (i, v) in frozen_values {
            assert_eq!(state.params.as_slice()[i].to_bits(), v.to_bits());
        }
    }

    #[test]
    fn reinitialized_coordinates_fall_in_fan_in_range() {
        let spec = NetworkSpec::new(vec![4, 9, 3], Activation::Relu, 2).unwrap();
        let cfg = test_config(8);
        let mut state = Checkpoint::init(spec.clone(), &cfg).unwrap();
        // freeze nothing, reinitialize everything, many times over
        for round in 0..20 {
            let survivors = BitMask::zeros(spec.param_len());
            state.masks.per_task_masks.clear();
            state.completed_tasks = 0;
            state.freeze_and_expand(survivors).unwrap();
            state.masks.frozen = BitMask::zeros(spec.param_len());
            for seg in spec.segments() {
                let bound = 1.0 / (seg.fan_in() as f64).sqrt();
                for i in seg.offset..seg.end() {
                    let v = state.params.as_slice()[i];
                    assert!(v >= -bound && v <= bound, "round {round} coord {i}: {v}");
                }
            }
        }
    }

    #[test]
    fn momentum_resets_on_reinitialized_coordinates() {
        let spec = small_spec(2);
        let cfg = test_config(17);
        let tasks = gen_split_gaussians(1, 2, 2, 15, 3.0, 29).unwrap();
        let mut state = Checkpoint::init(spec, &cfg).unwrap();
        let mut events = Vec::new();
        state.train_task(&tasks.tasks[0], &cfg, &mut events).unwrap();
        let survivors = prune(&mut state.params, cfg.sparsity, &state.masks);
        state.freeze_and_expand(survivors).unwrap();
        for i in 0..state.params.len() {
            if !state.masks.frozen.get(i) {
                assert_eq!(state.momentum.m[i], 0.0);
            }
        }
    }

    #[test]
    fn untrained_two_class_head_is_near_chance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let spec = small_spec(1);
            let cfg = test_config(seed);
            let tasks = gen_split_gaussians(1, 2, 2, 50, 3.0, seed + 100).unwrap();
            let state = Checkpoint::init(spec, &cfg).unwrap();
            total += state.evaluate(0, &tasks.tasks[0].test).unwrap();
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() <= 0.1, "mean accuracy {mean}");
    }

    #[test]
    fn evaluate_rejects_unknown_task_and_empty_set() {
        let spec = small_spec(1);
        let cfg = test_config(1);
        let tasks = gen_split_gaussians(1, 2, 2, 10, 3.0, 2).unwrap();
        let state = Checkpoint::init(spec, &cfg).unwrap();
        assert!(matches!(
            state.evaluate(3, &tasks.tasks[0].test),
            Err(Error::UnknownTask { .. })
        ));
        let mut empty = tasks.tasks[0].test.clone();
        empty.labels.clear();
        empty.inputs.clear();
        assert!(matches!(state.evaluate(0, &empty), Err(Error::EmptyBatch)));
    }

    #[test]
    fn single_task_report_shape() {
        let spec = small_spec(1);
        let cfg = test_config(2);
        let tasks = gen_split_gaussians(1, 2, 2, 15, 4.0, 3).unwrap();
        let out = run_sequence(&tasks, &spec, &cfg).unwrap();
        assert_eq!(out.report.r.len(), 1);
        assert_eq!(out.report.r[0].len(), 1);
        assert_eq!(out.report.acc_t, out.report.r[0][0]);
        assert_eq!(out.report.status, RunStatus::Complete);
    }

    #[test]
    fn run_sequence_is_deterministic() {
        let spec = small_spec(3);
        let cfg = test_config(9);
        let tasks = gen_split_gaussians(3, 2, 2, 12, 3.0, 31).unwrap();
        let a = run_sequence(&tasks, &spec, &cfg).unwrap();
        let b = run_sequence(&tasks, &spec, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.events, b.events);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn mask_nesting_and_snapshot_subset_invariants() {
        let spec = small_spec(3);
        let cfg = test_config(14);
        let tasks = gen_split_gaussians(3, 2, 2, 12, 3.0, 77).unwrap();
        let out = run_sequence(&tasks, &spec, &cfg).unwrap();
        let masks = &out.checkpoint.masks;
        masks.validate(spec.param_len()).unwrap();
        for m in &masks.per_task_masks {
            assert!(m.is_subset_of(&masks.frozen));
        }
        assert!(masks.trainable.is_disjoint(&masks.frozen));
    }

    #[test]
    fn too_few_heads_rejected() {
        let spec = small_spec(1);
        let cfg = test_config(1);
        let tasks = gen_split_gaussians(2, 2, 2, 10, 3.0, 1).unwrap();
        assert!(matches!(
            run_sequence(&tasks, &spec, &cfg),
            Err(Error::Config(_))
        ));
    }
}

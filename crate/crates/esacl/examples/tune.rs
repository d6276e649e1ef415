// Scratch harness for picking benchmark hyperparameters. Not part of the
// deliverable test suite; run with `cargo run --release -p esacl --example tune -- <mode>`.

use esacl::data::gen_split_gaussians;
use esacl::nn::{Activation, NetworkSpec};
use esacl::runner::{run_sequence, TrainConfig};
use esacl::sam::sharpness_probe;
use esacl::select::SelectionConfig;

fn bench_config(seed: u64, rho: f64, fracs: f64, eta: f64, tau: f64, k_frac: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        eta,
        alpha: 0.1,
        rho,
        sparsity: 0.8,
        tau,
        k_frac,
        epochs_per_task: epochs,
        batch_size: 16,
        selection: SelectionConfig {
            inner_frac: fracs,
            outer_frac: fracs,
            ere_from: Default::default(),
        },
        seed,
        momentum_decay: 1.0,
        probe_rho: 0.05,
        probe_dirs: 64,
        mask_gamma: 0.75,
    }
}

fn spec(dim: usize, hidden: usize, tasks: usize) -> NetworkSpec {
    NetworkSpec::new(vec![dim, hidden, 2], Activation::Tanh, tasks).unwrap()
}

/// Mean sharpness probe over per-task snapshots at end of run.
#[allow(dead_code)]
fn final_sharpness(out: &esacl::runner::RunOutput, tasks: &esacl::data::TaskSequence) -> f64 {
    let ck = &out.checkpoint;
    let mut total = 0.0;
    for (t, task) in tasks.tasks.iter().enumerate() {
        let mask = &ck.masks.per_task_masks[t];
        let mut train = task.train.clone();
        train.task_id = t;
        total += sharpness_probe(&ck.spec, &ck.params, mask, &train, 0.05, 64, 9000 + t as u64)
            .unwrap();
    }
    total / tasks.tasks.len() as f64
}

/// Mean over tasks of the last-epoch sharpness probe (pre-prune, active mask).
fn end_of_task_sharpness(out: &esacl::runner::RunOutput) -> f64 {
    use esacl::metrics::TrainEvent;
    let mut last_per_task = std::collections::BTreeMap::new();
    for ev in &out.events {
        if let TrainEvent::Epoch { task, sharpness, .. } = ev {
            last_per_task.insert(*task, *sharpness);
        }
    }
    let n = last_per_task.len().max(1);
    last_per_task.values().sum::<f64>() / n as f64
}

fn mean_prune_drop(out: &esacl::runner::RunOutput) -> f64 {
    let stats = &out.report.task_stats;
    stats
        .iter()
        .map(|s| s.pre_prune_accuracy - s.post_prune_accuracy)
        .sum::<f64>()
        / stats.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(|s| s.as_str()).unwrap_or("learn");

    match mode {
        // can the optimizer learn at all? sweep basic knobs
        "learn" => {
            for sep in [3.0, 4.0] {
                for hidden in [16, 24] {
                    for eta in [0.05, 0.1, 0.2] {
                        for tau in [0.5, 1.0, 2.0] {
                            for k_frac in [0.1, 0.2, 0.3] {
                                let tasks =
                                    gen_split_gaussians(5, 2, 8, 50, sep, 1234).unwrap();
                                let s = spec(8, hidden, 5);
                                let cfg = bench_config(7, 0.05, 1.0, eta, tau, k_frac, 30);
                                let out = run_sequence(&tasks, &s, &cfg).unwrap();
                                println!(
                                    "sep={sep} hid={hidden} eta={eta} tau={tau} k={k_frac} -> acc_t={:.4} drop={:.4}",
                                    out.report.acc_t,
                                    mean_prune_drop(&out)
                                );
                            }
                        }
                    }
                }
            }
        }
        // criterion 6 shape: SAM vs plain across seeds
        "sam" => {
            let sep: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3.0);
            let eta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
            let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let k_frac: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
            let rho: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.5);
            let epochs: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(30);
            let fracs: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.4);
            let n_per_class: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(50);
            let dim: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(8);
            let hidden: usize = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(24);
            let mut sharp_wins = 0;
            let mut drop_wins = 0;
            let n_seeds = 20;
            for seed in 0..n_seeds {
                let tasks = gen_split_gaussians(5, 2, dim, n_per_class, sep, 5000 + seed).unwrap();
                let s = spec(dim, hidden, 5);
                let sam_cfg = bench_config(seed, rho, fracs, eta, tau, k_frac, epochs);
                let plain_cfg = bench_config(seed, 0.0, fracs, eta, tau, k_frac, epochs);
                let sam_out = run_sequence(&tasks, &s, &sam_cfg).unwrap();
                let plain_out = run_sequence(&tasks, &s, &plain_cfg).unwrap();
                let sam_sharp = end_of_task_sharpness(&sam_out);
                let plain_sharp = end_of_task_sharpness(&plain_out);
                let sam_drop = mean_prune_drop(&sam_out);
                let plain_drop = mean_prune_drop(&plain_out);
                if sam_sharp < plain_sharp {
                    sharp_wins += 1;
                }
                if sam_drop < plain_drop {
                    drop_wins += 1;
                }
                println!(
                    "seed={seed:2} sharp sam={sam_sharp:+.5} plain={plain_sharp:+.5} | drop sam={sam_drop:+.4} plain={plain_drop:+.4} | acc sam={:.3} plain={:.3}",
                    sam_out.report.acc_t, plain_out.report.acc_t
                );
            }
            println!("sharp_wins={sharp_wins}/{n_seeds} drop_wins={drop_wins}/{n_seeds}");
        }
        // criterion 7: selection vs full data
        "select" => {
            let sep: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3.0);
            let eta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
            let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let k_frac: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
            let rho: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.5);
            let epochs: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(30);
            for seed in 0..10 {
                let tasks = gen_split_gaussians(5, 2, 8, 50, sep, 5000 + seed).unwrap();
                let s = spec(8, 24, 5);
                let lean = run_sequence(&tasks, &s, &bench_config(seed, rho, 0.4, eta, tau, k_frac, epochs)).unwrap();
                let full = run_sequence(&tasks, &s, &bench_config(seed, rho, 1.0, eta, tau, k_frac, epochs)).unwrap();
                let reduction = 1.0
                    - lean.report.grad_evals_total as f64 / full.report.grad_evals_total as f64;
                println!(
                    "seed={seed} grad evals {} vs {} (cut {:.1}%) acc {:.3} vs {:.3} (delta {:+.4})",
                    lean.report.grad_evals_total,
                    full.report.grad_evals_total,
                    reduction * 100.0,
                    lean.report.acc_t,
                    full.report.acc_t,
                    lean.report.acc_t - full.report.acc_t,
                );
            }
        }
        // criterion 9: rho sensitivity
        "rho" => {
            let sep: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3.0);
            let eta: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
            let tau: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1.0);
            let k_frac: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
            let epochs: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(30);
            let mut worst_at_5 = 0;
            for seed in 0..10 {
                let tasks = gen_split_gaussians(5, 2, 8, 50, sep, 5000 + seed).unwrap();
                let s = spec(8, 24, 5);
                let accs: Vec<f64> = [0.01, 0.05, 0.5, 5.0]
                    .iter()
                    .map(|&rho| {
                        run_sequence(&tasks, &s, &bench_config(seed, rho, 0.4, eta, tau, k_frac, epochs))
                            .unwrap()
                            .report
                            .acc_t
                    })
                    .collect();
                let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
                if accs[3] <= min {
                    worst_at_5 += 1;
                }
                println!("seed={seed} accs={accs:?}");
            }
            println!("rho=5 worst in {worst_at_5}/10 seeds");
        }
        other => eprintln!("unknown mode {other}"),
    }
}

//! Sharpness-aware gradient estimation.
//!
//! One ascent step `ε = ρ·g/‖g‖₂` moves the parameters toward the local
//! worst case; the gradient taken there is the descent direction. ε is a
//! constant during the outer gradient (first-order approximation — no
//! differentiating through the perturbation). A random-direction sharpness
//! probe measures how much the loss rises in a ρ-ball, for diagnostics and
//! verification rather than training.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::nn::{self, Batch, NetworkSpec, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamConfig {
    /// Neighborhood radius ρ. Zero disables the perturbation.
    pub rho: f64,
    /// Gradient norms below this are treated as degenerate (ε = 0).
    pub grad_eps: f64,
}

impl SamConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!(
                "rho: must be finite and >= 0, got {rho}"
            )));
        }
        Ok(SamConfig {
            rho,
            grad_eps: 1e-12,
        })
    }
}

/// Ascent perturbation with degenerate-gradient flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub epsilon: Vec<f64>,
    pub degenerate: bool,
}

/// `ε = ρ · g / ‖g‖₂`; the zero vector (flagged) when ‖g‖₂ < grad_eps.
pub fn perturbation(g: &[f64], cfg: &SamConfig) -> Perturbation {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < cfg.grad_eps {
        return Perturbation {
            epsilon: vec![0.0; g.len()],
            degenerate: true,
        };
    }
    let scale = cfg.rho / norm;
    Perturbation {
        epsilon: g.iter().map(|&x| x * scale).collect(),
        degenerate: false,
    }
}

fn shifted(params: &ParamVector, epsilon: &[f64]) -> ParamVector {
    let values = params
        .as_slice()
        .iter()
        .zip(epsilon)
        .map(|(&p, &e)| p + e)
        .collect();
    ParamVector::from_vec(values)
}

/// Sharpness-aware gradient with separate ascent and descent batches:
/// ε comes from the gradient on `ascent`, the returned gradient is taken
/// at `θ + ε` on `descent`. Degenerate ascent gradient falls back to ε = 0.
pub fn sam_gradient_split(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    ascent: &Batch,
    descent: &Batch,
    cfg: &SamConfig,
) -> Result<ParamVector> {
    let inner = nn::grad(spec, params, mask, ascent)?;
    let p = perturbation(inner.as_slice(), cfg);
    if p.degenerate {
        return nn::grad(spec, params, mask, descent);
    }
    nn::grad(spec, &shifted(params, &p.epsilon), mask, descent)
}

/// Sharpness-aware gradient on a single support batch.
pub fn sam_gradient(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    support_batch: &Batch,
    cfg: &SamConfig,
) -> Result<ParamVector> {
    sam_gradient_split(spec, params, mask, support_batch, support_batch, cfg)
}

/// Max loss increase over `n_dirs` random unit directions at radius ρ.
/// Directions live on the sphere restricted to unmasked coordinates.
/// Deterministic given the seed; exactly 0 when ρ = 0.
pub fn sharpness_probe(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
    rho: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    if n_dirs == 0 {
        return Err(Error::Config("sharpness probe needs n_dirs >= 1".into()));
    }
    if rho == 0.0 {
        // still validate the inputs
        nn::loss_on_batch(spec, params, mask, batch)?;
        return Ok(0.0);
    }
    let base = nn::loss_on_batch(spec, params, mask, batch)?;
    let active: Vec<usize> = mask.iter_ones().collect();
    if active.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_dirs {
        let mut dir = vec![0.0; params.len()];
        let mut norm_sq = 0.0;
        for &i in &active {
            // Box-Muller; avoids distribution-crate coupling and is stable
            // across rand versions.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            dir[i] = z;
            norm_sq += z * z;
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            continue;
        }
        let mut probe = params.clone();
        for &i in &active {
            probe.as_mut_slice()[i] += rho * dir[i] / norm;
        }
        let val = nn::loss_on_batch(spec, &probe, mask, batch)? - base;
        worst = worst.max(val);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (NetworkSpec, ParamVector, BitMask, Batch) {
        let spec = NetworkSpec::new(vec![3, 4, 2], crate::nn::Activation::Tanh, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.param_len();
        let params = ParamVector::from_vec((0..d).map(|_| rng.gen_range(-0.7..0.7)).collect());
        let mask = BitMask::from_fn(d, |_| rng.gen_bool(0.9));
        let inputs = (0..15).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let labels = (0..5).map(|_| rng.gen_range(0..2)).collect();
        let batch = Batch::new(inputs, labels, 3, 0).unwrap();
        (spec, params, mask, batch)
    }

    #[test]
    fn perturbation_is_unit_norm_scaling() {
        let cfg = SamConfig::new(0.05).unwrap();
        let p = perturbation(&[3.0, 4.0], &cfg);
        assert!(!p.degenerate);
        assert!((p.epsilon[0] - 0.03).abs() < 1e-15);
        assert!((p.epsilon[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_degenerate() {
        let cfg = SamConfig::new(0.05).unwrap();
        let p = perturbation(&[0.0, 0.0], &cfg);
        assert!(p.degenerate);
        assert_eq!(p.epsilon, vec![0.0, 0.0]);
    }

    #[test]
    fn perturbation_norm_equals_rho() {
        let cfg = SamConfig::new(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let g: Vec<f64> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let p = perturbation(&g, &cfg);
            let norm = p.epsilon.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn rho_zero_equals_plain_gradient_exactly() {
        let (spec, params, mask, batch) = setup(4);
        let cfg = SamConfig::new(0.0).unwrap();
        let sam = sam_gradient(&spec, &params, &mask, &batch, &cfg).unwrap();
        let plain = nn::grad(&spec, &params, &mask, &batch).unwrap();
        assert_eq!(sam.as_slice(), plain.as_slice());
    }

    #[test]
    fn quadratic_composition_check() {
        // d/dθ θ² = 2θ; at θ=1 with ρ=0.1 the ascent lands at 1.1 and the
        // outer derivative there is 2.2.
        let cfg = SamConfig::new(0.1).unwrap();
        let inner = vec![2.0 * 1.0];
        let p = perturbation(&inner, &cfg);
        let shifted = 1.0 + p.epsilon[0];
        assert!((shifted - 1.1).abs() < 1e-15);
        let outer = 2.0 * shifted;
        assert!((outer - 2.2).abs() < 1e-12);
    }

    #[test]
    fn sam_equals_manual_two_step_composition() {
        for seed in 0..5 {
            let (spec, params, mask, batch) = setup(40 + seed);
            let cfg = SamConfig::new(0.2).unwrap();
            let sam = sam_gradient(&spec, &params, &mask, &batch, &cfg).unwrap();

            let inner = nn::grad(&spec, &params, &mask, &batch).unwrap();
            let p = perturbation(inner.as_slice(), &cfg);
            let mut moved = params.clone();
            for (t, e) in moved.as_mut_slice().iter_mut().zip(&p.epsilon) {
                *t += e;
            }
            let manual = nn::grad(&spec, &moved, &mask, &batch).unwrap();
            for (a, b) in sam.as_slice().iter().zip(manual.as_slice()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sam_gradient_masked_coordinates_are_zero() {
        let (spec, params, mask, batch) = setup(77);
        let cfg = SamConfig::new(0.5).unwrap();
        let g = sam_gradient(&spec, &params, &mask, &batch, &cfg).unwrap();
        for i in 0..g.len() {
            if !mask.get(i) {
                assert_eq!(g.as_slice()[i], 0.0);
            }
        }
    }

    #[test]
    fn probe_zero_rho_is_exactly_zero() {
        let (spec, params, mask, batch) = setup(12);
        let v = sharpness_probe(&spec, &params, &mask, &batch, 0.0, 4, 9).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn probe_is_monotone_in_rho_for_convex_loss() {
        // single linear layer -> cross-entropy is convex in θ
        let spec = NetworkSpec::new(vec![4, 3], crate::nn::Activation::Relu, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = spec.param_len();
        let params = ParamVector::from_vec((0..d).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let mask = BitMask::ones(d);
        let inputs = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let batch = Batch::new(inputs, labels, 4, 0).unwrap();
        let mut prev = 0.0;
        for rho in [0.01, 0.1, 1.0] {
            let v = sharpness_probe(&spec, &params, &mask, &batch, rho, 32, 123).unwrap();
            assert!(
                v >= prev - 1e-12,
                "probe not monotone: {v} < {prev} at rho={rho}"
            );
            prev = v;
        }
    }

    #[test]
    fn probe_is_reproducible() {
        let (spec, params, mask, batch) = setup(64);
        let a = sharpness_probe(&spec, &params, &mask, &batch, 0.3, 16, 555).unwrap();
        let b = sharpness_probe(&spec, &params, &mask, &batch, 0.3, 16, 555).unwrap();
        assert_eq!(a, b);
        let c = sharpness_probe(&spec, &params, &mask, &batch, 0.3, 16, 556).unwrap();
        assert_ne!(a, c);
    }
}

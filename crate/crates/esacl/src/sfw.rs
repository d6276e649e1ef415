//! K-sparse polytope constraint set and the stochastic Frank-Wolfe update.
//!
//! The constraint set C(K, τ) is the convex hull of all vectors with exactly
//! K nonzero entries of magnitude τ — equivalently the intersection of the
//! L1 ball of radius τ·K with the L∞ ball of radius τ. Frank-Wolfe needs no
//! projection onto it: a linear minimization oracle picks the best vertex
//! and the parameters move by a convex combination toward it, which keeps
//! them inside the hull and drives unused coordinates toward zero.

use serde::{Deserialize, Serialize};

use crate::ceil_frac;
use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::nn::ParamVector;

/// C(K, τ) with K given as a fraction of the trainable dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSparsePolytope {
    k_frac: f64,
    tau: f64,
}

impl KSparsePolytope {
    pub fn new(k_frac: f64, tau: f64) -> Result<Self> {
        if !(k_frac > 0.0 && k_frac <= 1.0) {
            return Err(Error::Config(format!(
                "k_frac: must lie in (0, 1], got {k_frac}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau: must be positive, got {tau}")));
        }
        Ok(KSparsePolytope { k_frac, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn k_frac(&self) -> f64 {
        self.k_frac
    }

    /// Absolute K for a space of `dim` coordinates, at least 1.
    pub fn k_abs(&self, dim: usize) -> usize {
        ceil_frac(self.k_frac, dim).max(1)
    }
}

/// Accumulated gradient momentum; `decay = 1` is plain accumulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumState {
    pub m: Vec<f64>,
    pub alpha: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
}

fn default_decay() -> f64 {
    1.0
}

impl MomentumState {
    pub fn zeros(dim: usize, alpha: f64) -> Self {
        MomentumState {
            m: vec![0.0; dim],
            alpha,
            decay: 1.0,
        }
    }

    pub fn with_decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }
}

/// `m ← decay·m + α·g`.
pub fn momentum_update(state: &MomentumState, g: &[f64]) -> MomentumState {
    assert_eq!(state.m.len(), g.len(), "momentum/gradient length mismatch");
    let m = state
        .m
        .iter()
        .zip(g)
        .map(|(&m, &g)| state.decay * m + state.alpha * g)
        .collect();
    MomentumState {
        m,
        alpha: state.alpha,
        decay: state.decay,
    }
}

/// Linear minimization oracle over C(K, τ) restricted to `trainable`
/// coordinates: the k_abs trainable coordinates of largest |m_i| get
/// `-τ · sign(m_i)` (sign(0) = +1, ties broken by lower index), the rest 0.
/// k_abs is computed from the trainable count, not the full dimension.
pub fn lmo(m: &[f64], poly: &KSparsePolytope, trainable: &BitMask) -> Result<Vec<f64>> {
    assert_eq!(m.len(), trainable.len(), "momentum/mask length mismatch");
    let mut order: Vec<usize> = trainable.iter_ones().collect();
    if order.is_empty() {
        return Err(Error::NoTrainable);
    }
    let k = poly.k_abs(order.len());
    order.sort_unstable_by(|&a, &b| {
        m[b].abs()
            .total_cmp(&m[a].abs())
            .then_with(|| a.cmp(&b))
    });
    let mut v = vec![0.0; m.len()];
    for &i in order.iter().take(k) {
        let sign = if m[i] < 0.0 { -1.0 } else { 1.0 };
        v[i] = -poly.tau() * sign;
    }
    Ok(v)
}

/// Frank-Wolfe step `θ ← θ + η(v − θ)` on trainable coordinates only.
pub fn sfw_update(
    theta: &ParamVector,
    v: &[f64],
    eta: f64,
    trainable: &BitMask,
) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::EtaOutOfRange(eta));
    }
    assert_eq!(theta.len(), v.len(), "theta/vertex length mismatch");
    assert_eq!(theta.len(), trainable.len(), "theta/mask length mismatch");
    let mut out = theta.clone();
    let slice = out.as_mut_slice();
    for i in trainable.iter_ones() {
        slice[i] = (1.0 - eta) * slice[i] + eta * v[i];
    }
    Ok(out)
}

/// Hull membership test over trainable coordinates:
/// `‖θ‖∞ ≤ τ` and `‖θ‖₁ ≤ τ·k_abs`, both within 1e-9.
pub fn contains(poly: &KSparsePolytope, theta: &[f64], trainable: &BitMask) -> bool {
    const TOL: f64 = 1e-9;
    assert_eq!(theta.len(), trainable.len(), "theta/mask length mismatch");
    let n = trainable.count_ones();
    if n == 0 {
        return true;
    }
    let mut linf = 0.0f64;
    let mut l1 = 0.0f64;
    for i in trainable.iter_ones() {
        linf = linf.max(theta[i].abs());
        l1 += theta[i].abs();
    }
    linf <= poly.tau() + TOL && l1 <= poly.tau() * poly.k_abs(n) as f64 + TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Enumerate every vertex of C(k, τ) in d dims: all index subsets of
    /// size k × all sign patterns.
    pub(crate) fn enumerate_vertices(d: usize, k: usize, tau: f64) -> Vec<Vec<f64>> {
        let mut vertices = Vec::new();
        for subset in 0u32..(1 << d) {
            if subset.count_ones() as usize != k {
                continue;
            }
            let idxs: Vec<usize> = (0..d).filter(|i| subset >> i & 1 == 1).collect();
            for signs in 0u32..(1 << k) {
                let mut v = vec![0.0; d];
                for (j, &i) in idxs.iter().enumerate() {
                    v[i] = if signs >> j & 1 == 1 { -tau } else { tau };
                }
                vertices.push(v);
            }
        }
        vertices
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn lmo_matches_brute_force_on_three_dims() {
        let poly = KSparsePolytope::new(0.6, 1.0).unwrap(); // k_abs(3) = 2
        assert_eq!(poly.k_abs(3), 2);
        let m = [3.0, -1.0, 2.0];
        let trainable = BitMask::ones(3);
        let v = lmo(&m, &poly, &trainable).unwrap();
        assert_eq!(v, vec![-1.0, 0.0, -1.0]);
        let best = enumerate_vertices(3, 2, 1.0)
            .iter()
            .map(|vert| dot(&m, vert))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(dot(&m, &v), best);
    }

    #[test]
    fn lmo_zero_momentum_uses_tiebreak_and_positive_sign() {
        let poly = KSparsePolytope::new(0.01, 1.0).unwrap(); // k_abs = 1
        let v = lmo(&[0.0, 0.0, 0.0], &poly, &BitMask::ones(3)).unwrap();
        assert_eq!(v, vec![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn lmo_skips_frozen_coordinates() {
        let poly = KSparsePolytope::new(0.5, 2.0).unwrap(); // k_abs(1) = 1
        let trainable = BitMask::from_bools(&[false, true]);
        let v = lmo(&[5.0, -5.0], &poly, &trainable).unwrap();
        assert_eq!(v, vec![0.0, 2.0]);
    }

    #[test]
    fn lmo_rejects_empty_trainable_set() {
        let poly = KSparsePolytope::new(0.5, 1.0).unwrap();
        let err = lmo(&[1.0], &poly, &BitMask::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::NoTrainable));
    }

    #[test]
    fn momentum_update_is_plain_accumulation() {
        let s = MomentumState {
            m: vec![0.0, 0.0],
            alpha: 0.1,
            decay: 1.0,
        };
        let s1 = momentum_update(&s, &[1.0, -2.0]);
        assert_eq!(s1.m, vec![0.1, -0.2]);

        let s_zero_alpha = MomentumState {
            m: vec![0.3, -0.4],
            alpha: 0.0,
            decay: 1.0,
        };
        assert_eq!(momentum_update(&s_zero_alpha, &[9.0, 9.0]).m, s_zero_alpha.m);

        // two sequential updates add linearly
        let s2 = momentum_update(&s1, &[3.0, 4.0]);
        for (got, expect) in s2.m.iter().zip([0.1 * (1.0 + 3.0), 0.1 * (-2.0 + 4.0)]) {
            assert!((got - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sfw_update_examples() {
        let theta = ParamVector::from_vec(vec![1.0, 1.0]);
        let all = BitMask::ones(2);
        let out = sfw_update(&theta, &[-1.0, 0.0], 0.5, &all).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.5]);

        let same = sfw_update(&theta, &[-1.0, 0.0], 0.0, &all).unwrap();
        assert_eq!(same.as_slice(), theta.as_slice());

        assert!(matches!(
            sfw_update(&theta, &[0.0, 0.0], 1.5, &all),
            Err(Error::EtaOutOfRange(_))
        ));

        let frozen_first = BitMask::from_bools(&[false, true]);
        let out = sfw_update(&theta, &[-1.0, -1.0], 1.0, &frozen_first).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn contains_examples() {
        let poly = KSparsePolytope::new(0.34, 1.5).unwrap(); // k_abs(3) = 2? 0.34*3=1.02 -> 2
        assert_eq!(poly.k_abs(3), 2);
        let all = BitMask::ones(3);
        assert!(contains(&poly, &[1.5, 0.0, 0.0], &all));
        assert!(contains(&poly, &[1.5, 1.5, 0.0], &all));
        assert!(!contains(&poly, &[1.5, 1.5, 1.5], &all)); // L1 = 4.5 > 3.0

        let poly1 = KSparsePolytope::new(0.3, 1.0).unwrap(); // k_abs(2) = 1
        let all2 = BitMask::ones(2);
        assert!(contains(&poly1, &[1.0, 0.0], &all2));
        assert!(!contains(&poly1, &[1.0, 1.0], &all2));
    }

    #[test]
    fn random_convex_combinations_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.gen_range(2..7);
            let k = rng.gen_range(1..=d);
            let tau = rng.gen_range(0.5..3.0);
            let poly = KSparsePolytope::new(k as f64 / d as f64, tau).unwrap();
            assert_eq!(poly.k_abs(d), k);
            let vertices = enumerate_vertices(d, k, tau);
            let n_mix = rng.gen_range(1..=5usize);
            let mut weights: Vec<f64> = (0..n_mix).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let mut point = vec![0.0; d];
            for &w in &weights {
                let vert = &vertices[rng.gen_range(0..vertices.len())];
                for (p, v) in point.iter_mut().zip(vert) {
                    *p += w * v;
                }
            }
            assert!(contains(&poly, &point, &BitMask::ones(d)));
        }
    }

    #[test]
    fn polytope_validation() {
        assert!(KSparsePolytope::new(0.0, 1.0).is_err());
        assert!(KSparsePolytope::new(1.1, 1.0).is_err());
        assert!(KSparsePolytope::new(0.5, 0.0).is_err());
        assert!(KSparsePolytope::new(0.5, -1.0).is_err());
        let p = KSparsePolytope::new(1e-9, 1.0).unwrap();
        assert_eq!(p.k_abs(10), 1); // floored at 1
    }

    proptest! {
        // LMO optimality against brute-force vertex enumeration.
        #[test]
        fn lmo_attains_vertex_minimum(
            m in proptest::collection::vec(-10.0f64..10.0, 1..7),
            k_frac in 0.05f64..1.0,
            tau in 0.1f64..4.0,
        ) {
            let d = m.len();
            let poly = KSparsePolytope::new(k_frac, tau).unwrap();
            let trainable = BitMask::ones(d);
            let v = lmo(&m, &poly, &trainable).unwrap();
            let k = poly.k_abs(d);
            let best = enumerate_vertices(d, k, tau)
                .iter()
                .map(|vert| dot(&m, vert))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(dot(&m, &v) <= best + 1e-9 * (1.0 + best.abs()));
            // every nonzero has magnitude exactly tau, and there are k of them
            let nnz = v.iter().filter(|x| **x != 0.0).count();
            prop_assert_eq!(nnz, k);
            for x in v.iter().filter(|x| **x != 0.0) {
                prop_assert_eq!(x.abs(), tau);
            }
        }

        // Any η-sequence of SFW steps from 0 stays in the hull.
        #[test]
        fn sfw_trajectory_stays_in_hull(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.gen_range(2..9);
            let poly = KSparsePolytope::new(rng.gen_range(0.1..1.0), rng.gen_range(0.5..3.0)).unwrap();
            let trainable = BitMask::ones(d);
            let mut theta = ParamVector::zeros(d);
            for _ in 0..50 {
                let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v = lmo(&m, &poly, &trainable).unwrap();
                let eta = rng.gen_range(0.0..=1.0);
                theta = sfw_update(&theta, &v, eta, &trainable).unwrap();
                prop_assert!(contains(&poly, theta.as_slice(), &trainable));
            }
        }
    }
}

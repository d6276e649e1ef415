//! Versioned binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            6 bytes  "ESACL1"
//! version          u32      1
//! activation       u8       0 = relu, 1 = tanh
//! heads            u32
//! n_layer_dims     u32      followed by that many u32 dims
//! completed_tasks  u32
//! d                u64      parameter count
//! params           d × f64
//! momentum_alpha   f64
//! momentum_decay   f64
//! momentum_m       d × f64
//! trainable        ceil(d/64) × u64   bit-packed mask
//! frozen           ceil(d/64) × u64
//! n_snapshots      u32      followed by that many bit-packed masks
//! rng_seed         32 bytes
//! rng_stream       u64
//! rng_word_pos     u128
//! progress_len     u64      followed by that many bytes of JSON
//! ```
//!
//! The progress section carries accumulated per-task results so a resumed
//! run reproduces the uninterrupted run's report exactly.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::BitMask;
use crate::nn::{Activation, NetworkSpec, ParamVector};
use crate::runner::{Checkpoint, MaskState, RunProgress};
use crate::sfw::MomentumState;

const MAGIC: &[u8; 6] = b"ESACL1";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    fn mask(&mut self, m: &BitMask) {
        for w in m.words() {
            self.u64(*w);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn mask(&mut self, d: usize) -> Result<BitMask> {
        let n_words = d.div_ceil(64);
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            words.push(self.u64()?);
        }
        BitMask::from_words(words, d)
            .ok_or_else(|| Error::Checkpoint("mask has dirty tail bits".into()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn to_bytes(state: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u8(match state.spec.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    w.u32(state.spec.heads as u32);
    w.u32(state.spec.layer_dims.len() as u32);
    for &dim in &state.spec.layer_dims {
        w.u32(dim as u32);
    }
    w.u32(state.completed_tasks as u32);
    let d = state.params.len();
    w.u64(d as u64);
    for &v in state.params.as_slice() {
        w.f64(v);
    }
    w.f64(state.momentum.alpha);
    w.f64(state.momentum.decay);
    for &v in &state.momentum.m {
        w.f64(v);
    }
    w.mask(&state.masks.trainable);
    w.mask(&state.masks.frozen);
    w.u32(state.masks.per_task_masks.len() as u32);
    for m in &state.masks.per_task_masks {
        w.mask(m);
    }
    w.bytes(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.u128(state.rng.get_word_pos());
    let progress = serde_json::to_vec(&state.progress).expect("progress serializes");
    w.u64(progress.len() as u64);
    w.bytes(&progress);
    w.buf
}

pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(buf);
    if r.take(6)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an ESACL1 file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => {
            return Err(Error::Checkpoint(format!("unknown activation code {other}")));
        }
    };
    let heads = r.u32()? as usize;
    let n_dims = r.u32()? as usize;
    if n_dims < 2 || n_dims > 64 {
        return Err(Error::Checkpoint(format!(
            "implausible layer count {n_dims}"
        )));
    }
    let mut layer_dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        layer_dims.push(r.u32()? as usize);
    }
    let spec = NetworkSpec::new(layer_dims, activation, heads)
        .map_err(|e| Error::Checkpoint(format!("bad network spec: {e}")))?;
    let completed_tasks = r.u32()? as usize;
    let d = r.u64()? as usize;
    if d != spec.param_len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {d} does not match spec ({})",
            spec.param_len()
        )));
    }
    let mut values = Vec::with_capacity(d);
    for _ in 0..d {
        values.push(r.f64()?);
    }
    let params = ParamVector::from_vec(values);
    if !params.all_finite() {
        return Err(Error::Checkpoint("non-finite parameter value".into()));
    }
    let alpha = r.f64()?;
    let decay = r.f64()?;
    let mut m = Vec::with_capacity(d);
    for _ in 0..d {
        m.push(r.f64()?);
    }
    let momentum = MomentumState { m, alpha, decay };
    let trainable = r.mask(d)?;
    let frozen = r.mask(d)?;
    let n_snapshots = r.u32()? as usize;
    if n_snapshots != completed_tasks {
        return Err(Error::Checkpoint(format!(
            "snapshot count {n_snapshots} does not match {completed_tasks} completed task(s)"
        )));
    }
    let mut per_task_masks = Vec::with_capacity(n_snapshots);
    for _ in 0..n_snapshots {
        per_task_masks.push(r.mask(d)?);
    }
    let masks = MaskState {
        trainable,
        frozen,
        per_task_masks,
    };
    masks
        .validate(d)
        .map_err(|e| Error::Checkpoint(format!("inconsistent masks: {e}")))?;

    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let progress_len = r.u64()? as usize;
    let progress: RunProgress = serde_json::from_slice(r.take(progress_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad progress section: {e}")))?;
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes after progress".into()));
    }

    Ok(Checkpoint {
        spec,
        params,
        masks,
        momentum,
        completed_tasks,
        rng,
        progress,
    })
}

pub fn save(state: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::TrainConfig;
    use crate::select::SelectionConfig;

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            eta: 0.1,
            alpha: 0.1,
            rho: 0.05,
            sparsity: 0.5,
            tau: 1.0,
            k_frac: 0.25,
            epochs_per_task: 2,
            batch_size: 8,
            selection: SelectionConfig::default(),
            seed,
            momentum_decay: 1.0,
            probe_rho: 0.05,
            probe_dirs: 4,
            mask_gamma: 0.75,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = NetworkSpec::new(vec![4, 6, 2], Activation::Tanh, 3).unwrap();
        let cfg = small_config(7);
        let mut state = Checkpoint::init(spec, &cfg).unwrap();
        // advance the rng and dirty some state so the round trip is nontrivial
        use rand::Rng;
        let _: f64 = state.rng.gen();
        state.params.as_mut_slice()[3] = -0.123456789123456789;
        state.momentum.m[5] = 42.0e-17;
        state.masks.frozen.set(1, true);
        state.masks.trainable.set(1, false);
        state.masks.per_task_masks.push(state.masks.frozen.clone());
        state.completed_tasks = 1;
        state.progress.r.push(vec![0.875]);

        let bytes = to_bytes(&state);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::new(vec![3, 2], Activation::Relu, 1).unwrap();
        let state = Checkpoint::init(spec, &small_config(1)).unwrap();
        let path = dir.path().join("state.ckpt");
        save(&state, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn bad_magic_rejected() {
        let spec = NetworkSpec::new(vec![3, 2], Activation::Relu, 1).unwrap();
        let state = Checkpoint::init(spec, &small_config(1)).unwrap();
        let mut bytes = to_bytes(&state);
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncation_rejected() {
        let spec = NetworkSpec::new(vec![3, 2], Activation::Relu, 1).unwrap();
        let state = Checkpoint::init(spec, &small_config(1)).unwrap();
        let bytes = to_bytes(&state);
        for cut in [5, 20, bytes.len() - 1] {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(from_bytes(&extended).is_err());
    }

    #[test]
    fn non_finite_params_rejected() {
        let spec = NetworkSpec::new(vec![3, 2], Activation::Relu, 1).unwrap();
        let mut state = Checkpoint::init(spec, &small_config(1)).unwrap();
        state.params.as_mut_slice()[0] = f64::NAN;
        let bytes = to_bytes(&state);
        assert!(matches!(from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}

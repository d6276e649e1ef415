//! Minimal multi-head feed-forward classifier over a flat parameter vector.
//!
//! The network is a stack of dense body layers followed by one output head
//! per task (task-incremental evaluation: the head is picked by `task_id`).
//! All parameters live in a single flat `f64` vector laid out as ordered
//! (weight-matrix, bias) segments; a [`BitMask`] of the same length gates
//! which coordinates are active — the effective weights are `mask ⊙ params`,
//! so a masked coordinate behaves exactly like a zero weight.
//!
//! Gradients are exact reverse-mode derivatives of the mean cross-entropy,
//! with an independent central-difference oracle for checking them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture description: `layer_dims` = input dim, hidden dims...,
/// per-head output dim; `heads` task-specific output heads of identical size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub heads: usize,
}

/// One (weights, bias) parameter segment. Weights are row-major
/// `[rows × cols]` at `offset`, biases are the `rows` values after them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.rows * self.cols
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }

    /// Fan-in of every unit in this segment.
    pub fn fan_in(&self) -> usize {
        self.cols
    }
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, activation: Activation, heads: usize) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(
                "network.layer_dims: need at least input and output dims".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(
                "network.layer_dims: all entries must be >= 1".into(),
            ));
        }
        if heads == 0 {
            return Err(Error::Config("network.heads: must be >= 1".into()));
        }
        Ok(NetworkSpec {
            layer_dims,
            activation,
            heads,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Output dimension of every head (number of classes per task).
    pub fn classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_body_layers(&self) -> usize {
        self.layer_dims.len() - 2
    }

    /// Body segments in layer order.
    pub fn body_segments(&self) -> Vec<Segment> {
        let mut segs = Vec::with_capacity(self.n_body_layers());
        let mut offset = 0;
        for l in 0..self.n_body_layers() {
            let seg = Segment {
                offset,
                rows: self.layer_dims[l + 1],
                cols: self.layer_dims[l],
            };
            offset = seg.end();
            segs.push(seg);
        }
        segs
    }

    pub fn head_segment(&self, head: usize) -> Result<Segment> {
        if head >= self.heads {
            return Err(Error::Dimension(format!(
                "head {head} out of range for {} head(s)",
                self.heads
            )));
        }
        let body_len: usize = self.body_segments().iter().map(|s| s.len()).sum();
        let n = self.layer_dims.len();
        let one = Segment {
            offset: 0,
            rows: self.layer_dims[n - 1],
            cols: self.layer_dims[n - 2],
        };
        Ok(Segment {
            offset: body_len + head * one.len(),
            ..one
        })
    }

    /// All segments in parameter order: body layers, then heads 0..H.
    pub fn segments(&self) -> Vec<Segment> {
        let mut segs = self.body_segments();
        for h in 0..self.heads {
            segs.push(self.head_segment(h).unwrap());
        }
        segs
    }

    pub fn param_len(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    /// Coordinates that belong to some head other than `head`.
    pub fn other_head_mask(&self, head: usize) -> BitMask {
        let mut m = BitMask::zeros(self.param_len());
        for h in 0..self.heads {
            if h == head {
                continue;
            }
            let seg = self.head_segment(h).unwrap();
            for i in seg.offset..seg.end() {
                m.set(i, true);
            }
        }
        m
    }

    fn check_params(&self, params: &ParamVector, mask: &BitMask) -> Result<()> {
        let d = self.param_len();
        if params.len() != d {
            return Err(Error::Dimension(format!(
                "params length {} != spec parameter count {d}",
                params.len()
            )));
        }
        if mask.len() != d {
            return Err(Error::Dimension(format!(
                "mask length {} != spec parameter count {d}",
                mask.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.n() == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch.dim != self.input_dim() {
            return Err(Error::Dimension(format!(
                "batch input dim {} != network input dim {}",
                batch.dim,
                self.input_dim()
            )));
        }
        if batch.task_id >= self.heads {
            return Err(Error::Dimension(format!(
                "batch task_id {} out of range for {} head(s)",
                batch.task_id, self.heads
            )));
        }
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= self.classes()) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {} classes",
                self.classes()
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector; the θ every operation works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector {
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A labeled mini-batch (or whole dataset) for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    /// Row-major `[n × dim]`.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub task_id: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, dim: usize, task_id: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::Dimension(format!(
                "inputs length {} != n ({}) * dim ({dim})",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Batch {
            inputs,
            labels,
            dim,
            task_id,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// New batch holding `indices` rows in the given order.
    pub fn subset(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            inputs,
            labels,
            dim: self.dim,
            task_id: self.task_id,
        }
    }
}

fn effective_params(params: &ParamVector, mask: &BitMask) -> Vec<f64> {
    let mut eff = params.as_slice().to_vec();
    for (i, v) in eff.iter_mut().enumerate() {
        if !mask.get(i) {
            *v = 0.0;
        }
    }
    eff
}

/// `out[n × rows] = act(in[n × cols] · Wᵀ + b)` for one segment.
fn dense_forward(
    eff: &[f64],
    seg: &Segment,
    input: &[f64],
    n: usize,
    activation: Option<Activation>,
) -> Vec<f64> {
    let mut out = vec![0.0; n * seg.rows];
    for ex in 0..n {
        let x = &input[ex * seg.cols..(ex + 1) * seg.cols];
        for r in 0..seg.rows {
            let w = &eff[seg.offset + r * seg.cols..seg.offset + (r + 1) * seg.cols];
            let mut acc = eff[seg.bias_offset() + r];
            for c in 0..seg.cols {
                acc += w[c] * x[c];
            }
            out[ex * seg.rows + r] = match activation {
                Some(a) => a.apply(acc),
                None => acc,
            };
        }
    }
    out
}

/// Activations of every layer: `[inputs, body outputs..., logits]`.
fn forward_trace(
    spec: &NetworkSpec,
    eff: &[f64],
    batch: &Batch,
) -> Vec<Vec<f64>> {
    let n = batch.n();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(spec.layer_dims.len());
    acts.push(batch.inputs.clone());
    for seg in &spec.body_segments() {
        let out = dense_forward(eff, seg, acts.last().unwrap(), n, Some(spec.activation));
        acts.push(out);
    }
    let head = spec.head_segment(batch.task_id).unwrap();
    let logits = dense_forward(eff, &head, acts.last().unwrap(), n, None);
    acts.push(logits);
    acts
}

/// Masked forward pass; returns logits `[n × classes]` row-major.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
) -> Result<Vec<f64>> {
    spec.check_params(params, mask)?;
    spec.check_batch(batch)?;
    let eff = effective_params(params, mask);
    Ok(forward_trace(spec, &eff, batch).pop().unwrap())
}

/// `-log softmax(logits)[label]` per example, log-sum-exp stabilized.
pub fn per_example_losses(logits: &[f64], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.len() != labels.len() * classes {
        return Err(Error::Dimension(format!(
            "logits length {} != n ({}) * classes ({classes})",
            logits.len(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    for (ex, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Dimension(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let row = &logits[ex * classes..(ex + 1) * classes];
        out.push(log_sum_exp(row) - row[y]);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch.
pub fn loss(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    let per = per_example_losses(logits, labels, classes)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean loss of a batch under masked parameters.
pub fn loss_on_batch(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
) -> Result<f64> {
    let logits = forward(spec, params, mask, batch)?;
    loss(&logits, &batch.labels, spec.classes())
}

/// Per-example losses of a batch under masked parameters.
pub fn per_example_losses_on(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
) -> Result<Vec<f64>> {
    let logits = forward(spec, params, mask, batch)?;
    per_example_losses(&logits, &batch.labels, spec.classes())
}

/// Analytic gradient of the mean loss w.r.t. `params`. Coordinates with
/// `mask = 0` are exactly zero (masked weights are non-parameters).
pub fn grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
) -> Result<ParamVector> {
    spec.check_params(params, mask)?;
    spec.check_batch(batch)?;
    let n = batch.n();
    let classes = spec.classes();
    let eff = effective_params(params, mask);
    let acts = forward_trace(spec, &eff, batch);
    let logits = acts.last().unwrap();

    let mut g = vec![0.0; params.len()];

    // d loss / d logits = (softmax - onehot) / n
    let mut delta = vec![0.0; n * classes];
    for ex in 0..n {
        let row = &logits[ex * classes..(ex + 1) * classes];
        let lse = log_sum_exp(row);
        for c in 0..classes {
            delta[ex * classes + c] = (row[c] - lse).exp() / n as f64;
        }
        delta[ex * classes + batch.labels[ex]] -= 1.0 / n as f64;
    }

    let body = spec.body_segments();
    let head = spec.head_segment(batch.task_id).unwrap();

    // Walk segments backwards: head first, then body layers in reverse.
    // acts[l] is the input to body layer l; acts[body.len()] feeds the head.
    let mut upstream = delta;
    let mut seg_chain: Vec<(Segment, Option<Activation>, usize)> = Vec::new();
    for (l, seg) in body.iter().enumerate() {
        seg_chain.push((*seg, Some(spec.activation), l));
    }
    seg_chain.push((head, None, body.len()));

    for (seg, activation, input_idx) in seg_chain.iter().rev() {
        let input = &acts[*input_idx];
        let output = &acts[*input_idx + 1];
        // For activated layers, convert d/d output into d/d pre-activation.
        let mut dz = upstream;
        if let Some(a) = activation {
            for (d, &o) in dz.iter_mut().zip(output.iter()) {
                *d *= a.derivative_from_output(o);
            }
        }
        for ex in 0..n {
            let x = &input[ex * seg.cols..(ex + 1) * seg.cols];
            let dz_row = &dz[ex * seg.rows..(ex + 1) * seg.rows];
            for r in 0..seg.rows {
                let dzr = dz_row[r];
                if dzr == 0.0 {
                    continue;
                }
                let w_row = seg.offset + r * seg.cols;
                for c in 0..seg.cols {
                    g[w_row + c] += dzr * x[c];
                }
                g[seg.bias_offset() + r] += dzr;
            }
        }
        // d/d input for the next (earlier) layer.
        if *input_idx > 0 {
            let mut dinput = vec![0.0; n * seg.cols];
            for ex in 0..n {
                let dz_row = &dz[ex * seg.rows..(ex + 1) * seg.rows];
                let din = &mut dinput[ex * seg.cols..(ex + 1) * seg.cols];
                for r in 0..seg.rows {
                    let dzr = dz_row[r];
                    if dzr == 0.0 {
                        continue;
                    }
                    let w_row = &eff[seg.offset + r * seg.cols..seg.offset + (r + 1) * seg.cols];
                    for c in 0..seg.cols {
                        din[c] += dzr * w_row[c];
                    }
                }
            }
            upstream = dinput;
        } else {
            upstream = Vec::new();
        }
    }

    for (i, v) in g.iter_mut().enumerate() {
        if !mask.get(i) {
            *v = 0.0;
        }
    }
    Ok(ParamVector::from_vec(g))
}

/// Central finite differences of a scalar function, one coordinate at a time.
/// Coordinates where `active` is false are skipped and reported as zero.
pub fn central_diff<F>(
    mut f: F,
    theta: &[f64],
    active: impl Fn(usize) -> bool,
    h: f64,
) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = theta.to_vec();
    let mut out = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        if !active(i) {
            continue;
        }
        let orig = work[i];
        work[i] = orig + h;
        let hi = f(&work);
        work[i] = orig - h;
        let lo = f(&work);
        work[i] = orig;
        out[i] = (hi - lo) / (2.0 * h);
    }
    out
}

/// Finite-difference gradient oracle for [`grad`].
pub fn finite_diff_grad(
    spec: &NetworkSpec,
    params: &ParamVector,
    mask: &BitMask,
    batch: &Batch,
    h: f64,
) -> Result<ParamVector> {
    if h <= 0.0 {
        return Err(Error::Config("finite difference step h must be > 0".into()));
    }
    spec.check_params(params, mask)?;
    spec.check_batch(batch)?;
    let g = central_diff(
        |theta| {
            let pv = ParamVector::from_vec(theta.to_vec());
            loss_on_batch(spec, &pv, mask, batch).expect("loss under perturbed params")
        },
        params.as_slice(),
        |i| mask.get(i),
        h,
    );
    Ok(ParamVector::from_vec(g))
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose argmax logit matches the label.
pub fn accuracy(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(ex, &y)| argmax(&logits[ex * classes..(ex + 1) * classes]) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

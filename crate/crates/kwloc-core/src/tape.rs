//! Wengert tape: forward ops record onto a linear tape, backward replays it
//! in reverse. Covers exactly the ops the four model variants need.
//!
//! Subgradient conventions: relu'(0) = 0; max-pool ties route the gradient to
//! the first maximal index. The activation signature (relu masks, pool
//! winners, clamp events) lets finite-difference checks detect and skip
//! evaluations that straddle a kink.

use crate::error::{CoreError, Result};
use crate::numerics;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a buffer in the tape arena.
pub type BufId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

struct Buf<S> {
    data: Vec<S>,
    shape: Vec<usize>,
}

enum Op<S> {
    Conv1d {
        input: BufId,
        kernels: BufId,
        bias: BufId,
        out: BufId,
        padding: Padding,
    },
    MaxPool1d {
        input: BufId,
        out: BufId,
        winners: Vec<usize>,
    },
    Dense {
        weights: BufId,
        input: BufId,
        bias: BufId,
        out: BufId,
    },
    Relu {
        input: BufId,
        out: BufId,
    },
    Sigmoid {
        input: BufId,
        out: BufId,
    },
    Softmax {
        input: BufId,
        out: BufId,
    },
    DotRows {
        matrix: BufId,
        vector: BufId,
        out: BufId,
    },
    MixRows {
        matrix: BufId,
        weights: BufId,
        out: BufId,
    },
    Dot {
        a: BufId,
        b: BufId,
        out: BufId,
    },
    LogSumExpCols {
        input: BufId,
        out: BufId,
        sharpness: S,
    },
    MaxCols {
        input: BufId,
        out: BufId,
        winners: Vec<usize>,
    },
    EmbedRow {
        table: BufId,
        row: usize,
        out: BufId,
    },
    BinaryCrossEntropy {
        probs: BufId,
        targets: Vec<S>,
        out: BufId,
    },
    Add {
        a: BufId,
        b: BufId,
        out: BufId,
    },
    Scale {
        input: BufId,
        factor: S,
        out: BufId,
    },
    Sum {
        input: BufId,
        out: BufId,
    },
    WeightedSum {
        input: BufId,
        weights: Vec<S>,
        out: BufId,
    },
    PrefixCols {
        input: BufId,
        keep: usize,
        out: BufId,
    },
    Prefix {
        input: BufId,
        keep: usize,
        out: BufId,
    },
}

/// Recording tape plus gradient accumulators.
pub struct Tape<S> {
    bufs: Vec<Buf<S>>,
    ops: Vec<Op<S>>,
    grads: Vec<Option<Vec<S>>>,
    signature: u64,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            bufs: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Register a tensor (input or parameter) on the tape. Copies the data.
    pub fn input(&mut self, t: &Tensor<S>) -> BufId {
        self.alloc(t.data().to_vec(), t.shape().to_vec())
    }

    pub fn input_slice(&mut self, data: &[S], shape: Vec<usize>) -> BufId {
        self.alloc(data.to_vec(), shape)
    }

    fn alloc(&mut self, data: Vec<S>, shape: Vec<usize>) -> BufId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let id = self.bufs.len();
        self.bufs.push(Buf { data, shape });
        self.grads.push(None);
        id
    }

    pub fn value(&self, id: BufId) -> &[S] {
        &self.bufs[id].data
    }

    pub fn shape(&self, id: BufId) -> &[usize] {
        &self.bufs[id].shape
    }

    pub fn scalar_value(&self, id: BufId) -> S {
        debug_assert_eq!(self.bufs[id].data.len(), 1);
        self.bufs[id].data[0]
    }

    pub fn grad(&self, id: BufId) -> Option<&[S]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient of a buffer, zeros if nothing flowed to it.
    pub fn grad_or_zeros(&self, id: BufId) -> Vec<S> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![S::zero(); self.bufs[id].data.len()],
        }
    }

    /// Hash of the piecewise-linear branch decisions taken during forward
    /// (relu masks, pool winners, probability clamps). Two evaluations with
    /// equal signatures lie on the same smooth piece of the loss surface.
    pub fn activation_signature(&self) -> u64 {
        self.signature
    }

    fn mix(&mut self, v: u64) {
        self.signature = (self.signature ^ v).wrapping_mul(0x0000_0100_0000_01b3);
    }

    fn mix_bits(&mut self, bits: &[bool]) {
        let mut word = 0u64;
        let mut n = 0u32;
        for &b in bits {
            word = (word << 1) | b as u64;
            n += 1;
            if n == 64 {
                self.mix(word);
                word = 0;
                n = 0;
            }
        }
        if n > 0 {
            self.mix(word);
            self.mix(n as u64);
        }
    }

    fn dims2(&self, id: BufId, what: &str) -> Result<(usize, usize)> {
        match self.bufs[id].shape[..] {
            [r, c] => Ok((r, c)),
            ref s => Err(CoreError::shape(format!(
                "{what}: expected rank-2, got {s:?}"
            ))),
        }
    }

    fn dims1(&self, id: BufId, what: &str) -> Result<usize> {
        match self.bufs[id].shape[..] {
            [n] => Ok(n),
            ref s => Err(CoreError::shape(format!(
                "{what}: expected rank-1, got {s:?}"
            ))),
        }
    }

    // ── Forward ops ─────────────────────────────────────────────────

    /// 1-d convolution, stride 1. Input [T, C_in], kernels [C_out, W, C_in],
    /// bias [C_out] -> [T', C_out]. Same padding keeps T' = T (odd widths
    /// only); valid gives T' = T − W + 1.
    pub fn conv1d(
        &mut self,
        input: BufId,
        kernels: BufId,
        bias: BufId,
        padding: Padding,
    ) -> Result<BufId> {
        let (t_in, c_in) = self.dims2(input, "conv1d input")?;
        let (c_out, width, kc_in) = match self.bufs[kernels].shape[..] {
            [a, b, c] => (a, b, c),
            ref s => {
                return Err(CoreError::shape(format!(
                    "conv1d kernels: expected rank-3, got {s:?}"
                )))
            }
        };
        if kc_in != c_in {
            return Err(CoreError::shape(format!(
                "conv1d: input has {c_in} channels, kernels expect {kc_in}"
            )));
        }
        if self.dims1(bias, "conv1d bias")? != c_out {
            return Err(CoreError::shape(format!(
                "conv1d: bias length must equal {c_out} output channels"
            )));
        }
        if width < 1 {
            return Err(CoreError::invalid("conv1d: kernel width must be >= 1"));
        }
        let (t_out, offset) = match padding {
            Padding::Same => {
                if width % 2 == 0 {
                    return Err(CoreError::invalid(
                        "conv1d: same padding requires odd kernel width",
                    ));
                }
                (t_in, (width - 1) / 2)
            }
            Padding::Valid => {
                if t_in < width {
                    return Err(CoreError::shape(format!(
                        "conv1d: valid padding needs T >= width ({t_in} < {width})"
                    )));
                }
                (t_in - width + 1, 0)
            }
        };

        let x = &self.bufs[input].data;
        let k = &self.bufs[kernels].data;
        let b = &self.bufs[bias].data;
        let mut out = vec![S::zero(); t_out * c_out];
        for co in 0..c_out {
            let kern = &k[co * width * c_in..(co + 1) * width * c_in];
            for t in 0..t_out {
                let mut acc = b[co];
                for j in 0..width {
                    let ti = t + j;
                    if ti < offset || ti - offset >= t_in {
                        continue;
                    }
                    let ti = ti - offset;
                    let xrow = &x[ti * c_in..(ti + 1) * c_in];
                    let krow = &kern[j * c_in..(j + 1) * c_in];
                    let mut dot = S::zero();
                    for (xv, kv) in xrow.iter().zip(krow.iter()) {
                        dot += *xv * *kv;
                    }
                    acc += dot;
                }
                out[t * c_out + co] = acc;
            }
        }
        let id = self.alloc(out, vec![t_out, c_out]);
        self.ops.push(Op::Conv1d {
            input,
            kernels,
            bias,
            out: id,
            padding,
        });
        Ok(id)
    }

    /// Non-overlapping max pooling over time; the last window may be partial.
    pub fn maxpool1d(&mut self, input: BufId, window: usize) -> Result<BufId> {
        if window < 1 {
            return Err(CoreError::invalid("maxpool1d: window must be >= 1"));
        }
        let (t_in, channels) = self.dims2(input, "maxpool1d input")?;
        let t_out = t_in.div_ceil(window);
        let x = &self.bufs[input].data;
        let mut out = vec![S::zero(); t_out * channels];
        let mut winners = vec![0usize; t_out * channels];
        for p in 0..t_out {
            let lo = p * window;
            let hi = ((p + 1) * window).min(t_in);
            for c in 0..channels {
                let mut best_t = lo;
                let mut best = x[lo * channels + c];
                for t in lo + 1..hi {
                    let v = x[t * channels + c];
                    if v > best {
                        best = v;
                        best_t = t;
                    }
                }
                out[p * channels + c] = best;
                winners[p * channels + c] = best_t;
            }
        }
        for &w in &winners {
            self.mix(w as u64);
        }
        let id = self.alloc(out, vec![t_out, channels]);
        self.ops.push(Op::MaxPool1d {
            input,
            out: id,
            winners,
        });
        Ok(id)
    }

    /// Affine map: weights [M, N] · input [N] + bias [M] -> [M].
    pub fn dense(&mut self, weights: BufId, input: BufId, bias: BufId) -> Result<BufId> {
        let (m, n) = self.dims2(weights, "dense weights")?;
        if self.dims1(input, "dense input")? != n {
            return Err(CoreError::shape(format!(
                "dense: weights are {m}x{n} but input has {} elements",
                self.bufs[input].data.len()
            )));
        }
        if self.dims1(bias, "dense bias")? != m {
            return Err(CoreError::shape(format!(
                "dense: bias length {} != {m} outputs",
                self.bufs[bias].data.len()
            )));
        }
        let w = &self.bufs[weights].data;
        let x = &self.bufs[input].data;
        let b = &self.bufs[bias].data;
        let mut out = vec![S::zero(); m];
        for i in 0..m {
            let row = &w[i * n..(i + 1) * n];
            let mut acc = b[i];
            for (wv, xv) in row.iter().zip(x.iter()) {
                acc += *wv * *xv;
            }
            out[i] = acc;
        }
        let id = self.alloc(out, vec![m]);
        self.ops.push(Op::Dense {
            weights,
            input,
            bias,
            out: id,
        });
        Ok(id)
    }

    pub fn relu(&mut self, input: BufId) -> Result<BufId> {
        let out: Vec<S> = self.bufs[input]
            .data
            .iter()
            .map(|&v| if v > S::zero() { v } else { S::zero() })
            .collect();
        let shape = self.bufs[input].shape.clone();
        let mask: Vec<bool> = self.bufs[input].data.iter().map(|v| *v > S::zero()).collect();
        self.mix_bits(&mask);
        let id = self.alloc(out, shape);
        self.ops.push(Op::Relu { input, out: id });
        Ok(id)
    }

    pub fn sigmoid(&mut self, input: BufId) -> Result<BufId> {
        let out: Vec<S> = self.bufs[input]
            .data
            .iter()
            .map(|&v| numerics::sigmoid(v))
            .collect();
        let shape = self.bufs[input].shape.clone();
        let id = self.alloc(out, shape);
        self.ops.push(Op::Sigmoid { input, out: id });
        Ok(id)
    }

    /// Softmax over a vector, max-subtracted.
    pub fn softmax(&mut self, input: BufId) -> Result<BufId> {
        self.dims1(input, "softmax input")?;
        let out = numerics::softmax_stable(&self.bufs[input].data);
        let shape = self.bufs[input].shape.clone();
        let id = self.alloc(out, shape);
        self.ops.push(Op::Softmax { input, out: id });
        Ok(id)
    }

    /// Per-row dot products: matrix [T, U] · vector [U] -> [T].
    pub fn dot_rows(&mut self, matrix: BufId, vector: BufId) -> Result<BufId> {
        let (t, u) = self.dims2(matrix, "dot_rows matrix")?;
        if self.dims1(vector, "dot_rows vector")? != u {
            return Err(CoreError::shape(format!(
                "dot_rows: matrix cols {u} != vector length {}",
                self.bufs[vector].data.len()
            )));
        }
        let m = &self.bufs[matrix].data;
        let v = &self.bufs[vector].data;
        let mut out = vec![S::zero(); t];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &m[i * u..(i + 1) * u];
            let mut acc = S::zero();
            for (a, b) in row.iter().zip(v.iter()) {
                acc += *a * *b;
            }
            *o = acc;
        }
        let id = self.alloc(out, vec![t]);
        self.ops.push(Op::DotRows {
            matrix,
            vector,
            out: id,
        });
        Ok(id)
    }

    /// Weighted sum of rows: Σ_t weights[t] · matrix[t, :] -> [U].
    pub fn mix_rows(&mut self, matrix: BufId, weights: BufId) -> Result<BufId> {
        let (t, u) = self.dims2(matrix, "mix_rows matrix")?;
        if self.dims1(weights, "mix_rows weights")? != t {
            return Err(CoreError::shape(format!(
                "mix_rows: matrix rows {t} != weights length {}",
                self.bufs[weights].data.len()
            )));
        }
        let m = &self.bufs[matrix].data;
        let w = &self.bufs[weights].data;
        let mut out = vec![S::zero(); u];
        for i in 0..t {
            let wi = w[i];
            let row = &m[i * u..(i + 1) * u];
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += wi * *r;
            }
        }
        let id = self.alloc(out, vec![u]);
        self.ops.push(Op::MixRows {
            matrix,
            weights,
            out: id,
        });
        Ok(id)
    }

    /// Vector dot product -> scalar.
    pub fn dot(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        let n = self.dims1(a, "dot lhs")?;
        if self.dims1(b, "dot rhs")? != n {
            return Err(CoreError::shape("dot: length mismatch".to_string()));
        }
        let mut acc = S::zero();
        for (x, y) in self.bufs[a].data.iter().zip(self.bufs[b].data.iter()) {
            acc += *x * *y;
        }
        let id = self.alloc(vec![acc], vec![1]);
        self.ops.push(Op::Dot { a, b, out: id });
        Ok(id)
    }

    /// Column-wise log-mean-exp pooling with sharpness r: [T, C] -> [C].
    pub fn log_sum_exp_cols(&mut self, input: BufId, sharpness: S) -> Result<BufId> {
        if sharpness <= S::zero() {
            return Err(CoreError::invalid("log_sum_exp_cols: sharpness must be > 0"));
        }
        let (t, c) = self.dims2(input, "log_sum_exp_cols input")?;
        let x = &self.bufs[input].data;
        let mut out = vec![S::zero(); c];
        for (col, o) in out.iter_mut().enumerate() {
            let column: Vec<S> = (0..t).map(|row| x[row * c + col]).collect();
            *o = numerics::log_mean_exp(&column, sharpness);
        }
        let id = self.alloc(out, vec![c]);
        self.ops.push(Op::LogSumExpCols {
            input,
            out: id,
            sharpness,
        });
        Ok(id)
    }

    /// Global max over time per channel: [T, C] -> [C].
    pub fn max_cols(&mut self, input: BufId) -> Result<BufId> {
        let (t, c) = self.dims2(input, "max_cols input")?;
        let x = &self.bufs[input].data;
        let mut out = vec![S::zero(); c];
        let mut winners = vec![0usize; c];
        for col in 0..c {
            let mut best = x[col];
            let mut best_t = 0;
            for row in 1..t {
                let v = x[row * c + col];
                if v > best {
                    best = v;
                    best_t = row;
                }
            }
            out[col] = best;
            winners[col] = best_t;
        }
        for &w in &winners {
            self.mix(w as u64);
        }
        let id = self.alloc(out, vec![c]);
        self.ops.push(Op::MaxCols {
            input,
            out: id,
            winners,
        });
        Ok(id)
    }

    /// Row lookup: table [W, U], row w -> [U].
    pub fn embed_row(&mut self, table: BufId, row: usize) -> Result<BufId> {
        let (w, u) = self.dims2(table, "embed_row table")?;
        if row >= w {
            return Err(CoreError::invalid(format!(
                "embed_row: index {row} out of range for {w} rows"
            )));
        }
        let out = self.bufs[table].data[row * u..(row + 1) * u].to_vec();
        let id = self.alloc(out, vec![u]);
        self.ops.push(Op::EmbedRow {
            table,
            row,
            out: id,
        });
        Ok(id)
    }

    /// Summed binary cross-entropy of probabilities against fixed targets.
    pub fn bce(&mut self, probs: BufId, targets: &[S]) -> Result<BufId> {
        let n = self.bufs[probs].data.len();
        if targets.len() != n {
            return Err(CoreError::shape(format!(
                "bce: {n} probabilities vs {} targets",
                targets.len()
            )));
        }
        for &y in targets {
            if !(S::zero()..=S::one()).contains(&y) {
                return Err(CoreError::invalid(format!("bce: target {y} outside [0, 1]")));
            }
        }
        let lo = S::from_f64(numerics::PROB_EPS);
        let hi = S::one() - lo;
        let clamped: Vec<bool> = self.bufs[probs]
            .data
            .iter()
            .map(|&p| p <= lo || p >= hi)
            .collect();
        self.mix_bits(&clamped);
        let mut acc = S::zero();
        for (&p, &y) in self.bufs[probs].data.iter().zip(targets.iter()) {
            acc += numerics::bce_term(p, y);
        }
        let id = self.alloc(vec![acc], vec![1]);
        self.ops.push(Op::BinaryCrossEntropy {
            probs,
            targets: targets.to_vec(),
            out: id,
        });
        Ok(id)
    }

    /// Elementwise sum of two same-shape buffers.
    pub fn add(&mut self, a: BufId, b: BufId) -> Result<BufId> {
        if self.bufs[a].shape != self.bufs[b].shape {
            return Err(CoreError::shape(format!(
                "add: shape {:?} vs {:?}",
                self.bufs[a].shape, self.bufs[b].shape
            )));
        }
        let out: Vec<S> = self.bufs[a]
            .data
            .iter()
            .zip(self.bufs[b].data.iter())
            .map(|(x, y)| *x + *y)
            .collect();
        let shape = self.bufs[a].shape.clone();
        let id = self.alloc(out, shape);
        self.ops.push(Op::Add { a, b, out: id });
        Ok(id)
    }

    pub fn scale(&mut self, input: BufId, factor: S) -> Result<BufId> {
        let out: Vec<S> = self.bufs[input].data.iter().map(|&v| v * factor).collect();
        let shape = self.bufs[input].shape.clone();
        let id = self.alloc(out, shape);
        self.ops.push(Op::Scale {
            input,
            factor,
            out: id,
        });
        Ok(id)
    }

    pub fn sum(&mut self, input: BufId) -> Result<BufId> {
        let mut acc = S::zero();
        for v in &self.bufs[input].data {
            acc += *v;
        }
        let id = self.alloc(vec![acc], vec![1]);
        self.ops.push(Op::Sum { input, out: id });
        Ok(id)
    }

    /// Fixed-weight reduction to a scalar: Σ_i weights[i]·input[i].
    pub fn weighted_sum(&mut self, input: BufId, weights: &[S]) -> Result<BufId> {
        if weights.len() != self.bufs[input].data.len() {
            return Err(CoreError::shape("weighted_sum: length mismatch".to_string()));
        }
        let mut acc = S::zero();
        for (v, w) in self.bufs[input].data.iter().zip(weights.iter()) {
            acc += *v * *w;
        }
        let id = self.alloc(vec![acc], vec![1]);
        self.ops.push(Op::WeightedSum {
            input,
            weights: weights.to_vec(),
            out: id,
        });
        Ok(id)
    }

    /// First `keep` columns of a matrix: [T, C] -> [T, keep].
    pub fn prefix_cols(&mut self, input: BufId, keep: usize) -> Result<BufId> {
        let (t, c) = self.dims2(input, "prefix_cols input")?;
        if keep == 0 || keep > c {
            return Err(CoreError::shape(format!(
                "prefix_cols: cannot keep {keep} of {c} columns"
            )));
        }
        let x = &self.bufs[input].data;
        let mut out = vec![S::zero(); t * keep];
        for row in 0..t {
            out[row * keep..(row + 1) * keep]
                .copy_from_slice(&x[row * c..row * c + keep]);
        }
        let id = self.alloc(out, vec![t, keep]);
        self.ops.push(Op::PrefixCols {
            input,
            keep,
            out: id,
        });
        Ok(id)
    }

    /// First `keep` elements of a vector.
    pub fn prefix(&mut self, input: BufId, keep: usize) -> Result<BufId> {
        let n = self.dims1(input, "prefix input")?;
        if keep == 0 || keep > n {
            return Err(CoreError::shape(format!(
                "prefix: cannot keep {keep} of {n} elements"
            )));
        }
        let out = self.bufs[input].data[..keep].to_vec();
        let id = self.alloc(out, vec![keep]);
        self.ops.push(Op::Prefix {
            input,
            keep,
            out: id,
        });
        Ok(id)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Backpropagate from a scalar loss (seeded with 1).
    pub fn backward(&mut self, loss: BufId) -> Result<()> {
        if loss >= self.bufs.len() {
            return Err(CoreError::Autodiff(format!(
                "backward: buffer {loss} was never recorded on this tape"
            )));
        }
        if self.bufs[loss].data.len() != 1 {
            return Err(CoreError::Autodiff(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.bufs[loss].shape
            )));
        }
        self.backward_seeded(loss, &[S::one()])
    }

    /// Backpropagate from any buffer with an explicit upstream gradient.
    /// Clears previously accumulated gradients first.
    pub fn backward_seeded(&mut self, from: BufId, seed: &[S]) -> Result<()> {
        if from >= self.bufs.len() {
            return Err(CoreError::Autodiff(format!(
                "backward: buffer {from} was never recorded on this tape"
            )));
        }
        if seed.len() != self.bufs[from].data.len() {
            return Err(CoreError::Autodiff(
                "backward: seed length does not match buffer".to_string(),
            ));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[from] = Some(seed.to_vec());
        for i in (0..self.ops.len()).rev() {
            self.step_backward(i);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: BufId, delta: &[S]) {
        match &mut self.grads[id] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += *di;
                }
            }
            None => self.grads[id] = Some(delta.to_vec()),
        }
    }

    fn step_backward(&mut self, op_index: usize) {
        // Ops are cheap to index repeatedly; gradients are pulled by out-id.
        macro_rules! upstream {
            ($out:expr) => {
                match self.grads[$out].clone() {
                    Some(g) => g,
                    None => return,
                }
            };
        }
        // Split borrows by cloning the small per-op metadata.
        let op = &self.ops[op_index];
        match op {
            Op::Conv1d {
                input,
                kernels,
                bias,
                out,
                padding,
            } => {
                let (input, kernels, bias, out, padding) =
                    (*input, *kernels, *bias, *out, *padding);
                let d_out = upstream!(out);
                let (t_in, c_in) = match self.bufs[input].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let (c_out, width) = match self.bufs[kernels].shape[..] {
                    [a, b, _] => (a, b),
                    _ => unreachable!(),
                };
                let t_out = self.bufs[out].shape[0];
                let offset = match padding {
                    Padding::Same => (width - 1) / 2,
                    Padding::Valid => 0,
                };
                let x = &self.bufs[input].data;
                let k = &self.bufs[kernels].data;
                let mut d_x = vec![S::zero(); t_in * c_in];
                let mut d_k = vec![S::zero(); c_out * width * c_in];
                let mut d_b = vec![S::zero(); c_out];
                for t in 0..t_out {
                    for co in 0..c_out {
                        let g = d_out[t * c_out + co];
                        if g == S::zero() {
                            continue;
                        }
                        d_b[co] += g;
                        for j in 0..width {
                            let ti = t + j;
                            if ti < offset || ti - offset >= t_in {
                                continue;
                            }
                            let ti = ti - offset;
                            let kbase = (co * width + j) * c_in;
                            let xbase = ti * c_in;
                            for ci in 0..c_in {
                                d_k[kbase + ci] += g * x[xbase + ci];
                                d_x[xbase + ci] += g * k[kbase + ci];
                            }
                        }
                    }
                }
                self.accumulate(input, &d_x);
                self.accumulate(kernels, &d_k);
                self.accumulate(bias, &d_b);
            }
            Op::MaxPool1d {
                input,
                out,
                winners,
                ..
            } => {
                let (input, out) = (*input, *out);
                let winners = winners.clone();
                let d_out = upstream!(out);
                let channels = self.bufs[input].shape[1];
                let mut d_x = vec![S::zero(); self.bufs[input].data.len()];
                for (slot, &win_t) in winners.iter().enumerate() {
                    let c = slot % channels;
                    d_x[win_t * channels + c] += d_out[slot];
                }
                self.accumulate(input, &d_x);
            }
            Op::Dense {
                weights,
                input,
                bias,
                out,
            } => {
                let (weights, input, bias, out) = (*weights, *input, *bias, *out);
                let d_out = upstream!(out);
                let (m, n) = match self.bufs[weights].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let w = &self.bufs[weights].data;
                let x = &self.bufs[input].data;
                let mut d_w = vec![S::zero(); m * n];
                let mut d_x = vec![S::zero(); n];
                for i in 0..m {
                    let g = d_out[i];
                    if g == S::zero() {
                        continue;
                    }
                    let row = &w[i * n..(i + 1) * n];
                    let drow = &mut d_w[i * n..(i + 1) * n];
                    for j in 0..n {
                        drow[j] += g * x[j];
                        d_x[j] += g * row[j];
                    }
                }
                self.accumulate(weights, &d_w);
                self.accumulate(input, &d_x);
                self.accumulate(bias, &d_out);
            }
            Op::Relu { input, out } => {
                let (input, out) = (*input, *out);
                let d_out = upstream!(out);
                let d_x: Vec<S> = self.bufs[input]
                    .data
                    .iter()
                    .zip(d_out.iter())
                    .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate(input, &d_x);
            }
            Op::Sigmoid { input, out } => {
                let (input, out) = (*input, *out);
                let d_out = upstream!(out);
                let d_x: Vec<S> = self.bufs[out]
                    .data
                    .iter()
                    .zip(d_out.iter())
                    .map(|(&y, &g)| g * numerics::sigmoid_grad_from_output(y))
                    .collect();
                self.accumulate(input, &d_x);
            }
            Op::Softmax { input, out } => {
                let (input, out) = (*input, *out);
                let d_out = upstream!(out);
                let y = &self.bufs[out].data;
                let mut dot = S::zero();
                for (g, v) in d_out.iter().zip(y.iter()) {
                    dot += *g * *v;
                }
                let d_x: Vec<S> = y
                    .iter()
                    .zip(d_out.iter())
                    .map(|(&yi, &gi)| yi * (gi - dot))
                    .collect();
                self.accumulate(input, &d_x);
            }
            Op::DotRows {
                matrix,
                vector,
                out,
            } => {
                let (matrix, vector, out) = (*matrix, *vector, *out);
                let d_out = upstream!(out);
                let (t, u) = match self.bufs[matrix].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let m = &self.bufs[matrix].data;
                let v = &self.bufs[vector].data;
                let mut d_m = vec![S::zero(); t * u];
                let mut d_v = vec![S::zero(); u];
                for i in 0..t {
                    let g = d_out[i];
                    if g == S::zero() {
                        continue;
                    }
                    let row = &m[i * u..(i + 1) * u];
                    let drow = &mut d_m[i * u..(i + 1) * u];
                    for j in 0..u {
                        drow[j] += g * v[j];
                        d_v[j] += g * row[j];
                    }
                }
                self.accumulate(matrix, &d_m);
                self.accumulate(vector, &d_v);
            }
            Op::MixRows {
                matrix,
                weights,
                out,
            } => {
                let (matrix, weights, out) = (*matrix, *weights, *out);
                let d_out = upstream!(out);
                let (t, u) = match self.bufs[matrix].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let m = &self.bufs[matrix].data;
                let w = &self.bufs[weights].data;
                let mut d_m = vec![S::zero(); t * u];
                let mut d_w = vec![S::zero(); t];
                for i in 0..t {
                    let row = &m[i * u..(i + 1) * u];
                    let drow = &mut d_m[i * u..(i + 1) * u];
                    let wi = w[i];
                    let mut acc = S::zero();
                    for j in 0..u {
                        drow[j] += wi * d_out[j];
                        acc += row[j] * d_out[j];
                    }
                    d_w[i] = acc;
                }
                self.accumulate(matrix, &d_m);
                self.accumulate(weights, &d_w);
            }
            Op::Dot { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let d_out = upstream!(out);
                let g = d_out[0];
                let d_a: Vec<S> = self.bufs[b].data.iter().map(|&v| g * v).collect();
                let d_b: Vec<S> = self.bufs[a].data.iter().map(|&v| g * v).collect();
                self.accumulate(a, &d_a);
                self.accumulate(b, &d_b);
            }
            Op::LogSumExpCols {
                input,
                out,
                sharpness,
            } => {
                let (input, out, sharpness) = (*input, *out, *sharpness);
                let d_out = upstream!(out);
                let (t, c) = match self.bufs[input].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let x = &self.bufs[input].data;
                let mut d_x = vec![S::zero(); t * c];
                for col in 0..c {
                    let column: Vec<S> = (0..t).map(|row| x[row * c + col]).collect();
                    let weights = numerics::sharpened_softmax_f64(&column, sharpness);
                    let g = d_out[col];
                    for (row, wgt) in weights.iter().enumerate() {
                        d_x[row * c + col] += g * S::from_f64(*wgt);
                    }
                }
                self.accumulate(input, &d_x);
            }
            Op::MaxCols {
                input,
                out,
                winners,
            } => {
                let (input, out) = (*input, *out);
                let winners = winners.clone();
                let d_out = upstream!(out);
                let c = self.bufs[input].shape[1];
                let mut d_x = vec![S::zero(); self.bufs[input].data.len()];
                for (col, &row) in winners.iter().enumerate() {
                    d_x[row * c + col] += d_out[col];
                }
                self.accumulate(input, &d_x);
            }
            Op::EmbedRow { table, row, out } => {
                let (table, row, out) = (*table, *row, *out);
                let d_out = upstream!(out);
                let u = self.bufs[table].shape[1];
                let mut d_t = vec![S::zero(); self.bufs[table].data.len()];
                d_t[row * u..(row + 1) * u].copy_from_slice(&d_out);
                self.accumulate(table, &d_t);
            }
            Op::BinaryCrossEntropy {
                probs,
                targets,
                out,
            } => {
                let (probs, out) = (*probs, *out);
                let targets = targets.clone();
                let d_out = upstream!(out);
                let g = d_out[0];
                let lo = S::from_f64(numerics::PROB_EPS);
                let hi = S::one() - lo;
                let d_p: Vec<S> = self.bufs[probs]
                    .data
                    .iter()
                    .zip(targets.iter())
                    .map(|(&p, &y)| {
                        // Outside the clamp the loss is locally constant in p.
                        if p <= lo || p >= hi {
                            S::zero()
                        } else {
                            g * (p - y) / (p * (S::one() - p))
                        }
                    })
                    .collect();
                self.accumulate(probs, &d_p);
            }
            Op::Add { a, b, out } => {
                let (a, b, out) = (*a, *b, *out);
                let d_out = upstream!(out);
                self.accumulate(a, &d_out);
                self.accumulate(b, &d_out);
            }
            Op::Scale { input, factor, out } => {
                let (input, factor, out) = (*input, *factor, *out);
                let d_out = upstream!(out);
                let d_x: Vec<S> = d_out.iter().map(|&g| g * factor).collect();
                self.accumulate(input, &d_x);
            }
            Op::Sum { input, out } => {
                let (input, out) = (*input, *out);
                let d_out = upstream!(out);
                let g = d_out[0];
                let d_x = vec![g; self.bufs[input].data.len()];
                self.accumulate(input, &d_x);
            }
            Op::WeightedSum {
                input,
                weights,
                out,
            } => {
                let (input, out) = (*input, *out);
                let weights = weights.clone();
                let d_out = upstream!(out);
                let g = d_out[0];
                let d_x: Vec<S> = weights.iter().map(|&w| g * w).collect();
                self.accumulate(input, &d_x);
            }
            Op::PrefixCols { input, keep, out } => {
                let (input, keep, out) = (*input, *keep, *out);
                let d_out = upstream!(out);
                let (t, c) = match self.bufs[input].shape[..] {
                    [a, b] => (a, b),
                    _ => unreachable!(),
                };
                let mut d_x = vec![S::zero(); t * c];
                for row in 0..t {
                    d_x[row * c..row * c + keep]
                        .copy_from_slice(&d_out[row * keep..(row + 1) * keep]);
                }
                self.accumulate(input, &d_x);
            }
            Op::Prefix { input, keep, out } => {
                let (input, keep, out) = (*input, *keep, *out);
                let d_out = upstream!(out);
                let mut d_x = vec![S::zero(); self.bufs[input].data.len()];
                d_x[..keep].copy_from_slice(&d_out);
                self.accumulate(input, &d_x);
            }
        }
    }
}

//! Forward ops and their backward rules.

use super::{Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

// ── dense kernels ─────────────────────────────────────────────────────────────

/// C = A[m,k] · B[k,n], fresh buffer. ikj order so the inner loop is contiguous.
pub(crate) fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    mm_nn_acc(&mut c, a, b, m, k, n);
    c
}

fn mm_nn_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// C += A[m,k] · B[n,k]ᵀ  (rows of A dotted with rows of B).
fn mm_nt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for p in 0..k {
                acc = acc + arow[p] * brow[p];
            }
            crow[j] = crow[j] + acc;
        }
    }
}

/// C += A[m,k]ᵀ · B[m,n]  (C is k×n).
fn mm_tn_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

fn gelu_scalar<T: Scalar>(x: T) -> T {
    // tanh approximation: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))
    let c0: T = lit(0.797_884_560_802_865_4);
    let c1: T = lit(0.044_715);
    let half: T = lit(0.5);
    let u = c0 * (x + c1 * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split by sign so the exponential never overflows; large |x| saturates to 0/1.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    // ── forward ops ───────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul lhs {:?} incompatible with rhs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = mm_nn(self.value(a), self.value(b), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        self.push(data, vec![m, n], Op::MatMul { a, b }, ng)
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        let v = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let ng = self.needs(x);
        self.push(out, vec![c, r], Op::Transpose { x }, ng)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, shape, Op::Add { a, b }, ng)
    }

    /// Broadcast-add a `[c]` bias over every row of `[r,c]`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        if self.shape(bias) != [c] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match row width of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let bv = self.value(bias);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] = xv[i * c + j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(bias);
        self.push(data, shape, Op::AddBias { x, bias }, ng)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, shape, Op::Mul { a, b }, ng)
    }

    pub fn scale(&mut self, x: TensorId, c: T) -> Result<TensorId> {
        let data: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(data, shape, Op::Scale { x, c }, ng)
    }

    /// Sum of all elements → scalar `[1]`.
    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.value(x).iter().fold(T::zero(), |acc, &v| acc + v);
        let ng = self.needs(x);
        self.push(vec![s], vec![1], Op::Sum { x }, ng)
    }

    /// Column means of `[r,c]` → `[1,c]`. With one row this is the identity.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        let v = self.value(x);
        let inv = T::one() / lit::<T>(r as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + v[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let ng = self.needs(x);
        self.push(out, vec![1, c], Op::MeanRows { x }, ng)
    }

    /// Max-subtracted softmax along `axis` (0 or 1) of a rank-≤2 tensor.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        let rank = self.shape(x).len();
        if axis >= rank {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        // Normalize to "axis 1 of an r×c view": softmax over axis 0 runs down columns.
        let over_rows = rank == 1 || axis == 1;
        let v = self.value(x);
        let mut out = vec![T::zero(); r * c];
        let (slices, len, stride, step) =
            if over_rows { (r, c, c, 1) } else { (c, r, 1, c) };
        for s in 0..slices {
            let base = s * stride;
            let mut mx = v[base];
            for i in 1..len {
                let val = v[base + i * step];
                if val > mx {
                    mx = val;
                }
            }
            let mut denom = T::zero();
            for i in 0..len {
                let e = (v[base + i * step] - mx).exp();
                out[base + i * step] = e;
                denom = denom + e;
            }
            for i in 0..len {
                out[base + i * step] = out[base + i * step] / denom;
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(out, shape, Op::Softmax { x, axis: if over_rows { 1 } else { 0 } }, ng)
    }

    /// Layer norm over the last axis with learnable `gamma`/`beta` (both `[c]`).
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape(format!(
                "layer_norm gamma {:?} / beta {:?} must both be [{c}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let epst: T = lit(eps);
        let inv_c = T::one() / lit::<T>(c as f64);
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_c;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let inv_std = T::one() / (var + epst).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv_std;
                out[i * c + j] = gv[j] * xhat + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(out, shape, Op::LayerNorm { x, gamma, beta, eps: epst }, ng)
    }

    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<T> = self.value(x).iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(data, shape, Op::Gelu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<T> = self.value(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(x);
        self.push(data, shape, Op::Sigmoid { x }, ng)
    }

    /// Select rows of a `[r,c]` tensor by index; duplicates allowed (gradients accumulate).
    pub fn gather_rows(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId> {
        let (r, c) = self.dims2(x)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Validation(format!(
                "gather_rows index {bad} out of range for {r} rows"
            )));
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        self.push(out, vec![idx.len(), c], Op::GatherRows { x, idx: idx.to_vec() }, ng)
    }

    /// Stack rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows needs at least one part".into()));
        }
        let (_, c) = self.dims2(parts[0])?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (rp, cp) = self.dims2(p)?;
            if cp != c {
                return Err(Error::Shape(format!(
                    "concat_rows column mismatch: {:?} vs {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            rows += rp;
            data.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(data, vec![rows, c], Op::ConcatRows { parts: parts.to_vec() }, ng)
    }

    /// Stack rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols needs at least one part".into()));
        }
        let (r, _) = self.dims2(parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (rp, cp) = self.dims2(p)?;
            if rp != r {
                return Err(Error::Shape(format!(
                    "concat_cols row mismatch: {:?} vs {:?}",
                    self.shape(parts[0]),
                    self.shape(p)
                )));
            }
            widths.push(cp);
            total += cp;
        }
        let mut data = vec![T::zero(); r * total];
        let mut col0 = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..r {
                data[i * total + col0..i * total + col0 + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            col0 += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(data, vec![r, total], Op::ConcatCols { parts: parts.to_vec() }, ng)
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.is_empty() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        let data = self.value(x).to_vec();
        let ng = self.needs(x);
        self.push(data, shape.to_vec(), Op::Reshape { x }, ng)
    }

    /// Mean binary cross-entropy of predicted probabilities against hard labels.
    /// Predictions are clamped to `[1e-7, 1-1e-7]` before the logs; labels must be
    /// exactly 0 or 1.
    pub fn bce_loss(&mut self, yhat: TensorId, labels: &[f64]) -> Result<TensorId> {
        let n = self.value(yhat).len();
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "bce_loss got {n} predictions but {} labels",
                labels.len()
            )));
        }
        if n == 0 {
            return Err(Error::Validation("bce_loss on empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::Validation(format!("bce_loss label {bad} outside {{0,1}}")));
        }
        let lo: T = lit(1e-7);
        let hi = T::one() - lo;
        let labels_t: Vec<T> = labels.iter().map(|&y| lit::<T>(y)).collect();
        let mut acc = T::zero();
        for (&p, &y) in self.value(yhat).iter().zip(&labels_t) {
            let pc = p.max(lo).min(hi);
            acc = acc - (y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        }
        let loss = acc / lit::<T>(n as f64);
        let ng = self.needs(yhat);
        self.push(vec![loss], vec![1], Op::BceLoss { yhat, labels: labels_t }, ng)
    }

    /// Mean squared error over all elements; shapes must match exactly.
    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::Shape(format!(
                "mse_loss shapes differ: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let n = self.value(pred).len();
        let mut acc = T::zero();
        for (&p, &t) in self.value(pred).iter().zip(self.value(target)) {
            let d = p - t;
            acc = acc + d * d;
        }
        let loss = acc / lit::<T>(n as f64);
        let ng = self.needs(pred) || self.needs(target);
        self.push(vec![loss], vec![1], Op::MseLoss { pred, target }, ng)
    }

    // ── backward ──────────────────────────────────────────────────────────────

    pub(super) fn backprop_node(&mut self, i: usize) {
        // Take the op out to appease the borrow checker; Leaf goes back in.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let g = self.nodes[i].tensor.grad.clone().expect("grad present");
        let out_id = TensorId(i);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.dims2(*a).unwrap();
                let (_, n) = self.dims2(*b).unwrap();
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    mm_nt_acc(&mut da, &g, self.value(*b), m, n, k);
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    mm_tn_acc(&mut db, self.value(*a), &g, m, k, n);
                    self.add_grad(*b, &db);
                }
            }
            Op::Transpose { x } => {
                let (r, c) = self.dims2(*x).unwrap();
                let mut dx = vec![T::zero(); r * c];
                for i2 in 0..r {
                    for j in 0..c {
                        dx[i2 * c + j] = g[j * r + i2];
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Add { a, b } => {
                self.add_grad(*a, &g);
                self.add_grad(*b, &g);
            }
            Op::AddBias { x, bias } => {
                let (r, c) = self.dims2(*x).unwrap();
                self.add_grad(*x, &g);
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); c];
                    for i2 in 0..r {
                        for j in 0..c {
                            db[j] = db[j] + g[i2 * c + j];
                        }
                    }
                    self.add_grad(*bias, &db);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let da: Vec<T> = g.iter().zip(self.value(*b)).map(|(&gv, &bv)| gv * bv).collect();
                    self.add_grad(*a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<T> = g.iter().zip(self.value(*a)).map(|(&gv, &av)| gv * av).collect();
                    self.add_grad(*b, &db);
                }
            }
            Op::Scale { x, c } => {
                let dx: Vec<T> = g.iter().map(|&gv| gv * *c).collect();
                self.add_grad(*x, &dx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                let dx = vec![g[0]; n];
                self.add_grad(*x, &dx);
            }
            Op::MeanRows { x } => {
                let (r, c) = self.dims2(*x).unwrap();
                let inv = T::one() / lit::<T>(r as f64);
                let mut dx = vec![T::zero(); r * c];
                for i2 in 0..r {
                    for j in 0..c {
                        dx[i2 * c + j] = g[j] * inv;
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Softmax { x, axis } => {
                let (r, c) = self.dims2(*x).unwrap();
                let s = self.value(out_id).to_vec();
                let over_rows = *axis == 1 || self.shape(*x).len() == 1;
                let (slices, len, stride, step) =
                    if over_rows { (r, c, c, 1) } else { (c, r, 1, c) };
                let mut dx = vec![T::zero(); r * c];
                for sl in 0..slices {
                    let base = sl * stride;
                    let mut dot = T::zero();
                    for i2 in 0..len {
                        let k = base + i2 * step;
                        dot = dot + g[k] * s[k];
                    }
                    for i2 in 0..len {
                        let k = base + i2 * step;
                        dx[k] = s[k] * (g[k] - dot);
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (r, c) = self.dims2(*x).unwrap();
                let inv_c = T::one() / lit::<T>(c as f64);
                let xv = self.value(*x).to_vec();
                let gv = self.value(*gamma).to_vec();
                let mut dx = vec![T::zero(); r * c];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i2 in 0..r {
                    let row = &xv[i2 * c..(i2 + 1) * c];
                    let mut mean = T::zero();
                    for &v in row {
                        mean = mean + v;
                    }
                    mean = mean * inv_c;
                    let mut var = T::zero();
                    for &v in row {
                        let d = v - mean;
                        var = var + d * d;
                    }
                    var = var * inv_c;
                    let inv_std = T::one() / (var + *eps).sqrt();
                    // dxhat = g ⊙ γ ; dx = inv_std · (dxhat − mean(dxhat) − x̂ · mean(dxhat ⊙ x̂))
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let gj = g[i2 * c + j];
                        let dxh = gj * gv[j];
                        mean_dxh = mean_dxh + dxh;
                        mean_dxh_xh = mean_dxh_xh + dxh * xhat;
                        dgamma[j] = dgamma[j] + gj * xhat;
                        dbeta[j] = dbeta[j] + gj;
                    }
                    mean_dxh = mean_dxh * inv_c;
                    mean_dxh_xh = mean_dxh_xh * inv_c;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv_std;
                        let dxh = g[i2 * c + j] * gv[j];
                        dx[i2 * c + j] = inv_std * (dxh - mean_dxh - xhat * mean_dxh_xh);
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gamma, &dgamma);
                self.add_grad(*beta, &dbeta);
            }
            Op::Gelu { x } => {
                let c0: T = lit(0.797_884_560_802_865_4);
                let c1: T = lit(0.044_715);
                let half: T = lit(0.5);
                let three: T = lit(3.0);
                let dx: Vec<T> = self
                    .value(*x)
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| {
                        let u = c0 * (v + c1 * v * v * v);
                        let t = u.tanh();
                        let sech2 = T::one() - t * t;
                        let du = c0 * (T::one() + three * c1 * v * v);
                        gv * (half * (T::one() + t) + half * v * sech2 * du)
                    })
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let s = self.value(out_id).to_vec();
                let dx: Vec<T> = s.iter().zip(&g).map(|(&sv, &gv)| gv * sv * (T::one() - sv)).collect();
                self.add_grad(*x, &dx);
            }
            Op::GatherRows { x, idx } => {
                let (r, c) = self.dims2(*x).unwrap();
                let mut dx = vec![T::zero(); r * c];
                for (out_row, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[src * c + j] = dx[src * c + j] + g[out_row * c + j];
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::ConcatRows { parts } => {
                let mut row0 = 0;
                for &p in parts {
                    let (rp, cp) = self.dims2(p).unwrap();
                    if self.needs(p) {
                        let gp = g[row0 * cp..(row0 + rp) * cp].to_vec();
                        self.add_grad(p, &gp);
                    }
                    row0 += rp;
                }
            }
            Op::ConcatCols { parts } => {
                let (r, total) = self.dims2(out_id).unwrap();
                let mut col0 = 0;
                for &p in parts {
                    let (_, w) = self.dims2(p).unwrap();
                    if self.needs(p) {
                        let mut gp = vec![T::zero(); r * w];
                        for i2 in 0..r {
                            gp[i2 * w..(i2 + 1) * w]
                                .copy_from_slice(&g[i2 * total + col0..i2 * total + col0 + w]);
                        }
                        self.add_grad(p, &gp);
                    }
                    col0 += w;
                }
            }
            Op::Reshape { x } => {
                self.add_grad(*x, &g);
            }
            Op::BceLoss { yhat, labels } => {
                let n = labels.len();
                let lo: T = lit(1e-7);
                let hi = T::one() - lo;
                let inv_n = T::one() / lit::<T>(n as f64);
                let dy: Vec<T> = self
                    .value(*yhat)
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        if p < lo || p > hi {
                            T::zero() // clamp region: flat
                        } else {
                            g[0] * inv_n * (p - y) / (p * (T::one() - p))
                        }
                    })
                    .collect();
                self.add_grad(*yhat, &dy);
            }
            Op::MseLoss { pred, target } => {
                let n = self.value(*pred).len();
                let two_over_n: T = lit(2.0 / n as f64);
                if self.needs(*pred) {
                    let dp: Vec<T> = self
                        .value(*pred)
                        .iter()
                        .zip(self.value(*target))
                        .map(|(&p, &t)| g[0] * two_over_n * (p - t))
                        .collect();
                    self.add_grad(*pred, &dp);
                }
                if self.needs(*target) {
                    let dt: Vec<T> = self
                        .value(*pred)
                        .iter()
                        .zip(self.value(*target))
                        .map(|(&p, &t)| -(g[0] * two_over_n * (p - t)))
                        .collect();
                    self.add_grad(*target, &dt);
                }
            }
        }
        self.nodes[i].op = op;
    }
}

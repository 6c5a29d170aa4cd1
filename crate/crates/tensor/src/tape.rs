use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::store::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F: Real> {
    Constant,
    /// Leaf holding a copy of a parameter's value.
    Param(ParamId),
    /// Row lookup into a parameter table; backward scatters into the
    /// touched rows only.
    Lookup { param: ParamId, ids: Vec<u32> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// x[m×n] + bias[n] broadcast over rows.
    AddRow { x: NodeId, bias: NodeId },
    Scale { x: NodeId, c: F },
    AddConst { x: NodeId },
    Matmul { a: NodeId, b: NodeId },
    Transpose { x: NodeId },
    /// Row softmax; masked columns receive exactly zero weight.
    SoftmaxRows { x: NodeId, col_mask: Option<Vec<bool>> },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: F },
    GatherRows { x: NodeId, idx: Vec<usize> },
    /// Forward identity; contributes exactly zero gradient to its input.
    StopGrad,
    /// Straight-through core-behavior gather: forward is a bit-exact row
    /// gather; backward also routes ⟨g_r, S[i_r]⟩ into the score vector.
    SteGather { src: NodeId, scores: NodeId, idx: Vec<usize> },
    /// x[m×n] with row j scaled by a[j].
    MulColVec { x: NodeId, a: NodeId },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    /// Mean over unmasked rows -> [1×n]. All-masked input yields zeros.
    MeanRowsMasked { x: NodeId, keep: Vec<bool> },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    /// Rows with keep=false are zeroed, forward and backward.
    ZeroRows { x: NodeId, keep: Vec<bool> },
    /// Shifted-scaled cosine between one query row and every row of a
    /// matrix: out_j = (cos(f, s_j)+1)/2 on valid rows, -1 elsewhere.
    CosineScores { f: NodeId, s: NodeId, valid: Vec<bool>, floor: F },
    /// Mean binary cross-entropy against fixed labels, with the
    /// predictions clamped to [1e-7, 1-1e-7].
    BceLoss { preds: NodeId, labels: Vec<F> },
    Reshape { x: NodeId },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Define-by-run tape: operations execute eagerly and record what they
/// need for the backward pass. A tape is built fresh for every forward
/// pass and discarded afterwards.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    madds: u64,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn rank2(op: &'static str, t: &Tensor<impl Real>) -> Result<(usize, usize)> {
    if t.rank() == 2 {
        Ok((t.shape()[0], t.shape()[1]))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![],
        })
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            madds: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add count accumulated by every matmul so far.
    pub fn madds(&self) -> u64 {
        self.madds
    }

    pub fn reset_madds(&mut self) {
        self.madds = 0;
    }

    /// FNV hash of every rectified-linear input's sign pattern. The tape
    /// computes a piecewise-linear function of its leaves wherever relu
    /// appears; finite-difference checks compare this signature across
    /// probes to detect when a probe crossed onto a different piece.
    pub fn relu_sign_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |bit: bool| {
            h ^= u64::from(bit) + 0x9e37;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            if let Op::Relu { x } = node.op {
                for &v in self.nodes[x.0].value.data() {
                    mix(v > F::ZERO);
                }
            }
        }
        h
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<F> {
        let t = self.value(id);
        if t.numel() == 1 {
            Ok(t.data()[0])
        } else {
            Err(TensorError::NotScalar {
                op: "scalar",
                shape: t.shape().to_vec(),
            })
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Constant)
    }

    /// Leaf node copying a (small, dense) parameter. Embedding tables go
    /// through [`Tape::lookup`] instead so only touched rows are moved.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn lookup(&mut self, store: &ParamStore<F>, id: ParamId, ids: &[u32]) -> Result<NodeId> {
        let table = store.value(id);
        let (rows, cols) = rank2("lookup", table)?;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            let i = i as usize;
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "lookup",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(table.row(i));
        }
        let value = Tensor::from_vec(&[ids.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::Lookup {
                param: id,
                ids: ids.to_vec(),
            },
        ))
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::from_vec(ta.shape(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, n) = rank2("add_row", tx)?;
        if tb.rank() != 1 || tb.numel() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bdata = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bdata[i % n])
            .collect();
        let value = Tensor::from_vec(tx.shape(), data)?;
        Ok(self.push(value, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::Scale { x, c })
    }

    pub fn add_const(&mut self, x: NodeId, c: F) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v + c).collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::AddConst { x })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, p) = rank2("matmul", ta)?;
        let (p2, q) = rank2("matmul", tb)?;
        if p != p2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![F::ZERO; m * q];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            for k in 0..p {
                let aik = da[i * p + k];
                let brow = &db[k * q..(k + 1) * q];
                let orow = &mut out[i * q..(i + 1) * q];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
        self.madds += (m * p * q) as u64;
        let value = Tensor::from_vec(&[m, q], out)?;
        Ok(self.push(value, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.value(x);
        let (m, n) = rank2("transpose", t)?;
        let d = t.data();
        let mut out = vec![F::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let value = Tensor::from_vec(&[n, m], out)?;
        Ok(self.push(value, Op::Transpose { x }))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.softmax_impl(x, None)
    }

    pub fn softmax_rows_masked(&mut self, x: NodeId, col_mask: &[bool]) -> Result<NodeId> {
        self.softmax_impl(x, Some(col_mask.to_vec()))
    }

    fn softmax_impl(&mut self, x: NodeId, col_mask: Option<Vec<bool>>) -> Result<NodeId> {
        let t = self.value(x);
        let (m, n) = rank2("softmax_rows", t)?;
        if let Some(mask) = &col_mask {
            if mask.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax_rows",
                    lhs: t.shape().to_vec(),
                    rhs: vec![mask.len()],
                });
            }
            if !mask.iter().any(|&k| k) {
                return Err(TensorError::EmptyMask { op: "softmax_rows" });
            }
        }
        let keep = |j: usize| col_mask.as_ref().is_none_or(|m| m[j]);
        let d = t.data();
        let mut out = vec![F::ZERO; m * n];
        for i in 0..m {
            let row = &d[i * n..(i + 1) * n];
            let mut mx = None::<F>;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    mx = Some(match mx {
                        Some(cur) => cur.maxv(v),
                        None => v,
                    });
                }
            }
            let mx = mx.expect("mask checked non-empty");
            let mut sum = F::ZERO;
            for j in 0..n {
                if keep(j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                if keep(j) {
                    out[i * n + j] /= sum;
                }
            }
        }
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(value, Op::SoftmaxRows { x, col_mask }))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: F) -> Result<NodeId> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (m, d) = rank2("layer_norm", tx)?;
        if tg.rank() != 1 || tg.numel() != d || tb.rank() != 1 || tb.numel() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let (dx, dg, db) = (tx.data(), tg.data(), tb.data());
        let nd = F::from_f64(d as f64);
        let mut out = vec![F::ZERO; m * d];
        for i in 0..m {
            let row = &dx[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<F>() / nd;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<F>()
                / nd;
            let inv = F::ONE / (var + eps).sqrt();
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * inv * dg[j] + db[j];
            }
        }
        let value = Tensor::from_vec(&[m, d], out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let t = self.value(x);
        let (rows, cols) = rank2("gather_rows", t)?;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::from_vec(&[idx.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad)
    }

    /// Gather the selected rows of `src` into a fixed `out_rows`-row
    /// output (rows past the selection are zero). Forward output is
    /// bit-identical to `gather_rows(src, idx)`; backward additionally
    /// feeds each output row's inner product with its source row into
    /// `scores[idx[r]]`, which is what makes the discrete selection
    /// trainable.
    pub fn ste_gather(
        &mut self,
        src: NodeId,
        scores: NodeId,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<NodeId> {
        let (ts, ta) = (self.value(src), self.value(scores));
        let (rows, cols) = rank2("ste_gather", ts)?;
        if ta.numel() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "ste_gather",
                lhs: ts.shape().to_vec(),
                rhs: ta.shape().to_vec(),
            });
        }
        if idx.len() > out_rows {
            return Err(TensorError::IndexOutOfRange {
                op: "ste_gather",
                index: idx.len(),
                len: out_rows,
            });
        }
        let mut out = vec![F::ZERO; out_rows * cols];
        for (r, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "ste_gather",
                    index: i,
                    len: rows,
                });
            }
            out[r * cols..(r + 1) * cols].copy_from_slice(ts.row(i));
        }
        let value = Tensor::from_vec(&[out_rows, cols], out)?;
        Ok(self.push(
            value,
            Op::SteGather {
                src,
                scores,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn mul_col_vec(&mut self, x: NodeId, a: NodeId) -> Result<NodeId> {
        let (tx, ta) = (self.value(x), self.value(a));
        let (m, n) = rank2("mul_col_vec", tx)?;
        if ta.numel() != m {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col_vec",
                lhs: tx.shape().to_vec(),
                rhs: ta.shape().to_vec(),
            });
        }
        let (dx, da) = (tx.data(), ta.data());
        let mut out = vec![F::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dx[i * n + j] * da[i];
            }
        }
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(value, Op::MulColVec { x, a }))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::EmptyMask { op: "concat_rows" });
        }
        let cols = rank2("concat_rows", self.value(parts[0]))?.1;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = rank2("concat_rows", self.value(p))?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += r;
        }
        let mut out = Vec::with_capacity(total * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[total, cols], out)?;
        Ok(self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::EmptyMask { op: "concat_cols" });
        }
        let rows = rank2("concat_cols", self.value(parts[0]))?.0;
        let mut total = 0usize;
        for &p in parts {
            let (r, c) = rank2("concat_cols", self.value(p))?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += c;
        }
        let mut out = vec![F::ZERO; rows * total];
        let mut col_off = 0usize;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for i in 0..rows {
                out[i * total + col_off..i * total + col_off + c].copy_from_slice(t.row(i));
            }
            col_off += c;
        }
        let value = Tensor::from_vec(&[rows, total], out)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn mean_rows_masked(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId> {
        let t = self.value(x);
        let (m, n) = rank2("mean_rows_masked", t)?;
        if keep.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "mean_rows_masked",
                lhs: t.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let cnt = keep.iter().filter(|&&k| k).count();
        let mut out = vec![F::ZERO; n];
        if cnt > 0 {
            let inv = F::ONE / F::from_f64(cnt as f64);
            for i in 0..m {
                if keep[i] {
                    for j in 0..n {
                        out[j] += t.data()[i * n + j] * inv;
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[1, n], out)?;
        Ok(self.push(
            value,
            Op::MeanRowsMasked {
                x,
                keep: keep.to_vec(),
            },
        ))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().copied().sum::<F>();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let n = F::from_f64(t.numel() as f64);
        let s = t.data().iter().copied().sum::<F>() / n;
        self.push(Tensor::scalar(s), Op::MeanAll { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v >= F::ZERO {
                    F::ONE / (F::ONE + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (F::ONE + e)
                }
            })
            .collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v.maxv(F::ZERO)).collect();
        let value = Tensor::from_vec(t.shape(), data).expect("same shape");
        self.push(value, Op::Relu { x })
    }

    pub fn zero_masked_rows(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId> {
        let t = self.value(x);
        let (m, n) = rank2("zero_masked_rows", t)?;
        if keep.len() != m {
            return Err(TensorError::ShapeMismatch {
                op: "zero_masked_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let mut out = t.data().to_vec();
        for i in 0..m {
            if !keep[i] {
                for v in &mut out[i * n..(i + 1) * n] {
                    *v = F::ZERO;
                }
            }
        }
        let value = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(
            value,
            Op::ZeroRows {
                x,
                keep: keep.to_vec(),
            },
        ))
    }

    /// Importance scores of every row of `s` against the query `f`
    /// ([1×d]): `(cosine+1)/2`, clamped to [0,1]. The denominator is
    /// floored so zero vectors score a neutral 0.5 instead of erroring.
    /// Invalid rows get the sentinel -1 and contribute no gradient.
    pub fn cosine_scores(
        &mut self,
        f: NodeId,
        s: NodeId,
        valid: &[bool],
        floor: F,
    ) -> Result<NodeId> {
        let (tf, ts) = (self.value(f), self.value(s));
        let (rows, cols) = rank2("cosine_scores", ts)?;
        if tf.numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_scores",
                lhs: tf.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        if valid.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_scores",
                lhs: ts.shape().to_vec(),
                rhs: vec![valid.len()],
            });
        }
        let fd = tf.data();
        let nf = fd.iter().map(|&v| v * v).sum::<F>().sqrt();
        let half = F::from_f64(0.5);
        let mut out = vec![-F::ONE; rows];
        for j in 0..rows {
            if !valid[j] {
                continue;
            }
            let row = ts.row(j);
            let dot = row.iter().zip(fd).map(|(&a, &b)| a * b).sum::<F>();
            let ns = row.iter().map(|&v| v * v).sum::<F>().sqrt();
            let den = (nf * ns).maxv(floor);
            let a = (dot / den + F::ONE) * half;
            out[j] = a.maxv(F::ZERO).minv(F::ONE);
        }
        let value = Tensor::from_vec(&[rows], out)?;
        Ok(self.push(
            value,
            Op::CosineScores {
                f,
                s,
                valid: valid.to_vec(),
                floor,
            },
        ))
    }

    pub fn bce_loss(&mut self, preds: NodeId, labels: &[F]) -> Result<NodeId> {
        let t = self.value(preds);
        if t.numel() != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if labels.is_empty() {
            return Err(TensorError::EmptyMask { op: "bce_loss" });
        }
        let lo = F::from_f64(1e-7);
        let hi = F::ONE - lo;
        let mut sum = F::ZERO;
        for (&p, &y) in t.data().iter().zip(labels) {
            let p = p.maxv(lo).minv(hi);
            sum += -(y * p.ln() + (F::ONE - y) * (F::ONE - p).ln());
        }
        let loss = sum / F::from_f64(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLoss {
                preds,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x);
        let n: usize = shape.iter().product();
        if n != t.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::from_vec(shape, t.data().to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Reverse pass from a scalar loss. Parameter gradients in `store`
    /// are zeroed first, then populated; parameters not reachable from
    /// the loss therefore end with exactly zero gradient.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<F>) -> Result<()> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: lt.shape().to_vec(),
            });
        }
        store.zero_grads();
        let mut grads: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| vec![F::ZERO; n.value.numel()])
            .collect();
        grads[loss.0][0] = F::ONE;

        // Nodes are created in topological order, so one reverse sweep
        // visits every node exactly once.
        for i in (0..self.nodes.len()).rev() {
            if grads[i].iter().all(|g| *g == F::ZERO) {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            match &self.nodes[i].op {
                Op::Constant | Op::StopGrad => {}
                Op::Param(pid) => store.accumulate_grad(*pid, &g),
                Op::Lookup { param, ids } => {
                    let cols = self.nodes[i].value.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        store.accumulate_grad_row(*param, id as usize, &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, i, |ga| {
                        for (gv, gi) in ga.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                    accumulate(&mut grads, *b, i, |gb| {
                        for (gv, gi) in gb.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, *a, i, |ga| {
                        for (gv, gi) in ga.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                    accumulate(&mut grads, *b, i, |gb| {
                        for (gv, gi) in gb.iter_mut().zip(&g) {
                            *gv -= *gi;
                        }
                    });
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let bd: Vec<F> = self.nodes[b.0].value.data().to_vec();
                    let ad: Vec<F> = self.nodes[a.0].value.data().to_vec();
                    accumulate(&mut grads, a, i, |ga| {
                        for ((gv, gi), bv) in ga.iter_mut().zip(&g).zip(&bd) {
                            *gv += *gi * *bv;
                        }
                    });
                    accumulate(&mut grads, b, i, |gb| {
                        for ((gv, gi), av) in gb.iter_mut().zip(&g).zip(&ad) {
                            *gv += *gi * *av;
                        }
                    });
                }
                Op::AddRow { x, bias } => {
                    let (x, bias) = (*x, *bias);
                    let n = self.nodes[bias.0].value.numel();
                    accumulate(&mut grads, x, i, |gx| {
                        for (gv, gi) in gx.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                    accumulate(&mut grads, bias, i, |gb| {
                        for (j, gi) in g.iter().enumerate() {
                            gb[j % n] += *gi;
                        }
                    });
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    accumulate(&mut grads, x, i, |gx| {
                        for (gv, gi) in gx.iter_mut().zip(&g) {
                            *gv += *gi * c;
                        }
                    });
                }
                Op::AddConst { x } => {
                    accumulate(&mut grads, *x, i, |gx| {
                        for (gv, gi) in gx.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                }
                Op::Matmul { a, b } => {
                    let (a, b) = (*a, *b);
                    let (m, p) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let q = self.nodes[b.0].value.cols();
                    let ad: Vec<F> = self.nodes[a.0].value.data().to_vec();
                    let bd: Vec<F> = self.nodes[b.0].value.data().to_vec();
                    // dA = g · Bᵀ
                    accumulate(&mut grads, a, i, |ga| {
                        for r in 0..m {
                            for k in 0..p {
                                let mut acc = F::ZERO;
                                for j in 0..q {
                                    acc += g[r * q + j] * bd[k * q + j];
                                }
                                ga[r * p + k] += acc;
                            }
                        }
                    });
                    // dB = Aᵀ · g
                    accumulate(&mut grads, b, i, |gb| {
                        for k in 0..p {
                            for r in 0..m {
                                let ark = ad[r * p + k];
                                for j in 0..q {
                                    gb[k * q + j] += ark * g[r * q + j];
                                }
                            }
                        }
                    });
                }
                Op::Transpose { x } => {
                    let x = *x;
                    let (m, n) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    accumulate(&mut grads, x, i, |gx| {
                        for r in 0..m {
                            for c in 0..n {
                                gx[r * n + c] += g[c * m + r];
                            }
                        }
                    });
                }
                Op::SoftmaxRows { x, col_mask } => {
                    let x = *x;
                    let out: Vec<F> = self.nodes[i].value.data().to_vec();
                    let (m, n) = (self.nodes[i].value.rows(), self.nodes[i].value.cols());
                    let mask = col_mask.clone();
                    let keep = |j: usize| mask.as_ref().is_none_or(|mk| mk[j]);
                    accumulate(&mut grads, x, i, |gx| {
                        for r in 0..m {
                            let orow = &out[r * n..(r + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            let mut dot = F::ZERO;
                            for j in 0..n {
                                if keep(j) {
                                    dot += grow[j] * orow[j];
                                }
                            }
                            for j in 0..n {
                                if keep(j) {
                                    gx[r * n + j] += orow[j] * (grow[j] - dot);
                                }
                            }
                        }
                    });
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                    let (m, d) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let xd: Vec<F> = self.nodes[x.0].value.data().to_vec();
                    let gd: Vec<F> = self.nodes[gain.0].value.data().to_vec();
                    let nd = F::from_f64(d as f64);
                    // Recompute per-row mean and inverse stddev.
                    let mut stats = Vec::with_capacity(m);
                    for r in 0..m {
                        let row = &xd[r * d..(r + 1) * d];
                        let mean = row.iter().copied().sum::<F>() / nd;
                        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nd;
                        stats.push((mean, F::ONE / (var + eps).sqrt()));
                    }
                    accumulate(&mut grads, x, i, |gx| {
                        for r in 0..m {
                            let (mean, inv) = stats[r];
                            let row = &xd[r * d..(r + 1) * d];
                            let grow = &g[r * d..(r + 1) * d];
                            let mut sum_dxhat = F::ZERO;
                            let mut sum_dxhat_xhat = F::ZERO;
                            for j in 0..d {
                                let xhat = (row[j] - mean) * inv;
                                let dxhat = grow[j] * gd[j];
                                sum_dxhat += dxhat;
                                sum_dxhat_xhat += dxhat * xhat;
                            }
                            for j in 0..d {
                                let xhat = (row[j] - mean) * inv;
                                let dxhat = grow[j] * gd[j];
                                gx[r * d + j] += inv
                                    * (dxhat - sum_dxhat / nd - xhat * sum_dxhat_xhat / nd);
                            }
                        }
                    });
                    accumulate(&mut grads, gain, i, |gg| {
                        for r in 0..m {
                            let (mean, inv) = stats[r];
                            for j in 0..d {
                                let xhat = (xd[r * d + j] - mean) * inv;
                                gg[j] += g[r * d + j] * xhat;
                            }
                        }
                    });
                    accumulate(&mut grads, bias, i, |gb| {
                        for r in 0..m {
                            for j in 0..d {
                                gb[j] += g[r * d + j];
                            }
                        }
                    });
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    let cols = self.nodes[i].value.cols();
                    let idx = idx.clone();
                    accumulate(&mut grads, x, i, |gx| {
                        for (r, &src) in idx.iter().enumerate() {
                            for j in 0..cols {
                                gx[src * cols + j] += g[r * cols + j];
                            }
                        }
                    });
                }
                Op::SteGather { src, scores, idx } => {
                    let (src, scores) = (*src, *scores);
                    let cols = self.nodes[i].value.cols();
                    let sd: Vec<F> = self.nodes[src.0].value.data().to_vec();
                    let idx = idx.clone();
                    accumulate(&mut grads, src, i, |gs| {
                        for (r, &si) in idx.iter().enumerate() {
                            for j in 0..cols {
                                gs[si * cols + j] += g[r * cols + j];
                            }
                        }
                    });
                    accumulate(&mut grads, scores, i, |ga| {
                        for (r, &si) in idx.iter().enumerate() {
                            let mut dot = F::ZERO;
                            for j in 0..cols {
                                dot += g[r * cols + j] * sd[si * cols + j];
                            }
                            ga[si] += dot;
                        }
                    });
                }
                Op::MulColVec { x, a } => {
                    let (x, a) = (*x, *a);
                    let (m, n) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let xd: Vec<F> = self.nodes[x.0].value.data().to_vec();
                    let ad: Vec<F> = self.nodes[a.0].value.data().to_vec();
                    accumulate(&mut grads, x, i, |gx| {
                        for r in 0..m {
                            for j in 0..n {
                                gx[r * n + j] += g[r * n + j] * ad[r];
                            }
                        }
                    });
                    accumulate(&mut grads, a, i, |ga| {
                        for r in 0..m {
                            let mut dot = F::ZERO;
                            for j in 0..n {
                                dot += g[r * n + j] * xd[r * n + j];
                            }
                            ga[r] += dot;
                        }
                    });
                }
                Op::ConcatRows { parts } => {
                    let parts = parts.clone();
                    let mut off = 0usize;
                    for p in parts {
                        let len = self.nodes[p.0].value.numel();
                        let slice = &g[off..off + len];
                        accumulate(&mut grads, p, i, |gp| {
                            for (gv, gi) in gp.iter_mut().zip(slice) {
                                *gv += *gi;
                            }
                        });
                        off += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let rows = self.nodes[i].value.rows();
                    let total = self.nodes[i].value.cols();
                    let mut col_off = 0usize;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        accumulate(&mut grads, p, i, |gp| {
                            for r in 0..rows {
                                for j in 0..c {
                                    gp[r * c + j] += g[r * total + col_off + j];
                                }
                            }
                        });
                        col_off += c;
                    }
                }
                Op::MeanRowsMasked { x, keep } => {
                    let x = *x;
                    let n = self.nodes[i].value.cols();
                    let keep = keep.clone();
                    let cnt = keep.iter().filter(|&&k| k).count();
                    if cnt > 0 {
                        let inv = F::ONE / F::from_f64(cnt as f64);
                        accumulate(&mut grads, x, i, |gx| {
                            for (r, &k) in keep.iter().enumerate() {
                                if k {
                                    for j in 0..n {
                                        gx[r * n + j] += g[j] * inv;
                                    }
                                }
                            }
                        });
                    }
                }
                Op::SumAll { x } => {
                    accumulate(&mut grads, *x, i, |gx| {
                        for gv in gx.iter_mut() {
                            *gv += g[0];
                        }
                    });
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    let inv = F::ONE / F::from_f64(self.nodes[x.0].value.numel() as f64);
                    accumulate(&mut grads, x, i, |gx| {
                        for gv in gx.iter_mut() {
                            *gv += g[0] * inv;
                        }
                    });
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let out: Vec<F> = self.nodes[i].value.data().to_vec();
                    accumulate(&mut grads, x, i, |gx| {
                        for ((gv, gi), o) in gx.iter_mut().zip(&g).zip(&out) {
                            *gv += *gi * *o * (F::ONE - *o);
                        }
                    });
                }
                Op::Relu { x } => {
                    let x = *x;
                    let xd: Vec<F> = self.nodes[x.0].value.data().to_vec();
                    accumulate(&mut grads, x, i, |gx| {
                        for ((gv, gi), xv) in gx.iter_mut().zip(&g).zip(&xd) {
                            if *xv > F::ZERO {
                                *gv += *gi;
                            }
                        }
                    });
                }
                Op::ZeroRows { x, keep } => {
                    let x = *x;
                    let n = self.nodes[i].value.cols();
                    let keep = keep.clone();
                    accumulate(&mut grads, x, i, |gx| {
                        for (r, &k) in keep.iter().enumerate() {
                            if k {
                                for j in 0..n {
                                    gx[r * n + j] += g[r * n + j];
                                }
                            }
                        }
                    });
                }
                Op::CosineScores { f, s, valid, floor } => {
                    let (f, s, floor) = (*f, *s, *floor);
                    let fd: Vec<F> = self.nodes[f.0].value.data().to_vec();
                    let sd: Vec<F> = self.nodes[s.0].value.data().to_vec();
                    let valid = valid.clone();
                    let out: Vec<F> = self.nodes[i].value.data().to_vec();
                    let d = fd.len();
                    let nf = fd.iter().map(|&v| v * v).sum::<F>().sqrt();
                    let half = F::from_f64(0.5);
                    // d a_j / d f and d a_j / d s_j, with the denominator
                    // treated as constant when the floor is active, and
                    // zero gradient where the [0,1] clamp is saturated.
                    let mut df = vec![F::ZERO; d];
                    let mut ds = vec![F::ZERO; sd.len()];
                    for (j, &is_valid) in valid.iter().enumerate() {
                        if !is_valid || g[j] == F::ZERO {
                            continue;
                        }
                        if out[j] == F::ZERO || out[j] == F::ONE {
                            continue;
                        }
                        let row = &sd[j * d..(j + 1) * d];
                        let dot = row.iter().zip(&fd).map(|(&a, &b)| a * b).sum::<F>();
                        let ns = row.iter().map(|&v| v * v).sum::<F>().sqrt();
                        let den = nf * ns;
                        let gj = g[j] * half;
                        if den > floor {
                            let inv = F::ONE / den;
                            let c = dot * inv;
                            for t in 0..d {
                                df[t] += gj * inv * (row[t] - c * ns / nf * fd[t]);
                                ds[j * d + t] += gj * inv * (fd[t] - c * nf / ns * row[t]);
                            }
                        } else {
                            let inv = F::ONE / floor;
                            for t in 0..d {
                                df[t] += gj * inv * row[t];
                                ds[j * d + t] += gj * inv * fd[t];
                            }
                        }
                    }
                    accumulate(&mut grads, f, i, |gf| {
                        for (gv, dv) in gf.iter_mut().zip(&df) {
                            *gv += *dv;
                        }
                    });
                    accumulate(&mut grads, s, i, |gs| {
                        for (gv, dv) in gs.iter_mut().zip(&ds) {
                            *gv += *dv;
                        }
                    });
                }
                Op::BceLoss { preds, labels } => {
                    let preds = *preds;
                    let pd: Vec<F> = self.nodes[preds.0].value.data().to_vec();
                    let labels = labels.clone();
                    let lo = F::from_f64(1e-7);
                    let hi = F::ONE - lo;
                    let inv_n = F::ONE / F::from_f64(labels.len() as f64);
                    accumulate(&mut grads, preds, i, |gp| {
                        for (j, (&p, &y)) in pd.iter().zip(&labels).enumerate() {
                            // Saturated clamp region has zero derivative.
                            if p < lo || p > hi {
                                continue;
                            }
                            let pc = p.maxv(lo).minv(hi);
                            gp[j] += g[0] * inv_n * (pc - y) / (pc * (F::ONE - pc));
                        }
                    });
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, i, |gx| {
                        for (gv, gi) in gx.iter_mut().zip(&g) {
                            *gv += *gi;
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

/// Apply a gradient update to an earlier node's accumulator. Splitting
/// the borrow this way keeps the dispatch above readable.
fn accumulate<F: Real>(
    grads: &mut [Vec<F>],
    target: NodeId,
    current: usize,
    f: impl FnOnce(&mut Vec<F>),
) {
    debug_assert!(target.0 < current, "tape must stay topologically ordered");
    f(&mut grads[target.0]);
}

//! The tape and its operator set.
//!
//! Every operator works on 2-D `rows × cols` tensors (convolution weights are
//! 3-D). Sequences are laid out channel-major: `channels × frames`, and a
//! waveform is a `1 × samples` row. There is no implicit broadcasting; the
//! few broadcasts the networks need have their own operators
//! ([`Tape::add_row_bias`], [`Tape::scale_by_param`]).

use super::{shape_err, GradError, Grads, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        dilation: usize,
        pad_left: usize,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
        dilation: usize,
    },
    TransposedConv1d {
        x: Var,
        w: Var,
        stride: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleByParam(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    FeatureNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ReduceSum(Var),
    Log10(Var),
    Ln(Var),
    Magnitude(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    OverlapAdd {
        x: Var,
        hop: usize,
        offset: usize,
    },
    Frame {
        x: Var,
        hop: usize,
        offset: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation over the parameters of one store.
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)`; `ta`/`tb` read the stored
/// operand transposed (stored as k×m / n×k).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slices are sized by the callers to the m×k, k×n and m×n
    // extents described by the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Names of the differentiable tape operations.
pub const OPERATORS: [&str; 24] = [
    "matmul",
    "conv1d",
    "depthwise_conv1d",
    "transposed_conv1d",
    "add",
    "sub",
    "mul",
    "add_row_bias",
    "scale_by_param",
    "scale_const",
    "add_const",
    "relu",
    "prelu",
    "sigmoid",
    "log10",
    "ln",
    "magnitude",
    "feature_norm",
    "reduce_sum",
    "concat_rows",
    "slice_rows",
    "slice_cols",
    "overlap_add",
    "frame",
];

fn add_to(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'a ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize), GradError> {
        self.value(v)
            .dims2()
            .ok_or_else(|| shape_err(op, format!("expected a 2-D tensor, got {:?}", self.shape(v))))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// The tape variable of a stored parameter (recorded once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: self.params.get(id).clone(),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    // ---- linear algebra and convolutions -------------------------------------------------

    /// `(m×k) · (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}×{k} · {k2}×{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Strided, dilated 1-D convolution (cross-correlation) of `x: Cin × L`
    /// with `w: Cout × Cin × P`, after zero-padding `x` on both sides.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        dilation: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var, GradError> {
        let (cin, len) = self.dims(x, "conv1d")?;
        let (cout, cin2, taps) = match self.shape(w) {
            &[o, i, p] => (o, i, p),
            s => return Err(shape_err("conv1d", format!("weight must be Cout×Cin×P, got {s:?}"))),
        };
        if cin != cin2 || stride == 0 || dilation == 0 || taps == 0 {
            return Err(shape_err(
                "conv1d",
                format!("input {cin}×{len}, weight {cout}×{cin2}×{taps}, stride {stride}, dilation {dilation}"),
            ));
        }
        let padded = len + pad_left + pad_right;
        let span = dilation * (taps - 1) + 1;
        if padded < span {
            return Err(shape_err("conv1d", format!("padded length {padded} shorter than kernel span {span}")));
        }
        let lout = (padded - span) / stride + 1;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            for i in 0..cin {
                let xrow = &xs[i * len..(i + 1) * len];
                for p in 0..taps {
                    let wv = ws[(o * cin + i) * taps + p];
                    let orow = &mut out[o * lout..(o + 1) * lout];
                    for (t, ov) in orow.iter_mut().enumerate() {
                        let idx = (t * stride + p * dilation) as isize - pad_left as isize;
                        if idx >= 0 && (idx as usize) < len {
                            *ov += wv * xrow[idx as usize];
                        }
                    }
                }
            }
        }
        let op = Op::Conv1d {
            x,
            w,
            stride,
            dilation,
            pad_left,
        };
        Ok(self.push(Tensor::matrix(cout, lout, out)?, op, &[x, w]))
    }

    /// Per-channel dilated convolution of `x: C × T` with `w: C × P` (P odd),
    /// zero-padded so that the output keeps T frames and is centred.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var, GradError> {
        let (c, t) = self.dims(x, "depthwise_conv1d")?;
        let (c2, taps) = self.dims(w, "depthwise_conv1d")?;
        if c != c2 || taps % 2 == 0 || dilation == 0 {
            return Err(shape_err(
                "depthwise_conv1d",
                format!("input {c}×{t}, weight {c2}×{taps} (odd taps required), dilation {dilation}"),
            ));
        }
        let half = (taps / 2) as isize;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let xrow = &xs[ch * t..(ch + 1) * t];
            let orow = &mut out[ch * t..(ch + 1) * t];
            for p in 0..taps {
                let wv = ws[ch * taps + p];
                let shift = (p as isize - half) * dilation as isize;
                for (i, ov) in orow.iter_mut().enumerate() {
                    let j = i as isize + shift;
                    if j >= 0 && (j as usize) < t {
                        *ov += wv * xrow[j as usize];
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(c, t, out)?,
            Op::DepthwiseConv1d { x, w, dilation },
            &[x, w],
        ))
    }

    /// Transposed strided convolution of `x: Cin × T` with `w: Cin × Cout × P`,
    /// producing `Cout × ((T-1)·stride + P)`.
    pub fn transposed_conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var, GradError> {
        let (cin, t) = self.dims(x, "transposed_conv1d")?;
        let (cin2, cout, taps) = match self.shape(w) {
            &[i, o, p] => (i, o, p),
            s => {
                return Err(shape_err(
                    "transposed_conv1d",
                    format!("weight must be Cin×Cout×P, got {s:?}"),
                ))
            }
        };
        if cin != cin2 || stride == 0 || t == 0 {
            return Err(shape_err(
                "transposed_conv1d",
                format!("input {cin}×{t}, weight {cin2}×{cout}×{taps}, stride {stride}"),
            ));
        }
        let lout = (t - 1) * stride + taps;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut out = vec![0.0; cout * lout];
        for i in 0..cin {
            for ti in 0..t {
                let xv = xs[i * t + ti];
                if xv == 0.0 {
                    continue;
                }
                for o in 0..cout {
                    let wrow = &ws[(i * cout + o) * taps..(i * cout + o + 1) * taps];
                    let orow = &mut out[o * lout + ti * stride..o * lout + ti * stride + taps];
                    orow.iter_mut().zip(wrow).for_each(|(a, b)| *a += xv * b);
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(cout, lout, out)?,
            Op::TransposedConv1d { x, w, stride },
            &[x, w],
        ))
    }

    // ---- elementwise ----------------------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), GradError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(data, self.shape(a).to_vec()).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        Tensor::new(data, self.shape(a).to_vec()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds `bias: C × 1` to every column of `x: C × T`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, GradError> {
        let (c, t) = self.dims(x, "add_row_bias")?;
        if self.shape(bias) != [c, 1] {
            return Err(shape_err("add_row_bias", format!("bias {:?} for input {c}×{t}", self.shape(bias))));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i / t])
            .collect();
        Ok(self.push(Tensor::matrix(c, t, data)?, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// Multiplies `x` by a learnable `1 × 1` scalar.
    pub fn scale_by_param(&mut self, x: Var, scale: Var) -> Result<Var, GradError> {
        if self.value(scale).numel() != 1 {
            return Err(shape_err("scale_by_param", format!("scale has shape {:?}", self.shape(scale))));
        }
        let s = self.value(scale).item();
        let v = self.map(x, |a| a * s);
        Ok(self.push(v, Op::ScaleByParam(x, scale), &[x, scale]))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a * c);
        self.push(v, Op::ScaleConst(x, c), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let v = self.map(x, |a| a + c);
        self.push(v, Op::AddConst(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.map(x, |a| a.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    /// Leaky ReLU with a learnable `1 × 1` negative-side slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var, GradError> {
        if self.value(slope).numel() != 1 {
            return Err(shape_err("prelu", format!("slope has shape {:?}", self.shape(slope))));
        }
        let s = self.value(slope).item();
        let v = self.map(x, |a| if a > 0.0 { a } else { s * a });
        Ok(self.push(v, Op::Prelu(x, slope), &[x, slope]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn log10(&mut self, x: Var) -> Result<Var, GradError> {
        if self.value(x).data().iter().any(|&a| a <= 0.0) {
            return Err(GradError::NonFinite("log10 of a non-positive value".into()));
        }
        let v = self.map(x, f64::log10);
        Ok(self.push(v, Op::Log10(x), &[x]))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, GradError> {
        if self.value(x).data().iter().any(|&a| a <= 0.0) {
            return Err(GradError::NonFinite("ln of a non-positive value".into()));
        }
        let v = self.map(x, f64::ln);
        Ok(self.push(v, Op::Ln(x), &[x]))
    }

    /// `sqrt(re² + im²)`; the derivative at the origin is taken as zero.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var, GradError> {
        self.same_shape(re, im, "magnitude")?;
        let v = self.zip_map(re, im, f64::hypot);
        Ok(self.push(v, Op::Magnitude(re, im), &[re, im]))
    }

    // ---- normalization and reductions -----------------------------------------------------

    /// Feature-wise normalization over frames: each channel of `x: C × T` is
    /// standardized with its own mean and variance across the T frames, then
    /// scaled by `gamma: C × 1` and shifted by `beta: C × 1`.
    pub fn feature_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, GradError> {
        let (c, t) = self.dims(x, "feature_norm")?;
        if t == 0 || self.shape(gamma) != [c, 1] || self.shape(beta) != [c, 1] {
            return Err(shape_err(
                "feature_norm",
                format!("input {c}×{t}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; c * t];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let row = &xs[ch * t..(ch + 1) * t];
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[ch] = inv;
            for (i, v) in row.iter().enumerate() {
                let n = (v - mean) * inv;
                normalized[ch * t + i] = n;
                out[ch * t + i] = g[ch] * n + b[ch];
            }
        }
        let op = Op::FeatureNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        };
        Ok(self.push(Tensor::matrix(c, t, out)?, op, &[x, gamma, beta]))
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(x), &[x])
    }

    // ---- structural -----------------------------------------------------------------------

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_rows", "no inputs"))?;
        let (_, cols) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", format!("column counts {cols} and {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let (r, c) = self.dims(x, "slice_rows")?;
        if start + len > r {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::matrix(len, c, data)?, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let (r, c) = self.dims(x, "slice_cols")?;
        if start + len > c {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let xs = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| xs[i * c + start..i * c + start + len].iter().copied())
            .collect();
        Ok(self.push(Tensor::matrix(r, len, data)?, Op::SliceCols { x, start }, &[x]))
    }

    /// Overlap-adds the columns of `frames: W × T` with stride `hop` into a
    /// `1 × out_len` row; column t lands at sample `t·hop - offset`.
    pub fn overlap_add(&mut self, frames: Var, hop: usize, offset: usize, out_len: usize) -> Result<Var, GradError> {
        let (w, t) = self.dims(frames, "overlap_add")?;
        if hop == 0 {
            return Err(shape_err("overlap_add", "hop must be positive"));
        }
        let xs = self.value(frames).data();
        let mut out = vec![0.0; out_len];
        for j in 0..w {
            for ti in 0..t {
                let i = (ti * hop + j) as isize - offset as isize;
                if i >= 0 && (i as usize) < out_len {
                    out[i as usize] += xs[j * t + ti];
                }
            }
        }
        Ok(self.push(
            Tensor::row(out),
            Op::OverlapAdd {
                x: frames,
                hop,
                offset,
            },
            &[frames],
        ))
    }

    /// Slices a `1 × L` row into `window × n_frames` columns; column t holds
    /// samples `t·hop - offset ..` (zero outside the signal). This is the
    /// adjoint of [`Tape::overlap_add`].
    pub fn frame(&mut self, x: Var, window: usize, hop: usize, offset: usize, n_frames: usize) -> Result<Var, GradError> {
        let (r, len) = self.dims(x, "frame")?;
        if r != 1 || hop == 0 {
            return Err(shape_err("frame", format!("expected a 1×L row and positive hop, got {r}×{len}")));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; window * n_frames];
        for j in 0..window {
            for ti in 0..n_frames {
                let i = (ti * hop + j) as isize - offset as isize;
                if i >= 0 && (i as usize) < len {
                    out[j * n_frames + ti] = xs[i as usize];
                }
            }
        }
        Ok(self.push(
            Tensor::matrix(window, n_frames, out)?,
            Op::Frame { x, hop, offset },
            &[x],
        ))
    }

    /// Values at which the recorded piecewise-linear operators have a kink:
    /// the inputs of every relu and prelu plus the outputs of magnitude.
    /// Gradient checks compare these across perturbed evaluations.
    pub fn kink_inputs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(x) | Op::Prelu(x, _) => out.extend_from_slice(self.value(x).data()),
                Op::Magnitude(_, _) => out.extend_from_slice(node.value.data()),
                _ => {}
            }
        }
        out
    }

    // ---- backward -------------------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns d(loss)/d(param) for every
    /// parameter of the store (zero for those not on the path to the loss).
    pub fn backward(&self, loss: Var) -> Result<Grads, GradError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GradError::NonScalar(lv.shape().to_vec()));
        }
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut adj, &mut grads);
        }
        Ok(grads)
    }

    fn backward_node(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>], grads: &mut Grads) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match node.op {
            Op::Constant => {}
            Op::Param(id) => grads.add_into(id, g),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2().unwrap();
                let n = self.value(b).dims2().unwrap().1;
                if needs(a) {
                    add_to(&mut adj[a.0], m * k, |ga| gemm(m, n, k, g, false, val(b), true, ga, 1.0));
                }
                if needs(b) {
                    add_to(&mut adj[b.0], k * n, |gb| gemm(k, m, n, val(a), true, g, false, gb, 1.0));
                }
            }
            Op::Conv1d {
                x,
                w,
                stride,
                dilation,
                pad_left,
            } => {
                let (cin, len) = self.value(x).dims2().unwrap();
                let [cout, _, taps] = self.value(w).shape()[..] else { unreachable!() };
                let lout = node.value.shape()[1];
                let (xs, ws) = (val(x), val(w));
                let (nx, nw) = (needs(x), needs(w));
                let mut gx = if nx { vec![0.0; cin * len] } else { Vec::new() };
                let mut gw = if nw { vec![0.0; cout * cin * taps] } else { Vec::new() };
                for o in 0..cout {
                    let grow = &g[o * lout..(o + 1) * lout];
                    for i in 0..cin {
                        for p in 0..taps {
                            let widx = (o * cin + i) * taps + p;
                            let mut acc = 0.0;
                            for (t, gv) in grow.iter().enumerate() {
                                let idx = (t * stride + p * dilation) as isize - pad_left as isize;
                                if idx >= 0 && (idx as usize) < len {
                                    let xi = i * len + idx as usize;
                                    acc += gv * xs[xi];
                                    if nx {
                                        gx[xi] += gv * ws[widx];
                                    }
                                }
                            }
                            if nw {
                                gw[widx] += acc;
                            }
                        }
                    }
                }
                if nx {
                    add_to(&mut adj[x.0], gx.len(), |a| a.iter_mut().zip(&gx).for_each(|(p, q)| *p += q));
                }
                if nw {
                    add_to(&mut adj[w.0], gw.len(), |a| a.iter_mut().zip(&gw).for_each(|(p, q)| *p += q));
                }
            }
            Op::DepthwiseConv1d { x, w, dilation } => {
                let (c, t) = self.value(x).dims2().unwrap();
                let taps = self.value(w).shape()[1];
                let half = (taps / 2) as isize;
                let (xs, ws) = (val(x), val(w));
                let (nx, nw) = (needs(x), needs(w));
                let mut gx = if nx { vec![0.0; c * t] } else { Vec::new() };
                let mut gw = if nw { vec![0.0; c * taps] } else { Vec::new() };
                for ch in 0..c {
                    for p in 0..taps {
                        let shift = (p as isize - half) * dilation as isize;
                        let wv = ws[ch * taps + p];
                        let mut acc = 0.0;
                        for i in 0..t {
                            let j = i as isize + shift;
                            if j >= 0 && (j as usize) < t {
                                let gv = g[ch * t + i];
                                acc += gv * xs[ch * t + j as usize];
                                if nx {
                                    gx[ch * t + j as usize] += gv * wv;
                                }
                            }
                        }
                        if nw {
                            gw[ch * taps + p] += acc;
                        }
                    }
                }
                if nx {
                    add_to(&mut adj[x.0], gx.len(), |a| a.iter_mut().zip(&gx).for_each(|(p, q)| *p += q));
                }
                if nw {
                    add_to(&mut adj[w.0], gw.len(), |a| a.iter_mut().zip(&gw).for_each(|(p, q)| *p += q));
                }
            }
            Op::TransposedConv1d { x, w, stride } => {
                let (cin, t) = self.value(x).dims2().unwrap();
                let [_, cout, taps] = self.value(w).shape()[..] else { unreachable!() };
                let lout = node.value.shape()[1];
                let (xs, ws) = (val(x), val(w));
                let (nx, nw) = (needs(x), needs(w));
                let mut gx = if nx { vec![0.0; cin * t] } else { Vec::new() };
                let mut gw = if nw { vec![0.0; cin * cout * taps] } else { Vec::new() };
                for i in 0..cin {
                    for ti in 0..t {
                        let xv = xs[i * t + ti];
                        for o in 0..cout {
                            let base = (i * cout + o) * taps;
                            let grow = &g[o * lout + ti * stride..o * lout + ti * stride + taps];
                            if nx {
                                gx[i * t + ti] += grow.iter().zip(&ws[base..base + taps]).map(|(a, b)| a * b).sum::<f64>();
                            }
                            if nw {
                                gw[base..base + taps].iter_mut().zip(grow).for_each(|(a, b)| *a += xv * b);
                            }
                        }
                    }
                }
                if nx {
                    add_to(&mut adj[x.0], gx.len(), |a| a.iter_mut().zip(&gx).for_each(|(p, q)| *p += q));
                }
                if nw {
                    add_to(&mut adj[w.0], gw.len(), |a| a.iter_mut().zip(&gw).for_each(|(p, q)| *p += q));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(a) {
                    add_to(&mut adj[a.0], g.len(), |ga| ga.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                }
                if needs(b) {
                    add_to(&mut adj[b.0], g.len(), |gb| gb.iter_mut().zip(g).for_each(|(p, q)| *p += sign * q));
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let bv = val(b);
                    add_to(&mut adj[a.0], g.len(), |ga| {
                        ga.iter_mut().zip(g.iter().zip(bv)).for_each(|(p, (q, r))| *p += q * r)
                    });
                }
                if needs(b) {
                    let av = val(a);
                    add_to(&mut adj[b.0], g.len(), |gb| {
                        gb.iter_mut().zip(g.iter().zip(av)).for_each(|(p, (q, r))| *p += q * r)
                    });
                }
            }
            Op::AddRowBias(x, bias) => {
                let t = self.value(x).shape()[1];
                if needs(x) {
                    add_to(&mut adj[x.0], g.len(), |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q));
                }
                if needs(bias) {
                    add_to(&mut adj[bias.0], numel(bias), |gb| {
                        for (c, gbv) in gb.iter_mut().enumerate() {
                            *gbv += g[c * t..(c + 1) * t].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::ScaleByParam(x, s) => {
                let sv = val(s)[0];
                if needs(x) {
                    add_to(&mut adj[x.0], g.len(), |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += sv * q));
                }
                if needs(s) {
                    let d: f64 = g.iter().zip(val(x)).map(|(a, b)| a * b).sum();
                    add_to(&mut adj[s.0], 1, |gs| gs[0] += d);
                }
            }
            Op::ScaleConst(x, c) => {
                add_to(&mut adj[x.0], g.len(), |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += c * q));
            }
            Op::AddConst(x) => {
                add_to(&mut adj[x.0], g.len(), |gx| gx.iter_mut().zip(g).for_each(|(p, q)| *p += q));
            }
            Op::Relu(x) => {
                let xv = val(x);
                add_to(&mut adj[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g.iter().zip(xv)).for_each(|(p, (q, v))| {
                        if *v > 0.0 {
                            *p += q
                        }
                    })
                });
            }
            Op::Prelu(x, s) => {
                let xv = val(x);
                let sv = val(s)[0];
                if needs(x) {
                    add_to(&mut adj[x.0], g.len(), |gx| {
                        gx.iter_mut()
                            .zip(g.iter().zip(xv))
                            .for_each(|(p, (q, v))| *p += if *v > 0.0 { *q } else { sv * q })
                    });
                }
                if needs(s) {
                    let d: f64 = g.iter().zip(xv).filter(|(_, v)| **v <= 0.0).map(|(q, v)| q * v).sum();
                    add_to(&mut adj[s.0], 1, |gs| gs[0] += d);
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                add_to(&mut adj[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g.iter().zip(y)).for_each(|(p, (q, s))| *p += q * s * (1.0 - s))
                });
            }
            Op::Log10(x) => {
                let xv = val(x);
                let k = std::f64::consts::LN_10;
                add_to(&mut adj[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g.iter().zip(xv)).for_each(|(p, (q, v))| *p += q / (v * k))
                });
            }
            Op::Ln(x) => {
                let xv = val(x);
                add_to(&mut adj[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g.iter().zip(xv)).for_each(|(p, (q, v))| *p += q / v)
                });
            }
            Op::Magnitude(re, im) => {
                let mag = node.value.data();
                for (part, v) in [(re, val(re)), (im, val(im))] {
                    if needs(part) {
                        add_to(&mut adj[part.0], g.len(), |gp| {
                            for i in 0..g.len() {
                                if mag[i] > 0.0 {
                                    gp[i] += g[i] * v[i] / mag[i];
                                }
                            }
                        });
                    }
                }
            }
            Op::FeatureNorm {
                x,
                gamma,
                beta,
                ref normalized,
                ref inv_std,
            } => {
                let (c, t) = self.value(x).dims2().unwrap();
                let gam = val(gamma);
                if needs(gamma) {
                    add_to(&mut adj[gamma.0], c, |gg| {
                        for ch in 0..c {
                            gg[ch] += (0..t).map(|i| g[ch * t + i] * normalized[ch * t + i]).sum::<f64>();
                        }
                    });
                }
                if needs(beta) {
                    add_to(&mut adj[beta.0], c, |gb| {
                        for ch in 0..c {
                            gb[ch] += g[ch * t..(ch + 1) * t].iter().sum::<f64>();
                        }
                    });
                }
                if needs(x) {
                    add_to(&mut adj[x.0], c * t, |gx| {
                        for ch in 0..c {
                            let gs = &g[ch * t..(ch + 1) * t];
                            let ns = &normalized[ch * t..(ch + 1) * t];
                            let mean_d = gs.iter().sum::<f64>() * gam[ch] / t as f64;
                            let mean_dn = gs.iter().zip(ns).map(|(a, b)| a * b).sum::<f64>() * gam[ch] / t as f64;
                            for i in 0..t {
                                gx[ch * t + i] += inv_std[ch] * (gam[ch] * gs[i] - mean_d - ns[i] * mean_dn);
                            }
                        }
                    });
                }
            }
            Op::ReduceSum(x) => {
                let gv = g[0];
                add_to(&mut adj[x.0], numel(x), |gx| gx.iter_mut().for_each(|p| *p += gv));
            }
            Op::ConcatRows(ref parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = numel(p);
                    if needs(p) {
                        add_to(&mut adj[p.0], n, |gp| gp.iter_mut().zip(&g[off..off + n]).for_each(|(a, b)| *a += b));
                    }
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = self.value(x).shape()[1];
                add_to(&mut adj[x.0], numel(x), |gx| {
                    gx[start * c..start * c + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
            }
            Op::SliceCols { x, start } => {
                let c = self.value(x).shape()[1];
                let (r, len) = node.value.dims2().unwrap();
                add_to(&mut adj[x.0], numel(x), |gx| {
                    for i in 0..r {
                        gx[i * c + start..i * c + start + len]
                            .iter_mut()
                            .zip(&g[i * len..(i + 1) * len])
                            .for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::OverlapAdd { x, hop, offset } => {
                let (w, t) = self.value(x).dims2().unwrap();
                let out_len = g.len();
                add_to(&mut adj[x.0], w * t, |gx| {
                    for j in 0..w {
                        for ti in 0..t {
                            let i = (ti * hop + j) as isize - offset as isize;
                            if i >= 0 && (i as usize) < out_len {
                                gx[j * t + ti] += g[i as usize];
                            }
                        }
                    }
                });
            }
            Op::Frame { x, hop, offset } => {
                let len = numel(x);
                let (w, t) = node.value.dims2().unwrap();
                add_to(&mut adj[x.0], len, |gx| {
                    for j in 0..w {
                        for ti in 0..t {
                            let i = (ti * hop + j) as isize - offset as isize;
                            if i >= 0 && (i as usize) < len {
                                gx[i as usize] += g[j * t + ti];
                            }
                        }
                    }
                });
            }
        }
    }
}

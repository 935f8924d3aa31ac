use super::{Activation, Op, Result, Tensor, TensorError};

/// Splits a `[.., T, C]` shape into (leading, T, C).
fn time_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::Parameter {
            op,
            reason: format!("expected a [.., time, channel] tensor, got {shape:?}"),
        });
    }
    let r = shape.len();
    let lead = shape[..r - 2].iter().product();
    Ok((lead, shape[r - 2], shape[r - 1]))
}

fn last_dim(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().expect("tensors have rank >= 1");
    (shape.iter().product::<usize>() / c, c)
}

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().expect("rank >= 1") = last;
    s
}

fn with_time(shape: &[usize], time: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = time;
    s
}

/// Row-major `a · b` for rank-2 operands.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(TensorError::Shape {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let out = gemm(a.values(), b.values(), m, k, n);
    Tensor::from_op("matmul", vec![m, n], out, Op::MatMul, vec![a.clone(), b.clone()])
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` where `a` is m×n and `b` is k×n.
fn gemm_bt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` where `a` is m×k and `b` is m×n.
fn gemm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Affine mixing of the last axis: `x[.., C_in] · w[C_in, C_out] + bias`.
pub fn pointwise_mix(x: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (rows, cin) = last_dim(x.shape());
    let ws = weights.shape();
    if ws.len() != 2 || ws[0] != cin {
        return Err(TensorError::Shape {
            op: "pointwise_mix",
            lhs: x.shape().to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let cout = ws[1];
    let mut out = gemm(x.values(), weights.values(), rows, cin, cout);
    let mut parents = vec![x.clone(), weights.clone()];
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(TensorError::Shape {
                op: "pointwise_mix",
                lhs: ws.to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        for row in out.chunks_mut(cout) {
            row.iter_mut().zip(b.values()).for_each(|(o, bv)| *o += bv);
        }
        parents.push(b.clone());
    }
    Tensor::from_op(
        "pointwise_mix",
        with_last(x.shape(), cout),
        out,
        Op::Mix {
            bias: bias.is_some(),
        },
        parents,
    )
}

/// Valid per-channel correlation along time: channel `c` of the output only
/// sees channel `c` of the input and column `c` of `kernels` (`[k, C]`).
pub fn depthwise_time_conv(x: &Tensor, kernels: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (lead, t, c) = time_dims("depthwise_time_conv", x.shape())?;
    let ks = kernels.shape();
    if ks.len() != 2 || ks[1] != c {
        return Err(TensorError::Shape {
            op: "depthwise_time_conv",
            lhs: x.shape().to_vec(),
            rhs: ks.to_vec(),
        });
    }
    let k = ks[0];
    if k > t {
        return Err(TensorError::InvalidWindow {
            op: "depthwise_time_conv",
            kernel: k,
            time: t,
        });
    }
    let to = t - k + 1;
    let xv = x.values();
    let kv = kernels.values();
    let mut out = vec![0.0; lead * to * c];
    for l in 0..lead {
        let xb = &xv[l * t * c..(l + 1) * t * c];
        let ob = &mut out[l * to * c..(l + 1) * to * c];
        for j in 0..k {
            let krow = &kv[j * c..(j + 1) * c];
            for ti in 0..to {
                let xrow = &xb[(ti + j) * c..(ti + j + 1) * c];
                let orow = &mut ob[ti * c..(ti + 1) * c];
                for ((o, xv), kv) in orow.iter_mut().zip(xrow).zip(krow) {
                    *o += xv * kv;
                }
            }
        }
    }
    let mut parents = vec![x.clone(), kernels.clone()];
    if let Some(b) = bias {
        if b.len() != c {
            return Err(TensorError::Shape {
                op: "depthwise_time_conv",
                lhs: ks.to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b.values()).for_each(|(o, bv)| *o += bv);
        }
        parents.push(b.clone());
    }
    Tensor::from_op(
        "depthwise_time_conv",
        with_time(x.shape(), to),
        out,
        Op::DepthwiseConv {
            bias: bias.is_some(),
        },
        parents,
    )
}

/// Zero padding along the time axis.
pub fn pad_time(x: &Tensor, before: usize, after: usize) -> Result<Tensor> {
    let (lead, t, c) = time_dims("pad_time", x.shape())?;
    let tp = t + before + after;
    let mut out = vec![0.0; lead * tp * c];
    for l in 0..lead {
        let src = &x.values()[l * t * c..(l + 1) * t * c];
        out[(l * tp + before) * c..(l * tp + before + t) * c].copy_from_slice(src);
    }
    Tensor::from_op(
        "pad_time",
        with_time(x.shape(), tp),
        out,
        Op::PadTime { before, after },
        vec![x.clone()],
    )
}

/// Non-overlapping mean pooling along time; a trailing remainder is dropped.
pub fn avg_pool_time(x: &Tensor, window: usize) -> Result<Tensor> {
    if window < 1 {
        return Err(TensorError::Parameter {
            op: "avg_pool_time",
            reason: "window must be >= 1".into(),
        });
    }
    let (lead, t, c) = time_dims("avg_pool_time", x.shape())?;
    let to = t / window;
    if to == 0 {
        return Err(TensorError::InvalidWindow {
            op: "avg_pool_time",
            kernel: window,
            time: t,
        });
    }
    let inv = 1.0 / window as f64;
    let xv = x.values();
    let mut out = vec![0.0; lead * to * c];
    for l in 0..lead {
        for p in 0..to {
            let orow = &mut out[(l * to + p) * c..(l * to + p + 1) * c];
            for i in 0..window {
                let s = (l * t + p * window + i) * c;
                orow.iter_mut()
                    .zip(&xv[s..s + c])
                    .for_each(|(o, v)| *o += v);
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
    }
    Tensor::from_op(
        "avg_pool_time",
        with_time(x.shape(), to),
        out,
        Op::AvgPoolTime { window },
        vec![x.clone()],
    )
}

/// Softmax over the last axis, with max subtraction.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.values().iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let (_, c) = last_dim(x.shape());
    let mut out = x.values().to_vec();
    for row in out.chunks_mut(c) {
        softmax_in_place(row);
    }
    Tensor::from_op("softmax", x.shape().to_vec(), out, Op::Softmax, vec![x.clone()])
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    if kind == Activation::Identity {
        return Ok(x.clone());
    }
    let out = x.values().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_op(
        "activation",
        x.shape().to_vec(),
        out,
        Op::Activation(kind),
        vec![x.clone()],
    )
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op: "add",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let out = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    Tensor::from_op("add", a.shape().to_vec(), out, Op::Add, vec![a.clone(), b.clone()])
}

/// Multiplication by a fixed constant.
pub fn scale(x: &Tensor, factor: f64) -> Result<Tensor> {
    let out = x.values().iter().map(|v| v * factor).collect();
    Tensor::from_op("scale", x.shape().to_vec(), out, Op::Scale(factor), vec![x.clone()])
}

/// Elementwise product with a constant array (dropout masks, fixed weights).
pub fn mul_const(x: &Tensor, factors: &[f64]) -> Result<Tensor> {
    if factors.len() != x.len() {
        return Err(TensorError::Shape {
            op: "mul_const",
            lhs: x.shape().to_vec(),
            rhs: vec![factors.len()],
        });
    }
    let out = x.values().iter().zip(factors).map(|(a, b)| a * b).collect();
    Tensor::from_op(
        "mul_const",
        x.shape().to_vec(),
        out,
        Op::MulConst(factors.to_vec()),
        vec![x.clone()],
    )
}

/// `Σ_k coeffs[k] · terms[k]`; all terms share one shape.
pub fn weighted_sum(coeffs: &Tensor, terms: &[Tensor]) -> Result<Tensor> {
    if terms.is_empty() || coeffs.len() != terms.len() {
        return Err(TensorError::Shape {
            op: "weighted_sum",
            lhs: coeffs.shape().to_vec(),
            rhs: vec![terms.len()],
        });
    }
    let shape = terms[0].shape().to_vec();
    let mut out = vec![0.0; terms[0].len()];
    for (t, &c) in terms.iter().zip(coeffs.values()) {
        if t.shape() != shape.as_slice() {
            return Err(TensorError::Shape {
                op: "weighted_sum",
                lhs: shape,
                rhs: t.shape().to_vec(),
            });
        }
        out.iter_mut().zip(t.values()).for_each(|(o, v)| *o += c * v);
    }
    let mut parents = vec![coeffs.clone()];
    parents.extend(terms.iter().cloned());
    Tensor::from_op("weighted_sum", shape, out, Op::WeightedSum, parents)
}

/// Gathers the listed indices of the last axis.
pub fn select_last(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (rows, c) = last_dim(x.shape());
    if indices.is_empty() || indices.iter().any(|&i| i >= c) {
        return Err(TensorError::Parameter {
            op: "select_last",
            reason: format!("indices {indices:?} invalid for last dimension {c}"),
        });
    }
    let m = indices.len();
    let xv = x.values();
    let mut out = Vec::with_capacity(rows * m);
    for r in 0..rows {
        out.extend(indices.iter().map(|&i| xv[r * c + i]));
    }
    Tensor::from_op(
        "select_last",
        with_last(x.shape(), m),
        out,
        Op::Select(indices.to_vec()),
        vec![x.clone()],
    )
}

/// Concatenates along the last axis; leading dimensions must agree.
pub fn concat_last(parts: &[Tensor]) -> Result<Tensor> {
    let Some(first) = parts.first() else {
        return Err(TensorError::Contract("concat_last of nothing".into()));
    };
    let lead = &first.shape()[..first.shape().len() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if &s[..s.len() - 1] != lead {
            return Err(TensorError::Shape {
                op: "concat_last",
                lhs: first.shape().to_vec(),
                rhs: s.to_vec(),
            });
        }
        widths.push(s[s.len() - 1]);
    }
    let total: usize = widths.iter().sum();
    let rows: usize = lead.iter().product();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.values()[r * w..(r + 1) * w]);
        }
    }
    Tensor::from_op(
        "concat_last",
        with_last(first.shape(), total),
        out,
        Op::Concat(widths),
        parts.to_vec(),
    )
}

/// For `x: [.., T, m]` and `w: [.., 1, m]`, returns `[.., T, 1]` with
/// `out[t] = Σ_j w[j] · x[t, j]` per leading index.
pub fn channel_weighted_sum(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (lead, t, m) = time_dims("channel_weighted_sum", x.shape())?;
    let (wl, wt, wm) = time_dims("channel_weighted_sum", w.shape())?;
    if wl != lead || wt != 1 || wm != m {
        return Err(TensorError::Shape {
            op: "channel_weighted_sum",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (xv, wv) = (x.values(), w.values());
    let mut out = vec![0.0; lead * t];
    for l in 0..lead {
        let wr = &wv[l * m..(l + 1) * m];
        for ti in 0..t {
            let xr = &xv[(l * t + ti) * m..(l * t + ti + 1) * m];
            out[l * t + ti] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }
    Tensor::from_op(
        "channel_weighted_sum",
        with_last(x.shape(), 1),
        out,
        Op::ChannelWeightedSum,
        vec![x.clone(), w.clone()],
    )
}

/// `x · w + b` with single-element `w` and `b`.
pub fn affine_scalar(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.len() != 1 || b.len() != 1 {
        return Err(TensorError::Shape {
            op: "affine_scalar",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (wv, bv) = (w.values()[0], b.values()[0]);
    let out = x.values().iter().map(|v| v * wv + bv).collect();
    Tensor::from_op(
        "affine_scalar",
        x.shape().to_vec(),
        out,
        Op::AffineScalar,
        vec![x.clone(), w.clone(), b.clone()],
    )
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.len() || shape.contains(&0) {
        return Err(TensorError::Shape {
            op: "reshape",
            lhs: x.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Tensor::from_op(
        "reshape",
        shape.to_vec(),
        x.values().to_vec(),
        Op::Reshape,
        vec![x.clone()],
    )
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(TensorError::Parameter {
            op: "transpose",
            reason: format!("rank-2 tensor required, got {s:?}"),
        });
    }
    let out = transpose_data(x.values(), s[0], s[1]);
    Tensor::from_op("transpose", vec![s[1], s[0]], out, Op::Transpose, vec![x.clone()])
}

fn transpose_data(v: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    out
}

pub fn sum(x: &Tensor) -> Result<Tensor> {
    Tensor::from_op("sum", vec![1], vec![x.values().iter().sum()], Op::Sum, vec![x.clone()])
}

pub fn mean(x: &Tensor) -> Result<Tensor> {
    scale(&sum(x)?, 1.0 / x.len() as f64)
}

/// Gradients of `node`'s parents given the gradient of `node`.
pub(super) fn backward(node: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let parents = node.parents();
    let want = |i: usize| parents.get(i).is_some_and(|p| p.requires_grad());
    match node.op() {
        Op::Leaf => Vec::new(),
        Op::MatMul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            vec![
                want(0).then(|| gemm_bt(g, b.values(), m, n, k)),
                want(1).then(|| gemm_at(a.values(), g, m, k, n)),
            ]
        }
        Op::Mix { bias } => {
            let (x, w) = (&parents[0], &parents[1]);
            let (rows, cin) = last_dim(x.shape());
            let cout = w.shape()[1];
            let mut out = vec![
                want(0).then(|| gemm_bt(g, w.values(), rows, cout, cin)),
                want(1).then(|| gemm_at(x.values(), g, rows, cin, cout)),
            ];
            if *bias {
                out.push(want(2).then(|| {
                    let mut gb = vec![0.0; cout];
                    for row in g.chunks(cout) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                }));
            }
            out
        }
        Op::DepthwiseConv { bias } => {
            let (x, kern) = (&parents[0], &parents[1]);
            let (lead, t, c) = time_dims("depthwise_time_conv", x.shape()).expect("checked");
            let k = kern.shape()[0];
            let to = t - k + 1;
            let (xv, kv) = (x.values(), kern.values());
            let gx = want(0).then(|| {
                let mut gx = vec![0.0; xv.len()];
                for l in 0..lead {
                    for j in 0..k {
                        let krow = &kv[j * c..(j + 1) * c];
                        for ti in 0..to {
                            let grow = &g[(l * to + ti) * c..(l * to + ti + 1) * c];
                            let s = (l * t + ti + j) * c;
                            for ((o, gv), kv) in gx[s..s + c].iter_mut().zip(grow).zip(krow) {
                                *o += gv * kv;
                            }
                        }
                    }
                }
                gx
            });
            let gk = want(1).then(|| {
                let mut gk = vec![0.0; kv.len()];
                for l in 0..lead {
                    for j in 0..k {
                        let krow = &mut gk[j * c..(j + 1) * c];
                        for ti in 0..to {
                            let grow = &g[(l * to + ti) * c..(l * to + ti + 1) * c];
                            let s = (l * t + ti + j) * c;
                            for ((o, gv), xv) in krow.iter_mut().zip(grow).zip(&xv[s..s + c]) {
                                *o += gv * xv;
                            }
                        }
                    }
                }
                gk
            });
            let mut out = vec![gx, gk];
            if *bias {
                out.push(want(2).then(|| {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                }));
            }
            out
        }
        Op::PadTime { before, after } => {
            let x = &parents[0];
            let (lead, t, c) = time_dims("pad_time", x.shape()).expect("checked");
            let tp = t + before + after;
            let mut gx = Vec::with_capacity(x.len());
            for l in 0..lead {
                gx.extend_from_slice(&g[(l * tp + before) * c..(l * tp + before + t) * c]);
            }
            vec![Some(gx)]
        }
        Op::AvgPoolTime { window } => {
            let x = &parents[0];
            let (lead, t, c) = time_dims("avg_pool_time", x.shape()).expect("checked");
            let to = t / window;
            let inv = 1.0 / *window as f64;
            let mut gx = vec![0.0; x.len()];
            for l in 0..lead {
                for p in 0..to {
                    let grow = &g[(l * to + p) * c..(l * to + p + 1) * c];
                    for i in 0..*window {
                        let s = (l * t + p * window + i) * c;
                        gx[s..s + c]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, gv)| *o = gv * inv);
                    }
                }
            }
            vec![Some(gx)]
        }
        Op::Softmax => {
            let (_, c) = last_dim(node.shape());
            let y = node.values();
            let mut gx = vec![0.0; y.len()];
            for ((gxr, yr), gr) in gx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((o, yv), gv) in gxr.iter_mut().zip(yr).zip(gr) {
                    *o = yv * (gv - dot);
                }
            }
            vec![Some(gx)]
        }
        Op::Activation(kind) => {
            let x = parents[0].values();
            vec![Some(
                x.iter()
                    .zip(g)
                    .map(|(&xv, gv)| gv * kind.derivative(xv))
                    .collect(),
            )]
        }
        Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        Op::Scale(f) => vec![Some(g.iter().map(|v| v * f).collect())],
        Op::MulConst(fs) => vec![Some(g.iter().zip(fs).map(|(a, b)| a * b).collect())],
        Op::WeightedSum => {
            let coeffs = parents[0].values();
            let mut out = Vec::with_capacity(parents.len());
            out.push(want(0).then(|| {
                parents[1..]
                    .iter()
                    .map(|t| t.values().iter().zip(g).map(|(a, b)| a * b).sum())
                    .collect()
            }));
            for (i, &c) in coeffs.iter().enumerate() {
                out.push(want(i + 1).then(|| g.iter().map(|v| v * c).collect()));
            }
            out
        }
        Op::Select(indices) => {
            let x = &parents[0];
            let (rows, c) = last_dim(x.shape());
            let m = indices.len();
            let mut gx = vec![0.0; x.len()];
            for r in 0..rows {
                for (j, &i) in indices.iter().enumerate() {
                    gx[r * c + i] += g[r * m + j];
                }
            }
            vec![Some(gx)]
        }
        Op::Concat(widths) => {
            let total: usize = widths.iter().sum();
            let rows = g.len() / total;
            let mut out: Vec<Vec<f64>> = widths
                .iter()
                .map(|w| Vec::with_capacity(rows * w))
                .collect();
            for r in 0..rows {
                let mut off = r * total;
                for (o, &w) in out.iter_mut().zip(widths) {
                    o.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            out.into_iter()
                .enumerate()
                .map(|(i, v)| want(i).then_some(v))
                .collect()
        }
        Op::ChannelWeightedSum => {
            let (x, w) = (&parents[0], &parents[1]);
            let (lead, t, m) = time_dims("channel_weighted_sum", x.shape()).expect("checked");
            let (xv, wv) = (x.values(), w.values());
            let gx = want(0).then(|| {
                let mut gx = vec![0.0; xv.len()];
                for l in 0..lead {
                    let wr = &wv[l * m..(l + 1) * m];
                    for ti in 0..t {
                        let gv = g[l * t + ti];
                        let s = (l * t + ti) * m;
                        gx[s..s + m]
                            .iter_mut()
                            .zip(wr)
                            .for_each(|(o, w)| *o = gv * w);
                    }
                }
                gx
            });
            let gw = want(1).then(|| {
                let mut gw = vec![0.0; wv.len()];
                for l in 0..lead {
                    let gwr = &mut gw[l * m..(l + 1) * m];
                    for ti in 0..t {
                        let gv = g[l * t + ti];
                        let s = (l * t + ti) * m;
                        gwr.iter_mut()
                            .zip(&xv[s..s + m])
                            .for_each(|(o, x)| *o += gv * x);
                    }
                }
                gw
            });
            vec![gx, gw]
        }
        Op::AffineScalar => {
            let (x, w) = (&parents[0], &parents[1]);
            let wv = w.values()[0];
            vec![
                want(0).then(|| g.iter().map(|v| v * wv).collect()),
                want(1).then(|| vec![x.values().iter().zip(g).map(|(a, b)| a * b).sum()]),
                want(2).then(|| vec![g.iter().sum()]),
            ]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Transpose => {
            let s = node.shape();
            vec![Some(transpose_data(g, s[0], s[1]))]
        }
        Op::Sum => vec![Some(vec![g[0]; parents[0].len()])],
        Op::Precomputed(local) => vec![Some(local.iter().map(|v| v * g[0]).collect())],
    }
}

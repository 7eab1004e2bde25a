use super::{Node, Var};
use crate::error::{Error, Result};
use crate::tensor::{
    self, conv2d_backward, numel, ConvGeometry, Scalar, Tensor,
};

pub(crate) enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulBt(usize, usize),
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeometry,
    },
    /// `(N,C,..) + b[C]`
    ChannelBias {
        x: usize,
        b: usize,
    },
    /// `Σₖ kron(A[k], F[k])`
    KronSum {
        a: usize,
        f: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    GlobalAvgPool(usize),
    Reshape(usize),
    ConcatChannels(Vec<usize>),
    SliceChannels {
        x: usize,
        start: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Upsample(usize),
    Sum(usize),
    Mean(usize),
    Bce {
        logits: usize,
        targets: Tensor<T>,
        pos_weight: T,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

/// Shape `(N, C, rest..)` viewed as `(N, C, S)`.
fn channel_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!(
            "expected at least (N,C), got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

fn softplus<T: Scalar>(z: T) -> T {
    // max(z,0) + ln(1 + e^{-|z|})
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `Σₖ kron(A[k], F[k])` for `A: (n,n,n)` and `F: (n, o, i, rest..)`.
pub(crate) fn kron_sum_forward<T: Scalar>(a: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, o, i, s) = kron_sum_dims(a.shape(), f.shape())?;
    let mut shape = vec![n * o, n * i];
    shape.extend_from_slice(&f.shape()[3..]);
    let mut w = vec![T::zero(); numel(&shape)];
    let block = i * s;
    for k in 0..n {
        for r in 0..n {
            for c in 0..n {
                let coef = a.data()[(k * n + r) * n + c];
                if coef == T::zero() {
                    continue;
                }
                for u in 0..o {
                    let dst = ((r * o + u) * n * i + c * i) * s;
                    let src = ((k * o + u) * i) * s;
                    for (d, &v) in w[dst..dst + block]
                        .iter_mut()
                        .zip(&f.data()[src..src + block])
                    {
                        *d = *d + coef * v;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(shape, w))
}

fn kron_sum_dims(a: &[usize], f: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match a {
        [n0, n1, n2] if n0 == n1 && n1 == n2 => {}
        _ => {
            return Err(Error::shape(format!(
                "kron_sum: algebra tensor must be (n,n,n), got {a:?}"
            )))
        }
    }
    if f.len() < 3 || f[0] != a[0] {
        return Err(Error::shape(format!(
            "kron_sum: filter bank must be ({}, o, i, ..), got {f:?}",
            a[0]
        )));
    }
    Ok((a[0], f[1], f[2], numel(&f[3..])))
}

fn kron_sum_backward<T: Scalar>(
    a: &Tensor<T>,
    f: &Tensor<T>,
    gw: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, o, i, s) = kron_sum_dims(a.shape(), f.shape())?;
    let block = i * s;
    let mut ga = vec![T::zero(); n * n * n];
    let mut gf = vec![T::zero(); f.len()];
    for k in 0..n {
        for r in 0..n {
            for c in 0..n {
                let coef = a.data()[(k * n + r) * n + c];
                let mut dot = T::zero();
                for u in 0..o {
                    let wpos = ((r * o + u) * n * i + c * i) * s;
                    let fpos = ((k * o + u) * i) * s;
                    let gblock = &gw.data()[wpos..wpos + block];
                    let fblock = &f.data()[fpos..fpos + block];
                    for ((&g, &fv), gfv) in gblock
                        .iter()
                        .zip(fblock)
                        .zip(&mut gf[fpos..fpos + block])
                    {
                        dot = dot + g * fv;
                        *gfv = *gfv + coef * g;
                    }
                }
                ga[(k * n + r) * n + c] = dot;
            }
        }
    }
    Ok((
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(f.shape().to_vec(), gf),
    ))
}

impl<T: Scalar> Op<T> {
    /// Gradient contributions `(parent, dL/dparent)` given `dL/dself`.
    pub(crate) fn backward(
        &self,
        nodes: &[Node<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |id: usize| &nodes[id].value;
        let needs = |id: usize| nodes[id].requires_grad;
        Ok(match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => {
                let mut v = Vec::new();
                if needs(*a) {
                    v.push((*a, g.mul(val(*b))?));
                }
                if needs(*b) {
                    v.push((*b, g.mul(val(*a))?));
                }
                v
            }
            Op::Div(a, b) => {
                let mut v = Vec::new();
                if needs(*a) {
                    v.push((*a, g.zip_map(val(*b), |g, d| g / d)?));
                }
                if needs(*b) {
                    // d(a/b)/db = -out/b
                    let t = out.zip_map(val(*b), |o, d| -o / d)?;
                    v.push((*b, g.mul(&t)?));
                }
                v
            }
            Op::Scale(a, f) => vec![(*a, g.scale(*f))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let mut v = Vec::new();
                if needs(*a) {
                    v.push((*a, g.matmul(&val(*b).transpose2d()?)?));
                }
                if needs(*b) {
                    v.push((*b, val(*a).transpose2d()?.matmul(g)?));
                }
                v
            }
            Op::MatMulBt(a, b) => {
                // out = a·bᵀ; da = g·b, db = gᵀ·a
                let mut v = Vec::new();
                if needs(*a) {
                    v.push((*a, g.matmul(val(*b))?));
                }
                if needs(*b) {
                    v.push((*b, g.transpose2d()?.matmul(val(*a))?));
                }
                v
            }
            Op::Conv2d { x, w, geom } => {
                let grads =
                    conv2d_backward(val(*x), val(*w), g, *geom, needs(*x), needs(*w))?;
                let mut v = Vec::new();
                if let Some(gx) = grads.input {
                    v.push((*x, gx));
                }
                if let Some(gw) = grads.weight {
                    v.push((*w, gw));
                }
                v
            }
            Op::ChannelBias { x, b } => {
                let mut v = vec![(*x, g.clone())];
                if needs(*b) {
                    let (n, c, s) = channel_dims(g.shape())?;
                    let mut gb = vec![T::zero(); c];
                    for bi in 0..n {
                        for (ci, acc) in gb.iter_mut().enumerate() {
                            let base = (bi * c + ci) * s;
                            *acc = *acc + g.data()[base..base + s].iter().copied().sum::<T>();
                        }
                    }
                    v.push((*b, Tensor::from_parts(vec![c], gb)));
                }
                v
            }
            Op::KronSum { a, f } => {
                let (ga, gf) = kron_sum_backward(val(*a), val(*f), g)?;
                vec![(*a, ga), (*f, gf)]
            }
            Op::Relu(x) => {
                let gx = val(*x).zip_map(g, |xv, gv| if xv > T::zero() { gv } else { T::zero() })?;
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let gx = out.zip_map(g, |y, gv| gv * y * (T::one() - y))?;
                vec![(*x, gx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, s) = channel_dims(g.shape())?;
                let m = T::of((n * s) as f64);
                let gam = val(*gamma).data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for bi in 0..n {
                    for ci in 0..c {
                        let base = (bi * c + ci) * s;
                        for j in base..base + s {
                            sum_g[ci] = sum_g[ci] + g.data()[j];
                            sum_gx[ci] = sum_gx[ci] + g.data()[j] * xhat.data()[j];
                        }
                    }
                }
                let mut v = Vec::new();
                if needs(*x) {
                    let mut gx = vec![T::zero(); g.len()];
                    for bi in 0..n {
                        for ci in 0..c {
                            let base = (bi * c + ci) * s;
                            let k = gam[ci] * inv_std[ci];
                            for j in base..base + s {
                                gx[j] = if *batch_stats {
                                    k / m
                                        * (m * g.data()[j]
                                            - sum_g[ci]
                                            - xhat.data()[j] * sum_gx[ci])
                                } else {
                                    k * g.data()[j]
                                };
                            }
                        }
                    }
                    v.push((*x, Tensor::from_parts(g.shape().to_vec(), gx)));
                }
                if needs(*gamma) {
                    v.push((*gamma, Tensor::from_parts(vec![c], sum_gx)));
                }
                if needs(*beta) {
                    v.push((*beta, Tensor::from_parts(vec![c], sum_g)));
                }
                v
            }
            Op::GlobalAvgPool(x) => {
                let (n, c, h, w) = val(*x).dims4()?;
                let inv = T::of(1.0 / (h * w) as f64);
                let mut gx = Vec::with_capacity(n * c * h * w);
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                vec![(*x, Tensor::from_parts(vec![n, c, h, w], gx))]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::ConcatChannels(parts) => {
                let mut start = 0;
                let mut v = Vec::new();
                for &p in parts {
                    let c = val(p).shape()[1];
                    if needs(p) {
                        v.push((p, g.slice_channels(start, c)?));
                    }
                    start += c;
                }
                v
            }
            Op::SliceChannels { x, start } => {
                let (n, c, h, w) = val(*x).dims4()?;
                let len = g.shape()[1];
                let plane = h * w;
                let mut gx = vec![T::zero(); n * c * plane];
                for bi in 0..n {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    gx[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                }
                vec![(*x, Tensor::from_parts(vec![n, c, h, w], gx))]
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = Tensor::zeros_like(val(*x));
                let d = gx.data_mut();
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    d[idx] = d[idx] + gv;
                }
                vec![(*x, gx)]
            }
            Op::Upsample(x) => {
                let (n, c, h, w) = val(*x).dims4()?;
                let wo = 2 * w;
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for oy in 0..2 * h {
                        for ox in 0..wo {
                            let src = g.data()[(plane * 2 * h + oy) * wo + ox];
                            let dst = plane * h * w + (oy / 2) * w + ox / 2;
                            gx[dst] = gx[dst] + src;
                        }
                    }
                }
                vec![(*x, Tensor::from_parts(vec![n, c, h, w], gx))]
            }
            Op::Sum(x) => {
                let gv = g.item()?;
                vec![(*x, Tensor::full(val(*x).shape(), gv))]
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let gv = g.item()? / T::of(xv.len() as f64);
                vec![(*x, Tensor::full(xv.shape(), gv))]
            }
            Op::Bce {
                logits,
                targets,
                pos_weight,
            } => {
                let z = val(*logits);
                let scale = g.item()? / T::of(z.len() as f64);
                let w = *pos_weight;
                let gz = z.zip_map(targets, |zv, y| {
                    let s = sigmoid(zv);
                    scale * (w * y * (s - T::one()) + (T::one() - y) * s)
                })?;
                vec![(*logits, gz)]
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, c) = probs.dims2()?;
                let scale = g.item()? / T::of(n as f64);
                let mut gz = probs.data().to_vec();
                for (row, &label) in labels.iter().enumerate() {
                    gz[row * c + label] = gz[row * c + label] - T::one();
                }
                gz.iter_mut().for_each(|v| *v = *v * scale);
                vec![(*logits, Tensor::from_parts(vec![n, c], gz))]
            }
        })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Contract("vars from different tapes".into()));
        }
        Ok(())
    }

    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.rg();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t, T>, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let rg = self.rg() || other.rg();
        self.tape.push(value, op, rg)
    }

    fn compute<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        self.with_value(f)
    }

    fn compute2<R>(&self, other: &Var<'t, T>, f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> R) -> R {
        let a = self.tape.value_ref(self.id);
        let b = self.tape.value_ref(other.id);
        f(&a, &b)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| a.add(b))?;
        Ok(self.binary(&other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| a.sub(b))?;
        Ok(self.binary(&other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| a.mul(b))?;
        Ok(self.binary(&other, v, Op::Mul(self.id, other.id)))
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| a.zip_map(b, |x, y| x / y))?;
        Ok(self.binary(&other, v, Op::Div(self.id, other.id)))
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let v = self.compute(|a| a.scale(factor));
        self.unary(v, Op::Scale(self.id, factor))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let v = self.compute(|a| a.map(|x| x + c));
        self.unary(v, Op::AddScalar(self.id))
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| a.matmul(b))?;
        Ok(self.binary(&other, v, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`, the dense-layer product for weights stored `(out, in)`.
    pub fn matmul_bt(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let v = self.compute2(&other, |a, b| -> Result<Tensor<T>> {
            let (m, k) = a.dims2()?;
            let (p, k2) = b.dims2()?;
            if k != k2 {
                return Err(Error::shape(format!(
                    "matmul_bt: {:?} x {:?}ᵀ",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = vec![T::zero(); m * p];
            T::gemm(m, k, p, T::one(), a.data(), [k, 1], b.data(), [1, k], T::zero(), &mut out, [p, 1]);
            Ok(Tensor::from_parts(vec![m, p], out))
        })?;
        Ok(self.binary(&other, v, Op::MatMulBt(self.id, other.id)))
    }

    pub fn conv2d(self, weight: Var<'t, T>, geom: ConvGeometry) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        let v = self.compute2(&weight, |x, w| tensor::conv2d(x, w, None, geom))?;
        Ok(self.binary(
            &weight,
            v,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                geom,
            },
        ))
    }

    /// Adds a per-channel bias `(C)` to `(N,C,..)`.
    pub fn add_channel_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let v = self.compute2(&bias, |x, b| -> Result<Tensor<T>> {
            let (n, c, s) = channel_dims(x.shape())?;
            if b.shape() != [c] {
                return Err(Error::shape(format!(
                    "bias {:?} for {c} channels",
                    b.shape()
                )));
            }
            let mut out = x.clone();
            let d = out.data_mut();
            for bi in 0..n {
                for ci in 0..c {
                    let bv = b.data()[ci];
                    let base = (bi * c + ci) * s;
                    d[base..base + s].iter_mut().for_each(|v| *v = *v + bv);
                }
            }
            Ok(out)
        })?;
        Ok(self.binary(&bias, v, Op::ChannelBias { x: self.id, b: bias.id }))
    }

    /// `Σₖ kron(self[k], filters[k])` with `self` the `(n,n,n)` algebra tensor.
    pub fn kron_sum(self, filters: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&filters)?;
        let v = self.compute2(&filters, kron_sum_forward)?;
        Ok(self.binary(&filters, v, Op::KronSum { a: self.id, f: filters.id }))
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        // NaN must survive so non-finite values are not masked downstream
        let v = self.compute(|x| x.map(|v| if v < T::zero() { T::zero() } else { v }));
        Ok(self.unary(v, Op::Relu(self.id)))
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let v = self.compute(|x| x.map(sigmoid));
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Per-channel normalization over `(N, spatial..)`.
    ///
    /// With `stats = None` batch statistics are used and returned as
    /// `(mean, unbiased variance)`; with `Some((mean, var))` those fixed
    /// statistics are used and nothing flows into them.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        stats: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var<'t, T>, Option<(Vec<T>, Vec<T>)>)> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        let shape = self.shape();
        let (n, c, s) = channel_dims(&shape)?;
        let check = |t: &Tensor<T>, what: &str| -> Result<()> {
            if t.shape() != [c] {
                return Err(Error::shape(format!("batch_norm {what} {:?} for {c} channels", t.shape())));
            }
            Ok(())
        };
        gamma.with_value(|t| check(t, "gamma"))?;
        beta.with_value(|t| check(t, "beta"))?;
        let m = n * s;
        let (mean, var_biased, batch) = match stats {
            Some((mu, var)) => {
                if mu.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm running statistics length"));
                }
                (mu.to_vec(), var.to_vec(), None)
            }
            None => {
                let mut mean = vec![T::zero(); c];
                let mut sq = vec![T::zero(); c];
                self.with_value(|x| {
                    for bi in 0..n {
                        for ci in 0..c {
                            let base = (bi * c + ci) * s;
                            for &v in &x.data()[base..base + s] {
                                mean[ci] = mean[ci] + v;
                            }
                        }
                    }
                    let mt = T::of(m as f64);
                    mean.iter_mut().for_each(|v| *v = *v / mt);
                    for bi in 0..n {
                        for ci in 0..c {
                            let base = (bi * c + ci) * s;
                            for &v in &x.data()[base..base + s] {
                                let d = v - mean[ci];
                                sq[ci] = sq[ci] + d * d;
                            }
                        }
                    }
                });
                let biased: Vec<T> = sq.iter().map(|&v| v / T::of(m as f64)).collect();
                let unbiased: Vec<T> = if m > 1 {
                    sq.iter().map(|&v| v / T::of((m - 1) as f64)).collect()
                } else {
                    biased.clone()
                };
                (mean.clone(), biased, Some((mean, unbiased)))
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (xhat, y) = {
            let x = self.tape.value_ref(self.id);
            let gm = self.tape.value_ref(gamma.id);
            let bt = self.tape.value_ref(beta.id);
            let mut xhat = vec![T::zero(); x.len()];
            let mut y = vec![T::zero(); x.len()];
            for bi in 0..n {
                for ci in 0..c {
                    let base = (bi * c + ci) * s;
                    for j in base..base + s {
                        let h = (x.data()[j] - mean[ci]) * inv_std[ci];
                        xhat[j] = h;
                        y[j] = gm.data()[ci] * h + bt.data()[ci];
                    }
                }
            }
            (
                Tensor::from_parts(shape.clone(), xhat),
                Tensor::from_parts(shape, y),
            )
        };
        let rg = self.rg() || gamma.rg() || beta.rg();
        let var = self.tape.push(
            y,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats: batch.is_some(),
            },
            rg,
        );
        Ok((var, batch))
    }

    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let v = self.compute(tensor::global_avg_pool)?;
        Ok(self.unary(v, Op::GlobalAvgPool(self.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.compute(|x| x.reshape(shape))?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero vars"))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let v = {
            let refs: Vec<_> = parts.iter().map(|p| first.tape.value_ref(p.id)).collect();
            let tensors: Vec<&Tensor<T>> = refs.iter().map(|r| &**r).collect();
            Tensor::concat_channels(&tensors)?
        };
        let rg = parts.iter().any(|p| p.rg());
        Ok(first
            .tape
            .push(v, Op::ConcatChannels(parts.iter().map(|p| p.id).collect()), rg))
    }

    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.compute(|x| x.slice_channels(start, len))?;
        Ok(self.unary(v, Op::SliceChannels { x: self.id, start }))
    }

    pub fn max_pool2x2(self) -> Result<Var<'t, T>> {
        let (v, argmax) = self.compute(tensor::max_pool2x2)?;
        Ok(self.unary(v, Op::MaxPool { x: self.id, argmax }))
    }

    pub fn upsample2x(self) -> Result<Var<'t, T>> {
        let v = self.compute(tensor::upsample_nearest2x)?;
        Ok(self.unary(v, Op::Upsample(self.id)))
    }

    pub fn sum(self) -> Var<'t, T> {
        let v = Tensor::scalar(self.compute(|x| x.sum()));
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, T> {
        let v = Tensor::scalar(self.compute(|x| x.mean()));
        self.unary(v, Op::Mean(self.id))
    }

    /// Mean weighted binary cross-entropy on logits, in the stable
    /// `w·y·softplus(−z) + (1−y)·softplus(z)` form.
    pub fn bce_with_logits(self, targets: &Tensor<T>, pos_weight: T) -> Result<Var<'t, T>> {
        let loss = self.compute(|z| -> Result<T> {
            if z.shape() != targets.shape() {
                return Err(Error::shape(format!(
                    "bce: logits {:?} vs targets {:?}",
                    z.shape(),
                    targets.shape()
                )));
            }
            if !z.all_finite() {
                return Err(Error::Numeric("bce: non-finite logits".into()));
            }
            let total = z
                .data()
                .iter()
                .zip(targets.data())
                .fold(T::zero(), |acc, (&zv, &y)| {
                    acc + pos_weight * y * softplus(-zv) + (T::one() - y) * softplus(zv)
                });
            Ok(total / T::of(z.len() as f64))
        })?;
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::Bce {
                logits: self.id,
                targets: targets.clone(),
                pos_weight,
            },
        ))
    }

    /// Mean negative log-softmax of the true class, logits `(N, C)`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, T>> {
        let (loss, probs) = self.compute(|z| -> Result<(T, Tensor<T>)> {
            let (n, c) = z.dims2()?;
            if labels.len() != n {
                return Err(Error::shape(format!(
                    "cross_entropy: {} labels for {n} rows",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                return Err(Error::Contract(format!(
                    "label {bad} out of range for {c} classes"
                )));
            }
            if !z.all_finite() {
                return Err(Error::Numeric("cross_entropy: non-finite logits".into()));
            }
            let mut probs = vec![T::zero(); n * c];
            let mut total = T::zero();
            for (row, &label) in labels.iter().enumerate() {
                let zr = &z.data()[row * c..(row + 1) * c];
                let mx = zr.iter().copied().fold(T::neg_infinity(), T::max);
                let denom: T = zr.iter().map(|&v| (v - mx).exp()).sum();
                let lse = mx + denom.ln();
                total = total + lse - zr[label];
                for (p, &v) in probs[row * c..(row + 1) * c].iter_mut().zip(zr) {
                    *p = (v - lse).exp();
                }
            }
            Ok((total / T::of(n as f64), Tensor::from_parts(vec![n, c], probs)))
        })?;
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }
}

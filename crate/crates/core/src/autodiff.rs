//! A small tape-based reverse-mode automatic differentiation engine.
//!
//! Parameters live in a [`ParamStore`]; a [`Graph`] is rebuilt for every
//! forward pass and records each op with its inputs. [`Graph::backward`]
//! walks the tape in reverse and accumulates `d loss / d param` into the
//! `grad` buffers of the store. Values are `f64` throughout so gradient
//! checks and gradient-combination identities hold to tight tolerances.

use crate::error::{invalid, mismatch, Result};

/// Dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(mismatch!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            ));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Resets every gradient buffer to zeros.
    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = Some(vec![0.0; t.values.len()]);
        }
    }

    /// Concatenated gradients of `ids`, in order. Missing buffers read as 0.
    pub fn flat_grad(&self, ids: &[ParamId]) -> Vec<f64> {
        let mut out = Vec::new();
        for id in ids {
            let t = &self.tensors[id.0];
            match &t.grad {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, t.len())),
            }
        }
        out
    }

    pub fn flat_values(&self, ids: &[ParamId]) -> Vec<f64> {
        ids.iter()
            .flat_map(|id| self.tensors[id.0].values.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    /// Input `[cin, h, w]`, kernel `[cout, cin, k, k]`, bias `[cout]`.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    Relu(NodeId),
    /// `[c, h, w] -> [c]`.
    GlobalAvgPool(NodeId),
    /// `w: [out, in]`, `b: [out]`, `x: [in] -> [out]`.
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    SmoothL1 {
        pred: NodeId,
        target: f64,
        beta: f64,
    },
    /// Elementwise mean of equally-shaped nodes.
    Mean(Vec<NodeId>),
    /// Sum of scalar nodes with constant coefficients.
    WeightedSum(Vec<(NodeId, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// The forward tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Smooth-L1 (Huber with slope-normalized quadratic part):
/// `r^2 / (2 beta)` for `|r| < beta`, else `|r| - beta / 2`.
pub fn smooth_l1(pred: f64, target: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid!("smooth-L1 beta must be > 0, got {beta}"));
    }
    Ok(smooth_l1_value(pred - target, beta))
}

fn smooth_l1_value(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r * r / (2.0 * beta)
    } else {
        r.abs() - beta / 2.0
    }
}

/// Derivative of smooth-L1 with respect to the prediction.
pub fn smooth_l1_grad(r: f64, beta: f64) -> f64 {
    if r.abs() < beta {
        r / beta
    } else {
        r.signum()
    }
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { shape, value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| invalid!("node {} is not part of this graph", id.0))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn input(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(t.shape, t.values, Op::Input))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.get(id);
        self.push(t.shape.clone(), t.values.clone(), Op::Param(id))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (is, ks, bs) = (
            self.node(input)?.shape.clone(),
            self.node(kernel)?.shape.clone(),
            self.node(bias)?.shape.clone(),
        );
        if is.len() != 3 || ks.len() != 4 || ks[2] != ks[3] || ks[1] != is[0] || bs != [ks[0]] {
            return Err(mismatch!(
                "conv2d shapes input {is:?} kernel {ks:?} bias {bs:?}"
            ));
        }
        if stride == 0 || is[1] + 2 * pad < ks[2] || is[2] + 2 * pad < ks[2] {
            return Err(invalid!(
                "conv2d geometry: input {is:?} kernel {ks:?} stride {stride} pad {pad}"
            ));
        }
        let (cin, h, w) = (is[0], is[1], is[2]);
        let (cout, k) = (ks[0], ks[2]);
        let (oh, ow) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
        let x = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bv[co]);
            for ci in 0..cin {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = kv[((co * cin + ci) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * w..(iy as usize + 1) * w];
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    plane[oy * ow + ox] += wt * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![cout, oh, ow],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.node(a)?;
        let (shape, value) = (
            n.shape.clone(),
            n.value.iter().map(|v| v.max(0.0)).collect(),
        );
        Ok(self.push(shape, value, Op::Relu(a)))
    }

    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.node(a)?;
        if n.shape.len() != 3 {
            return Err(mismatch!(
                "global_avg_pool expects [c, h, w], got {:?}",
                n.shape
            ));
        }
        let (c, hw) = (n.shape[0], n.shape[1] * n.shape[2]);
        let value = (0..c)
            .map(|i| n.value[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push(vec![c], value, Op::GlobalAvgPool(a)))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            &self.node(x)?.shape,
            &self.node(w)?.shape,
            &self.node(b)?.shape,
        );
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs.as_slice() != [ws[0]] {
            return Err(mismatch!("linear shapes x {xs:?} w {ws:?} b {bs:?}"));
        }
        let (o, i) = (ws[0], ws[1]);
        let (xv, wv, bv) = (
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
        );
        let value = (0..o)
            .map(|r| {
                bv[r]
                    + wv[r * i..(r + 1) * i]
                        .iter()
                        .zip(xv)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        Ok(self.push(vec![o], value, Op::Linear { x, w, b }))
    }

    pub fn smooth_l1(&mut self, pred: NodeId, target: f64, beta: f64) -> Result<NodeId> {
        let n = self.node(pred)?;
        if n.value.len() != 1 {
            return Err(mismatch!(
                "smooth_l1 expects a scalar prediction, got {:?}",
                n.shape
            ));
        }
        let v = smooth_l1(n.value[0], target, beta)?;
        Ok(self.push(vec![1], vec![v], Op::SmoothL1 { pred, target, beta }))
    }

    /// Elementwise arithmetic mean of equally shaped nodes.
    pub fn mean(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = items
            .first()
            .ok_or_else(|| invalid!("mean of zero nodes"))?;
        let shape = self.node(*first)?.shape.clone();
        let mut acc = vec![0.0; self.nodes[first.0].value.len()];
        for id in items {
            let n = self.node(*id)?;
            if n.shape != shape {
                return Err(mismatch!("mean over shapes {:?} and {:?}", shape, n.shape));
            }
            acc.iter_mut().zip(&n.value).for_each(|(a, v)| *a += v);
        }
        let k = items.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(self.push(shape, acc, Op::Mean(items.to_vec())))
    }

    /// `sum_i c_i * node_i` over scalar nodes; the coefficients are
    /// constants and receive no gradient.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        if terms.is_empty() {
            return Err(invalid!("weighted sum of zero terms"));
        }
        let mut total = 0.0;
        for (id, c) in terms {
            let n = self.node(*id)?;
            if n.value.len() != 1 {
                return Err(mismatch!(
                    "weighted_sum expects scalar nodes, got {:?}",
                    n.shape
                ));
            }
            total += c * n.value[0];
        }
        Ok(self.push(vec![1], vec![total], Op::WeightedSum(terms.to_vec())))
    }

    /// Backpropagates from scalar `loss` and adds `d loss / d param` into
    /// the gradient buffers of `store` (allocated as zeros when absent).
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        let node = self.node(loss)?;
        if node.value.len() != 1 {
            return Err(invalid!(
                "backward needs a scalar loss, got shape {:?}",
                node.shape
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let t = store.get_mut(*pid);
                    let buf = t.grad.get_or_insert_with(|| vec![0.0; t.values.len()]);
                    buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v);
                }
                Op::Relu(a) => {
                    let a_val = &self.nodes[a.0].value;
                    let ga = accum(&mut grads, *a, a_val.len());
                    for ((d, x), gv) in ga.iter_mut().zip(a_val).zip(&g) {
                        if *x > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::GlobalAvgPool(a) => {
                    let s = &self.nodes[a.0].shape;
                    let hw = s[1] * s[2];
                    let ga = accum(&mut grads, *a, s[0] * hw);
                    for (c, gv) in g.iter().enumerate() {
                        let share = gv / hw as f64;
                        ga[c * hw..(c + 1) * hw]
                            .iter_mut()
                            .for_each(|d| *d += share);
                    }
                }
                Op::Linear { x, w, b } => {
                    let ws = &self.nodes[w.0].shape;
                    let (o, i) = (ws[0], ws[1]);
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    {
                        let gx = accum(&mut grads, *x, i);
                        for r in 0..o {
                            let row = &wv[r * i..(r + 1) * i];
                            gx.iter_mut().zip(row).for_each(|(d, wt)| *d += g[r] * wt);
                        }
                    }
                    {
                        let gw = accum(&mut grads, *w, o * i);
                        for r in 0..o {
                            gw[r * i..(r + 1) * i]
                                .iter_mut()
                                .zip(xv)
                                .for_each(|(d, xv)| *d += g[r] * xv);
                        }
                    }
                    let gb = accum(&mut grads, *b, o);
                    gb.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    pad,
                } => self.conv2d_backward(&mut grads, &g, *input, *kernel, *bias, *stride, *pad),
                Op::SmoothL1 { pred, target, beta } => {
                    let r = self.nodes[pred.0].value[0] - target;
                    let gp = accum(&mut grads, *pred, 1);
                    gp[0] += g[0] * smooth_l1_grad(r, *beta);
                }
                Op::Mean(items) => {
                    let k = items.len() as f64;
                    for id in items {
                        let gi = accum(&mut grads, *id, g.len());
                        gi.iter_mut().zip(&g).for_each(|(d, v)| *d += v / k);
                    }
                }
                Op::WeightedSum(terms) => {
                    for (id, c) in terms {
                        let gi = accum(&mut grads, *id, 1);
                        gi[0] += c * g[0];
                    }
                }
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) {
        let is = &self.nodes[input.0].shape;
        let ks = &self.nodes[kernel.0].shape;
        let (cin, h, w) = (is[0], is[1], is[2]);
        let (cout, k) = (ks[0], ks[2]);
        let (oh, ow) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
        let x = &self.nodes[input.0].value;
        let kv = &self.nodes[kernel.0].value;

        {
            let gb = accum(grads, bias, cout);
            for co in 0..cout {
                gb[co] += g[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
            }
        }
        // The input of the first layer is a constant frame; skip its gradient.
        let input_needs_grad = !matches!(self.nodes[input.0].op, Op::Input);
        let mut gk = vec![0.0; kv.len()];
        let mut gx = if input_needs_grad {
            vec![0.0; x.len()]
        } else {
            Vec::new()
        };
        for co in 0..cout {
            let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..cin {
                let xin = &x[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let kidx = ((co * cin + ci) * k + ky) * k + kx;
                        let wt = kv[kidx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = ci * h * w + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    let gv = gplane[oy * ow + ox];
                                    acc += gv * xin[iy as usize * w + ix as usize];
                                    if input_needs_grad {
                                        gx[base + ix as usize] += gv * wt;
                                    }
                                }
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
        let gkb = accum(grads, kernel, kv.len());
        gkb.iter_mut().zip(&gk).for_each(|(d, v)| *d += v);
        if input_needs_grad {
            let gxb = accum(grads, input, x.len());
            gxb.iter_mut().zip(&gx).for_each(|(d, v)| *d += v);
        }
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

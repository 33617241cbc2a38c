use super::conv::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `den` holds the guarded denominators actually used; `guarded` marks
    /// entries that were shifted away from zero.
    Div {
        num: Var,
        den_var: Var,
        den: Vec<f64>,
        guarded: Vec<bool>,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Exp(Var),
    Log {
        input: Var,
        clamped: Vec<bool>,
    },
    Relu(Var),
    Clamp01(Var),
    Pow(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Matmul(Var, Var),
    ConcatChannels(Vec<Var>),
    AvgPool2(Var),
    UpsampleNearest2(Var),
    GlobalAvgPool(Var),
    Cosine(Var, Var),
    GaussianBlur {
        input: Var,
        kernel: Vec<f64>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    },
    Sort {
        input: Var,
        perm: Vec<usize>,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Recording of a forward computation; nodes are stored in creation order,
/// which is a valid topological order.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    pub(crate) warnings: usize,
}

pub(crate) const EPS: f64 = 1e-8;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of numerically guarded events (ε-shifted divisions and logs,
    /// NaNs met while sorting) since the tape was created.
    pub fn warnings(&self) -> usize {
        self.warnings
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v), g.to_vec()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Reverse pass from a scalar root. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "backward root {} is not on this tape",
                root.0
            )));
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.acc_broadcast(adj, *a, g, |x| x);
                self.acc_broadcast(adj, *b, g, |x| x);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(adj, *a, g, |x| x);
                self.acc_broadcast(adj, *b, g, |x| -x);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let prod: Vec<f64> = (0..g.len()).map(|j| g[j] * at(bv, j)).collect();
                    self.acc_broadcast(adj, *a, &prod, |x| x);
                }
                if self.requires_grad(*b) {
                    let prod: Vec<f64> = (0..g.len()).map(|j| g[j] * at(av, j)).collect();
                    self.acc_broadcast(adj, *b, &prod, |x| x);
                }
            }
            Op::Div {
                num,
                den_var,
                den,
                guarded,
            } => {
                let nv = self.value(*num).data();
                if self.requires_grad(*num) {
                    let d: Vec<f64> = (0..g.len()).map(|j| g[j] / at(den, j)).collect();
                    self.acc_broadcast(adj, *num, &d, |x| x);
                }
                if self.requires_grad(*den_var) {
                    let d: Vec<f64> = (0..g.len())
                        .map(|j| {
                            if at_b(guarded, j) {
                                0.0
                            } else {
                                let q = at(den, j);
                                -g[j] * at(nv, j) / (q * q)
                            }
                        })
                        .collect();
                    self.acc_broadcast(adj, *den_var, &d, |x| x);
                }
            }
            Op::Scale(a, s) => self.acc_map(adj, *a, |j| g[j] * s),
            Op::AddScalar(a) => self.acc_map(adj, *a, |j| g[j]),
            Op::Abs(a) => {
                let x = self.value(*a).data();
                self.acc_map(adj, *a, |j| g[j] * sign(x[j]))
            }
            Op::Exp(a) => self.acc_map(adj, *a, |j| g[j] * out[j]),
            Op::Log { input, clamped } => {
                let x = self.value(*input).data();
                self.acc_map(adj, *input, |j| if clamped[j] { 0.0 } else { g[j] / x[j] })
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc_map(adj, *a, |j| if x[j] > 0.0 { g[j] } else { 0.0 })
            }
            Op::Clamp01(a) => {
                let x = self.value(*a).data();
                self.acc_map(
                    adj,
                    *a,
                    |j| {
                        if x[j] > 0.0 && x[j] < 1.0 {
                            g[j]
                        } else {
                            0.0
                        }
                    },
                )
            }
            Op::Pow(a, p) => {
                let x = self.value(*a).data();
                self.acc_map(adj, *a, |j| {
                    if x[j] > 0.0 {
                        g[j] * p * x[j].powf(p - 1.0)
                    } else {
                        0.0
                    }
                })
            }
            Op::Sum(a) => self.acc_map(adj, *a, |_| g[0]),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                self.acc_map(adj, *a, |_| g[0] / n)
            }
            Op::Reshape(a) => self.acc_map(adj, *a, |j| g[j]),
            Op::Matmul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    acc_with(adj, *a, m * k, |dst| {
                        conv::gemm(m, n, k, g, false, bv, true, 1.0, dst)
                    });
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    acc_with(adj, *b, k * n, |dst| {
                        conv::gemm(k, m, n, av, true, g, false, 1.0, dst)
                    });
                }
            }
            Op::ConcatChannels(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        let slice = &g[offset..offset + len];
                        acc_with(adj, *p, len, |dst| {
                            dst.iter_mut().zip(slice).for_each(|(d, s)| *d += s)
                        });
                    }
                    offset += len;
                }
            }
            Op::AvgPool2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("rank checked at record time");
                let (ho, wo) = (h / 2, w / 2);
                acc_with(adj, *a, c * h * w, |dst| {
                    for ch in 0..c {
                        for y in 0..ho {
                            for x in 0..wo {
                                let v = 0.25 * g[(ch * ho + y) * wo + x];
                                let base = (ch * h + 2 * y) * w + 2 * x;
                                dst[base] += v;
                                dst[base + 1] += v;
                                dst[base + w] += v;
                                dst[base + w + 1] += v;
                            }
                        }
                    }
                });
            }
            Op::UpsampleNearest2(a) => {
                let (c, h, w) = self.value(*a).chw().expect("rank checked at record time");
                let wo = 2 * w;
                acc_with(adj, *a, c * h * w, |dst| {
                    for ch in 0..c {
                        for y in 0..h {
                            for x in 0..w {
                                let base = (ch * 2 * h + 2 * y) * wo + 2 * x;
                                dst[(ch * h + y) * w + x] +=
                                    g[base] + g[base + 1] + g[base + wo] + g[base + wo + 1];
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(a) => {
                let (c, h, w) = self.value(*a).chw().expect("rank checked at record time");
                let inv = 1.0 / (h * w) as f64;
                self.acc_map(adj, *a, |j| g[j / (h * w)] * inv);
                debug_assert_eq!(g.len(), c);
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
                let d = na * nb + EPS;
                // d cos / d a = b/d − dot·nb·a/(na·d²)
                let grad_side = |x: &[f64], y: &[f64], nx: f64, ny: f64| -> Vec<f64> {
                    let coeff = if nx > 0.0 {
                        dot * ny / (nx * d * d)
                    } else {
                        0.0
                    };
                    x.iter()
                        .zip(y)
                        .map(|(xi, yi)| g[0] * (yi / d - coeff * xi))
                        .collect()
                };
                if self.requires_grad(*a) {
                    let ga = grad_side(av, bv, na, nb);
                    self.acc_broadcast(adj, *a, &ga, |x| x);
                }
                if self.requires_grad(*b) {
                    let gb = grad_side(bv, av, nb, na);
                    self.acc_broadcast(adj, *b, &gb, |x| x);
                }
            }
            Op::GaussianBlur { input, kernel } => {
                let (c, h, w) = self
                    .value(*input)
                    .chw()
                    .expect("rank checked at record time");
                acc_with(adj, *input, c * h * w, |dst| {
                    conv::blur_valid_adjoint_add(g, c, h, w, kernel, dst)
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let c_out = self.shape(*weight)[0];
                let (kk, n) = (geom.patch_len(), geom.out_len());
                let x = self.value(*input).data();
                let cols_owned;
                let cols: &[f64] = if geom.is_pointwise() {
                    x
                } else {
                    cols_owned = conv::im2col(x, geom);
                    &cols_owned
                };
                if self.requires_grad(*weight) {
                    acc_with(adj, *weight, c_out * kk, |dst| {
                        conv::gemm(c_out, n, kk, g, false, cols, true, 1.0, dst)
                    });
                }
                if let Some(b) = bias {
                    if self.requires_grad(*b) {
                        acc_with(adj, *b, c_out, |dst| {
                            for (co, d) in dst.iter_mut().enumerate() {
                                *d += g[co * n..(co + 1) * n].iter().sum::<f64>();
                            }
                        });
                    }
                }
                if self.requires_grad(*input) {
                    let wv = self.value(*weight).data();
                    let in_len = geom.c_in * geom.h * geom.w;
                    if geom.is_pointwise() {
                        acc_with(adj, *input, in_len, |dst| {
                            conv::gemm(kk, c_out, n, wv, true, g, false, 1.0, dst)
                        });
                    } else {
                        let mut dcols = vec![0.0; kk * n];
                        conv::gemm(kk, c_out, n, wv, true, g, false, 0.0, &mut dcols);
                        acc_with(adj, *input, in_len, |dst| {
                            conv::col2im_add(&dcols, geom, dst)
                        });
                    }
                }
            }
            Op::Sort { input, perm } => {
                let len = perm.len();
                acc_with(adj, *input, len, |dst| {
                    let l = *self.shape(*input).last().expect("rank ≥ 1");
                    for (j, &p) in perm.iter().enumerate() {
                        let row = j / l;
                        dst[row * l + p] += g[j];
                    }
                });
            }
        }
    }

    fn acc_map(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.requires_grad(v) {
            return;
        }
        let len = self.value(v).numel();
        acc_with(adj, v, len, |dst| {
            dst.iter_mut().enumerate().for_each(|(j, d)| *d += f(j))
        });
    }

    /// Accumulate `g` (shaped like the op output) into `v`, summing when `v`
    /// is a broadcast scalar.
    fn acc_broadcast(
        &self,
        adj: &mut [Option<Vec<f64>>],
        v: Var,
        g: &[f64],
        f: impl Fn(f64) -> f64,
    ) {
        if !self.requires_grad(v) {
            return;
        }
        let len = self.value(v).numel();
        if len == g.len() {
            acc_with(adj, v, len, |dst| {
                dst.iter_mut().zip(g).for_each(|(d, x)| *d += f(*x))
            });
        } else {
            debug_assert_eq!(len, 1);
            let total: f64 = g.iter().map(|x| f(*x)).sum();
            acc_with(adj, v, 1, |dst| dst[0] += total);
        }
    }
}

fn acc_with(adj: &mut [Option<Vec<f64>>], v: Var, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Index into a possibly-broadcast (length-1) operand.
#[inline]
pub(crate) fn at(x: &[f64], j: usize) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x[j]
    }
}

#[inline]
fn at_b(x: &[bool], j: usize) -> bool {
    if x.len() == 1 {
        x[0]
    } else {
        x[j]
    }
}

/// Subgradient of `|x|`, zero at the kink.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

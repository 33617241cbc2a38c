//! Forward rules of the op catalog. Each method records one node.

use std::cmp::Ordering;

use super::conv::{self, ConvGeometry};
use super::tape::{at, Op, Tape, Var, EPS};
use super::Tensor;
use crate::error::{Error, Result};

impl Tape {
    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    /// Shape of a binary elementwise result. Operands must match, or one of
    /// them must be a single element.
    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.numel() == 1 {
            Ok(sa.shape().to_vec())
        } else if sa.numel() == 1 {
            Ok(sb.shape().to_vec())
        } else {
            Err(Error::Dimension(format!(
                "{what}: shapes {:?} and {:?} are not compatible",
                sa.shape(),
                sb.shape()
            )))
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, what)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n).map(|j| f(at(av, j), at(bv, j))).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(&shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// `a / b`; denominators with `|b| < ε` are shifted to `±ε` and counted
    /// as warnings.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast_shape(a, b, "div")?;
        let mut guarded = Vec::with_capacity(self.value(b).numel());
        let den: Vec<f64> = self
            .value(b)
            .data()
            .iter()
            .map(|&d| {
                let small = d.abs() < EPS;
                guarded.push(small);
                if small {
                    if d < 0.0 {
                        -EPS
                    } else {
                        EPS
                    }
                } else {
                    d
                }
            })
            .collect();
        self.warnings += guarded.iter().filter(|g| **g).count();
        let av = self.value(a).data();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|j| at(av, j) / at(&den, j)).collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let op = Op::Div {
            num: a,
            den_var: b,
            den,
            guarded,
        };
        Ok(self.push(Tensor::new(&shape, data)?, op, rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log; inputs below ε are clamped to ε (zero gradient there) and
    /// counted as warnings.
    pub fn log(&mut self, a: Var) -> Var {
        let clamped: Vec<bool> = self.value(a).data().iter().map(|&x| !(x >= EPS)).collect();
        self.warnings += clamped.iter().filter(|c| **c).count();
        let value = self
            .value(a)
            .map(|x| if x >= EPS { x.ln() } else { EPS.ln() });
        let rg = self.requires_grad(a);
        self.push(value, Op::Log { input: a, clamped }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        self.unary(a, Op::Clamp01(a), |x| x.clamp(0.0, 1.0))
    }

    /// `x^p` for positive `x`; non-positive inputs map to 0 with zero gradient.
    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Pow(a, p), |x| if x > 0.0 { x.powf(p) } else { 0.0 })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Dimension(format!(
                    "matmul: incompatible shapes {sa:?} × {sb:?}"
                )))
            }
        };
        let mut out = vec![0.0; m * n];
        conv::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut out,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::Matmul(a, b), rg))
    }

    /// Stack `C_i×H×W` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_channels needs at least one input".into()))?;
        let (_, h, w) = self.value(*first).chw()?;
        let mut channels = 0;
        for p in parts {
            let (c, ph, pw) = self.value(*p).chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::Dimension(format!(
                    "concat_channels: spatial size {ph}×{pw} differs from {h}×{w}"
                )));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.requires_grad(*p));
        Ok(self.push(
            Tensor::new(&[channels, h, w], data)?,
            Op::ConcatChannels(parts.to_vec()),
            rg,
        ))
    }

    /// 2×2 average pooling with stride 2; a trailing odd row/column is dropped.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let (ho, wo) = (h / 2, w / 2);
        if ho == 0 || wo == 0 {
            return Err(Error::Dimension(format!(
                "avgpool2: input {h}×{w} too small"
            )));
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let base = (ch * h + 2 * y) * w + 2 * xx;
                    out[(ch * ho + y) * wo + xx] =
                        0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::AvgPool2(a), rg))
    }

    pub fn upsample_nearest2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let x = self.value(a).data();
        let wo = 2 * w;
        let mut out = vec![0.0; c * 4 * h * w];
        for ch in 0..c {
            for y in 0..2 * h {
                let src = &x[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let dst = &mut out[(ch * 2 * h + y) * wo..(ch * 2 * h + y + 1) * wo];
                for (xx, d) in dst.iter_mut().enumerate() {
                    *d = src[xx / 2];
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor::new(&[c, 2 * h, 2 * w], out)?,
            Op::UpsampleNearest2(a),
            rg,
        ))
    }

    /// Spatial mean of every channel: `C×H×W → [C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        let x = self.value(a).data();
        let out = (0..c)
            .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(&[c], out)?, Op::GlobalAvgPool(a), rg))
    }

    /// `⟨a,b⟩ / (‖a‖·‖b‖ + ε)` over the flattened tensors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if av.len() != bv.len() {
            return Err(Error::Dimension(format!(
                "cosine_similarity: {} vs {} elements",
                av.len(),
                bv.len()
            )));
        }
        let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::scalar(dot / (na * nb + EPS)), Op::Cosine(a, b), rg))
    }

    /// Depthwise "valid" Gaussian blur of a `C×H×W` tensor.
    pub fn gaussian_blur(&mut self, a: Var, window: usize, sigma: f64) -> Result<Var> {
        let (c, h, w) = self.value(a).chw()?;
        if window.is_multiple_of(2) || window > h || window > w {
            return Err(Error::Dimension(format!(
                "gaussian_blur: window {window} must be odd and fit in {h}×{w}"
            )));
        }
        let kernel = conv::gaussian_window(window, sigma);
        let out = conv::blur_valid(self.value(a).data(), c, h, w, &kernel);
        let rg = self.requires_grad(a);
        let shape = [c, h + 1 - window, w + 1 - window];
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::GaussianBlur { input: a, kernel },
            rg,
        ))
    }

    /// 2-D cross-correlation of a `C_in×H×W` input with a
    /// `C_out×C_in×k×k` weight, zero padding, optional per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let (c_out, k) = match *self.shape(weight) {
            [co, ci, k1, k2] if ci == c_in && k1 == k2 => (co, k1),
            ref s => {
                return Err(Error::Dimension(format!(
                    "conv2d: weight {s:?} incompatible with input of {c_in} channels"
                )))
            }
        };
        if k % 2 == 0 || stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::Dimension(format!(
                "conv2d: kernel {k}, stride {stride}, padding {padding} invalid for {h}×{w}"
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::Dimension(format!(
                    "conv2d: bias {:?} does not match {c_out} output channels",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeometry::new(c_in, h, w, k, stride, padding);
        let n = geom.out_len();
        let mut out = vec![0.0; c_out * n];
        if let Some(b) = bias {
            for (co, chunk) in out.chunks_mut(n).enumerate() {
                chunk.fill(self.value(b).data()[co]);
            }
        }
        let x = self.value(input).data();
        let wv = self.value(weight).data();
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        if geom.is_pointwise() {
            conv::gemm(
                c_out,
                geom.patch_len(),
                n,
                wv,
                false,
                x,
                false,
                beta,
                &mut out,
            );
        } else {
            let cols = conv::im2col(x, &geom);
            conv::gemm(
                c_out,
                geom.patch_len(),
                n,
                wv,
                false,
                &cols,
                false,
                beta,
                &mut out,
            );
        }
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.is_some_and(|b| self.requires_grad(b));
        let shape = [c_out, geom.h_out, geom.w_out];
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Stable ascending sort along the last axis. Returns the sorted values
    /// and, per row, the source index of every sorted element. NaNs sort last
    /// and are counted as warnings.
    pub fn sort_lastdim(&mut self, a: Var) -> (Var, Vec<usize>) {
        let t = self.value(a);
        let l = *t.shape().last().expect("rank ≥ 1");
        let x = t.data();
        let mut nans = 0;
        let mut perm = Vec::with_capacity(x.len());
        let mut data = Vec::with_capacity(x.len());
        for row in x.chunks(l) {
            nans += row.iter().filter(|v| v.is_nan()).count();
            let mut idx: Vec<usize> = (0..l).collect();
            idx.sort_by(|&i, &j| nan_last(row[i], row[j]));
            data.extend(idx.iter().map(|&i| row[i]));
            perm.extend_from_slice(&idx);
        }
        let shape = t.shape().to_vec();
        self.warnings += nans;
        let rg = self.requires_grad(a);
        let v = self.push(
            Tensor::new(&shape, data).expect("same shape"),
            Op::Sort {
                input: a,
                perm: perm.clone(),
            },
            rg,
        );
        (v, perm)
    }
}

fn nan_last(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (false, false) => a.partial_cmp(&b).expect("non-NaN"),
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (true, true) => Ordering::Equal,
    }
}

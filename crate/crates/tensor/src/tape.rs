use crate::kernels::{self, ConvGeom, Padding};
use crate::params::{ParamId, ParamSet};
use crate::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        din: usize,
        dout: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddN(Vec<Var>),
    Elu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Glu {
        x: Var,
        half: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        total: usize,
    },
    Slice {
        x: Var,
        start: usize,
        len: usize,
        width: usize,
    },
    Reshape(Var),
    SumSpatial {
        x: Var,
        channels: usize,
    },
    Broadcast {
        x: Var,
        cells: usize,
    },
    Upsample {
        x: Var,
        h: usize,
        w: usize,
        c: usize,
        factor: usize,
        oh: usize,
        ow: usize,
    },
    Subsample {
        x: Var,
        w: usize,
        c: usize,
        stride: usize,
        oh: usize,
        ow: usize,
    },
    SumAll(Var),
    MeanAll(Var),
    Huber {
        pred: Var,
        target: Vec<T>,
        delta: T,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for a single reverse pass.
///
/// Nodes are appended in evaluation order, so every parent index is smaller
/// than its child's and the reverse sweep is a topological order by
/// construction.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for each bound parameter, zero-filled when the parameter did
    /// not influence the output.
    pub fn for_params(&self, bound: &[Var], params: &ParamSet<T>) -> Vec<Vec<T>> {
        bound
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| match self.get(v) {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.len()],
            })
            .collect()
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::shape(op, a, b));
    }
    Ok(())
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    shape
        .last()
        .copied()
        .ok_or_else(|| TensorError::invalid(op, "rank-0 input has no channel axis"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Places a tensor on the tape; it is differentiated iff `requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds every parameter of `params` as a differentiable leaf. The result
    /// is indexed by [`ParamId`].
    pub fn bind(&mut self, params: &ParamSet<T>) -> Vec<Var> {
        params
            .tensors()
            .iter()
            .map(|t| self.push(t.clone(), Op::Leaf, true))
            .collect()
    }

    /// Binds every parameter as a constant, for inference without gradients.
    pub fn bind_constant(&mut self, params: &ParamSet<T>) -> Vec<Var> {
        params
            .tensors()
            .iter()
            .map(|t| self.push(t.clone(), Op::Leaf, false))
            .collect()
    }

    pub fn param(bound: &[Var], id: ParamId) -> Var {
        bound[id.index()]
    }

    /// Cross-correlation of `x: [H, W, Cin]` with `w: [kh, kw, Cin, Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: Padding) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 3 {
            return Err(TensorError::shape("conv2d", "[H, W, Cin]", xs));
        }
        if ws.len() != 4 || ws[2] != xs[2] {
            return Err(TensorError::shape("conv2d", format!("[kh, kw, {}, Cout]", xs[2]), ws));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be positive"));
        }
        let (h, wd, cin) = (xs[0], xs[1], xs[2]);
        let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
        if let Some(b) = b {
            check_same("conv2d bias", &[cout], self.shape(b))?;
        }
        let oh = kernels::conv_output_dim(h, pad.top + pad.bottom, kh, stride)
            .ok_or_else(|| TensorError::invalid("conv2d", "kernel larger than padded input"))?;
        let ow = kernels::conv_output_dim(wd, pad.left + pad.right, kw, stride)
            .ok_or_else(|| TensorError::invalid("conv2d", "kernel larger than padded input"))?;
        let geom = ConvGeom {
            h,
            w: wd,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            oh,
            ow,
        };
        let mut out = vec![T::zero(); oh * ow * cout];
        kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[oh, ow, cout], out)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Dense layer over the last axis: `[.., In] x [In, Out] -> [.., Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        let din = last_dim("linear", &xs)?;
        if ws.len() != 2 || ws[0] != din {
            return Err(TensorError::shape("linear", format!("[{din}, Out]"), ws));
        }
        let dout = ws[1];
        if let Some(b) = b {
            check_same("linear bias", &[dout], self.shape(b))?;
        }
        let rows = xs.iter().take(xs.len() - 1).product::<usize>();
        let mut out = vec![T::zero(); rows * dout];
        kernels::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            din,
            dout,
            &mut out,
        );
        let mut oshape = xs;
        *oshape.last_mut().unwrap() = dout;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&oshape, out)?, Op::Linear { x, w, b, din, dout }, rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        check_same(op, self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        Ok((t, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let t = self.map(a, |x| x * k);
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, k), rg)
    }

    /// Sum of equally shaped tensors, accumulated left to right.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::invalid("add_n", "no operands"))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![T::zero(); self.value(first).len()];
        let mut rg = false;
        for &p in parts {
            check_same("add_n", &shape, self.shape(p))?;
            for (a, &v) in acc.iter_mut().zip(self.value(p).data()) {
                *a += v;
            }
            rg |= self.rg(p);
        }
        Ok(self.push(Tensor::new(&shape, acc)?, Op::AddN(parts.to_vec()), rg))
    }

    fn map(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(a);
        Tensor::new(v.shape(), v.data().iter().map(|&x| f(x)).collect()).expect("same length")
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Var {
        let t = self.map(a, kernels::elu);
        let rg = self.rg(a);
        self.push(t, Op::Elu(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(T::zero()));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, kernels::sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.tanh());
        let rg = self.rg(a);
        self.push(t, Op::Tanh(a), rg)
    }

    /// Gated linear unit over the last axis: first half times the sigmoid of
    /// the second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = last_dim("glu", &shape)?;
        if c % 2 != 0 {
            return Err(TensorError::invalid("glu", format!("channel count {c} is odd")));
        }
        let half = c / 2;
        let mut out = Vec::with_capacity(self.value(x).len() / 2);
        for row in self.value(x).data().chunks_exact(c) {
            let (a, b) = row.split_at(half);
            out.extend(a.iter().zip(b).map(|(&a, &b)| a * kernels::sigmoid(b)));
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = half;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&oshape, out)?, Op::Glu { x, half }, rg))
    }

    /// Concatenation along the last axis; all leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no operands"))?;
        let lead = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(TensorError::shape("concat", &lead, s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &wd) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * wd..][..wd]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        let parts = parts.iter().copied().zip(widths).collect();
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { parts, total }, rg))
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = last_dim("slice", &shape)?;
        if start + len > width || len == 0 {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{} outside width {width}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(self.value(x).len() / width * len);
        for row in self.value(x).data().chunks_exact(width) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&oshape, out)?, Op::Slice { x, start, len, width }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `[H, W, C] -> [C]`, summing over both spatial axes in row-major order.
    pub fn sum_spatial(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 {
            return Err(TensorError::shape("sum_spatial", "[H, W, C]", shape));
        }
        let channels = shape[2];
        let mut out = vec![T::zero(); channels];
        for pix in self.value(x).data().chunks_exact(channels) {
            for (o, &v) in out.iter_mut().zip(pix) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[channels], out)?, Op::SumSpatial { x, channels }, rg))
    }

    /// Replicates a `[C]` vector over an `h x w` grid.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 1 {
            return Err(TensorError::shape("broadcast_spatial", "[C]", shape));
        }
        let c = shape[0];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            out.extend_from_slice(src);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[h, w, c], out)?, Op::Broadcast { x, cells: h * w }, rg))
    }

    /// Nearest-neighbour upsampling by `factor`, then cropped (or zero-padded)
    /// to `oh x ow`.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize, oh: usize, ow: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 {
            return Err(TensorError::shape("upsample_nearest", "[H, W, C]", shape));
        }
        if factor == 0 || !factor.is_power_of_two() {
            return Err(TensorError::invalid("upsample_nearest", format!("factor {factor} is not a power of two")));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); oh * ow * c];
        for i in 0..oh {
            let si = i / factor;
            if si >= h {
                continue;
            }
            for j in 0..ow {
                let sj = j / factor;
                if sj >= w {
                    continue;
                }
                out[(i * ow + j) * c..][..c].copy_from_slice(&src[(si * w + sj) * c..][..c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[oh, ow, c], out)?,
            Op::Upsample {
                x,
                h,
                w,
                c,
                factor,
                oh,
                ow,
            },
            rg,
        ))
    }

    /// Keeps every `stride`-th cell along both spatial axes starting at 0,
    /// giving `ceil(H / stride) x ceil(W / stride)`.
    pub fn subsample(&mut self, x: Var, stride: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 3 || stride == 0 {
            return Err(TensorError::shape("subsample", "[H, W, C] and stride > 0", shape));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(oh * ow * c);
        for i in 0..oh {
            for j in 0..ow {
                out.extend_from_slice(&src[((i * stride) * w + j * stride) * c..][..c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[oh, ow, c], out)?,
            Op::Subsample {
                x,
                w,
                c,
                stride,
                oh,
                ow,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_f64(v.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanAll(x), rg)
    }

    /// Mean Huber loss of `pred` against a constant `target`.
    pub fn huber(&mut self, pred: Var, target: &Tensor<T>, delta: T) -> Result<Var> {
        check_same("huber", self.shape(pred), target.shape())?;
        if delta <= T::zero() {
            return Err(TensorError::invalid("huber", "delta must be positive"));
        }
        let p = self.value(pred).data();
        let n = T::from_f64(p.len() as f64);
        let s: T = p
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| kernels::huber(a - b, delta))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::Huber {
                pred,
                target: target.data().to_vec(),
                delta,
            },
            rg,
        ))
    }

    /// Mean binary cross entropy of `sigmoid(logits)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        check_same("bce_with_logits", self.shape(logits), targets.shape())?;
        let z = self.value(logits).data();
        let n = T::from_f64(z.len() as f64);
        let s: T = z
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| kernels::bce_logit(z, y))
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(s / n),
            Op::Bce {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        if self.value(out).len() != 1 {
            return Err(TensorError::shape("backward", "scalar output", self.shape(out)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![T::one()]);

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &node.op, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, op: &Op<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Returns a mutable zero-initialised gradient buffer for `v`, or None if
        // `v` does not need one.
        fn slot<'a, T: Real>(tape: &Tape<T>, idx: usize, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
            assert!(v.0 < idx, "tape is not topologically ordered");
            if !tape.nodes[v.0].requires_grad {
                return None;
            }
            let n = tape.nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
        }

        match op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                // Each buffer is taken out so the kernel can borrow all three at once.
                let mut dx = slot(self, idx, grads, *x).map(std::mem::take);
                let mut dw = slot(self, idx, grads, *w).map(std::mem::take);
                let mut db = b.and_then(|b| slot(self, idx, grads, b).map(std::mem::take));
                kernels::conv_backward(
                    geom,
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    grads[x.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[w.0] = Some(d);
                }
                if let (Some(d), Some(b)) = (db, b) {
                    grads[b.0] = Some(d);
                }
            }
            Op::Linear { x, w, b, din, dout } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = slot(self, idx, grads, *x).map(std::mem::take);
                let mut dw = slot(self, idx, grads, *w).map(std::mem::take);
                let mut db = b.and_then(|b| slot(self, idx, grads, b).map(std::mem::take));
                kernels::linear_backward(
                    xv,
                    wv,
                    g,
                    *din,
                    *dout,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    grads[x.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[w.0] = Some(d);
                }
                if let (Some(d), Some(b)) = (db, b) {
                    grads[b.0] = Some(d);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(s) = slot(self, idx, grads, v) {
                        for (d, &gv) in s.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = slot(self, idx, grads, *a) {
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if let Some(s) = slot(self, idx, grads, *b) {
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = slot(self, idx, grads, *a) {
                    for ((d, &gv), &o) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                }
                if let Some(s) = slot(self, idx, grads, *b) {
                    for ((d, &gv), &o) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(s) = slot(self, idx, grads, *a) {
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv * *k;
                    }
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if let Some(s) = slot(self, idx, grads, p) {
                        for (d, &gv) in s.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Elu(a) => {
                let xv = self.value(*a).data();
                let yv = self.nodes[idx].value.data();
                if let Some(s) = slot(self, idx, grads, *a) {
                    for (((d, &gv), &x), &y) in s.iter_mut().zip(g).zip(xv).zip(yv) {
                        *d += if x > T::zero() { gv } else { gv * (y + T::one()) };
                    }
                }
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                if let Some(s) = slot(self, idx, grads, *a) {
                    for ((d, &gv), &x) in s.iter_mut().zip(g).zip(xv) {
                        if x > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let yv = self.nodes[idx].value.data();
                if let Some(s) = slot(self, idx, grads, *a) {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(yv) {
                        *d += gv * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                let yv = self.nodes[idx].value.data();
                if let Some(s) = slot(self, idx, grads, *a) {
                    for ((d, &gv), &y) in s.iter_mut().zip(g).zip(yv) {
                        *d += gv * (T::one() - y * y);
                    }
                }
            }
            Op::Glu { x, half } => {
                let half = *half;
                let xv = self.value(*x).data();
                if let Some(s) = slot(self, idx, grads, *x) {
                    for ((drow, xrow), grow) in s
                        .chunks_exact_mut(2 * half)
                        .zip(xv.chunks_exact(2 * half))
                        .zip(g.chunks_exact(half))
                    {
                        for k in 0..half {
                            let a = xrow[k];
                            let sg = kernels::sigmoid(xrow[half + k]);
                            drow[k] += grow[k] * sg;
                            drow[half + k] += grow[k] * a * sg * (T::one() - sg);
                        }
                    }
                }
            }
            Op::Concat { parts, total } => {
                let mut offset = 0;
                for &(p, wd) in parts {
                    if let Some(s) = slot(self, idx, grads, p) {
                        for (drow, grow) in s.chunks_exact_mut(wd).zip(g.chunks_exact(*total)) {
                            for (d, &gv) in drow.iter_mut().zip(&grow[offset..offset + wd]) {
                                *d += gv;
                            }
                        }
                    }
                    offset += wd;
                }
            }
            Op::Slice { x, start, len, width } => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for (drow, grow) in s.chunks_exact_mut(*width).zip(g.chunks_exact(*len)) {
                        for (d, &gv) in drow[*start..*start + *len].iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for (d, &gv) in s.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::SumSpatial { x, channels } => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for drow in s.chunks_exact_mut(*channels) {
                        for (d, &gv) in drow.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Broadcast { x, cells } => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    let c = s.len();
                    for cell in 0..*cells {
                        for (d, &gv) in s.iter_mut().zip(&g[cell * c..][..c]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Upsample {
                x,
                h,
                w,
                c,
                factor,
                oh,
                ow,
            } => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for i in 0..*oh {
                        let si = i / factor;
                        if si >= *h {
                            continue;
                        }
                        for j in 0..*ow {
                            let sj = j / factor;
                            if sj >= *w {
                                continue;
                            }
                            let dst = &mut s[(si * w + sj) * c..][..*c];
                            for (d, &gv) in dst.iter_mut().zip(&g[(i * ow + j) * c..][..*c]) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            Op::Subsample {
                x,
                w,
                c,
                stride,
                oh,
                ow,
            } => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for i in 0..*oh {
                        for j in 0..*ow {
                            let dst = &mut s[((i * stride) * w + j * stride) * c..][..*c];
                            for (d, &gv) in dst.iter_mut().zip(&g[(i * ow + j) * c..][..*c]) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    for d in s.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::MeanAll(x) => {
                if let Some(s) = slot(self, idx, grads, *x) {
                    let k = g[0] / T::from_f64(s.len() as f64);
                    for d in s.iter_mut() {
                        *d += k;
                    }
                }
            }
            Op::Huber { pred, target, delta } => {
                let pv = self.value(*pred).data();
                if let Some(s) = slot(self, idx, grads, *pred) {
                    let k = g[0] / T::from_f64(s.len() as f64);
                    for ((d, &p), &t) in s.iter_mut().zip(pv).zip(target) {
                        *d += k * kernels::huber_grad(p - t, *delta);
                    }
                }
            }
            Op::Bce { logits, targets } => {
                let zv = self.value(*logits).data();
                if let Some(s) = slot(self, idx, grads, *logits) {
                    let k = g[0] / T::from_f64(s.len() as f64);
                    for ((d, &z), &y) in s.iter_mut().zip(zv).zip(targets) {
                        *d += k * (kernels::sigmoid(z) - y);
                    }
                }
            }
        }
    }
}

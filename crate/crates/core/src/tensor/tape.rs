use super::kernels::{self, Padding};
use super::params::{ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
        x: usize,
        w: usize,
        b: Option<usize>,
        k: usize,
        stride: usize,
        pad: usize,
        /// im2col of the input; empty for 1x1 stride-1 convolutions.
        cols: Vec<T>,
    },
    MaxPool2 {
        x: usize,
        argmax: Vec<u32>,
    },
    AvgPool2 {
        x: usize,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GridSample {
        x: usize,
        coords: usize,
        padding: Padding,
        coord_grad: bool,
    },
    CorrWindow {
        vol: usize,
        centers: Vec<(T, T)>,
        radius: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    MulChannels {
        x: usize,
        m: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Concat {
        parts: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Matmul {
        a: usize,
        b: usize,
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Upsample2 {
        x: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads<T> {
    by_node: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Iterates `(parameter, gradient)` pairs for every bound parameter that
    /// received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[T])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.by_node[node].as_deref().map(|g| (id, g)))
    }
}

/// A single-owner recording of forward ops. Values live on the nodes; the
/// backward pass walks nodes in reverse insertion order, which is a valid
/// reverse topological order because parents are always recorded first.
#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    bound: Vec<Option<Var>>,
    coord_grad: bool,
    /// First node holding NaN/Inf; tracked in debug builds only.
    poisoned: Option<usize>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
            bound: Vec::new(),
            coord_grad: false,
            poisoned: None,
        }
    }

    /// A tape that records values only; nothing is kept for backward.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Enables gradients w.r.t. sampling coordinates in [`Tape::grid_sample`].
    pub fn set_coord_grad(&mut self, on: bool) {
        self.coord_grad = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after `len`. Only meaningful for values that
    /// no later computation depends on (e.g. per-iteration scratch in
    /// inference mode).
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        if self.poisoned.is_some_and(|i| i >= len) {
            self.poisoned = None;
        }
        for slot in &mut self.bound {
            if slot.is_some_and(|v| v.0 >= len) {
                *slot = None;
            }
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Index of the first node whose value holds NaN/Inf.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.poisoned
            .or_else(|| self.nodes.iter().position(|n| !n.value.is_finite()))
    }

    fn record(&mut self, node: Node<T>) -> Var {
        if cfg!(debug_assertions) && self.poisoned.is_none() && !node.value.is_finite() {
            self.poisoned = Some(self.nodes.len());
        }
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|&p| self.nodes[p].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.record(Node {
            value,
            op,
            needs_grad,
            param: None,
        })
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.record(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        })
    }

    /// Records a free leaf that participates in differentiation.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = self.grad_enabled;
        self.record(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad,
            param: None,
        })
    }

    /// Binds a parameter from `store`; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.bound.get(id.index()) {
            return *v;
        }
        let t = store.get(id);
        let needs_grad = self.grad_enabled && t.requires_grad();
        let v = self.record(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad,
            param: Some(id),
        });
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        self.bound[id.index()] = Some(v);
        v
    }

    fn check(&self, cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(msg()))
        }
    }

    fn chw(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape(v) {
            [c, h, w] => Ok((c, h, w)),
            ref s => Err(Error::ShapeMismatch(format!("{what}: expected [C,H,W], got {s:?}"))),
        }
    }

    /// Cross-correlation of `x [cin,h,w]` with `w [cout,cin,k,k]` plus bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (cin, h, wd) = self.chw(x, "conv2d input")?;
        let ws = self.shape(w).to_vec();
        self.check(ws.len() == 4 && ws[1] == cin && ws[2] == ws[3], || {
            format!("conv2d weight {ws:?} vs input channels {cin}")
        })?;
        let (cout, k) = (ws[0], ws[2]);
        self.check(k % 2 == 1 && stride >= 1 && h + 2 * pad >= k && wd + 2 * pad >= k, || {
            format!("conv2d kernel {k} stride {stride} pad {pad} on {h}x{wd}")
        })?;
        if let Some(b) = b {
            self.check(self.shape(b) == [cout], || "conv2d bias shape".into())?;
        }
        let ho = kernels::conv_out(h, k, stride, pad);
        let wo = kernels::conv_out(wd, k, stride, pad);
        let plane = ho * wo;
        let direct = k == 1 && stride == 1 && pad == 0;
        let cols = if direct {
            Vec::new()
        } else {
            let mut cols = vec![T::zero(); cin * k * k * plane];
            kernels::im2col(self.value(x).data(), cin, h, wd, k, stride, pad, &mut cols);
            cols
        };
        let mut out = vec![T::zero(); cout * plane];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (co, row) in out.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = bd[co]);
            }
        }
        {
            let rhs = if direct { self.value(x).data() } else { &cols[..] };
            kernels::gemm(
                cout,
                cin * k * k,
                plane,
                self.value(w).data(),
                false,
                rhs,
                false,
                &mut out,
                b.is_some(),
            );
        }
        let value = Tensor::new(&[cout, ho, wo], out)?;
        let mut parents = vec![x.0, w.0];
        if let Some(b) = b {
            parents.push(b.0);
        }
        let keep_cols = self.grad_enabled;
        Ok(self.push(
            value,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                k,
                stride,
                pad,
                cols: if keep_cols { cols } else { Vec::new() },
            },
            &parents,
        ))
    }

    /// 2x2 max pool, stride 2; odd trailing rows/cols are replicated.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "max_pool2")?;
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); c * ho * wo];
        let mut argmax = vec![0u32; c * ho * wo];
        for ci in 0..c {
            let src = &xd[ci * h * w..(ci + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = kernels::pool_tap(oy, ox, 0, 0, h, w);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = kernels::pool_tap(oy, ox, dy, dx, h, w);
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    let o = (ci * ho + oy) * wo + ox;
                    out[o] = src[best];
                    argmax[o] = (ci * h * w + best) as u32;
                }
            }
        }
        let value = Tensor::new(&[c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool2 { x: x.0, argmax }, &[x.0]))
    }

    /// 2x2 average pool, stride 2; odd trailing rows/cols are replicated.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "avg_pool2")?;
        let out = kernels::avg_pool2(self.value(x).data(), c, h, w);
        let value = Tensor::new(&[c, h.div_ceil(2), w.div_ceil(2)], out)?;
        Ok(self.push(value, Op::AvgPool2 { x: x.0 }, &[x.0]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { x: x.0 }, &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(value, Op::Sigmoid { x: x.0 }, &[x.0])
    }

    /// Group normalization over `x [c,h,w]` with per-channel affine `gamma`,
    /// `beta`; eps = 1e-5.
    pub fn group_norm(&mut self, x: Var, groups: usize, gamma: Var, beta: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "group_norm")?;
        self.check(groups >= 1 && c % groups == 0, || {
            format!("group_norm: {c} channels not divisible into {groups} groups")
        })?;
        self.check(self.shape(gamma) == [c] && self.shape(beta) == [c], || {
            "group_norm affine shape".into()
        })?;
        let eps = T::from_f64(1e-5);
        let per = (c / groups) * h * w;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); c * h * w];
        let mut inv_std = vec![T::zero(); groups];
        let mut out = vec![T::zero(); c * h * w];
        let n = T::from_f64(per as f64);
        for g in 0..groups {
            let seg = &xd[g * per..(g + 1) * per];
            let mean = seg.iter().copied().sum::<T>() / n;
            let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std[g] = is;
            for (i, &v) in seg.iter().enumerate() {
                let gi = g * per + i;
                let ch = gi / (h * w);
                let xh = (v - mean) * is;
                xhat[gi] = xh;
                out[gi] = gd[ch] * xh + bd[ch];
            }
        }
        let value = Tensor::new(&[c, h, w], out)?;
        let keep = self.grad_enabled;
        Ok(self.push(
            value,
            Op::GroupNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                groups,
                xhat: if keep { xhat } else { Vec::new() },
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Bilinear sampling of `x [c,h,w]` at `coords [2,h',w']` (channel 0 = u,
    /// channel 1 = v). Gradients reach `coords` only when enabled through
    /// [`Tape::set_coord_grad`].
    pub fn grid_sample(&mut self, x: Var, coords: Var, padding: Padding) -> Result<Var> {
        let (c, h, w) = self.chw(x, "grid_sample input")?;
        let (two, ho, wo) = self.chw(coords, "grid_sample coords")?;
        self.check(two == 2, || "grid_sample coords need 2 channels".into())?;
        let cd = self.value(coords).data();
        let n = ho * wo;
        let out = kernels::grid_sample(self.value(x).data(), c, h, w, &cd[..n], &cd[n..], padding);
        let value = Tensor::new(&[c, ho, wo], out)?;
        let coord_grad = self.coord_grad;
        let parents: Vec<usize> = if coord_grad {
            vec![x.0, coords.0]
        } else {
            vec![x.0]
        };
        Ok(self.push(
            value,
            Op::GridSample {
                x: x.0,
                coords: coords.0,
                padding,
                coord_grad,
            },
            &parents,
        ))
    }

    /// Windowed lookup: for every source cell `p` of an `hs x ws` grid,
    /// bilinearly samples plane `p` of `vol [hs*ws, hv, wv]` on the
    /// `(2r+1)^2` integer-offset grid centred at `centers[p] = (u, v)`.
    /// Output is `[(2r+1)^2, hs, ws]` with channel `(dy+r)*(2r+1) + (dx+r)`.
    /// Out-of-volume taps read zero.
    pub fn corr_window(
        &mut self,
        vol: Var,
        centers: Vec<(T, T)>,
        hs: usize,
        ws: usize,
        radius: usize,
    ) -> Result<Var> {
        let (p, hv, wv) = self.chw(vol, "corr_window volume")?;
        self.check(p == hs * ws && centers.len() == p, || {
            format!("corr_window: {p} planes, {} centers, grid {hs}x{ws}", centers.len())
        })?;
        let side = 2 * radius + 1;
        let nch = side * side;
        let vd = self.value(vol).data();
        let plane = hv * wv;
        let mut out = vec![T::zero(); nch * p];
        for (pi, &(u, v)) in centers.iter().enumerate() {
            let src = &vd[pi * plane..(pi + 1) * plane];
            for dy in 0..side {
                for dx in 0..side {
                    let su = u + T::from_f64(dx as f64 - radius as f64);
                    let sv = v + T::from_f64(dy as f64 - radius as f64);
                    let taps = kernels::bilinear_taps(su, sv, hv, wv, Padding::Zeros);
                    out[(dy * side + dx) * p + pi] = kernels::sample_plane(src, &taps);
                }
            }
        }
        let value = Tensor::new(&[nch, hs, ws], out)?;
        Ok(self.push(
            value,
            Op::CorrWindow {
                vol: vol.0,
                centers,
                radius,
            },
            &[vol.0],
        ))
    }

    fn binary(&mut self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        self.check(sa == sb, || format!("{what}: {sa:?} vs {sb:?}"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p - q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// `x [c,h,w] * m [1,h,w]`, broadcasting the mask over channels.
    pub fn mul_channels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "mul_channels input")?;
        self.check(self.shape(m) == [1, h, w], || "mul_channels mask shape".into())?;
        let md = self.value(m).data();
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * md[i % plane])
            .collect();
        let value = Tensor::new(&[c, h, w], data)?;
        Ok(self.push(value, Op::MulChannels { x: x.0, m: m.0 }, &[x.0, m.0]))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x: x.0, c }, &[x.0])
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.check(!parts.is_empty(), || "concat of nothing".into())?;
        let rest = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            self.check(s.len() == rest.len() + 1 && s[1..] == rest[..], || {
                format!("concat: {s:?} vs trailing {rest:?}")
            })?;
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&rest);
        let value = Tensor::new(&shape, data)?;
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::Concat { parts: idx.clone() }, &idx))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x: x.0 }, &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean { x: x.0 }, &[x.0])
    }

    /// Matrix product of 2-d operands, optionally transposed.
    pub fn matmul(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.check(sa.len() == 2 && sb.len() == 2, || "matmul needs 2-d operands".into())?;
        let (m, ka) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        self.check(ka == kb, || format!("matmul inner dims {sa:?} x {sb:?}"))?;
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(
            m,
            ka,
            n,
            self.value(a).data(),
            trans_a,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(
            value,
            Op::Matmul {
                a: a.0,
                b: b.0,
                trans_a,
                trans_b,
                m,
                k: ka,
                n,
            },
            &[a.0, b.0],
        ))
    }

    /// Nearest-neighbour x2 upsampling of `x [c,h,w]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw(x, "upsample2")?;
        let xd = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); c * h2 * w2];
        for ci in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ci * h2 + y) * w2 + xx] = xd[(ci * h + y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(&[c, h2, w2], out)?;
        Ok(self.push(value, Op::Upsample2 { x: x.0 }, &[x.0]))
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {:?}",
                node.value.shape()
            )));
        }
        if !node.needs_grad {
            return Err(Error::NoGradPath);
        }
        if let Some(node) = self.poisoned {
            return Err(Error::NonFiniteValue { node });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backward_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        if cfg!(debug_assertions) {
            let bad = grads
                .iter()
                .position(|g| g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())));
            if let Some(node) = bad {
                return Err(Error::NonFiniteValue { node });
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.filter(|_| n.needs_grad).map(|p| (p, i)))
            .collect();
        Ok(Grads {
            by_node: grads,
            params,
        })
    }

    /// [`Tape::backward`] followed by accumulation into the bound parameters.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        store.accumulate(&grads);
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |j: usize| self.nodes[j].value.data();
        let wants = |j: usize| self.nodes[j].needs_grad;
        let acc = |grads: &mut [Option<Vec<T>>], j: usize, delta: Vec<T>| {
            match &mut grads[j] {
                Some(cur) => cur.iter_mut().zip(&delta).for_each(|(a, b)| *a += *b),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                k,
                stride,
                pad,
                cols,
            } => {
                let (k, stride, pad) = (*k, *stride, *pad);
                let xs = self.nodes[*x].value.shape();
                let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                let cout = self.nodes[*w].value.shape()[0];
                let plane = g.len() / cout;
                let ck = cin * k * k;
                let direct = cols.is_empty();
                if wants(*w) {
                    let mut dw = vec![T::zero(); cout * ck];
                    let rhs = if direct { val(*x) } else { &cols[..] };
                    kernels::gemm(cout, plane, ck, g, false, rhs, true, &mut dw, false);
                    acc(grads, *w, dw);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let db = g.chunks(plane).map(|r| r.iter().copied().sum()).collect();
                        acc(grads, *b, db);
                    }
                }
                if wants(*x) {
                    let mut dcols = vec![T::zero(); ck * plane];
                    kernels::gemm(ck, cout, plane, val(*w), true, g, false, &mut dcols, false);
                    if direct {
                        acc(grads, *x, dcols);
                    } else {
                        let mut dx = vec![T::zero(); cin * h * wd];
                        kernels::col2im(&dcols, cin, h, wd, k, stride, pad, &mut dx);
                        acc(grads, *x, dx);
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![T::zero(); self.nodes[*x].value.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += g[o];
                }
                acc(grads, *x, dx);
            }
            Op::AvgPool2 { x } => {
                let xs = self.nodes[*x].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
                let quarter = T::from_f64(0.25);
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = g[(ci * ho + oy) * wo + ox] * quarter;
                            for (dy, ddx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                dx[ci * h * w + kernels::pool_tap(oy, ox, dy, ddx, h, w)] += gv;
                            }
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Relu { x } => {
                let dx = val(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let y = val(i);
                let dx = y
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                acc(grads, *x, dx);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            } => {
                let xs = self.nodes[*x].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let plane = h * w;
                let per = (c / groups) * plane;
                let gd = val(*gamma);
                if wants(*gamma) {
                    let dg = (0..c)
                        .map(|ch| {
                            (0..plane)
                                .map(|p| g[ch * plane + p] * xhat[ch * plane + p])
                                .sum()
                        })
                        .collect();
                    acc(grads, *gamma, dg);
                }
                if wants(*beta) {
                    let db = g.chunks(plane).map(|r| r.iter().copied().sum()).collect();
                    acc(grads, *beta, db);
                }
                if wants(*x) {
                    let n = T::from_f64(per as f64);
                    let mut dx = vec![T::zero(); c * plane];
                    for gi in 0..*groups {
                        let range = gi * per..(gi + 1) * per;
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in range.clone() {
                            let dxh = g[j] * gd[j / plane];
                            s1 += dxh;
                            s2 += dxh * xhat[j];
                        }
                        for j in range {
                            let dxh = g[j] * gd[j / plane];
                            dx[j] = inv_std[gi] * (dxh - s1 / n - xhat[j] * s2 / n);
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::GridSample {
                x,
                coords,
                padding,
                coord_grad,
            } => {
                let xs = self.nodes[*x].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let cd = val(*coords);
                let n = cd.len() / 2;
                let xd = val(*x);
                let mut dx = if wants(*x) {
                    Some(vec![T::zero(); c * h * w])
                } else {
                    None
                };
                let mut dcoord = if *coord_grad && wants(*coords) {
                    Some(vec![T::zero(); 2 * n])
                } else {
                    None
                };
                for p in 0..n {
                    let taps = kernels::bilinear_taps(cd[p], cd[n + p], h, w, *padding);
                    for ci in 0..c {
                        let gv = g[ci * n + p];
                        if let Some(dx) = &mut dx {
                            for (idx, wt) in taps.idx.iter().zip(taps.wgt) {
                                if let Some(idx) = idx {
                                    dx[ci * h * w + idx] += wt * gv;
                                }
                            }
                        }
                        if let Some(dc) = &mut dcoord {
                            let plane = &xd[ci * h * w..(ci + 1) * h * w];
                            let (du, dv) = kernels::sample_plane_dcoord(plane, &taps);
                            dc[p] += du * gv;
                            dc[n + p] += dv * gv;
                        }
                    }
                }
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                if let Some(dc) = dcoord {
                    acc(grads, *coords, dc);
                }
            }
            Op::CorrWindow {
                vol,
                centers,
                radius,
            } => {
                let vs = self.nodes[*vol].value.shape();
                let (p, hv, wv) = (vs[0], vs[1], vs[2]);
                let plane = hv * wv;
                let side = 2 * radius + 1;
                let mut dv = vec![T::zero(); p * plane];
                for (pi, &(u, v)) in centers.iter().enumerate() {
                    let dst = &mut dv[pi * plane..(pi + 1) * plane];
                    for dy in 0..side {
                        for dx in 0..side {
                            let gv = g[(dy * side + dx) * p + pi];
                            if gv == T::zero() {
                                continue;
                            }
                            let su = u + T::from_f64(dx as f64 - *radius as f64);
                            let sv = v + T::from_f64(dy as f64 - *radius as f64);
                            let taps = kernels::bilinear_taps(su, sv, hv, wv, Padding::Zeros);
                            for (idx, wt) in taps.idx.iter().zip(taps.wgt) {
                                if let Some(idx) = idx {
                                    dst[*idx] += wt * gv;
                                }
                            }
                        }
                    }
                }
                acc(grads, *vol, dv);
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    acc(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    acc(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    acc(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    acc(grads, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    acc(grads, *a, g.iter().zip(val(*b)).map(|(&p, &q)| p * q).collect());
                }
                if wants(*b) {
                    acc(grads, *b, g.iter().zip(val(*a)).map(|(&p, &q)| p * q).collect());
                }
            }
            Op::MulChannels { x, m } => {
                let md = val(*m);
                let plane = md.len();
                if wants(*x) {
                    let dx = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gv)| gv * md[j % plane])
                        .collect();
                    acc(grads, *x, dx);
                }
                if wants(*m) {
                    let xd = val(*x);
                    let mut dm = vec![T::zero(); plane];
                    for (j, &gv) in g.iter().enumerate() {
                        dm[j % plane] += gv * xd[j];
                    }
                    acc(grads, *m, dm);
                }
            }
            Op::Scale { x, c } => {
                acc(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    if wants(p) {
                        acc(grads, p, g[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::Reshape { x } => acc(grads, *x, g.to_vec()),
            Op::Sum { x } => {
                let n = self.nodes[*x].value.len();
                acc(grads, *x, vec![g[0]; n]);
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].value.len();
                acc(grads, *x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::Matmul {
                a,
                b,
                trans_a,
                trans_b,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                if wants(*a) {
                    // dA = g . op(B)^T, laid out as A's storage
                    let mut da = vec![T::zero(); m * k];
                    if *trans_a {
                        // A stored [k,m]: dA^T = op(B) . g^T
                        kernels::gemm(k, n, m, val(*b), *trans_b, g, true, &mut da, false);
                    } else {
                        kernels::gemm(m, n, k, g, false, val(*b), !*trans_b, &mut da, false);
                    }
                    acc(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *trans_b {
                        // B stored [n,k]: dB^T = g^T . op(A)
                        kernels::gemm(n, m, k, g, true, val(*a), *trans_a, &mut db, false);
                    } else {
                        kernels::gemm(k, m, n, val(*a), !*trans_a, g, false, &mut db, false);
                    }
                    acc(grads, *b, db);
                }
            }
            Op::Upsample2 { x } => {
                let xs = self.nodes[*x].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (h2, w2) = (2 * h, 2 * w);
                let mut dx = vec![T::zero(); c * h * w];
                for ci in 0..c {
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            dx[(ci * h + y / 2) * w + xx / 2] += g[(ci * h2 + y) * w2 + xx];
                        }
                    }
                }
                acc(grads, *x, dx);
            }
        }
    }
}

//! Forward operations and their backward rules.

use super::{accum, BackwardFn, Tensor, Value};
use crate::{Error, Result};

// ── dense kernels ────────────────────────────────────────────────────

/// c += a·b with a [m,k], b [k,n], c [m,n].
pub(crate) fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c += a·bᵀ with a [m,k], b [n,k], c [m,n].
fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            c[i * n + j] += s;
        }
    }
}

/// c += aᵀ·g with a [m,k], g [m,n], c [k,n].
fn mm_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * grow[j];
            }
        }
    }
}

// ── broadcasting helpers ─────────────────────────────────────────────

#[derive(Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn resolve_bcast(op: &'static str, ls: &[usize], rs: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if ls == rs {
        return Ok((ls.to_vec(), Bcast::Same));
    }
    let ln: usize = ls.iter().product();
    let rn: usize = rs.iter().product();
    if ln == 1 {
        return Ok((rs.to_vec(), Bcast::LhsScalar));
    }
    if rn == 1 {
        return Ok((ls.to_vec(), Bcast::RhsScalar));
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: ls.to_vec(),
        rhs: rs.to_vec(),
    })
}

fn read2<R>(a: &Tensor, b: &Tensor, f: impl FnOnce(&Value, &Value, bool, bool) -> R) -> R {
    let inner = a.tape.inner.borrow();
    f(
        &inner.values[a.idx],
        &inner.values[b.idx],
        inner.requires[a.idx],
        inner.requires[b.idx],
    )
}

fn read1<R>(a: &Tensor, f: impl FnOnce(&Value, bool) -> R) -> R {
    let inner = a.tape.inner.borrow();
    f(&inner.values[a.idx], inner.requires[a.idx])
}

/// Row-major strides of a shape.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

// ── elementwise binary ───────────────────────────────────────────────

macro_rules! ew_binary {
    ($name:ident, $opname:literal, $fwd:expr, $da:expr, $db:expr) => {
        pub fn $name(&self, rhs: &Tensor) -> Result<Tensor> {
            self.check_same_tape(rhs, $opname)?;
            let (out_shape, bc, data, req_a, req_b) = read2(self, rhs, |a, b, ra, rb| {
                let r = resolve_bcast($opname, &a.shape, &b.shape);
                r.map(|(shape, bc)| {
                    let n: usize = shape.iter().product();
                    let f: fn(f64, f64) -> f64 = $fwd;
                    let data: Vec<f64> = (0..n)
                        .map(|i| match bc {
                            Bcast::Same => f(a.data[i], b.data[i]),
                            Bcast::LhsScalar => f(a.data[0], b.data[i]),
                            Bcast::RhsScalar => f(a.data[i], b.data[0]),
                        })
                        .collect();
                    (shape, bc, data, ra, rb)
                })
            })?;
            let (ai, bi) = (self.idx, rhs.idx);
            let req = req_a || req_b;
            let back: Option<BackwardFn> = req.then(|| {
                Box::new(
                    move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                        let da: fn(f64, f64, f64) -> f64 = $da;
                        let db: fn(f64, f64, f64) -> f64 = $db;
                        let (av, bv) = (&values[ai], &values[bi]);
                        let pick = |v: &Value, scalar: bool, i: usize| {
                            if scalar {
                                v.data[0]
                            } else {
                                v.data[i]
                            }
                        };
                        let lhs_scalar = bc == Bcast::LhsScalar;
                        let rhs_scalar = bc == Bcast::RhsScalar;
                        if req_a {
                            let buf = accum(grads, ai, av.numel());
                            for i in 0..g.len() {
                                let x = pick(av, lhs_scalar, i);
                                let y = pick(bv, rhs_scalar, i);
                                let c = da(x, y, g[i]);
                                if lhs_scalar {
                                    buf[0] += c;
                                } else {
                                    buf[i] += c;
                                }
                            }
                        }
                        if req_b {
                            let buf = accum(grads, bi, bv.numel());
                            for i in 0..g.len() {
                                let x = pick(av, lhs_scalar, i);
                                let y = pick(bv, rhs_scalar, i);
                                let c = db(x, y, g[i]);
                                if rhs_scalar {
                                    buf[0] += c;
                                } else {
                                    buf[i] += c;
                                }
                            }
                        }
                    },
                ) as BackwardFn
            });
            Ok(self.tape.push_node(out_shape, data, req, back))
        }
    };
}

impl Tensor {
    ew_binary!(add, "add", |a, b| a + b, |_, _, g| g, |_, _, g| g);
    ew_binary!(sub, "sub", |a, b| a - b, |_, _, g| g, |_, _, g| -g);
    ew_binary!(mul, "mul", |a, b| a * b, |_, b, g| g * b, |a, _, g| g * a);
    ew_binary!(
        div,
        "div",
        |a, b| a / b,
        |_, b, g| g / b,
        |a, b, g| -g * a / (b * b)
    );
}

// ── elementwise unary ────────────────────────────────────────────────

impl Tensor {
    fn unary(
        &self,
        fwd: impl Fn(f64) -> f64,
        // dx as a function of (x, y, g)
        bwd: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let (shape, data, req) = read1(self, |v, r| {
            (
                v.shape.clone(),
                v.data.iter().map(|&x| fwd(x)).collect::<Vec<f64>>(),
                r,
            )
        });
        let xi = self.idx;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    // out node is always the last index the closure was built for:
                    // we re-derive y from x to avoid capturing the output id.
                    let x = &values[xi];
                    let buf = accum(grads, xi, x.numel());
                    for i in 0..g.len() {
                        let xv = x.data[i];
                        buf[i] += bwd(xv, f64::NAN, g[i]);
                    }
                },
            ) as BackwardFn
        });
        self.tape.push_node(shape, data, req, back)
    }

    /// max(x, 0); the subgradient at 0 is 0.
    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _, g| if x > 0.0 { g } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.unary(|x| x.exp(), |x, _, g| g * x.exp())
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _, g| -g)
    }

    pub fn mul_const(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _, g| g * c)
    }

    pub fn add_const(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _, g| g)
    }
}

// ── matmul ───────────────────────────────────────────────────────────

impl Tensor {
    /// Matrix product with optional leading batch dimensions.
    ///
    /// Supported shapes: `[m,k]·[k,n]`, `[B..,m,k]·[k,n]` (shared rhs) and
    /// `[B..,m,k]·[B..,k,n]` (per-batch rhs).
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_tape(rhs, "matmul")?;
        struct Dims {
            batch: usize,
            m: usize,
            k: usize,
            n: usize,
            shared_rhs: bool,
        }
        let (out_shape, d, data, req_a, req_b) = read2(self, rhs, |a, b, ra, rb| {
            let (ls, rs) = (&a.shape, &b.shape);
            if ls.len() < 2 || rs.len() < 2 {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ls.clone(),
                    rhs: rs.clone(),
                });
            }
            let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
            let (bk, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
            let shared_rhs = rs.len() == 2;
            let lead_ok = shared_rhs || ls[..ls.len() - 2] == rs[..rs.len() - 2];
            if k != bk || !lead_ok {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: ls.clone(),
                    rhs: rs.clone(),
                });
            }
            let batch: usize = ls[..ls.len() - 2].iter().product();
            let mut out_shape = ls[..ls.len() - 2].to_vec();
            out_shape.push(m);
            out_shape.push(n);
            let mut data = vec![0.0; batch * m * n];
            for bi in 0..batch {
                let av = &a.data[bi * m * k..(bi + 1) * m * k];
                let bv = if shared_rhs {
                    &b.data[..]
                } else {
                    &b.data[bi * k * n..(bi + 1) * k * n]
                };
                mm(av, bv, &mut data[bi * m * n..(bi + 1) * m * n], m, k, n);
            }
            Ok((
                out_shape,
                Dims {
                    batch,
                    m,
                    k,
                    n,
                    shared_rhs,
                },
                data,
                ra,
                rb,
            ))
        })?;
        let (ai, bi) = (self.idx, rhs.idx);
        let req = req_a || req_b;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let Dims {
                        batch,
                        m,
                        k,
                        n,
                        shared_rhs,
                    } = d;
                    if req_a {
                        // da = g·bᵀ per batch
                        let bvals = values[bi].data.clone();
                        let buf = accum(grads, ai, batch * m * k);
                        for t in 0..batch {
                            let gv = &g[t * m * n..(t + 1) * m * n];
                            let bv = if shared_rhs {
                                &bvals[..]
                            } else {
                                &bvals[t * k * n..(t + 1) * k * n]
                            };
                            mm_nt(gv, bv, &mut buf[t * m * k..(t + 1) * m * k], m, n, k);
                        }
                    }
                    if req_b {
                        // db = aᵀ·g per batch (summed when rhs is shared)
                        let avals = values[ai].data.clone();
                        let blen = if shared_rhs { k * n } else { batch * k * n };
                        let buf = accum(grads, bi, blen);
                        for t in 0..batch {
                            let av = &avals[t * m * k..(t + 1) * m * k];
                            let gv = &g[t * m * n..(t + 1) * m * n];
                            let dst = if shared_rhs {
                                &mut buf[..]
                            } else {
                                &mut buf[t * k * n..(t + 1) * k * n]
                            };
                            mm_tn(av, gv, dst, m, k, n);
                        }
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(out_shape, data, req, back))
    }
}

// ── convolutions ─────────────────────────────────────────────────────

impl Tensor {
    /// 2-D cross-correlation. `x` is `[B, C_in, H, W]`, `kernel` is
    /// `[C_out, C_in, kh, kw]`; no bias, no kernel flip.
    pub fn conv2d(
        &self,
        kernel: &Tensor,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        self.check_same_tape(kernel, "conv2d")?;
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        if sh == 0 || sw == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (xs, ks, req_x, req_k) =
            read2(self, kernel, |x, k, rx, rk| (x.shape.clone(), k.shape.clone(), rx, rk));
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, _, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel {}x{} larger than padded input {}x{}",
                    kh,
                    kw,
                    h + 2 * ph,
                    w + 2 * pw
                ),
            ));
        }
        let ho = (h + 2 * ph - kh) / sh + 1;
        let wo = (w + 2 * pw - kw) / sw + 1;
        let data = read2(self, kernel, |x, k, _, _| {
            let mut out = vec![0.0; b * co * ho * wo];
            for bb in 0..b {
                for oc in 0..co {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let mut s = 0.0;
                            for ic in 0..ci {
                                for u in 0..kh {
                                    let ih = (oh * sh + u) as isize - ph as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for v in 0..kw {
                                        let iw = (ow * sw + v) as isize - pw as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        s += x.data[((bb * ci + ic) * h + ih as usize) * w
                                            + iw as usize]
                                            * k.data[((oc * ci + ic) * kh + u) * kw + v];
                                    }
                                }
                            }
                            out[((bb * co + oc) * ho + oh) * wo + ow] = s;
                        }
                    }
                }
            }
            out
        });
        let (xi, ki) = (self.idx, kernel.idx);
        let req = req_x || req_k;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let xv = values[xi].data.clone();
                    let kv = values[ki].data.clone();
                    let mut dx = if req_x { vec![0.0; xv.len()] } else { Vec::new() };
                    let mut dk = if req_k { vec![0.0; kv.len()] } else { Vec::new() };
                    for bb in 0..b {
                        for oc in 0..co {
                            for oh in 0..ho {
                                for ow in 0..wo {
                                    let g0 = g[((bb * co + oc) * ho + oh) * wo + ow];
                                    if g0 == 0.0 {
                                        continue;
                                    }
                                    for ic in 0..ci {
                                        for u in 0..kh {
                                            let ih = (oh * sh + u) as isize - ph as isize;
                                            if ih < 0 || ih >= h as isize {
                                                continue;
                                            }
                                            for v in 0..kw {
                                                let iw = (ow * sw + v) as isize - pw as isize;
                                                if iw < 0 || iw >= w as isize {
                                                    continue;
                                                }
                                                let xoff = ((bb * ci + ic) * h + ih as usize) * w
                                                    + iw as usize;
                                                let koff = ((oc * ci + ic) * kh + u) * kw + v;
                                                if req_x {
                                                    dx[xoff] += g0 * kv[koff];
                                                }
                                                if req_k {
                                                    dk[koff] += g0 * xv[xoff];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if req_x {
                        let buf = accum(grads, xi, dx.len());
                        for (o, v) in buf.iter_mut().zip(dx) {
                            *o += v;
                        }
                    }
                    if req_k {
                        let buf = accum(grads, ki, dk.len());
                        for (o, v) in buf.iter_mut().zip(dk) {
                            *o += v;
                        }
                    }
                },
            ) as BackwardFn
        });
        Ok(self
            .tape
            .push_node(vec![b, co, ho, wo], data, req, back))
    }

    /// 1-D cross-correlation. Canonical shapes are `[B, C_in, L]` input and
    /// `[C_out, C_in, k]` kernel; rank-1 input/kernel are promoted to
    /// `[1, 1, ·]` and the output is returned rank-1 again.
    pub fn conv1d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        self.check_same_tape(kernel, "conv1d")?;
        let xr = self.rank();
        let kr = kernel.rank();
        let (x3, squeeze) = if xr == 1 {
            let n = self.numel();
            (self.reshape(&[1, 1, n])?, true)
        } else if xr == 3 {
            (self.clone(), false)
        } else {
            return Err(Error::invalid(
                "conv1d",
                format!("input rank must be 1 or 3, got {}", xr),
            ));
        };
        let k3 = if kr == 1 {
            let n = kernel.numel();
            kernel.reshape(&[1, 1, n])?
        } else if kr == 3 {
            kernel.clone()
        } else {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel rank must be 1 or 3, got {}", kr),
            ));
        };
        // Reuse conv2d with a unit height axis.
        let xs = x3.shape();
        let ks = k3.shape();
        let x4 = x3.reshape(&[xs[0], xs[1], 1, xs[2]])?;
        let k4 = k3.reshape(&[ks[0], ks[1], 1, ks[2]])?;
        let out = x4.conv2d(&k4, (1, stride), (0, padding))?;
        let os = out.shape();
        let out3 = out.reshape(&[os[0], os[1], os[3]])?;
        if squeeze {
            let n = out3.numel();
            out3.reshape(&[n])
        } else {
            Ok(out3)
        }
    }
}

// ── softmax, reductions, losses ──────────────────────────────────────

impl Tensor {
    /// Softmax over the final axis, computed with max-subtraction.
    pub fn softmax_lastdim(&self) -> Tensor {
        let (shape, data, req) = read1(self, |v, r| {
            let last = *v.shape.last().expect("softmax needs rank >= 1");
            let rows = v.numel() / last;
            let mut out = vec![0.0; v.numel()];
            for row in 0..rows {
                let x = &v.data[row * last..(row + 1) * last];
                let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let o = &mut out[row * last..(row + 1) * last];
                let mut s = 0.0;
                for i in 0..last {
                    o[i] = (x[i] - m).exp();
                    s += o[i];
                }
                for oi in o.iter_mut() {
                    *oi /= s;
                }
            }
            (v.shape.clone(), out, r)
        });
        let xi = self.idx;
        let last = *shape.last().unwrap();
        let t = self.tape.push_node(shape, data, req, None);
        if !req {
            return t;
        }
        let yi = t.idx;
        let back: BackwardFn = Box::new(
            move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                let y = &values[yi].data;
                let rows = y.len() / last;
                let buf = accum(grads, xi, y.len());
                for row in 0..rows {
                    let off = row * last;
                    let mut dot = 0.0;
                    for i in 0..last {
                        dot += g[off + i] * y[off + i];
                    }
                    for i in 0..last {
                        buf[off + i] += y[off + i] * (g[off + i] - dot);
                    }
                }
            },
        );
        t.tape.inner.borrow_mut().backs[yi] = Some(back);
        t
    }

    pub fn sum_all(&self) -> Tensor {
        let (n, s, req) = read1(self, |v, r| (v.numel(), v.data.iter().sum::<f64>(), r));
        let xi = self.idx;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let buf = accum(grads, xi, n);
                    for b in buf.iter_mut() {
                        *b += g[0];
                    }
                },
            ) as BackwardFn
        });
        self.tape.push_node(vec![1], vec![s], req, back)
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().mul_const(1.0 / n)
    }

    fn reduce_axis(&self, axis: usize, mean: bool, op: &'static str) -> Result<Tensor> {
        let (shape, req) = read1(self, |v, r| (v.shape.clone(), r));
        if axis >= shape.len() {
            return Err(Error::invalid(
                op,
                format!("axis {} out of range for shape {:?}", axis, shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let scale = if mean { 1.0 / mid as f64 } else { 1.0 };
        let mut out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != axis)
            .map(|(_, &d)| d)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let data = read1(self, |v, _| {
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    let obase = o * inner;
                    for i in 0..inner {
                        out[obase + i] += v.data[base + i];
                    }
                }
            }
            if mean {
                for x in out.iter_mut() {
                    *x *= scale;
                }
            }
            out
        });
        let xi = self.idx;
        let total = outer * mid * inner;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let buf = accum(grads, xi, total);
                    for o in 0..outer {
                        for m in 0..mid {
                            let base = (o * mid + m) * inner;
                            let obase = o * inner;
                            for i in 0..inner {
                                buf[base + i] += g[obase + i] * scale;
                            }
                        }
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(out_shape, data, req, back))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false, "sum_axis")
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true, "mean_axis")
    }

    /// Mean of squared elementwise differences; shapes must be identical.
    pub fn mse(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_tape(rhs, "mse")?;
        let (n, s, req_a, req_b) = read2(self, rhs, |a, b, ra, rb| {
            if a.shape != b.shape {
                return Err(Error::ShapeMismatch {
                    op: "mse",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let n = a.numel();
            let s = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<f64>()
                / n as f64;
            Ok((n, s, ra, rb))
        })?;
        let (ai, bi) = (self.idx, rhs.idx);
        let req = req_a || req_b;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let scale = 2.0 * g[0] / n as f64;
                    let diffs: Vec<f64> = values[ai]
                        .data
                        .iter()
                        .zip(&values[bi].data)
                        .map(|(&x, &y)| x - y)
                        .collect();
                    if req_a {
                        let buf = accum(grads, ai, n);
                        for i in 0..n {
                            buf[i] += scale * diffs[i];
                        }
                    }
                    if req_b {
                        let buf = accum(grads, bi, n);
                        for i in 0..n {
                            buf[i] -= scale * diffs[i];
                        }
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(vec![1], vec![s], req, back))
    }
}

// ── shape ops ────────────────────────────────────────────────────────

impl Tensor {
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let (data, shape, req) = read1(self, |v, r| (v.data.clone(), v.shape.clone(), r));
        let n: usize = new_shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: shape,
                rhs: new_shape.to_vec(),
            });
        }
        let xi = self.idx;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let buf = accum(grads, xi, g.len());
                    for i in 0..g.len() {
                        buf[i] += g[i];
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(new_shape.to_vec(), data, req, back))
    }

    /// Reorders axes: `out_shape[i] = shape[perm[i]]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let (shape, req) = read1(self, |v, r| (v.shape.clone(), r));
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{:?} is not a permutation of 0..{}", perm, rank),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(&shape);
        // For each output linear index, the matching input linear index.
        let mapping: Vec<usize> = {
            let out_strides = strides(&out_shape);
            let n: usize = shape.iter().product();
            (0..n)
                .map(|oi| {
                    let mut rem = oi;
                    let mut ii = 0;
                    for d in 0..rank {
                        let c = rem / out_strides[d];
                        rem %= out_strides[d];
                        ii += c * in_strides[perm[d]];
                    }
                    ii
                })
                .collect()
        };
        let data = read1(self, |v, _| {
            mapping.iter().map(|&ii| v.data[ii]).collect::<Vec<f64>>()
        });
        let xi = self.idx;
        let total = data.len();
        let back: Option<BackwardFn> = req.then(|| {
            let mapping = mapping.clone();
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let buf = accum(grads, xi, total);
                    for (oi, &ii) in mapping.iter().enumerate() {
                        buf[ii] += g[oi];
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(out_shape, data, req, back))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::invalid(
                "transpose2d",
                format!("rank-2 tensor required, got rank {}", self.rank()),
            ));
        }
        self.permute(&[1, 0])
    }

    /// Swaps the final two axes, keeping any leading batch axes.
    pub fn transpose_last2(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::invalid(
                "transpose_last2",
                format!("rank >= 2 required, got {}", rank),
            ));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Embeds a vector on the diagonal of a square matrix.
    pub fn diag(&self) -> Result<Tensor> {
        let (shape, data, req) = read1(self, |v, r| (v.shape.clone(), v.data.clone(), r));
        if shape.len() != 1 {
            return Err(Error::invalid(
                "diag",
                format!("rank-1 tensor required, got shape {:?}", shape),
            ));
        }
        let n = shape[0];
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n + i] = data[i];
        }
        let xi = self.idx;
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    let buf = accum(grads, xi, n);
                    for i in 0..n {
                        buf[i] += g[i * n + i];
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(vec![n, n], out, req, back))
    }

    /// Adds `rhs` (whose shape must be a suffix of `self`'s) broadcast over
    /// the leading axes. Covers bias vectors and positional tables.
    pub fn add_suffix(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_tape(rhs, "add_suffix")?;
        let (ls, rs, req_a, req_b) =
            read2(self, rhs, |a, b, ra, rb| (a.shape.clone(), b.shape.clone(), ra, rb));
        if rs.len() > ls.len() || ls[ls.len() - rs.len()..] != rs[..] {
            return Err(Error::ShapeMismatch {
                op: "add_suffix",
                lhs: ls,
                rhs: rs,
            });
        }
        let bn: usize = rs.iter().product();
        let data = read2(self, rhs, |a, b, _, _| {
            a.data
                .iter()
                .enumerate()
                .map(|(i, &x)| x + b.data[i % bn])
                .collect::<Vec<f64>>()
        });
        let (ai, bi) = (self.idx, rhs.idx);
        let req = req_a || req_b;
        let an = data.len();
        let back: Option<BackwardFn> = req.then(|| {
            Box::new(
                move |_values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                    if req_a {
                        let buf = accum(grads, ai, an);
                        for i in 0..an {
                            buf[i] += g[i];
                        }
                    }
                    if req_b {
                        let buf = accum(grads, bi, bn);
                        for i in 0..an {
                            buf[i % bn] += g[i];
                        }
                    }
                },
            ) as BackwardFn
        });
        Ok(self.tape.push_node(ls, data, req, back))
    }

    /// Row-wise L1 normalization of a matrix: each row is divided by
    /// max(row sum, `floor`), so nonzero rows sum to one exactly and
    /// all-zero rows stay all-zero.
    pub fn row_l1_normalize(&self, floor: f64) -> Result<Tensor> {
        let (shape, req) = read1(self, |v, r| (v.shape.clone(), r));
        if shape.len() != 2 {
            return Err(Error::invalid(
                "row_l1_normalize",
                format!("rank-2 tensor required, got shape {:?}", shape),
            ));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let (data, sums) = read1(self, |v, _| {
            let mut out = vec![0.0; rows * cols];
            let mut sums = vec![0.0; rows];
            for r in 0..rows {
                let x = &v.data[r * cols..(r + 1) * cols];
                let s: f64 = x.iter().sum::<f64>().max(floor);
                sums[r] = s;
                for c in 0..cols {
                    out[r * cols + c] = x[c] / s;
                }
            }
            (out, sums)
        });
        let xi = self.idx;
        let t = self.tape.push_node(shape, data, req, None);
        if !req {
            return Ok(t);
        }
        let yi = t.idx;
        let back: BackwardFn = Box::new(
            move |values: &[Value], g: &[f64], grads: &mut [Option<Vec<f64>>]| {
                let y = &values[yi].data;
                let x = &values[xi].data;
                let buf = accum(grads, xi, rows * cols);
                for r in 0..rows {
                    let off = r * cols;
                    let s = sums[r];
                    let clamped = x[off..off + cols].iter().sum::<f64>() < s;
                    if clamped {
                        // Denominator pinned at the floor: plain scaling.
                        for c in 0..cols {
                            buf[off + c] += g[off + c] / s;
                        }
                    } else {
                        let mut dot = 0.0;
                        for c in 0..cols {
                            dot += g[off + c] * y[off + c];
                        }
                        for c in 0..cols {
                            buf[off + c] += (g[off + c] - dot) / s;
                        }
                    }
                }
            },
        );
        t.tape.inner.borrow_mut().backs[yi] = Some(back);
        Ok(t)
    }

    /// x·w + b with `w` `[k,n]` and `b` `[n]`; batched over leading axes.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.matmul(w)?.add_suffix(b)
    }
}

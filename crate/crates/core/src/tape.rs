//! Reverse-mode differentiation over [`ArrayD`] via a Wengert tape.
//!
//! Every operation records one node holding the ids of its operands and a
//! backward closure. Backward traversal visits nodes in exact reverse order
//! of recording; gradient buffers are zero-initialized before accumulation.

use crate::array::ArrayD;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn<T> = Box<dyn Fn(&[ArrayD<T>], &ArrayD<T>, &mut [ArrayD<T>])>;

struct Node<T> {
    out: usize,
    backward: BackwardFn<T>,
}

pub struct Tape<T: Scalar> {
    vals: Vec<ArrayD<T>>,
    nodes: Vec<Node<T>>,
}

/// Per-variable gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<ArrayD<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> &ArrayD<T> {
        &self.grads[v.0]
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), nodes: Vec::new() }
    }

    /// Record a leaf value (input or parameter).
    pub fn input(&mut self, a: ArrayD<T>) -> Var {
        self.vals.push(a);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.vals[v.0]
    }

    /// Record a custom operation: the already-computed output plus a closure
    /// `(vals, out_grad, grads)` that accumulates into the operand slots.
    pub fn push_op(&mut self, out: ArrayD<T>, backward: BackwardFn<T>) -> Var {
        self.vals.push(out);
        let out_id = self.vals.len() - 1;
        self.nodes.push(Node { out: out_id, backward });
        Var(out_id)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// recorded variable.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.vals[loss.0].len(), 1, "backward root must be scalar");
        let mut grads: Vec<ArrayD<T>> =
            self.vals.iter().map(|v| ArrayD::zeros(v.shape())).collect();
        grads[loss.0].data_mut()[0] = T::one();
        for node in self.nodes.iter().rev() {
            // The producing node is the last reader of its output gradient.
            let gy = std::mem::replace(&mut grads[node.out], ArrayD::zeros(&[0]));
            (node.backward)(&self.vals, &gy, &mut grads);
        }
        Grads { grads }
    }
}

// ---------------------------------------------------------------------------
// Differentiable operator set
// ---------------------------------------------------------------------------

impl<T: Scalar> Tape<T> {
    /// Elementwise sum of two same-shape arrays.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(xa.shape(), xb.shape(), "add: shape mismatch");
        let out = ArrayD::from_vec(
            xa.shape(),
            xa.iter().zip(xb.iter()).map(|(&x, &y)| x + y).collect(),
        );
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                grads[a.0].add_assign(gy);
                grads[b.0].add_assign(gy);
            }),
        )
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.vals[a.0].map(|x| x * c);
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                for (g, &gyv) in grads[a.0].data_mut().iter_mut().zip(gy.data()) {
                    *g += gyv * c;
                }
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.vals[a.0].map(|x| if x > T::zero() { x } else { T::zero() });
        self.push_op(
            out,
            Box::new(move |vals, gy, grads| {
                let x = &vals[a.0];
                for ((g, &gyv), &xv) in
                    grads[a.0].data_mut().iter_mut().zip(gy.data()).zip(x.data())
                {
                    if xv > T::zero() {
                        *g += gyv;
                    }
                }
            }),
        )
    }

    /// Softmax over the last axis. Rows of the output sum to 1.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0];
        let n = *x.shape().last().expect("softmax: rank >= 1");
        assert!(n > 0, "softmax: empty reduction axis");
        assert!(x.all_finite(), "softmax: non-finite input");
        let mut out = ArrayD::zeros(x.shape());
        for (row_in, row_out) in
            x.data().chunks_exact(n).zip(out.data_mut().chunks_exact_mut(n))
        {
            let m = row_in.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o = *o / sum;
            }
        }
        let y = out.clone();
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                // dx_i = y_i * (gy_i - sum_j gy_j y_j), per row
                let ga = grads[a.0].data_mut();
                for r in 0..y.len() / n {
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &gy.data()[r * n..(r + 1) * n];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for i in 0..n {
                        ga[r * n + i] += yr[i] * (gr[i] - dot);
                    }
                }
            }),
        )
    }

    /// 2-D matrix product: a[N,K] x b[K,M] -> [N,M].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(xa.ndim(), 2);
        assert_eq!(xb.ndim(), 2);
        let (n, k) = (xa.shape()[0], xa.shape()[1]);
        let (k2, m) = (xb.shape()[0], xb.shape()[1]);
        assert_eq!(k, k2, "matmul: inner dimension mismatch");
        let out = crate::kernels::matmul(xa, xb);
        self.push_op(
            out,
            Box::new(move |vals, gy, grads| {
                let (xa, xb) = (&vals[a.0], &vals[b.0]);
                // ga = gy . b^T ; gb = a^T . gy
                {
                    let ga = grads[a.0].data_mut();
                    for i in 0..n {
                        for j in 0..m {
                            let g = gy.data()[i * m + j];
                            for p in 0..k {
                                ga[i * k + p] += g * xb.data()[p * m + j];
                            }
                        }
                    }
                }
                {
                    let gb = grads[b.0].data_mut();
                    for i in 0..n {
                        for p in 0..k {
                            let av = xa.data()[i * k + p];
                            for j in 0..m {
                                gb[p * m + j] += av * gy.data()[i * m + j];
                            }
                        }
                    }
                }
            }),
        )
    }

    /// Minimum over the last axis with the index of the smallest element
    /// attaining it. The backward rule routes the incoming gradient entirely
    /// to the argmin slot.
    pub fn min_lastdim_with_argmin(&mut self, a: Var) -> (Var, Vec<usize>) {
        let x = &self.vals[a.0];
        let n = *x.shape().last().expect("min: rank >= 1");
        assert!(n > 0, "min: empty reduction axis");
        let rows = x.len() / n;
        let mut vals = Vec::with_capacity(rows);
        let mut args = Vec::with_capacity(rows);
        for row in x.data().chunks_exact(n) {
            let mut best = row[0];
            let mut bi = 0usize;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v < best {
                    best = v;
                    bi = i;
                }
            }
            vals.push(best);
            args.push(bi);
        }
        let out_shape: Vec<usize> = x.shape()[..x.ndim() - 1].to_vec();
        let out = ArrayD::from_vec(&out_shape, vals);
        let args_cl = args.clone();
        let v = self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                let ga = grads[a.0].data_mut();
                for (r, (&gyv, &am)) in gy.data().iter().zip(&args_cl).enumerate() {
                    ga[r * n + am] += gyv;
                }
            }),
        );
        (v, args)
    }

    /// Depthwise 3x3-style convolution (cross-correlation), "same" zero
    /// padding, each channel convolved with its own kh x kw filter.
    pub fn conv2d_depthwise(&mut self, x: Var, k: Var) -> Var {
        let (xa, ka) = (&self.vals[x.0], &self.vals[k.0]);
        let out = crate::kernels::conv2d_depthwise(xa, ka);
        let (h, w, c) = (xa.shape()[0], xa.shape()[1], xa.shape()[2]);
        let (kh, kw) = (ka.shape()[0], ka.shape()[1]);
        self.push_op(
            out,
            Box::new(move |vals, gy, grads| {
                let (xa, ka) = (&vals[x.0], &vals[k.0]);
                let (ph, pw) = (kh / 2, kw / 2);
                let (gx, gk) = {
                    // disjoint ids by construction
                    let (lo, hi) = if x.0 < k.0 { (x.0, k.0) } else { (k.0, x.0) };
                    let (a, b) = grads.split_at_mut(hi);
                    if x.0 < k.0 {
                        (&mut a[lo], &mut b[0])
                    } else {
                        (&mut b[0], &mut a[lo])
                    }
                };
                for oh in 0..h {
                    for ow in 0..w {
                        for ch in 0..c {
                            let g = gy.data()[(oh * w + ow) * c + ch];
                            if g == T::zero() {
                                continue;
                            }
                            for i in 0..kh {
                                let ih = oh as isize + i as isize - ph as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let iw = ow as isize + j as isize - pw as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ih as usize) * w + iw as usize) * c + ch;
                                    let ki = (i * kw + j) * c + ch;
                                    gx.data_mut()[xi] += g * ka.data()[ki];
                                    gk.data_mut()[ki] += g * xa.data()[xi];
                                }
                            }
                        }
                    }
                }
            }),
        )
    }

    /// Pointwise (1x1) convolution: per-pixel affine map across channels.
    pub fn conv2d_pointwise(&mut self, x: Var, k: Var, b: Var) -> Var {
        let (xa, ka, ba) = (&self.vals[x.0], &self.vals[k.0], &self.vals[b.0]);
        let out = crate::kernels::conv2d_pointwise(xa, ka, ba);
        let (cin, cout) = (ka.shape()[0], ka.shape()[1]);
        let npix = xa.len() / cin;
        self.push_op(
            out,
            Box::new(move |vals, gy, grads| {
                let (xa, ka) = (&vals[x.0], &vals[k.0]);
                for p in 0..npix {
                    for co in 0..cout {
                        let g = gy.data()[p * cout + co];
                        if g == T::zero() {
                            continue;
                        }
                        grads[b.0].data_mut()[co] += g;
                        for ci in 0..cin {
                            let xv = xa.data()[p * cin + ci];
                            grads[k.0].data_mut()[ci * cout + co] += g * xv;
                            grads[x.0].data_mut()[p * cin + ci] += g * ka.data()[ci * cout + co];
                        }
                    }
                }
            }),
        )
    }

    /// Keep every second row/column of an [H,W,C] map.
    pub fn downsample2(&mut self, x: Var) -> Var {
        let xa = &self.vals[x.0];
        assert_eq!(xa.ndim(), 3);
        let (h, w, c) = (xa.shape()[0], xa.shape()[1], xa.shape()[2]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = ArrayD::zeros(&[oh, ow, c]);
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    *out.at_mut(&[i, j, ch]) = xa.at(&[2 * i, 2 * j, ch]);
                }
            }
        }
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                let gx = grads[x.0].data_mut();
                for i in 0..oh {
                    for j in 0..ow {
                        for ch in 0..c {
                            gx[((2 * i) * w + 2 * j) * c + ch] +=
                                gy.data()[(i * ow + j) * c + ch];
                        }
                    }
                }
            }),
        )
    }

    /// Concatenate [H,W,Ci] maps along the channel axis.
    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let h = self.vals[parts[0].0].shape()[0];
        let w = self.vals[parts[0].0].shape()[1];
        let chans: Vec<usize> = parts.iter().map(|p| self.vals[p.0].shape()[2]).collect();
        let ctot: usize = chans.iter().sum();
        let mut out = ArrayD::zeros(&[h, w, ctot]);
        {
            let od = out.data_mut();
            let mut base = 0;
            for (p, &cp) in parts.iter().zip(&chans) {
                let pd = self.vals[p.0].data();
                for pix in 0..h * w {
                    od[pix * ctot + base..pix * ctot + base + cp]
                        .copy_from_slice(&pd[pix * cp..(pix + 1) * cp]);
                }
                base += cp;
            }
        }
        let parts: Vec<Var> = parts.to_vec();
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                let mut base = 0;
                for (p, &cp) in parts.iter().zip(&chans) {
                    let gp = grads[p.0].data_mut();
                    for pix in 0..h * w {
                        for ch in 0..cp {
                            gp[pix * cp + ch] += gy.data()[pix * ctot + base + ch];
                        }
                    }
                    base += cp;
                }
            }),
        )
    }

    /// Mean of a list of same-shape scalars (used for batch averaging).
    pub fn mean_scalars(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = T::from_usize_(parts.len());
        let mut s = T::zero();
        for p in parts {
            s += self.vals[p.0].item();
        }
        let out = ArrayD::scalar(s / n);
        let parts: Vec<Var> = parts.to_vec();
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                let g = gy.item() / n;
                for p in &parts {
                    grads[p.0].data_mut()[0] += g;
                }
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.vals[a.0].iter().fold(T::zero(), |acc, &x| acc + x);
        let out = ArrayD::scalar(s);
        self.push_op(
            out,
            Box::new(move |_vals, gy, grads| {
                let g = gy.item();
                for gv in grads[a.0].data_mut() {
                    *gv += g;
                }
            }),
        )
    }

    /// Elementwise product of same-shape arrays.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(xa.shape(), xb.shape(), "mul: shape mismatch");
        let out = ArrayD::from_vec(
            xa.shape(),
            xa.iter().zip(xb.iter()).map(|(&x, &y)| x * y).collect(),
        );
        self.push_op(
            out,
            Box::new(move |vals, gy, grads| {
                for (i, &g) in gy.data().iter().enumerate() {
                    let (av, bv) = (vals[a.0].data()[i], vals[b.0].data()[i]);
                    grads[a.0].data_mut()[i] += g * bv;
                    grads[b.0].data_mut()[i] += g * av;
                }
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_vec(
            shape,
            (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]));
        let y = t.softmax_lastdim(x);
        for &v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::<f64>::new();
        let x = t.input(rand_array(&mut rng, &[5, 4]));
        let y = t.softmax_lastdim(x);
        for row in t.value(y).data().chunks_exact(4) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn min_lastdim_tie_breaks_to_smallest_index() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::from_vec(&[1, 3], vec![0.7, 0.3, 0.3]));
        let (v, args) = t.min_lastdim_with_argmin(x);
        assert_eq!(t.value(v).data(), &[0.3]);
        assert_eq!(args, vec![1]);
    }

    #[test]
    fn min_backward_routes_to_argmin_only() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::from_vec(&[2, 3], vec![0.7, 0.3, 0.5, 0.1, 0.2, 0.1]));
        let (v, args) = t.min_lastdim_with_argmin(x);
        let s = t.sum_all(v);
        let g = t.backward(s);
        let gx = g.get(x);
        for (r, &am) in args.iter().enumerate() {
            for c in 0..3 {
                let expect = if c == am { 1.0 } else { 0.0 };
                assert_eq!(gx.at(&[r, c]), expect);
            }
        }
        assert_eq!(args, vec![1, 0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_array(&mut rng, &[2, 3]);
        let b = rand_array(&mut rng, &[3, 2]);
        let mut t = Tape::new();
        let (va, vb) = (t.input(a.clone()), t.input(b.clone()));
        let y = t.matmul(va, vb);
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..3 {
                    s += a.at(&[i, p]) * b.at(&[p, j]);
                }
                assert!((t.value(y).at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_zero_input_gives_zero_output() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::zeros(&[5, 5, 2]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = t.input(rand_array(&mut rng, &[3, 3, 2]));
        let y = t.conv2d_depthwise(x, k);
        assert!(t.value(y).iter().all(|&v| v == 0.0));
        assert_eq!(t.value(y).shape(), &[5, 5, 2]);
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_array(&mut rng, &[5, 4, 2]);
        let mut k = ArrayD::zeros(&[3, 3, 2]);
        *k.at_mut(&[1, 1, 0]) = 1.0;
        *k.at_mut(&[1, 1, 1]) = 1.0;
        let mut t = Tape::new();
        let (vx, vk) = (t.input(x.clone()), t.input(k));
        let y = t.conv2d_depthwise(vx, vk);
        assert_eq!(t.value(y), &x);
    }

    /// Naive nested-loop reference for the depthwise convolution.
    fn depthwise_oracle(x: &ArrayD<f64>, k: &ArrayD<f64>) -> ArrayD<f64> {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = (k.shape()[0], k.shape()[1]);
        let mut out = ArrayD::zeros(&[h, w, c]);
        for oh in 0..h {
            for ow in 0..w {
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..kh {
                        for j in 0..kw {
                            let ih = oh as isize + i as isize - (kh / 2) as isize;
                            let iw = ow as isize + j as isize - (kw / 2) as isize;
                            if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                continue;
                            }
                            s += x.at(&[ih as usize, iw as usize, ch]) * k.at(&[i, j, ch]);
                        }
                    }
                    *out.at_mut(&[oh, ow, ch]) = s;
                }
            }
        }
        out
    }

    #[test]
    fn depthwise_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = rand_array(&mut rng, &[4, 4, 3]);
            let k = rand_array(&mut rng, &[3, 3, 3]);
            let mut t = Tape::new();
            let (vx, vk) = (t.input(x.clone()), t.input(k.clone()));
            let y = t.conv2d_depthwise(vx, vk);
            let oracle = depthwise_oracle(&x, &k);
            for (a, b) in t.value(y).iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic(expected = "channel count mismatch")]
    fn depthwise_rejects_channel_mismatch() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::zeros(&[4, 4, 3]));
        let k = t.input(ArrayD::zeros(&[3, 3, 2]));
        t.conv2d_depthwise(x, k);
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_array(&mut rng, &[3, 3, 2]);
        let k = ArrayD::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = ArrayD::zeros(&[2]);
        let mut t = Tape::new();
        let (vx, vk, vb) = (t.input(x.clone()), t.input(k), t.input(b));
        let y = t.conv2d_pointwise(vx, vk, vb);
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn pointwise_scalar_affine() {
        let mut t = Tape::<f64>::new();
        let x = t.input(ArrayD::from_vec(&[1, 1, 1], vec![3.0]));
        let k = t.input(ArrayD::from_vec(&[1, 1], vec![2.0]));
        let b = t.input(ArrayD::from_vec(&[1], vec![1.0]));
        let y = t.conv2d_pointwise(x, k, b);
        assert_eq!(t.value(y).data(), &[7.0]);
    }

    #[test]
    fn pointwise_matches_matvec_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_array(&mut rng, &[3, 3, 4]);
        let k = rand_array(&mut rng, &[4, 2]);
        let b = rand_array(&mut rng, &[2]);
        let mut t = Tape::new();
        let (vx, vk, vb) = (t.input(x.clone()), t.input(k.clone()), t.input(b.clone()));
        let y = t.conv2d_pointwise(vx, vk, vb);
        for p in 0..9 {
            for co in 0..2 {
                let mut s = b.data()[co];
                for ci in 0..4 {
                    s += x.data()[p * 4 + ci] * k.at(&[ci, co]);
                }
                assert!((t.value(y).data()[p * 2 + co] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_grad_check() {
        // f(x) = sum(x^2): analytic gradient [2, 4] at x = [1, 2]
        let x = ArrayD::from_vec(&[2], vec![1.0, 2.0]);
        let f = |t: &mut Tape<f64>, vars: &[Var]| {
            let sq = t.mul(vars[0], vars[0]);
            t.sum_all(sq)
        };
        let mut t = Tape::new();
        let v = t.input(x.clone());
        let out = f(&mut t, &[v]);
        let g = t.backward(out);
        assert!((g.get(v).data()[0] - 2.0).abs() < 1e-12);
        assert!((g.get(v).data()[1] - 4.0).abs() < 1e-12);
        let err = grad_check(f, &[x], 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn every_op_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // depthwise + pointwise + relu + softmax + matmul + min + concat chain
        let x = rand_array(&mut rng, &[4, 4, 2]);
        let k = rand_array(&mut rng, &[3, 3, 2]);
        let pk = rand_array(&mut rng, &[2, 3]);
        let pb = rand_array(&mut rng, &[3]);
        let f = |t: &mut Tape<f64>, vars: &[Var]| {
            let c = t.conv2d_depthwise(vars[0], vars[1]);
            let c = t.conv2d_pointwise(c, vars[2], vars[3]);
            let r = t.relu(c);
            let s = t.softmax_lastdim(r);
            let (m, _) = t.min_lastdim_with_argmin(s);
            let d = t.downsample2(c);
            let sd = t.sum_all(d);
            let sm = t.sum_all(m);
            let a = t.add(sm, sd);
            let half = t.scale(a, 0.5);
            t.sum_all(half)
        };
        let err = grad_check(f, &[x, k, pk, pb], 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn matmul_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = rand_array(&mut rng, &[3, 4]);
        let b = rand_array(&mut rng, &[4, 2]);
        let err = grad_check(
            |t, vars| {
                let m = t.matmul(vars[0], vars[1]);
                let sq = t.mul(m, m);
                t.sum_all(sq)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn tape_replay_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let x = rand_array(&mut rng, &[4, 4, 2]);
            let k = rand_array(&mut rng, &[3, 3, 2]);
            let mut t = Tape::new();
            let (vx, vk) = (t.input(x), t.input(k));
            let c = t.conv2d_depthwise(vx, vk);
            let s = t.softmax_lastdim(c);
            let out = t.sum_all(s);
            let g = t.backward(out);
            (t.value(s).clone(), g.get(vx).clone())
        };
        let (a1, g1) = run();
        let (a2, g2) = run();
        assert_eq!(a1, a2);
        assert_eq!(g1, g2);
    }
}

//! Pure forward kernels shared by the tape ops and the test oracles' targets.

use crate::array::ArrayD;
use crate::scalar::Scalar;
use rayon::prelude::*;

/// a[N,K] x b[K,M] -> [N,M].
pub fn matmul<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>) -> ArrayD<T> {
    assert_eq!(a.ndim(), 2);
    assert_eq!(b.ndim(), 2);
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let (k2, m) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul: inner dimension mismatch");
    let mut out = ArrayD::zeros(&[n, m]);
    let od = out.data_mut();
    for i in 0..n {
        for p in 0..k {
            let av = a.data()[i * k + p];
            let brow = &b.data()[p * m..(p + 1) * m];
            let orow = &mut od[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Depthwise convolution (cross-correlation), "same" zero padding.
/// x: [H,W,C], k: [kh,kw,C] with kh, kw odd.
pub fn conv2d_depthwise<T: Scalar>(x: &ArrayD<T>, k: &ArrayD<T>) -> ArrayD<T> {
    assert_eq!(x.ndim(), 3);
    assert_eq!(k.ndim(), 3);
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, kc) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    assert_eq!(c, kc, "depthwise conv: channel count mismatch ({c} vs {kc})");
    assert!(kh % 2 == 1 && kw % 2 == 1, "depthwise conv: kernel extents must be odd");
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = ArrayD::zeros(&[h, w, c]);
    let od = out.data_mut();
    for oh in 0..h {
        for ow in 0..w {
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
                    let xrow = &x.data()[((ih as usize) * w + iw as usize) * c..][..c];
                    let krow = &k.data()[(i * kw + j) * c..][..c];
                    let orow = &mut od[(oh * w + ow) * c..][..c];
                    for ch in 0..c {
                        orow[ch] += xrow[ch] * krow[ch];
                    }
                }
            }
        }
    }
    out
}

/// Pointwise (1x1) convolution. x: [H,W,Cin], k: [Cin,Cout], b: [Cout].
pub fn conv2d_pointwise<T: Scalar>(x: &ArrayD<T>, k: &ArrayD<T>, b: &ArrayD<T>) -> ArrayD<T> {
    assert_eq!(x.ndim(), 3);
    assert_eq!(k.ndim(), 2);
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kin, cout) = (k.shape()[0], k.shape()[1]);
    assert_eq!(cin, kin, "pointwise conv: channel count mismatch");
    assert_eq!(b.len(), cout, "pointwise conv: bias length mismatch");
    let mut out = ArrayD::zeros(&[h, w, cout]);
    let od = out.data_mut();
    for p in 0..h * w {
        let xrow = &x.data()[p * cin..(p + 1) * cin];
        let orow = &mut od[p * cout..(p + 1) * cout];
        orow.copy_from_slice(b.data());
        for (ci, &xv) in xrow.iter().enumerate() {
            let krow = &k.data()[ci * cout..(ci + 1) * cout];
            for (o, &kv) in orow.iter_mut().zip(krow) {
                *o += xv * kv;
            }
        }
    }
    out
}

/// Squared Euclidean distances between row sets, via the norm expansion
/// |a|^2 + |b|^2 - 2<a,b>, clamped below at 0.
pub fn pairwise_sqdist<T: Scalar>(a: &ArrayD<T>, b: &ArrayD<T>) -> ArrayD<T> {
    assert_eq!(a.ndim(), 2);
    assert_eq!(b.ndim(), 2);
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let (m, d2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(d, d2, "pairwise_sqdist: dimension mismatch");
    let sqnorm = |rows: &ArrayD<T>, cnt: usize| -> Vec<T> {
        (0..cnt)
            .map(|i| {
                rows.data()[i * d..(i + 1) * d]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v * v)
            })
            .collect()
    };
    let (na, nb) = (sqnorm(a, n), sqnorm(b, m));
    let mut out = ArrayD::zeros(&[n, m]);
    out.data_mut()
        .par_chunks_exact_mut(m)
        .enumerate()
        .for_each(|(i, orow)| {
            let arow = &a.data()[i * d..(i + 1) * d];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = &b.data()[j * d..(j + 1) * d];
                let dot = arow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                let s = na[i] + nb[j] - (T::one() + T::one()) * dot;
                *o = if s > T::zero() { s } else { T::zero() };
            }
        });
    out
}

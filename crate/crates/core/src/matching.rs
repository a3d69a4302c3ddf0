//! Embedding-space matching: global first-frame matching, global
//! previous-frame matching, and windowed local previous-frame matching.
//!
//! All variants share the same per-pair arithmetic (squared distance summed
//! over embedding dimensions in order, then `1 - 2/(1 + exp(s))`) and the
//! same tie-break (smallest flat candidate index), so the windowed kernel is
//! bitwise-identical to the global previous-frame kernel once the window
//! covers the whole grid.

use crate::array::ArrayD;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const BACKGROUND_ID: u32 = 0;

/// Per-pixel embedding vectors on the stride-s grid, [H',W',D].
#[derive(Clone, Debug)]
pub struct EmbeddingMap<T> {
    pub grid: ArrayD<T>,
    pub stride: usize,
}

impl<T: Scalar> EmbeddingMap<T> {
    pub fn new(grid: ArrayD<T>, stride: usize) -> Self {
        assert_eq!(grid.ndim(), 3);
        EmbeddingMap { grid, stride }
    }
    pub fn height(&self) -> usize {
        self.grid.shape()[0]
    }
    pub fn width(&self) -> usize {
        self.grid.shape()[1]
    }
    pub fn dim(&self) -> usize {
        self.grid.shape()[2]
    }
}

/// Per-pixel object ids on a grid plus the ordered object-id set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectLabelMap {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
    /// Duplicate-free, sorted, always contains the background id 0.
    pub objects: Vec<u32>,
}

impl ObjectLabelMap {
    /// Build with the object set derived from the labels (plus background).
    pub fn from_labels(h: usize, w: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), h * w);
        let mut objects: Vec<u32> = labels.to_vec();
        objects.push(BACKGROUND_ID);
        objects.sort_unstable();
        objects.dedup();
        ObjectLabelMap { h, w, labels, objects }
    }

    /// Build with a caller-fixed object set (predicted maps may lack objects).
    pub fn with_objects(h: usize, w: usize, labels: Vec<u32>, objects: Vec<u32>) -> Self {
        assert_eq!(labels.len(), h * w);
        debug_assert!(objects.windows(2).all(|p| p[0] < p[1]), "objects must be sorted unique");
        ObjectLabelMap { h, w, labels, objects }
    }

    pub fn at(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.w + x]
    }

    /// Flat indices carrying the given id, ascending.
    pub fn pixels_of(&self, id: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == id).then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchKind {
    GlobalFirst,
    GlobalPrev,
    LocalPrev,
}

/// Per-object [O,H',W'] distance maps with entries in [0,1].
#[derive(Clone, Debug)]
pub struct DistanceMapSet<T> {
    pub maps: ArrayD<T>,
    pub kind: MatchKind,
    pub objects: Vec<u32>,
}

/// Search window radius, in stride-grid pixels.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub k: usize,
}

impl WindowSpec {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "window radius must be >= 1");
        WindowSpec { k }
    }
}

/// Distance of a squared embedding-space distance: `1 - 2/(1 + exp(s))`,
/// equal to tanh(s/2). Always in [0,1].
#[inline]
pub fn squared_to_distance<T: Scalar>(s: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / (T::one() + s.exp())
}

/// Pairwise distance between two embedding vectors.
pub fn embedding_distance<T: Scalar>(e_p: &[T], e_q: &[T]) -> T {
    squared_to_distance(sqdist(e_p, e_q))
}

#[inline]
fn sqdist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

const NO_MATCH: usize = usize::MAX;

/// Min distance from each query pixel to a candidate list (ascending flat
/// indices into `refs`). Returns (distances, argmin flat index) per pixel;
/// empty candidate lists yield distance 1 and NO_MATCH.
fn min_over_candidates<T: Scalar>(
    queries: &ArrayD<T>,
    refs: &ArrayD<T>,
    candidates: &[usize],
    dist_out: &mut [T],
    arg_out: &mut [usize],
) {
    let d = queries.shape()[2];
    let q = queries.data();
    let r = refs.data();
    dist_out
        .par_iter_mut()
        .zip(arg_out.par_iter_mut())
        .enumerate()
        .for_each(|(p, (dv, av))| {
            if candidates.is_empty() {
                *dv = T::one();
                *av = NO_MATCH;
                return;
            }
            let qrow = &q[p * d..(p + 1) * d];
            let mut best = T::infinity();
            let mut bi = NO_MATCH;
            for &c in candidates {
                let s = sqdist(qrow, &r[c * d..(c + 1) * d]);
                if s < best {
                    best = s;
                    bi = c;
                }
            }
            *dv = squared_to_distance(best);
            *av = bi;
        });
}

/// Core of global matching: per-object candidate lists over the whole
/// reference grid. `require_nonempty` distinguishes first-frame matching
/// (contract: P_{1,o} never empty) from previous-frame matching (empty set
/// maps to constant 1).
pub fn global_match_forward<T: Scalar>(
    emb_t: &ArrayD<T>,
    ref_emb: &ArrayD<T>,
    ref_labels: &ObjectLabelMap,
    subsample: Option<(usize, u64)>,
    require_nonempty: bool,
) -> (ArrayD<T>, Vec<usize>) {
    let (h, w) = (emb_t.shape()[0], emb_t.shape()[1]);
    assert_eq!(emb_t.shape()[2], ref_emb.shape()[2], "embedding dimension mismatch");
    assert_eq!(ref_labels.h, ref_emb.shape()[0]);
    assert_eq!(ref_labels.w, ref_emb.shape()[1]);
    let n_obj = ref_labels.objects.len();
    let npix = h * w;
    let mut maps = ArrayD::zeros(&[n_obj, h, w]);
    let mut args = vec![NO_MATCH; n_obj * npix];
    for (oi, &obj) in ref_labels.objects.iter().enumerate() {
        let mut cands = ref_labels.pixels_of(obj);
        if require_nonempty {
            assert!(!cands.is_empty(), "object {obj} has no reference pixels");
        }
        if let Some((limit, seed)) = subsample {
            if cands.len() > limit {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(obj as u64));
                let mut picked: Vec<usize> =
                    rand::seq::index::sample(&mut rng, cands.len(), limit)
                        .into_iter()
                        .map(|i| cands[i])
                        .collect();
                picked.sort_unstable();
                cands = picked;
            }
        }
        min_over_candidates(
            emb_t,
            ref_emb,
            &cands,
            &mut maps.data_mut()[oi * npix..(oi + 1) * npix],
            &mut args[oi * npix..(oi + 1) * npix],
        );
    }
    (maps, args)
}

/// Windowed local matching forward. Candidates for pixel p are the
/// previous-frame pixels of the object within k grid cells of p in both
/// axes, clipped to the grid.
pub fn local_match_forward<T: Scalar>(
    emb_t: &ArrayD<T>,
    prev_emb: &ArrayD<T>,
    prev_labels: &ObjectLabelMap,
    window: WindowSpec,
) -> (ArrayD<T>, Vec<usize>) {
    let (h, w, d) = (emb_t.shape()[0], emb_t.shape()[1], emb_t.shape()[2]);
    assert_eq!(prev_emb.shape()[2], d, "embedding dimension mismatch");
    assert_eq!(prev_labels.h, prev_emb.shape()[0]);
    assert_eq!(prev_labels.w, prev_emb.shape()[1]);
    let (ph, pw) = (prev_labels.h, prev_labels.w);
    let n_obj = prev_labels.objects.len();
    let npix = h * w;
    let k = window.k;
    let mut maps = ArrayD::zeros(&[n_obj, h, w]);
    let mut args = vec![NO_MATCH; n_obj * npix];
    let q = emb_t.data();
    let r = prev_emb.data();
    for (oi, &obj) in prev_labels.objects.iter().enumerate() {
        let slice = &mut maps.data_mut()[oi * npix..(oi + 1) * npix];
        let arg_slice = &mut args[oi * npix..(oi + 1) * npix];
        slice
            .par_iter_mut()
            .zip(arg_slice.par_iter_mut())
            .enumerate()
            .for_each(|(p, (dv, av))| {
                let (y, x) = (p / w, p % w);
                let y0 = y.saturating_sub(k);
                let y1 = (y + k).min(ph - 1);
                let x0 = x.saturating_sub(k);
                let x1 = (x + k).min(pw - 1);
                let qrow = &q[p * d..(p + 1) * d];
                let mut best = T::infinity();
                let mut bi = NO_MATCH;
                for wy in y0..=y1 {
                    for wx in x0..=x1 {
                        let c = wy * pw + wx;
                        if prev_labels.labels[c] != obj {
                            continue;
                        }
                        let s = sqdist(qrow, &r[c * d..(c + 1) * d]);
                        if s < best {
                            best = s;
                            bi = c;
                        }
                    }
                }
                if bi == NO_MATCH {
                    *dv = T::one();
                } else {
                    *dv = squared_to_distance(best);
                }
                *av = bi;
            });
    }
    (maps, args)
}

/// Backward rule shared by all matching variants: the gradient of each map
/// entry flows to the query pixel's embedding and its argmin candidate only,
/// through d = tanh(s/2).
fn push_match_op<T: Scalar>(
    tape: &mut Tape<T>,
    emb_t: Var,
    ref_emb: Var,
    maps: ArrayD<T>,
    args: Vec<usize>,
    dim: usize,
) -> Var {
    let out_vals = maps.clone();
    let npix = maps.shape()[1] * maps.shape()[2];
    tape.push_op(
        maps,
        Box::new(move |vals, gy, grads| {
            let two = T::one() + T::one();
            for (idx, (&g, &am)) in gy.data().iter().zip(&args).enumerate() {
                if am == NO_MATCH || g == T::zero() {
                    continue;
                }
                let p = idx % npix;
                let dval = out_vals.data()[idx];
                // dd/ds for d = tanh(s/2)
                let coeff = g * (T::one() - dval * dval) / two;
                for di in 0..dim {
                    let ep = vals[emb_t.0].data()[p * dim + di];
                    let eq = vals[ref_emb.0].data()[am * dim + di];
                    let gs = coeff * two * (ep - eq);
                    grads[emb_t.0].data_mut()[p * dim + di] += gs;
                    grads[ref_emb.0].data_mut()[am * dim + di] -= gs;
                }
            }
        }),
    )
}

/// Global matching against the first-frame reference pixels (optionally
/// subsampled per object), differentiable through the argmin.
pub fn global_match<T: Scalar>(
    tape: &mut Tape<T>,
    emb_t: Var,
    ref_emb: Var,
    ref_labels: &ObjectLabelMap,
    subsample: Option<usize>,
    seed: u64,
) -> Var {
    let sub = subsample.map(|s| (s, seed));
    let (maps, args) =
        global_match_forward(tape.value(emb_t), tape.value(ref_emb), ref_labels, sub, true);
    let dim = tape.value(emb_t).shape()[2];
    push_match_op(tape, emb_t, ref_emb, maps, args, dim)
}

/// Global matching against the previous frame; objects absent from the
/// previous-frame labels get a constant-1 map.
pub fn global_prev_match<T: Scalar>(
    tape: &mut Tape<T>,
    emb_t: Var,
    prev_emb: Var,
    prev_labels: &ObjectLabelMap,
) -> Var {
    let (maps, args) =
        global_match_forward(tape.value(emb_t), tape.value(prev_emb), prev_labels, None, false);
    let dim = tape.value(emb_t).shape()[2];
    push_match_op(tape, emb_t, prev_emb, maps, args, dim)
}

/// Windowed local matching against the previous frame.
pub fn local_match<T: Scalar>(
    tape: &mut Tape<T>,
    emb_t: Var,
    prev_emb: Var,
    prev_labels: &ObjectLabelMap,
    window: WindowSpec,
) -> Var {
    let (maps, args) =
        local_match_forward(tape.value(emb_t), tape.value(prev_emb), prev_labels, window);
    let dim = tape.value(emb_t).shape()[2];
    push_match_op(tape, emb_t, prev_emb, maps, args, dim)
}

// Tape-free variants for inference and benchmarking.

pub fn global_match_maps<T: Scalar>(
    emb_t: &EmbeddingMap<T>,
    ref_emb: &EmbeddingMap<T>,
    ref_labels: &ObjectLabelMap,
    subsample: Option<usize>,
    seed: u64,
) -> DistanceMapSet<T> {
    let sub = subsample.map(|s| (s, seed));
    let (maps, _) = global_match_forward(&emb_t.grid, &ref_emb.grid, ref_labels, sub, true);
    DistanceMapSet { maps, kind: MatchKind::GlobalFirst, objects: ref_labels.objects.clone() }
}

pub fn global_prev_match_maps<T: Scalar>(
    emb_t: &EmbeddingMap<T>,
    prev_emb: &EmbeddingMap<T>,
    prev_labels: &ObjectLabelMap,
) -> DistanceMapSet<T> {
    let (maps, _) = global_match_forward(&emb_t.grid, &prev_emb.grid, prev_labels, None, false);
    DistanceMapSet { maps, kind: MatchKind::GlobalPrev, objects: prev_labels.objects.clone() }
}

pub fn local_match_maps<T: Scalar>(
    emb_t: &EmbeddingMap<T>,
    prev_emb: &EmbeddingMap<T>,
    prev_labels: &ObjectLabelMap,
    window: WindowSpec,
) -> DistanceMapSet<T> {
    let (maps, _) = local_match_forward(&emb_t.grid, &prev_emb.grid, prev_labels, window);
    DistanceMapSet { maps, kind: MatchKind::LocalPrev, objects: prev_labels.objects.clone() }
}

/// Wall-clock comparison of windowed local matching vs global
/// previous-frame matching on identical random inputs.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchReport {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub window_k: usize,
    pub trials: usize,
    pub local_ns: u128,
    pub global_prev_ns: u128,
    pub speedup: f64,
    /// Per-pixel candidate bound for the local kernel, (2k+1)^2.
    pub local_candidates_max: usize,
    /// Per-pixel candidate count for the global kernel, H'*W'.
    pub global_candidates: usize,
}

pub fn bench_matching(h: usize, w: usize, d: usize, k: usize, trials: usize) -> BenchReport {
    use rand::Rng;
    assert!(h >= 1 && w >= 1 && d >= 1 && k >= 1 && trials >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mk_emb = |rng: &mut ChaCha8Rng| {
        let data: Vec<f32> = (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingMap::new(ArrayD::from_vec(&[h, w, d], data), 4)
    };
    let emb_t = mk_emb(&mut rng);
    let prev_emb = mk_emb(&mut rng);
    let labels: Vec<u32> = (0..h * w).map(|_| rng.gen_range(0..3u32)).collect();
    let prev_labels = ObjectLabelMap::from_labels(h, w, labels);
    let window = WindowSpec::new(k);

    let mut local_times = Vec::with_capacity(trials);
    let mut global_times = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t0 = std::time::Instant::now();
        let l = local_match_maps(&emb_t, &prev_emb, &prev_labels, window);
        local_times.push(t0.elapsed().as_nanos());
        let t1 = std::time::Instant::now();
        let g = global_prev_match_maps(&emb_t, &prev_emb, &prev_labels);
        global_times.push(t1.elapsed().as_nanos());
        std::hint::black_box((l.maps.len(), g.maps.len()));
    }
    local_times.sort_unstable();
    global_times.sort_unstable();
    let local_ns = local_times[trials / 2];
    let global_prev_ns = global_times[trials / 2];
    BenchReport {
        height: h,
        width: w,
        dim: d,
        window_k: k,
        trials,
        local_ns,
        global_prev_ns,
        speedup: global_prev_ns as f64 / local_ns as f64,
        local_candidates_max: (2 * k + 1) * (2 * k + 1),
        global_candidates: h * w,
    }
}

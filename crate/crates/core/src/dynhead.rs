//! Dynamic segmentation head: one shared-weight logit network instantiated
//! per object, logits stacked and softmaxed over the object dimension.

use crate::array::ArrayD;
use crate::param::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub head_channels: usize,
    /// Depthwise kernel size; kept large for receptive field.
    pub kernel: usize,
    pub layers: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { head_channels: 256, kernel: 7, layers: 4 }
    }
}

/// Shared head weights: `layers` depthwise-separable conv layers with ReLU,
/// then a 1x1 convolution to a single logit channel. Exactly one weight set
/// regardless of the number of objects.
#[derive(Clone, Debug)]
pub struct HeadWeights<T> {
    pub cfg: HeadConfig,
    pub in_channels: usize,
    pub params: ParamSet<T>,
}

impl<T: Scalar> HeadWeights<T> {
    /// `in_channels` counts the shared features plus the three per-object
    /// maps (global, local, previous prediction).
    pub fn init(cfg: &HeadConfig, in_channels: usize, seed: u64) -> Self {
        assert!(cfg.kernel % 2 == 1, "head kernel must be odd");
        assert!(cfg.layers >= 1 && cfg.head_channels >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let mut cin = in_channels;
        for i in 0..cfg.layers {
            crate::featnet::push_sep_layer(
                &mut params,
                &mut rng,
                &format!("head{i}"),
                cfg.kernel,
                cin,
                cfg.head_channels,
            );
            cin = cfg.head_channels;
        }
        crate::featnet::push_pointwise(&mut params, &mut rng, "logit", cin, 1);
        HeadWeights { cfg: cfg.clone(), in_channels, params }
    }
}

/// Per-object input: the three [H',W',1] cue maps plus shared features.
pub struct HeadInput {
    pub global_map: Var,
    pub local_map: Var,
    pub prev_prob: Var,
    pub features: Var,
}

/// Logits for one object. Channel order is frozen as
/// [global, local, prev_prob, features...].
pub fn head_logits<T: Scalar>(
    tape: &mut Tape<T>,
    input: &HeadInput,
    w: &HeadWeights<T>,
    vars: &[Var],
) -> Var {
    let mut x =
        tape.concat_lastdim(&[input.global_map, input.local_map, input.prev_prob, input.features]);
    assert_eq!(
        tape.value(x).shape()[2],
        w.in_channels,
        "head input channel count mismatch"
    );
    for i in 0..w.cfg.layers {
        x = tape.conv2d_depthwise(x, vars[3 * i]);
        x = tape.conv2d_pointwise(x, vars[3 * i + 1], vars[3 * i + 2]);
        x = tape.relu(x);
    }
    let base = 3 * w.cfg.layers;
    tape.conv2d_pointwise(x, vars[base], vars[base + 1])
}

/// Run the shared head once per object, stack the logit maps along a new
/// object axis and softmax over it. Inputs are [O,H',W'] distance-map vars
/// and an [H',W',O] previous-posterior var.
pub fn segment_step<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    dist_global: Var,
    dist_local: Var,
    prev_probs: Var,
    n_objects: usize,
    w: &HeadWeights<T>,
    vars: &[Var],
) -> Var {
    let (h, wd) = {
        let s = tape.value(features).shape();
        (s[0], s[1])
    };
    assert_eq!(tape.value(dist_global).shape(), &[n_objects, h, wd]);
    assert_eq!(tape.value(dist_local).shape(), &[n_objects, h, wd]);
    assert_eq!(tape.value(prev_probs).shape(), &[h, wd, n_objects]);
    let mut logits = Vec::with_capacity(n_objects);
    for oi in 0..n_objects {
        let g = slice_object_map(tape, dist_global, oi, n_objects);
        let l = slice_object_map(tape, dist_local, oi, n_objects);
        let p = slice_prob_channel(tape, prev_probs, oi, n_objects);
        let input = HeadInput { global_map: g, local_map: l, prev_prob: p, features };
        logits.push(head_logits(tape, &input, w, vars));
    }
    let stacked = tape.concat_lastdim(&logits);
    tape.softmax_lastdim(stacked)
}

/// View object `oi` of an [O,H,W] map set as an [H,W,1] var.
fn slice_object_map<T: Scalar>(tape: &mut Tape<T>, maps: Var, oi: usize, n_obj: usize) -> Var {
    let m = tape.value(maps);
    let (h, w) = (m.shape()[1], m.shape()[2]);
    let npix = h * w;
    let out = ArrayD::from_vec(&[h, w, 1], m.data()[oi * npix..(oi + 1) * npix].to_vec());
    let _ = n_obj;
    tape.push_op(
        out,
        Box::new(move |_vals, gy, grads| {
            let gm = grads[maps.0].data_mut();
            for (p, &g) in gy.data().iter().enumerate() {
                gm[oi * npix + p] += g;
            }
        }),
    )
}

/// View channel `oi` of an [H,W,O] posterior as an [H,W,1] var.
fn slice_prob_channel<T: Scalar>(tape: &mut Tape<T>, probs: Var, oi: usize, n_obj: usize) -> Var {
    let m = tape.value(probs);
    let (h, w) = (m.shape()[0], m.shape()[1]);
    let data: Vec<T> = (0..h * w).map(|p| m.data()[p * n_obj + oi]).collect();
    let out = ArrayD::from_vec(&[h, w, 1], data);
    tape.push_op(
        out,
        Box::new(move |_vals, gy, grads| {
            let gm = grads[probs.0].data_mut();
            for (p, &g) in gy.data().iter().enumerate() {
                gm[p * n_obj + oi] += g;
            }
        }),
    )
}

/// Per-pixel posterior over objects with its ordered id list.
#[derive(Clone, Debug)]
pub struct ProbabilityMap<T> {
    pub probs: ArrayD<T>,
    pub objects: Vec<u32>,
}

impl<T: Scalar> ProbabilityMap<T> {
    pub fn new(probs: ArrayD<T>, objects: Vec<u32>) -> Self {
        assert_eq!(probs.ndim(), 3);
        assert_eq!(*probs.shape().last().unwrap(), objects.len());
        ProbabilityMap { probs, objects }
    }

    /// Per-pixel argmax labels; ties go to the smaller object id (earlier
    /// channel, since objects are sorted).
    pub fn argmax_labels(&self) -> crate::matching::ObjectLabelMap {
        let (h, w, o) = (self.probs.shape()[0], self.probs.shape()[1], self.probs.shape()[2]);
        let labels: Vec<u32> = self
            .probs
            .data()
            .chunks_exact(o)
            .map(|row| {
                let mut bi = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[bi] {
                        bi = i;
                    }
                }
                self.objects[bi]
            })
            .collect();
        crate::matching::ObjectLabelMap::with_objects(h, w, labels, self.objects.clone())
    }
}

//! Training procedure: three-frame sampling, ground-truth previous-frame
//! conditioning, flip/scale/crop augmentation, ablation toggles, and the
//! momentum-SGD loop.

use crate::array::ArrayD;
use crate::dynhead;
use crate::error::{Error, Result};
use crate::featnet;
use crate::imgproc;
use crate::matching::{self, ObjectLabelMap, WindowSpec};
use crate::model::Model;
use crate::objective::{bootstrapped_ce, LossConfig, OptimState};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// First-frame global matching.
    pub use_ff_gm: bool,
    /// Previous-frame local (windowed) matching.
    pub use_pf_lm: bool,
    /// Previous-frame global matching (replaces local matching).
    pub use_pf_gm: bool,
    /// Previous-frame predictions as features.
    pub use_pfp: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { use_ff_gm: true, use_pf_lm: true, use_pf_gm: false, use_pfp: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_videos: usize,
    /// Square crop side in pixels, divisible by 4.
    pub crop: usize,
    /// Reference-pixel cap per object for global matching during training.
    pub subsample_refs: usize,
    pub window_k: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub loss: LossConfig,
    pub lr: f64,
    pub momentum: f64,
    /// Stop early once the step loss drops below this value.
    #[serde(default)]
    pub stop_at_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200_000,
            batch_videos: 3,
            // nearest stride-multiple below the 465px reference crop
            crop: 464,
            subsample_refs: 1024,
            window_k: 15,
            seed: 0,
            ablation: Ablation::default(),
            loss: LossConfig::default(),
            lr: 0.0007,
            momentum: 0.9,
            stop_at_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop % 4 != 0 {
            return Err(Error::Config("crop must be divisible by 4".into()));
        }
        if self.ablation.use_pf_lm && self.ablation.use_pf_gm {
            return Err(Error::Config(
                "at most one of use_pf_lm / use_pf_gm may be enabled".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Reference, previous and current frames (with masks) from one video.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    pub reference: (ArrayD<T>, ObjectLabelMap),
    pub previous: (ArrayD<T>, ObjectLabelMap),
    pub current: (ArrayD<T>, ObjectLabelMap),
}

/// Pick reference uniformly over all frames and an adjacent (previous,
/// current) pair uniformly over consecutive pairs.
pub fn sample_triplet_indices(n_frames: usize, rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    assert!(n_frames >= 2, "video must have at least 2 frames");
    let r = rng.gen_range(0..n_frames);
    let p = rng.gen_range(0..n_frames - 1);
    (r, p, p + 1)
}

pub fn sample_triplet<T: Scalar>(
    frames: &[ArrayD<T>],
    masks: &[ObjectLabelMap],
    rng: &mut ChaCha8Rng,
) -> TrainSample<T> {
    let (r, p, c) = sample_triplet_indices(frames.len(), rng);
    TrainSample {
        reference: (frames[r].clone(), masks[r].clone()),
        previous: (frames[p].clone(), masks[p].clone()),
        current: (frames[c].clone(), masks[c].clone()),
    }
}

/// Shared geometric transform of one sample: horizontal flip (p=0.5),
/// isotropic rescale in [0.7, 1.3] (floored so the crop still fits), and a
/// random crop, identical for all three frames.
pub fn augment<T: Scalar>(
    sample: &TrainSample<T>,
    rng: &mut ChaCha8Rng,
    crop: usize,
) -> TrainSample<T> {
    let (h, w) = (sample.reference.0.shape()[0], sample.reference.0.shape()[1]);
    let flip = rng.gen_bool(0.5);
    let min_side = h.min(w) as f64;
    let scale_floor = (crop as f64 / min_side).max(0.7);
    let scale_hi = scale_floor.max(1.3);
    let scale = rng.gen_range(scale_floor..=scale_hi);
    let nh = ((h as f64 * scale).round() as usize).max(crop);
    let nw = ((w as f64 * scale).round() as usize).max(crop);
    let y0 = rng.gen_range(0..=(nh - crop));
    let x0 = rng.gen_range(0..=(nw - crop));
    let tf = |frame: &ArrayD<T>, mask: &ObjectLabelMap| {
        let (mut f, mut m) = (frame.clone(), mask.clone());
        if flip {
            f = imgproc::flip_h_image(&f);
            m = imgproc::flip_h_labels(&m);
        }
        if (nh, nw) != (h, w) {
            f = imgproc::bilinear_resize(&f, nh, nw);
            m = imgproc::nearest_resize_labels(&m, nh, nw);
        }
        (
            imgproc::crop_image(&f, y0, x0, crop, crop),
            imgproc::crop_labels(&m, y0, x0, crop, crop),
        )
    };
    TrainSample {
        reference: tf(&sample.reference.0, &sample.reference.1),
        previous: tf(&sample.previous.0, &sample.previous.1),
        current: tf(&sample.current.0, &sample.current.1),
    }
}

/// Exact one-hot posterior of a label map, [H',W',|O|].
pub fn onehot_prev<T: Scalar>(mask: &ObjectLabelMap) -> Result<ArrayD<T>> {
    let n_obj = mask.objects.len();
    let mut out = ArrayD::zeros(&[mask.h, mask.w, n_obj]);
    for (p, &lab) in mask.labels.iter().enumerate() {
        let ci = mask
            .objects
            .iter()
            .position(|&o| o == lab)
            .ok_or_else(|| Error::Data(format!("label {lab} unknown to object list")))?;
        out.data_mut()[p * n_obj + ci] = T::one();
    }
    Ok(out)
}

/// Replace labels outside `objects` by background (cropping can remove an
/// object from the reference frame while it stays visible elsewhere).
fn clamp_to_objects(mask: &ObjectLabelMap, objects: &[u32]) -> ObjectLabelMap {
    let labels = mask
        .labels
        .iter()
        .map(|&l| if objects.contains(&l) { l } else { matching::BACKGROUND_ID })
        .collect();
    ObjectLabelMap::with_objects(mask.h, mask.w, labels, objects.to_vec())
}

/// Tape variables of interest from one sample's forward pass.
pub struct ForwardVars {
    pub loss: Var,
    pub ref_emb: Var,
    pub prev_emb: Var,
    pub cur_emb: Var,
    pub probs: Var,
}

/// Full differentiable forward of one training sample: extract all three
/// frames, build the matching cues per the ablation toggles (disabled
/// distance cues become constant-1 maps, disabled previous predictions a
/// uniform posterior), run the head, and take the bootstrapped cross
/// entropy on the current frame.
pub fn forward_loss<T: Scalar>(
    tape: &mut Tape<T>,
    feat_vars: &[Var],
    head_vars: &[Var],
    model: &Model<T>,
    sample: &TrainSample<T>,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<ForwardVars> {
    let stride = model.feat.cfg.stride;
    // objects are whatever survives cropping and downsampling of the
    // reference mask; labels elsewhere are clamped to that set
    let ref_ds = {
        let ds = imgproc::downsample_labels(&sample.reference.1, stride);
        ObjectLabelMap::from_labels(ds.h, ds.w, ds.labels)
    };
    let objects = ref_ds.objects.clone();
    let n_obj = objects.len();
    let prev_ds = clamp_to_objects(
        &imgproc::downsample_labels(&sample.previous.1, stride),
        &objects,
    );
    let cur_ds = clamp_to_objects(
        &imgproc::downsample_labels(&sample.current.1, stride),
        &objects,
    );

    let ref_frame = tape.input(sample.reference.0.clone());
    let prev_frame = tape.input(sample.previous.0.clone());
    let cur_frame = tape.input(sample.current.0.clone());
    let (_, ref_emb) = featnet::extract(tape, ref_frame, &model.feat, feat_vars);
    let (_, prev_emb) = featnet::extract(tape, prev_frame, &model.feat, feat_vars);
    let (cur_feat, cur_emb) = featnet::extract(tape, cur_frame, &model.feat, feat_vars);

    let (gh, gw) = {
        let s = tape.value(cur_feat).shape();
        (s[0], s[1])
    };
    let ones = ArrayD::full(&[n_obj, gh, gw], T::one());

    let dist_global = if cfg.ablation.use_ff_gm {
        matching::global_match(
            tape,
            cur_emb,
            ref_emb,
            &ref_ds,
            Some(cfg.subsample_refs),
            step_seed,
        )
    } else {
        tape.input(ones.clone())
    };
    let dist_local = if cfg.ablation.use_pf_lm {
        matching::local_match(tape, cur_emb, prev_emb, &prev_ds, WindowSpec::new(cfg.window_k))
    } else if cfg.ablation.use_pf_gm {
        matching::global_prev_match(tape, cur_emb, prev_emb, &prev_ds)
    } else {
        tape.input(ones)
    };
    let prev_probs = if cfg.ablation.use_pfp {
        tape.input(onehot_prev::<T>(&prev_ds)?)
    } else {
        tape.input(ArrayD::full(&[gh, gw, n_obj], T::one() / T::from_usize_(n_obj)))
    };

    let probs = dynhead::segment_step(
        tape,
        cur_feat,
        dist_global,
        dist_local,
        prev_probs,
        n_obj,
        &model.head,
        head_vars,
    );
    let loss = bootstrapped_ce(tape, probs, &objects, &cur_ds, &cfg.loss)?;
    Ok(ForwardVars { loss, ref_emb, prev_emb, cur_emb, probs })
}

/// A batch's forward/backward and one optimizer step. Returns the batch
/// loss. Aborts (error) on a non-finite loss or gradient.
pub fn train_step<T: Scalar>(
    batch: &[TrainSample<T>],
    model: &mut Model<T>,
    cfg: &TrainConfig,
    feat_opt: &mut OptimState<T>,
    head_opt: &mut OptimState<T>,
    step_seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let feat_vars = model.feat.params.bind(&mut tape);
    let head_vars = model.head.params.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    for (si, sample) in batch.iter().enumerate() {
        let fv = forward_loss(
            &mut tape,
            &feat_vars,
            &head_vars,
            model,
            sample,
            cfg,
            step_seed.wrapping_add(si as u64),
        )?;
        losses.push(fv.loss);
    }
    let loss = tape.mean_scalars(&losses);
    let loss_val = tape.value(loss).item().to_f64s();
    if !loss_val.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = tape.backward(loss);
    for (p, v) in model.feat.params.params.iter_mut().zip(&feat_vars) {
        p.grad = grads.get(*v).clone();
    }
    for (p, v) in model.head.params.params.iter_mut().zip(&head_vars) {
        p.grad = grads.get(*v).clone();
    }
    feat_opt.step(&mut model.feat.params)?;
    head_opt.step(&mut model.head.params)?;
    Ok(loss_val)
}

/// Train over a set of videos. Logs `step=<n> loss=<f>` per step through
/// `log`. Returns the last step's loss.
pub fn train<T: Scalar>(
    videos: &[(Vec<ArrayD<T>>, Vec<ObjectLabelMap>)],
    model: &mut Model<T>,
    cfg: &TrainConfig,
    mut log: impl FnMut(usize, f64),
) -> Result<f64> {
    cfg.validate()?;
    assert!(!videos.is_empty(), "no training videos");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lr = T::from_f(cfg.lr);
    let mom = T::from_f(cfg.momentum);
    let mut feat_opt = OptimState::new(lr, mom);
    let mut head_opt = OptimState::new(lr, mom);
    let mut last = f64::INFINITY;
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_videos);
        for _ in 0..cfg.batch_videos {
            let vi = rng.gen_range(0..videos.len());
            let (frames, masks) = &videos[vi];
            let sample = sample_triplet(frames, masks, &mut rng);
            batch.push(augment(&sample, &mut rng, cfg.crop));
        }
        let step_seed = rng.gen::<u64>();
        last = train_step(&batch, model, cfg, &mut feat_opt, &mut head_opt, step_seed)?;
        log(step, last);
        if let Some(target) = cfg.stop_at_loss {
            if last < target {
                break;
            }
        }
    }
    Ok(last)
}

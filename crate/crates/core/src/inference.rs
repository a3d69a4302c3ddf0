//! Sequential video segmentation: first-frame conditioning, one forward
//! pass per frame, soft previous-frame propagation, full-resolution masks.

use crate::array::ArrayD;
use crate::dynhead::{self, ProbabilityMap};
use crate::error::{Error, Result};
use crate::featnet;
use crate::imgproc;
use crate::matching::{self, ObjectLabelMap, WindowSpec};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::trainer::onehot_prev;

/// Rolling per-video state. The object set is fixed for the whole video to
/// the objects of the first-frame ground truth.
#[derive(Clone, Debug)]
pub struct VideoState<T> {
    pub first_emb: ArrayD<T>,
    pub first_labels: ObjectLabelMap,
    pub prev_emb: ArrayD<T>,
    pub prev_probs: ArrayD<T>,
    pub objects: Vec<u32>,
    pub full_h: usize,
    pub full_w: usize,
}

fn extract_arrays<T: Scalar>(frame: &ArrayD<T>, model: &Model<T>) -> (ArrayD<T>, ArrayD<T>) {
    let mut tape = Tape::new();
    let vars = model.feat.params.bind(&mut tape);
    let fv = tape.input(frame.clone());
    let (feat, emb) = featnet::extract(&mut tape, fv, &model.feat, &vars);
    (tape.value(feat).clone(), tape.value(emb).clone())
}

/// Embed frame 0 and seed the propagated posterior with the one-hot ground
/// truth.
pub fn init_video<T: Scalar>(
    frame0: &ArrayD<T>,
    mask0: &ObjectLabelMap,
    model: &Model<T>,
) -> Result<VideoState<T>> {
    let (h, w) = (frame0.shape()[0], frame0.shape()[1]);
    if (mask0.h, mask0.w) != (h, w) {
        return Err(Error::Shape(format!(
            "first mask {}x{} does not match frame {}x{}",
            mask0.h, mask0.w, h, w
        )));
    }
    let (_, emb) = extract_arrays(frame0, model);
    let first_labels = imgproc::downsample_labels(mask0, model.feat.cfg.stride);
    let prev_probs = onehot_prev::<T>(&first_labels)?;
    Ok(VideoState {
        first_emb: emb.clone(),
        first_labels,
        prev_emb: emb,
        prev_probs,
        objects: mask0.objects.clone(),
        full_h: h,
        full_w: w,
    })
}

/// Segment one frame: global matching against frame 0 (all reference
/// pixels), local matching against the argmax of the propagated posterior,
/// dynamic head, bilinear posterior upsampling, argmax with ties to the
/// smaller object id.
pub fn infer_frame<T: Scalar>(
    state: &VideoState<T>,
    frame_t: &ArrayD<T>,
    model: &Model<T>,
    window: WindowSpec,
) -> Result<(ObjectLabelMap, VideoState<T>)> {
    if (frame_t.shape()[0], frame_t.shape()[1]) != (state.full_h, state.full_w) {
        return Err(Error::Shape("frame dimensions differ from frame 0".into()));
    }
    let n_obj = state.objects.len();
    let mut tape = Tape::new();
    let feat_vars = model.feat.params.bind(&mut tape);
    let head_vars = model.head.params.bind(&mut tape);
    let fv = tape.input(frame_t.clone());
    let (feat, emb) = featnet::extract(&mut tape, fv, &model.feat, &feat_vars);

    let first_emb = tape.input(state.first_emb.clone());
    let dist_global =
        matching::global_match(&mut tape, emb, first_emb, &state.first_labels, None, 0);

    // predicted previous labels, never ground truth past frame 0
    let prev_pm = ProbabilityMap::new(state.prev_probs.clone(), state.objects.clone());
    let prev_labels = prev_pm.argmax_labels();
    let prev_emb = tape.input(state.prev_emb.clone());
    let dist_local = matching::local_match(&mut tape, emb, prev_emb, &prev_labels, window);

    let prev_probs = tape.input(state.prev_probs.clone());
    let probs = dynhead::segment_step(
        &mut tape, feat, dist_global, dist_local, prev_probs, n_obj, &model.head, &head_vars,
    );
    let probs_arr = tape.value(probs).clone();

    let full = imgproc::upsample_probs(&probs_arr, state.full_h, state.full_w);
    let mask = ProbabilityMap::new(full, state.objects.clone()).argmax_labels();

    let new_state = VideoState {
        first_emb: state.first_emb.clone(),
        first_labels: state.first_labels.clone(),
        prev_emb: tape.value(emb).clone(),
        prev_probs: probs_arr,
        objects: state.objects.clone(),
        full_h: state.full_h,
        full_w: state.full_w,
    };
    Ok((mask, new_state))
}

/// Segment a whole video. The first output is the conditioning mask
/// verbatim.
pub fn infer_video<T: Scalar>(
    frames: &[ArrayD<T>],
    mask0: &ObjectLabelMap,
    model: &Model<T>,
    window: WindowSpec,
) -> Result<Vec<ObjectLabelMap>> {
    if frames.is_empty() {
        return Err(Error::Data("empty video".into()));
    }
    let mut state = init_video(&frames[0], mask0, model)?;
    let mut out = Vec::with_capacity(frames.len());
    out.push(mask0.clone());
    for frame in &frames[1..] {
        let (mask, next) = infer_frame(&state, frame, model, window)?;
        out.push(mask);
        state = next;
    }
    Ok(out)
}

/// Frame blended with a color-coded mask at 50% alpha (background pixels
/// are left untouched).
pub fn overlay<T: Scalar>(frame: &ArrayD<T>, mask: &ObjectLabelMap) -> ArrayD<T> {
    let (h, w) = (frame.shape()[0], frame.shape()[1]);
    assert_eq!((mask.h, mask.w), (h, w));
    let mut out = frame.clone();
    let half = T::from_f(0.5);
    for p in 0..h * w {
        let id = mask.labels[p];
        if id == matching::BACKGROUND_ID {
            continue;
        }
        let color = crate::io::id_color(id);
        for ch in 0..3 {
            let c = T::from_f(color[ch]);
            out.data_mut()[p * 3 + ch] = out.data()[p * 3 + ch] * half + c * half;
        }
    }
    out
}

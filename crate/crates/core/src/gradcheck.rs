//! Central finite-difference validation of tape gradients.

use crate::array::ArrayD;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compare the tape gradient of a scalar-valued function against central
/// differences, in f64. Returns the maximum over all parameter elements of
/// `|analytic - fd| / max(1, |fd|)`.
pub fn grad_check<F>(f: F, params: &[ArrayD<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    assert!((1e-7..=1e-4).contains(&eps), "eps out of range [1e-7, 1e-4]");
    let eval = |ps: &[ArrayD<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.input(p.clone())).collect();
        let out = f(&mut tape, &vars);
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.input(p.clone())).collect();
    let out = f(&mut tape, &vars);
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(out);

    let mut work: Vec<ArrayD<f64>> = params.to_vec();
    let mut max_err = 0.0f64;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).clone();
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let fp = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let fm = eval(&work)?;
            work[pi].data_mut()[ei] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let err = (analytic.data()[ei] - fd).abs() / fd.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

/// Finite-difference check of the entire training loss (all three frame
/// extractions, matching, head, bootstrapped cross entropy) on a small
/// random instance, in f64. `size` is the input side length; the stride
/// grid is size/4.
pub fn full_pipeline_check(size: usize) -> Result<f64> {
    use crate::{dynhead, featnet, matching, model::Model, trainer};
    assert!(size >= 8 && size % 4 == 0, "size must be a multiple of 4, >= 8");
    let feat_cfg = featnet::FeatNetConfig {
        backbone_channels: 4,
        embedding_dim: 4,
        stride: 4,
        depth: 2,
    };
    let head_cfg = dynhead::HeadConfig { head_channels: 8, kernel: 7, layers: 2 };
    let model = Model::<f64>::init(&feat_cfg, &head_cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mk_frame = |rng: &mut ChaCha8Rng| {
        ArrayD::from_vec(
            &[size, size, 3],
            (0..size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
    };
    // blocky masks: 2 objects + background
    let mk_mask = |rng: &mut ChaCha8Rng| {
        let cell = 4;
        let g = size / cell;
        let coarse: Vec<u32> = (0..g * g).map(|_| rng.gen_range(0..3u32)).collect();
        let labels: Vec<u32> = (0..size * size)
            .map(|p| coarse[(p / size / cell) * g + (p % size) / cell])
            .collect();
        matching::ObjectLabelMap::from_labels(size, size, labels)
    };
    let sample = trainer::TrainSample {
        reference: (mk_frame(&mut rng), mk_mask(&mut rng)),
        previous: (mk_frame(&mut rng), mk_mask(&mut rng)),
        current: (mk_frame(&mut rng), mk_mask(&mut rng)),
    };
    let cfg = trainer::TrainConfig {
        steps: 1,
        batch_videos: 1,
        crop: size,
        window_k: 2,
        ..Default::default()
    };
    let n_feat = model.feat.params.params.len();
    let all: Vec<ArrayD<f64>> = model
        .feat
        .params
        .params
        .iter()
        .chain(model.head.params.params.iter())
        .map(|p| p.value.clone())
        .collect();
    grad_check(
        |tape, vars| {
            let (fv, hv) = vars.split_at(n_feat);
            trainer::forward_loss(tape, fv, hv, &model, &sample, &cfg, 3)
                .expect("pipeline forward")
                .loss
        },
        &all,
        1e-5,
    )
}

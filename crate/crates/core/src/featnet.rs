//! Small convolutional feature extractor producing shared backbone features
//! and per-pixel embeddings at stride 4.

use crate::array::ArrayD;
use crate::param::{ParamSet, Parameter};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

static EXTRACT_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of extract() invocations since process start (used by tests to
/// assert the shared trunk runs once per frame).
pub fn extract_call_count() -> usize {
    EXTRACT_CALLS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeatNetConfig {
    pub backbone_channels: usize,
    pub embedding_dim: usize,
    pub stride: usize,
    pub depth: usize,
}

impl Default for FeatNetConfig {
    fn default() -> Self {
        // reference-scale widths; desk runs shrink them via config
        FeatNetConfig { backbone_channels: 256, embedding_dim: 100, stride: 4, depth: 3 }
    }
}

impl FeatNetConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.stride != 4 {
            return Err(crate::error::Error::Config("stride must be 4".into()));
        }
        if self.backbone_channels < 1 || self.embedding_dim < 1 || self.depth < 2 {
            return Err(crate::error::Error::Config(
                "backbone_channels/embedding_dim >= 1 and depth >= 2 required".into(),
            ));
        }
        Ok(())
    }
}

/// Backbone blocks (depthwise 3x3 + pointwise + ReLU, downsampled twice)
/// followed by the embedding layer (depthwise 3x3 + pointwise, no ReLU).
#[derive(Clone, Debug)]
pub struct FeatNetWeights<T> {
    pub cfg: FeatNetConfig,
    pub params: ParamSet<T>,
}

fn fan_in_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> ArrayD<T> {
    // target std sqrt(2/fan_in); uniform needs half-width sqrt(3) * std
    let a = (6.0 / fan_in as f64).sqrt();
    let data: Vec<T> =
        (0..shape.iter().product()).map(|_| T::from_f(rng.gen_range(-a..a))).collect();
    ArrayD::from_vec(shape, data)
}

/// Push one depthwise-separable layer's parameters: dw kernel, pw kernel,
/// pw bias (zero).
pub(crate) fn push_sep_layer<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    ksize: usize,
    cin: usize,
    cout: usize,
) {
    params.push(Parameter::new(
        format!("{name}.dw"),
        fan_in_uniform(rng, &[ksize, ksize, cin], ksize * ksize),
    ));
    params.push(Parameter::new(format!("{name}.pw"), fan_in_uniform(rng, &[cin, cout], cin)));
    params.push(Parameter::new(format!("{name}.b"), ArrayD::zeros(&[cout])));
}

/// Push a bare pointwise layer's parameters: pw kernel and zero bias.
pub(crate) fn push_pointwise<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
) {
    params.push(Parameter::new(format!("{name}.pw"), fan_in_uniform(rng, &[cin, cout], cin)));
    params.push(Parameter::new(format!("{name}.b"), ArrayD::zeros(&[cout])));
}

impl<T: Scalar> FeatNetWeights<T> {
    pub fn init(cfg: &FeatNetConfig, seed: u64) -> Self {
        cfg.validate().expect("invalid feature net config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::default();
        let bc = cfg.backbone_channels;
        let mut cin = 3;
        for i in 0..cfg.depth {
            push_sep_layer(&mut params, &mut rng, &format!("block{i}"), 3, cin, bc);
            cin = bc;
        }
        push_sep_layer(&mut params, &mut rng, "emb", 3, bc, cfg.embedding_dim);
        FeatNetWeights { cfg: cfg.clone(), params }
    }
}

/// Forward through the extractor on a tape. `vars` is the tape binding of
/// `w.params` (in set order). Returns (features, embedding) at stride 4.
pub fn extract<T: Scalar>(
    tape: &mut Tape<T>,
    frame: Var,
    w: &FeatNetWeights<T>,
    vars: &[Var],
) -> (Var, Var) {
    EXTRACT_CALLS.fetch_add(1, Ordering::Relaxed);
    let shape = tape.value(frame).shape().to_vec();
    assert_eq!(shape.len(), 3);
    assert!(
        shape[0] % 4 == 0 && shape[1] % 4 == 0,
        "frame dimensions must be divisible by 4 (got {}x{})",
        shape[0],
        shape[1]
    );
    let mut x = frame;
    for i in 0..w.cfg.depth {
        let dw = vars[3 * i];
        let pw = vars[3 * i + 1];
        let b = vars[3 * i + 2];
        x = tape.conv2d_depthwise(x, dw);
        x = tape.conv2d_pointwise(x, pw, b);
        x = tape.relu(x);
        if i < 2 {
            x = tape.downsample2(x);
        }
    }
    let base = 3 * w.cfg.depth;
    let e = tape.conv2d_depthwise(x, vars[base]);
    let e = tape.conv2d_pointwise(e, vars[base + 1], vars[base + 2]);
    (x, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FeatNetConfig {
        FeatNetConfig { backbone_channels: 8, embedding_dim: 4, stride: 4, depth: 2 }
    }

    #[test]
    fn output_shapes_are_stride_four() {
        let cfg = small_cfg();
        let w = FeatNetWeights::<f64>::init(&cfg, 0);
        let mut t = Tape::new();
        let frame = t.input(ArrayD::full(&[64, 48, 3], 0.5));
        let vars = w.params.bind(&mut t);
        let (f, e) = extract(&mut t, frame, &w, &vars);
        assert_eq!(t.value(f).shape(), &[16, 12, 8]);
        assert_eq!(t.value(e).shape(), &[16, 12, 4]);
    }

    #[test]
    fn zero_image_gives_zero_embedding() {
        // biases are zero and every layer is linear or relu around zero
        let cfg = small_cfg();
        let w = FeatNetWeights::<f64>::init(&cfg, 1);
        let mut t = Tape::new();
        let frame = t.input(ArrayD::zeros(&[16, 16, 3]));
        let vars = w.params.bind(&mut t);
        let (_, e) = extract(&mut t, frame, &w, &vars);
        assert!(t.value(e).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let cfg = small_cfg();
        let a = FeatNetWeights::<f64>::init(&cfg, 7);
        let b = FeatNetWeights::<f64>::init(&cfg, 7);
        let c = FeatNetWeights::<f64>::init(&cfg, 8);
        for (pa, pb) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        let differs = a
            .params
            .iter()
            .zip(c.params.iter())
            .any(|(pa, pc)| pa.value != pc.value);
        assert!(differs);
    }

    #[test]
    fn init_std_near_target() {
        let cfg = FeatNetConfig {
            backbone_channels: 64,
            embedding_dim: 16,
            stride: 4,
            depth: 2,
        };
        let w = FeatNetWeights::<f64>::init(&cfg, 2);
        // block1 pointwise kernel: fan_in 64, target std sqrt(2/64)
        let p = w.params.by_name("block1.pw").unwrap();
        let n = p.value.len() as f64;
        let mean: f64 = p.value.iter().sum::<f64>() / n;
        let var: f64 = p.value.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = (2.0 / 64.0f64).sqrt();
        let ratio = var.sqrt() / target;
        assert!((0.8..1.2).contains(&ratio), "std ratio {ratio}");
    }

    #[test]
    fn translation_by_stride_shifts_embedding() {
        // shifting the input by exactly one stride shifts the embedding by
        // one cell, up to border effects; compare interior cells only
        let cfg = small_cfg();
        let w = FeatNetWeights::<f64>::init(&cfg, 3);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (h, wd) = (32usize, 32usize);
        let base: Vec<f64> = (0..(h + 4) * wd * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let slice = |off: usize| {
            ArrayD::from_vec(&[h, wd, 3], base[off * wd * 3..(off + h) * wd * 3].to_vec())
        };
        let embed = |img: ArrayD<f64>| {
            let mut t = Tape::new();
            let frame = t.input(img);
            let vars = w.params.bind(&mut t);
            let (_, e) = extract(&mut t, frame, &w, &vars);
            t.value(e).clone()
        };
        let e0 = embed(slice(0));
        let e1 = embed(slice(4));
        let (eh, ew, d) = (h / 4, wd / 4, cfg.embedding_dim);
        // interior: rows 2..eh-3 of e1 should equal rows 3..eh-2 of e0
        for y in 2..eh - 3 {
            for x in 2..ew - 2 {
                for k in 0..d {
                    let a = e1.at(&[y, x, k]);
                    let b = e0.at(&[y + 1, x, k]);
                    assert!((a - b).abs() < 1e-5, "mismatch at ({y},{x},{k}): {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn extract_grad_check() {
        let cfg = FeatNetConfig { backbone_channels: 4, embedding_dim: 3, stride: 4, depth: 2 };
        let w = FeatNetWeights::<f64>::init(&cfg, 5);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let img = ArrayD::from_vec(
            &[8, 8, 3],
            (0..8 * 8 * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let inputs: Vec<ArrayD<f64>> = std::iter::once(img)
            .chain(w.params.iter().map(|p| p.value.clone()))
            .collect();
        let err = crate::gradcheck::grad_check(
            |t, vars| {
                let (_, e) = extract(t, vars[0], &w, &vars[1..]);
                t.sum_all(e)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn call_counter_increments() {
        let cfg = small_cfg();
        let w = FeatNetWeights::<f64>::init(&cfg, 0);
        let before = extract_call_count();
        let mut t = Tape::new();
        let frame = t.input(ArrayD::zeros(&[8, 8, 3]));
        let vars = w.params.bind(&mut t);
        extract(&mut t, frame, &w, &vars);
        assert_eq!(extract_call_count(), before + 1);
    }
}

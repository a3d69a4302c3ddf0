//! Bootstrapped cross-entropy loss and momentum SGD.

use crate::array::ArrayD;
use crate::error::{Error, Result};
use crate::matching::ObjectLabelMap;
use crate::param::ParamSet;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Fraction of hardest pixels kept, in (0,1].
    pub bootstrap_fraction: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { bootstrap_fraction: 0.15 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::Config("bootstrap_fraction must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Cross entropy over the ceil(fraction*N) hardest pixels. `probs` is an
/// [H,W,O] posterior var whose channels follow `objects`; the target labels
/// live on the same grid. Ties in hardness break to the smallest flat pixel
/// index (stable sort), so gradients are deterministic.
pub fn bootstrapped_ce<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    objects: &[u32],
    target: &ObjectLabelMap,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let pv = tape.value(probs);
    let (h, w, n_obj) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
    assert_eq!(n_obj, objects.len());
    assert_eq!((target.h, target.w), (h, w), "target grid mismatch");
    let npix = h * w;

    let mut chan = Vec::with_capacity(npix);
    for &lab in &target.labels {
        let ci = objects
            .iter()
            .position(|&o| o == lab)
            .ok_or_else(|| Error::Data(format!("target label {lab} absent from object list")))?;
        chan.push(ci);
    }
    let ce: Vec<T> =
        (0..npix).map(|p| -(pv.data()[p * n_obj + chan[p]]).ln()).collect();
    let mut order: Vec<usize> = (0..npix).collect();
    order.sort_by(|&a, &b| ce[b].partial_cmp(&ce[a]).unwrap().then(a.cmp(&b)));
    let m = ((cfg.bootstrap_fraction * npix as f64).ceil() as usize).clamp(1, npix);
    let selected: Vec<usize> = order[..m].to_vec();
    let inv_m = T::one() / T::from_usize_(m);
    let loss = selected.iter().fold(T::zero(), |acc, &p| acc + ce[p]) * inv_m;

    Ok(tape.push_op(
        ArrayD::scalar(loss),
        Box::new(move |vals, gy, grads| {
            let g = gy.item() * inv_m;
            let pd = vals[probs.0].data();
            let gp = grads[probs.0].data_mut();
            for &p in &selected {
                let idx = p * n_obj + chan[p];
                gp[idx] -= g / pd[idx];
            }
        }),
    ))
}

/// Classical momentum state: v <- momentum*v + g; theta <- theta - lr*v.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<ArrayD<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        OptimState { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity =
                params.params.iter().map(|p| ArrayD::zeros(p.value.shape())).collect();
        }
        assert_eq!(self.velocity.len(), params.params.len());
        for p in &params.params {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter '{}'", p.name)));
            }
        }
        for (p, v) in params.params.iter_mut().zip(&mut self.velocity) {
            for ((vv, &g), th) in
                v.data_mut().iter_mut().zip(p.grad.data()).zip(p.value.data_mut())
            {
                *vv = self.momentum * *vv + g;
                *th -= self.lr * *vv;
            }
        }
        Ok(())
    }
}

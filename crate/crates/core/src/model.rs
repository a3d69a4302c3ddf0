use crate::dynhead::{HeadConfig, HeadWeights};
use crate::featnet::{FeatNetConfig, FeatNetWeights};
use crate::scalar::Scalar;

/// Feature extractor plus segmentation head, the full trainable model.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub feat: FeatNetWeights<T>,
    pub head: HeadWeights<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(feat_cfg: &FeatNetConfig, head_cfg: &HeadConfig, seed: u64) -> Self {
        let feat = FeatNetWeights::init(feat_cfg, seed);
        // three per-object cue channels on top of the shared features
        let head = HeadWeights::init(head_cfg, feat_cfg.backbone_channels + 3, seed ^ 0x9e37);
        Model { feat, head }
    }

    pub fn convert<U: Scalar>(&self) -> Model<U> {
        Model {
            feat: FeatNetWeights { cfg: self.feat.cfg.clone(), params: self.feat.params.convert() },
            head: HeadWeights {
                cfg: self.head.cfg.clone(),
                in_channels: self.head.in_channels,
                params: self.head.params.convert(),
            },
        }
    }
}

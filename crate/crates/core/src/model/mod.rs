//! Network variants: attention-only baseline, single-scale deformable,
//! pyramid-aligned, and the dual-branch model combining attention and
//! alignment.

mod config;
mod network;
mod weights;

pub use config::{AlignSpec, ModelConfig, Variant, DRDB_LAYERS, FRAME_COUNT, REFERENCE_INDEX};
pub use network::{
    adnet_forward, adnet_forward_with, apply_attention, attention_module, deform_align_single,
    drdb_forward, export_attention_heatmap, feature_pyramid, forward_graph, pcd_align, AdnetOutput,
    AttentionNodes, ForwardNodes, ForwardOptions,
};
pub use weights::{param_count, param_specs, Init, ModelWeights, ParamSpec, ParamVars, DCN_TAPS};

use crate::data::SceneTensors;
use crate::error::Result;
use crate::rng;
use crate::tensor::{Element, Tensor};

/// Anything that maps scene inputs to an HDR estimate.
pub trait HdrModel<T: Element = f32> {
    fn predict(&self, inputs: &SceneTensors<T>) -> Result<Tensor<T>>;

    /// Spatial extents the model accepts must be multiples of this.
    fn input_divisor(&self) -> usize {
        1
    }

    fn receptive_field_radius(&self) -> Option<usize> {
        None
    }
}

#[derive(Clone, Debug)]
pub struct Adnet<T: Element = f32> {
    pub config: ModelConfig,
    pub weights: ModelWeights<T>,
    pub options: ForwardOptions,
}

impl<T: Element> Adnet<T> {
    pub fn new(config: ModelConfig, weights: ModelWeights<T>) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Adnet {
            config,
            weights,
            options: ForwardOptions::default(),
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = ModelWeights::init(&config, &mut rng::stream(seed, &[rng::tags::INIT]));
        Adnet::new(config, weights)
    }

    pub fn forward(&self, inputs: &SceneTensors<T>) -> Result<AdnetOutput<T>> {
        adnet_forward_with(inputs, &self.config, &self.weights, self.options)
    }
}

impl<T: Element> HdrModel<T> for Adnet<T> {
    fn predict(&self, inputs: &SceneTensors<T>) -> Result<Tensor<T>> {
        Ok(self.forward(inputs)?.hdr)
    }

    fn input_divisor(&self) -> usize {
        self.config.divisor()
    }

    fn receptive_field_radius(&self) -> Option<usize> {
        self.config.receptive_field_radius()
    }
}

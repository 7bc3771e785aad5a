use std::collections::BTreeMap;

use rand::Rng;

use super::config::{ModelConfig, Variant, DRDB_LAYERS};
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Offset and mask predictors of one deformable block.
pub const DCN_TAPS: usize = 9;

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: Shape([out_c, in_c, k, k]),
            init: Init::HeUniform { fan_in: in_c * k * k },
        });
        self.bias(name, out_c);
    }

    fn zero_conv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: Shape([out_c, in_c, k, k]),
            init: Init::Zero,
        });
        self.bias(name, out_c);
    }

    fn bias(&mut self, name: &str, out_c: usize) {
        self.0.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: Shape([1, out_c, 1, 1]),
            init: Init::Zero,
        });
    }

    fn dcn(&mut self, name: &str, c: usize) {
        self.zero_conv(&format!("{name}.offset"), c, 2 * DCN_TAPS, 3);
        self.zero_conv(&format!("{name}.mask"), c, DCN_TAPS, 3);
        self.conv(name, c, c, 3);
    }
}

/// Every parameter of `cfg`, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let c = cfg.base_channels;
    let mut s = Specs(Vec::new());
    match cfg.variant {
        Variant::Full => {
            s.conv("extract_ldr", 3, c, 3);
            s.conv("extract_gamma", 3, c, 3);
        }
        _ => s.conv("extract", 6, c, 3),
    }
    if cfg.variant.has_attention() {
        for frame in ["short", "long"] {
            s.conv(&format!("attention.{frame}.conv1"), 2 * c, 2 * c, 3);
            s.conv(&format!("attention.{frame}.conv2"), 2 * c, c, 3);
        }
    }
    if let Some(align) = cfg.align_spec() {
        for l in 1..align.levels {
            s.conv(&format!("align.pyramid.l{l}.down"), c, c, 3);
            s.conv(&format!("align.pyramid.l{l}.conv"), c, c, 3);
        }
        for l in (0..align.levels).rev() {
            let p = format!("align.l{l}");
            if l == align.levels - 1 {
                s.conv(&format!("{p}.offset_conv1"), 2 * c, c, 3);
                s.conv(&format!("{p}.offset_conv2"), c, c, 3);
            } else {
                s.conv(&format!("{p}.offset_conv1"), 2 * c, c, 3);
                s.conv(&format!("{p}.offset_conv2"), 2 * c, c, 3);
                s.conv(&format!("{p}.offset_conv3"), c, c, 3);
            }
            s.dcn(&format!("{p}.dcn"), c);
            if l != align.levels - 1 {
                s.conv(&format!("{p}.fea_conv"), 2 * c, c, 3);
            }
        }
        if align.cascade {
            s.conv("align.cas.offset_conv1", 2 * c, c, 3);
            s.conv("align.cas.offset_conv2", c, c, 3);
            s.dcn("align.cas.dcn", c);
        }
    }
    s.conv("fusion.conv_in", cfg.fusion_channels(), c, 3);
    let g = cfg.drdb_growth;
    for d in 0..cfg.drdb_count {
        for j in 0..DRDB_LAYERS {
            s.conv(&format!("fusion.drdb{d}.conv{j}"), c + j * g, g, 3);
        }
        s.conv(&format!("fusion.drdb{d}.fuse"), c + DRDB_LAYERS * g, c, 1);
    }
    s.conv("fusion.gff1", cfg.drdb_count * c, c, 1);
    s.conv("fusion.gff2", c, c, 3);
    s.conv("fusion.conv_up", c, c, 3);
    s.conv("fusion.conv_out", c, 3, 3);
    s.0
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(|p| p.shape.numel()).sum()
}

/// Named parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T: Element = f32> {
    pub params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ModelWeights<T> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let params = param_specs(cfg)
            .into_iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::Zero => Tensor::zeros(spec.shape),
                    Init::HeUniform { fan_in } => {
                        let bound = (6.0 / fan_in as f64).sqrt();
                        Tensor::from_fn(spec.shape, |_| T::from_f64(rng.random_range(-bound..bound)))
                    }
                };
                (spec.name, t)
            })
            .collect();
        ModelWeights { params }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let params = param_specs(cfg)
            .into_iter()
            .map(|spec| (spec.name, Tensor::zeros(spec.shape)))
            .collect();
        ModelWeights { params }
    }

    /// Checks names and shapes against `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters for {}, found {}",
                specs.len(),
                cfg.variant,
                self.params.len()
            )));
        }
        for spec in specs {
            match self.params.get(&spec.name) {
                None => return Err(Error::Config(format!("missing parameter {}", spec.name))),
                Some(t) if t.shape() != spec.shape => {
                    return Err(Error::Config(format!(
                        "parameter {} has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Zeroes the 1x1 fusion conv of every dense block, making each block
    /// an identity map.
    pub fn zero_drdb_fusion(&mut self) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with("fusion.drdb") && (name.ends_with(".fuse.weight") || name.ends_with(".fuse.bias")) {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ModelWeights<U> {
        ModelWeights {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Adds every parameter to `g`, as trainable leaves or as constants.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> ParamVars {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    g.param(v.clone())
                } else {
                    g.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        ParamVars(vars)
    }
}

/// Graph handles of registered parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamVars(pub BTreeMap<String, Var>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }
}

use super::config::{AlignSpec, ModelConfig, Variant, DRDB_LAYERS, REFERENCE_INDEX};
use super::weights::{ModelWeights, ParamVars};
use crate::data::{Image, SceneTensors};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Element, Graph, Tensor, Var};

const LRELU_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every deformable block by a plain convolution with half its
    /// weight, the value a zero-offset block with mask 0.5 computes.
    pub plain_deform: bool,
}

fn conv<T: Element>(g: &mut Graph<T>, vars: &ParamVars, name: &str, x: Var, params: ConvParams) -> Result<Var> {
    let w = vars.get(&format!("{name}.weight"))?;
    let b = vars.get(&format!("{name}.bias"))?;
    g.conv2d(x, w, Some(b), params)
}

fn conv3<T: Element>(g: &mut Graph<T>, vars: &ParamVars, name: &str, x: Var) -> Result<Var> {
    conv(g, vars, name, x, ConvParams::same(3, 1))
}

fn conv3_lrelu<T: Element>(g: &mut Graph<T>, vars: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let y = conv3(g, vars, name, x)?;
    Ok(g.leaky_relu(y, LRELU_SLOPE))
}

/// Intermediate nodes of one attention module.
#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    pub input: Var,
    pub hidden: Var,
    pub map: Var,
}

/// Attention map for a non-reference frame; `frame` is 0 (short) or 2 (long).
pub fn attention_module<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    frame: usize,
    feat: Var,
    feat_ref: Var,
) -> Result<AttentionNodes> {
    let which = match frame {
        0 => "short",
        2 => "long",
        _ => return Err(Error::InvalidArgument(format!("no attention module for frame {frame}"))),
    };
    if g.shape(feat) != g.shape(feat_ref) {
        return Err(Error::shape(
            "attention_module",
            format!("{} vs {}", g.shape(feat), g.shape(feat_ref)),
        ));
    }
    let input = g.concat(&[feat, feat_ref])?;
    let h = conv3(g, vars, &format!("attention.{which}.conv1"), input)?;
    let hidden = g.relu(h);
    let m = conv3(g, vars, &format!("attention.{which}.conv2"), hidden)?;
    let map = g.sigmoid(m);
    Ok(AttentionNodes { input, hidden, map })
}

pub fn apply_attention<T: Element>(g: &mut Graph<T>, feat: Var, map: Var) -> Result<Var> {
    g.mul(feat, map)
}

fn deform_block<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    name: &str,
    x: Var,
    offset_feat: Var,
    opts: ForwardOptions,
) -> Result<Var> {
    let w = vars.get(&format!("{name}.weight"))?;
    let b = vars.get(&format!("{name}.bias"))?;
    let params = ConvParams::same(3, 1);
    if opts.plain_deform {
        let half = g.scale(w, T::from_f64(0.5));
        return g.conv2d(x, half, Some(b), params);
    }
    let offsets = conv3(g, vars, &format!("{name}.offset"), offset_feat)?;
    let logits = conv3(g, vars, &format!("{name}.mask"), offset_feat)?;
    let mask = g.sigmoid(logits);
    g.deform_conv2d(x, offsets, mask, w, Some(b), params)
}

/// Feature pyramid, finest level first. Weights are shared across frames.
pub fn feature_pyramid<T: Element>(g: &mut Graph<T>, vars: &ParamVars, feat: Var, levels: usize) -> Result<Vec<Var>> {
    let mut out = vec![feat];
    for l in 1..levels {
        let down = conv(g, vars, &format!("align.pyramid.l{l}.down"), out[l - 1], ConvParams::new(2, 1, 1))?;
        let down = g.leaky_relu(down, LRELU_SLOPE);
        out.push(conv3_lrelu(g, vars, &format!("align.pyramid.l{l}.conv"), down)?);
    }
    Ok(out)
}

/// Coarse-to-fine deformable alignment of `feat` to `reference`, both given
/// as pyramids from [`feature_pyramid`].
pub fn pcd_align<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    spec: AlignSpec,
    feat: &[Var],
    reference: &[Var],
    opts: ForwardOptions,
) -> Result<Var> {
    if feat.len() != spec.levels || reference.len() != spec.levels {
        return Err(Error::InvalidArgument(format!(
            "alignment expects {} pyramid levels",
            spec.levels
        )));
    }
    let (h, w) = (g.shape(feat[0]).h(), g.shape(feat[0]).w());
    let d = 1 << (spec.levels - 1);
    if h % d != 0 || w % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{h}x{w} not divisible by {d} for {} pyramid levels",
            spec.levels
        )));
    }
    let mut prev: Option<(Var, Var)> = None;
    for l in (0..spec.levels).rev() {
        let p = format!("align.l{l}");
        let pair = g.concat(&[feat[l], reference[l]])?;
        let mut off = conv3_lrelu(g, vars, &format!("{p}.offset_conv1"), pair)?;
        off = match prev {
            Some((prev_off, _)) => {
                let up = g.upsample_bilinear(prev_off, 2)?;
                let up = g.scale(up, T::from_f64(2.0));
                let merged = g.concat(&[off, up])?;
                let o = conv3_lrelu(g, vars, &format!("{p}.offset_conv2"), merged)?;
                conv3_lrelu(g, vars, &format!("{p}.offset_conv3"), o)?
            }
            None => conv3_lrelu(g, vars, &format!("{p}.offset_conv2"), off)?,
        };
        let mut aligned = deform_block(g, vars, &format!("{p}.dcn"), feat[l], off, opts)?;
        aligned = match prev {
            Some((_, prev_aligned)) => {
                let up = g.upsample_bilinear(prev_aligned, 2)?;
                let merged = g.concat(&[aligned, up])?;
                let y = conv3(g, vars, &format!("{p}.fea_conv"), merged)?;
                if l > 0 {
                    g.leaky_relu(y, LRELU_SLOPE)
                } else {
                    y
                }
            }
            None => g.leaky_relu(aligned, LRELU_SLOPE),
        };
        prev = Some((off, aligned));
    }
    let (_, mut aligned) = prev.expect("at least one level");
    if spec.cascade {
        let pair = g.concat(&[aligned, reference[0]])?;
        let off = conv3_lrelu(g, vars, "align.cas.offset_conv1", pair)?;
        let off = conv3_lrelu(g, vars, "align.cas.offset_conv2", off)?;
        let y = deform_block(g, vars, "align.cas.dcn", aligned, off, opts)?;
        aligned = g.leaky_relu(y, LRELU_SLOPE);
    }
    Ok(aligned)
}

/// Single-level alignment without the cascade stage.
pub fn deform_align_single<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    feat: Var,
    reference: Var,
    opts: ForwardOptions,
) -> Result<Var> {
    let spec = AlignSpec {
        levels: 1,
        cascade: false,
    };
    pcd_align(g, vars, spec, &[feat], &[reference], opts)
}

/// Dilated residual dense block `index`.
pub fn drdb_forward<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    cfg: &ModelConfig,
    index: usize,
    x: Var,
) -> Result<Var> {
    let mut feats = vec![x];
    for j in 0..DRDB_LAYERS {
        let input = g.concat(&feats)?;
        let y = conv(
            g,
            vars,
            &format!("fusion.drdb{index}.conv{j}"),
            input,
            ConvParams::same(3, cfg.dilation),
        )?;
        feats.push(g.relu(y));
    }
    let all = g.concat(&feats)?;
    let fused = conv(g, vars, &format!("fusion.drdb{index}.fuse"), all, ConvParams::default())?;
    g.add(fused, x)
}

/// Output node and, for attention-bearing variants, the short and long
/// frame attention maps.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub output: Var,
    pub attention: Vec<Var>,
}

pub fn forward_graph<T: Element>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    cfg: &ModelConfig,
    ldr: [Var; 3],
    gamma: [Var; 3],
    opts: ForwardOptions,
) -> Result<ForwardNodes> {
    let shape = g.shape(ldr[0]);
    for v in ldr.iter().chain(gamma.iter()) {
        if g.shape(*v) != shape || shape.c() != 3 {
            return Err(Error::shape(
                "adnet_forward",
                format!("inputs must share a b x 3 x H x W shape, got {} and {}", shape, g.shape(*v)),
            ));
        }
    }
    cfg.check_input(shape.h(), shape.w())?;

    let extract = |g: &mut Graph<T>, name: &str, x: [Var; 3]| -> Result<[Var; 3]> {
        let mut out = [x[0]; 3];
        for i in 0..3 {
            out[i] = conv3_lrelu(g, vars, name, x[i])?;
        }
        Ok(out)
    };
    let (att_in, align_in) = match cfg.variant {
        Variant::Full => (
            Some(extract(g, "extract_ldr", ldr)?),
            Some(extract(g, "extract_gamma", gamma)?),
        ),
        v => {
            let mut paired = [ldr[0]; 3];
            for i in 0..3 {
                paired[i] = g.concat(&[ldr[i], gamma[i]])?;
            }
            let f = extract(g, "extract", paired)?;
            if v == Variant::Baseline {
                (Some(f), None)
            } else {
                (None, Some(f))
            }
        }
    };
    let skip = att_in.or(align_in).expect("some branch")[REFERENCE_INDEX];

    let mut branches: Vec<Var> = Vec::with_capacity(6);
    let mut attention = Vec::new();
    if let Some(f) = att_in {
        for i in 0..3 {
            if i == REFERENCE_INDEX {
                branches.push(f[i]);
            } else {
                let a = attention_module(g, vars, i, f[i], f[REFERENCE_INDEX])?;
                attention.push(a.map);
                branches.push(apply_attention(g, f[i], a.map)?);
            }
        }
    }
    if let Some(f) = align_in {
        let spec = cfg.align_spec().expect("aligning variant");
        let pyramids = f
            .iter()
            .map(|&x| feature_pyramid(g, vars, x, spec.levels))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..3 {
            if i == REFERENCE_INDEX {
                branches.push(f[i]);
            } else {
                branches.push(pcd_align(g, vars, spec, &pyramids[i], &pyramids[REFERENCE_INDEX], opts)?);
            }
        }
    }

    let x = g.concat(&branches)?;
    let mut x = conv3(g, vars, "fusion.conv_in", x)?;
    let mut blocks = Vec::with_capacity(cfg.drdb_count);
    for d in 0..cfg.drdb_count {
        x = drdb_forward(g, vars, cfg, d, x)?;
        blocks.push(x);
    }
    let y = g.concat(&blocks)?;
    let y = conv(g, vars, "fusion.gff1", y, ConvParams::default())?;
    let y = conv3(g, vars, "fusion.gff2", y)?;
    let y = g.add(y, skip)?;
    let y = conv3(g, vars, "fusion.conv_up", y)?;
    let y = g.relu(y);
    let y = conv3(g, vars, "fusion.conv_out", y)?;
    let output = g.sigmoid(y);
    Ok(ForwardNodes { output, attention })
}

#[derive(Clone, Debug)]
pub struct AdnetOutput<T: Element = f32> {
    pub hdr: Tensor<T>,
    /// Short and long frame attention maps; empty without an attention branch.
    pub attention: Vec<Tensor<T>>,
}

pub fn adnet_forward_with<T: Element>(
    inputs: &SceneTensors<T>,
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
    opts: ForwardOptions,
) -> Result<AdnetOutput<T>> {
    let mut g = Graph::new();
    let vars = weights.register(&mut g, false);
    let ldr = inputs.ldr.clone().map(|t| g.constant(t));
    let gamma = inputs.gamma.clone().map(|t| g.constant(t));
    let nodes = forward_graph(&mut g, &vars, cfg, ldr, gamma, opts)?;
    Ok(AdnetOutput {
        hdr: g.value(nodes.output).clone(),
        attention: nodes.attention.iter().map(|&v| g.value(v).clone()).collect(),
    })
}

pub fn adnet_forward<T: Element>(
    inputs: &SceneTensors<T>,
    cfg: &ModelConfig,
    weights: &ModelWeights<T>,
) -> Result<AdnetOutput<T>> {
    adnet_forward_with(inputs, cfg, weights, ForwardOptions::default())
}

/// Channel-mean heatmaps of the first batch item, one per gated frame.
pub fn export_attention_heatmap<T: Element>(variant: Variant, maps: &[Tensor<T>]) -> Result<Vec<Image>> {
    if !variant.has_attention() || maps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "variant {variant} has no attention branch"
        )));
    }
    Ok(maps
        .iter()
        .map(|m| {
            let mut img = Image::from_tensor(&m.mean_channels(), 0);
            img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            img
        })
        .collect())
}

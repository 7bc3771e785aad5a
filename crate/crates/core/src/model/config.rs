use std::fmt;

use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};

pub const FRAME_COUNT: usize = 3;
pub const REFERENCE_INDEX: usize = 1;
/// Inner convolutions per dilated residual dense block.
pub const DRDB_LAYERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Attention branch only.
    Baseline,
    /// Deformable alignment on full-resolution features only.
    DeformSingle,
    /// Pyramid, cascading and deformable alignment, no attention.
    PcdOnly,
    /// Attention branch on LDR features plus alignment branch on
    /// gamma-corrected features.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::DeformSingle,
        Variant::PcdOnly,
        Variant::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::DeformSingle => "deform_single",
            Variant::PcdOnly => "pcd_only",
            Variant::Full => "full",
        }
    }

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::DeformSingle => "Variant 1",
            Variant::PcdOnly => "Variant 2",
            Variant::Full => "Ours",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::Baseline | Variant::Full)
    }

    pub fn has_alignment(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlignSpec {
    pub levels: usize,
    pub cascade: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub variant: Variant,
    pub base_channels: usize,
    pub drdb_count: usize,
    pub drdb_growth: usize,
    pub pyramid_levels: usize,
    pub dilation: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            base_channels: 64,
            drdb_count: 3,
            drdb_growth: 32,
            pyramid_levels: 3,
            dilation: 2,
        }
    }
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_channels", self.base_channels),
            ("drdb_count", self.drdb_count),
            ("drdb_growth", self.drdb_growth),
            ("pyramid_levels", self.pyramid_levels),
            ("dilation", self.dilation),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.pyramid_levels > 8 {
            return Err(Error::Config("pyramid_levels above 8".into()));
        }
        Ok(())
    }

    /// Alignment structure of the variant, if it has one.
    pub fn align_spec(&self) -> Option<AlignSpec> {
        match self.variant {
            Variant::Baseline => None,
            Variant::DeformSingle => Some(AlignSpec {
                levels: 1,
                cascade: false,
            }),
            Variant::PcdOnly | Variant::Full => Some(AlignSpec {
                levels: self.pyramid_levels,
                cascade: true,
            }),
        }
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        self.align_spec().map_or(1, |a| 1 << (a.levels - 1))
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::DimensionMismatch(format!(
                "input {h}x{w} not divisible by {d} for variant {}",
                self.variant
            )));
        }
        Ok(())
    }

    /// Channels entering the fusion subnet.
    pub fn fusion_channels(&self) -> usize {
        let per_frame = if self.variant == Variant::Full { 2 } else { 1 };
        per_frame * FRAME_COUNT * self.base_channels
    }

    /// Distance in pixels over which an output depends on its input, when
    /// that distance is finite and the network is translation equivariant.
    /// Learned offsets and pyramid resampling make it undefined for the
    /// aligning variants.
    pub fn receptive_field_radius(&self) -> Option<usize> {
        if self.variant.has_alignment() {
            return None;
        }
        // feature conv, two attention convs, fusion input conv, dense block
        // chains, then the 3x3 global fusion, upsampling and output convs
        Some(1 + 2 + 1 + self.drdb_count * DRDB_LAYERS * self.dilation + 3)
    }
}

impl KeyValue for ModelConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("model.variant".into(), self.variant.to_string()),
            ("model.base_channels".into(), self.base_channels.to_string()),
            ("model.drdb_count".into(), self.drdb_count.to_string()),
            ("model.drdb_growth".into(), self.drdb_growth.to_string()),
            ("model.pyramid_levels".into(), self.pyramid_levels.to_string()),
            ("model.dilation".into(), self.dilation.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "model.variant" => self.variant = Variant::parse(value)?,
            "model.base_channels" => self.base_channels = kv::value(key, value)?,
            "model.drdb_count" => self.drdb_count = kv::value(key, value)?,
            "model.drdb_growth" => self.drdb_growth = kv::value(key, value)?,
            "model.pyramid_levels" => self.pyramid_levels = kv::value(key, value)?,
            "model.dilation" => self.dilation = kv::value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

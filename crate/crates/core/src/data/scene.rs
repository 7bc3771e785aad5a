use std::fs;
use std::path::Path;

use super::{gamma_correct_tensor, pfm, pnm, Image};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const LDR_FILES: [&str; 3] = ["ldr_short.ppm", "ldr_medium.ppm", "ldr_long.ppm"];
pub const EXPOSURES_FILE: &str = "exposures.txt";
pub const GT_FILE: &str = "gt.pfm";

/// Three bracketed exposures, shortest first; the middle one is the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub ldr: [Image; 3],
    pub exposures: [f64; 3],
    pub gt: Option<Image>,
}

impl SceneSample {
    pub fn new(ldr: [Image; 3], exposures: [f64; 3], gt: Option<Image>) -> Result<Self> {
        let s = SceneSample { ldr, exposures, gt };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.ldr[0].height
    }

    pub fn width(&self) -> usize {
        self.ldr[0].width
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.exposures;
        if !(t[0] > 0.0 && t[0] < t[1] && t[1] < t[2]) || !t[2].is_finite() {
            return Err(Error::ExposureOrder(t.to_vec()));
        }
        let first = &self.ldr[0];
        if first.channels != 3 {
            return Err(Error::DimensionMismatch(format!(
                "LDR frames must have 3 channels, found {}",
                first.channels
            )));
        }
        for (i, img) in self.ldr.iter().chain(self.gt.iter()).enumerate() {
            if !img.same_dims(first) {
                return Err(Error::DimensionMismatch(format!(
                    "image {i} is {}x{}x{}, expected {}x{}x{}",
                    img.width, img.height, img.channels, first.width, first.height, first.channels
                )));
            }
            if let Some(v) = img.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidArgument(format!(
                    "image {i} has value {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> SceneSample {
        SceneSample {
            ldr: [
                self.ldr[0].crop(y0, x0, h, w),
                self.ldr[1].crop(y0, x0, h, w),
                self.ldr[2].crop(y0, x0, h, w),
            ],
            exposures: self.exposures,
            gt: self.gt.as_ref().map(|g| g.crop(y0, x0, h, w)),
        }
    }
}

fn parse_exposures(path: &Path) -> Result<[f64; 3]> {
    let text = fs::read_to_string(path)?;
    let values = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Format {
                format: "exposures",
                detail: format!("invalid exposure time {tok:?}"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    <[f64; 3]>::try_from(values.as_slice()).map_err(|_| Error::Format {
        format: "exposures",
        detail: format!("expected 3 exposure times, found {}", values.len()),
    })
}

pub fn load_scene(dir: &Path) -> Result<SceneSample> {
    for name in LDR_FILES.iter().chain([&EXPOSURES_FILE]) {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    let exposures = parse_exposures(&dir.join(EXPOSURES_FILE))?;
    if !(exposures[0] > 0.0 && exposures[0] < exposures[1] && exposures[1] < exposures[2]) {
        return Err(Error::ExposureOrder(exposures.to_vec()));
    }
    let ldr = [
        pnm::read(&dir.join(LDR_FILES[0]))?,
        pnm::read(&dir.join(LDR_FILES[1]))?,
        pnm::read(&dir.join(LDR_FILES[2]))?,
    ];
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.is_file() {
        Some(pfm::read(&gt_path)?)
    } else {
        None
    };
    SceneSample::new(ldr, exposures, gt)
}

pub fn save_scene(dir: &Path, scene: &SceneSample) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir)?;
    for (img, name) in scene.ldr.iter().zip(LDR_FILES) {
        pnm::write(&dir.join(name), img)?;
    }
    let text: String = scene.exposures.iter().map(|t| format!("{t}\n")).collect();
    fs::write(dir.join(EXPOSURES_FILE), text)?;
    if let Some(gt) = &scene.gt {
        pfm::write(&dir.join(GT_FILE), gt)?;
    }
    Ok(())
}

/// Batched network inputs: the three LDR frames and their gamma-corrected
/// counterparts, each `b x 3 x H x W`.
#[derive(Clone, Debug)]
pub struct SceneTensors<T: Element = f32> {
    pub ldr: [Tensor<T>; 3],
    pub gamma: [Tensor<T>; 3],
}

impl<T: Element> SceneTensors<T> {
    pub fn height(&self) -> usize {
        self.ldr[0].shape().h()
    }

    pub fn width(&self) -> usize {
        self.ldr[0].shape().w()
    }

    /// Applies the same tensor transform to all six inputs.
    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> SceneTensors<T> {
        SceneTensors {
            ldr: [f(&self.ldr[0]), f(&self.ldr[1]), f(&self.ldr[2])],
            gamma: [f(&self.gamma[0]), f(&self.gamma[1]), f(&self.gamma[2])],
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<SceneTensors<T>> {
        let c = |t: &Tensor<T>| t.crop(y0, x0, h, w);
        Ok(SceneTensors {
            ldr: [c(&self.ldr[0])?, c(&self.ldr[1])?, c(&self.ldr[2])?],
            gamma: [c(&self.gamma[0])?, c(&self.gamma[1])?, c(&self.gamma[2])?],
        })
    }
}

fn stack<T: Element>(items: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let first = items[0].shape();
    if items.iter().any(|t| t.shape() != first) {
        return Err(Error::DimensionMismatch("batch items differ in shape".into()));
    }
    let [_, c, h, w] = first.0;
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    let n = items.len();
    for t in items {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Builds a batch from scenes of equal size, one gamma per scene shared by
/// its three frames.
pub fn scene_tensors<T: Element>(scenes: &[&SceneSample], gammas: &[f64]) -> Result<SceneTensors<T>> {
    if scenes.is_empty() || scenes.len() != gammas.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scenes with {} gamma values",
            scenes.len(),
            gammas.len()
        )));
    }
    let (h, w) = (scenes[0].height(), scenes[0].width());
    if let Some(s) = scenes.iter().find(|s| s.height() != h || s.width() != w) {
        return Err(Error::DimensionMismatch(format!(
            "batch mixes {h}x{w} with {}x{}",
            s.height(),
            s.width()
        )));
    }
    let mut ldr: [Vec<Tensor<T>>; 3] = Default::default();
    let mut gamma: [Vec<Tensor<T>>; 3] = Default::default();
    for (scene, &g) in scenes.iter().zip(gammas) {
        for i in 0..3 {
            let t = scene.ldr[i].to_tensor::<T>();
            gamma[i].push(gamma_correct_tensor(&t, scene.exposures[i], g)?);
            ldr[i].push(t);
        }
    }
    let [l0, l1, l2] = ldr;
    let [g0, g1, g2] = gamma;
    Ok(SceneTensors {
        ldr: [stack(l0)?, stack(l1)?, stack(l2)?],
        gamma: [stack(g0)?, stack(g1)?, stack(g2)?],
    })
}

pub fn gt_tensor<T: Element>(scenes: &[&SceneSample]) -> Result<Tensor<T>> {
    let items = scenes
        .iter()
        .map(|s| {
            s.gt.as_ref()
                .map(|g| g.to_tensor::<T>())
                .ok_or_else(|| Error::InvalidArgument("scene has no ground truth".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    stack(items)
}

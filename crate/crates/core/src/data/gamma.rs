use rand::Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Gamma values used to map LDR frames into the linear domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub gamma_default: f64,
    pub disturb_probability: f64,
    pub disturb_center: f64,
    pub disturb_halfwidth: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            gamma_default: 2.2,
            disturb_probability: 0.3,
            disturb_center: 2.24,
            disturb_halfwidth: 0.1,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.disturb_probability) {
            return Err(Error::Config(format!(
                "disturb_probability {} outside [0, 1]",
                self.disturb_probability
            )));
        }
        if !(self.disturb_halfwidth >= 0.0) {
            return Err(Error::Config(format!(
                "disturb_halfwidth {} is negative",
                self.disturb_halfwidth
            )));
        }
        if !(self.gamma_default > 0.0) || !(self.disturb_center - self.disturb_halfwidth > 0.0) {
            return Err(Error::Config("gamma values must be positive".into()));
        }
        Ok(())
    }
}

/// Draws the gamma for one training sample. Always consumes exactly one
/// uniform for the coin and, when disturbed, one for the value.
pub fn sample_gamma<R: Rng + ?Sized>(rng: &mut R, cfg: &PreprocessConfig) -> f64 {
    let coin: f64 = rng.random();
    if coin < cfg.disturb_probability {
        let u: f64 = rng.random();
        cfg.disturb_center + cfg.disturb_halfwidth * (2.0 * u - 1.0)
    } else {
        cfg.gamma_default
    }
}

fn check(t: f64, gamma: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "exposure time must be positive, got {t}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

/// `ldr^gamma / t`, evaluated in double precision.
pub fn gamma_correct(ldr: &Image, t: f64, gamma: f64) -> Result<Image> {
    check(t, gamma)?;
    let data = ldr
        .data
        .iter()
        .map(|&v| ((v.max(0.0) as f64).powf(gamma) / t) as f32)
        .collect();
    Image::from_vec(ldr.width, ldr.height, ldr.channels, data)
}

pub fn gamma_correct_tensor<T: Element>(ldr: &Tensor<T>, t: f64, gamma: f64) -> Result<Tensor<T>> {
    check(t, gamma)?;
    Ok(ldr.map(|v| T::from_f64(v.as_f64().max(0.0).powf(gamma) / t)))
}

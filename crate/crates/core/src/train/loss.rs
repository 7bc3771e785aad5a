//! Tonemapped loss and PSNR metrics.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

static NEGATIVE_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// How many negative inputs the μ-law has clamped to zero since start-up.
pub fn negative_clamp_count() -> u64 {
    NEGATIVE_CLAMPS.load(Ordering::Relaxed)
}

/// Normaliser of the μ-law curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TonemapDenominator {
    /// `log(1 + mu)`: maps `[0, 1]` onto `[0, 1]`.
    Log1pMu,
    /// `1 + mu`.
    OnePlusMu,
}

impl TonemapDenominator {
    pub fn as_str(&self) -> &'static str {
        match self {
            TonemapDenominator::Log1pMu => "log1p_mu",
            TonemapDenominator::OnePlusMu => "one_plus_mu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log1p_mu" => Ok(TonemapDenominator::Log1pMu),
            "one_plus_mu" => Ok(TonemapDenominator::OnePlusMu),
            _ => Err(Error::Config(format!("unknown tonemap denominator {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub mu: f64,
    pub denominator: TonemapDenominator,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mu: 5000.0,
            denominator: TonemapDenominator::Log1pMu,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn denom(&self) -> f64 {
        match self.denominator {
            TonemapDenominator::Log1pMu => self.mu.ln_1p(),
            TonemapDenominator::OnePlusMu => 1.0 + self.mu,
        }
    }
}

/// `log(1 + mu * x) / denom`; negative `x` is clamped to zero and counted.
#[inline]
pub fn mu_law_scalar(x: f64, mu: f64, denom: f64) -> f64 {
    let x = if x < 0.0 {
        NEGATIVE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        0.0
    } else {
        x
    };
    (mu * x).ln_1p() / denom
}

#[inline]
pub(crate) fn mu_law_derivative(x: f64, mu: f64, denom: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        mu / ((1.0 + mu * x) * denom)
    }
}

pub(crate) fn mu_law_tensor<T: Element>(x: &Tensor<T>, mu: f64, denom: f64) -> Tensor<T> {
    x.map(|v| T::from_f64(mu_law_scalar(v.as_f64(), mu, denom)))
}

/// μ-law tonemapping of a whole tensor (no graph).
pub fn mu_law<T: Element>(x: &Tensor<T>, cfg: &LossConfig) -> Tensor<T> {
    mu_law_tensor(x, cfg.mu, cfg.denom())
}

/// μ-law tonemapping inside a differentiation graph.
pub fn mu_law_var<T: Element>(g: &mut Graph<T>, x: Var, cfg: &LossConfig) -> Var {
    g.mu_law(x, cfg.mu, cfg.denom())
}

/// Mean absolute error between tonemapped prediction and ground truth.
pub fn loss_l1_tonemapped<T: Element>(
    g: &mut Graph<T>,
    pred: Var,
    gt: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    if g.shape(pred) != g.shape(gt) {
        return Err(Error::shape(
            "loss_l1_tonemapped",
            format!("{} vs {}", g.shape(pred), g.shape(gt)),
        ));
    }
    let tp = mu_law_var(g, pred, cfg);
    let tg = mu_law_var(g, gt, cfg);
    g.l1_mean(tp, tg)
}

/// Loss value without building a graph.
pub fn loss_value<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let diff = mu_law(pred, cfg).zip_map(&mu_law(gt, cfg), |a, b| (a - b).abs())?;
    Ok(diff.data().iter().map(|v| v.as_f64()).sum::<f64>() / diff.numel() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsnrDomain {
    Linear,
    Mu,
}

pub const DEFAULT_PSNR_CAP: f64 = 100.0;

/// `10 log10(1 / MSE)` with peak 1, capped at `cap` dB.
pub fn psnr_with_cap<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    domain: PsnrDomain,
    cfg: &LossConfig,
    cap: f64,
) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{} vs {}", pred.shape(), gt.shape()),
        ));
    }
    let (a, b) = match domain {
        PsnrDomain::Linear => (pred.clone(), gt.clone()),
        PsnrDomain::Mu => (mu_law(pred, cfg), mu_law(gt, cfg)),
    };
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    Ok(psnr_from_mse(mse, cap))
}

pub fn psnr<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    domain: PsnrDomain,
    cfg: &LossConfig,
) -> Result<f64> {
    psnr_with_cap(pred, gt, domain, cfg, DEFAULT_PSNR_CAP)
}

pub fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        return cap;
    }
    (10.0 * (1.0 / mse).log10()).min(cap)
}

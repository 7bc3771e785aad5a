//! Side-by-side training of the four architecture variants.

use super::{evaluate, train_loop, Dataset, TrainConfig};
use crate::data::SceneSample;
use crate::error::Result;
use crate::model::{param_count, Adnet, ModelConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub psnr_l: f64,
    pub psnr_mu: f64,
}

/// Trains every variant with the same seed, data and budget, then scores
/// the final weights on the validation scenes (training scenes if none).
///
/// Only `variant` differs between runs; all other fields of `model` are
/// shared.
pub fn run_ablation(
    data: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
    on_variant: &mut dyn FnMut(Variant),
) -> Result<Vec<AblationRow>> {
    let eval: Vec<&SceneSample> = if data.val.is_empty() {
        data.train.iter().collect()
    } else {
        data.val.iter().collect()
    };
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        on_variant(variant);
        let cfg = ModelConfig {
            variant,
            ..model.clone()
        };
        let net = Adnet::init(cfg.clone(), train.seed)?;
        let out = train_loop(net, data, train, &mut |_| {})?;
        let trained = Adnet::new(cfg.clone(), out.last.weights)?;
        let (psnr_l, psnr_mu) = evaluate(&trained, &eval, train)?;
        rows.push(AblationRow {
            variant,
            params: param_count(&cfg),
            psnr_l,
            psnr_mu,
        });
    }
    Ok(rows)
}

/// Tab-separated table, one row per variant, metrics to 4 decimals.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("Model\tParams\tPSNR-l\tPSNR-mu\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.4}\t{:.4}\n",
            r.variant.label(),
            r.params,
            r.psnr_l,
            r.psnr_mu
        ));
    }
    s
}

use super::loss::{LossConfig, TonemapDenominator};
use crate::data::PreprocessConfig;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::tensor::AdamParams;

pub const DEFAULT_SEED: u64 = 2021;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamParams,
    /// Learning-rate factor applied from `decay_epoch` on.
    pub lr_decay: f64,
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Validate every this many epochs (and always after the last one).
    pub val_every: usize,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamParams::default(),
            lr_decay: 0.1,
            decay_epoch: 100,
            batch_size: 16,
            epochs: 200,
            patch_size: 256,
            patch_stride: 128,
            val_every: 1,
            seed: DEFAULT_SEED,
            preprocess: PreprocessConfig {
                seed: DEFAULT_SEED,
                ..Default::default()
            },
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.preprocess.seed = seed;
        self
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.adam.lr * self.lr_decay
        } else {
            self.adam.lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let reals = [("lr", a.lr), ("eps", a.eps), ("lr_decay", self.lr_decay)];
        for (name, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("patch_stride", self.patch_stride),
            ("val_every", self.val_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.decay_epoch > self.epochs {
            return Err(Error::Config(format!(
                "decay_epoch {} exceeds epochs {}",
                self.decay_epoch, self.epochs
            )));
        }
        self.preprocess.validate()?;
        self.loss.validate()
    }
}

impl KeyValue for TrainConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        let p = &self.preprocess;
        [
            ("train.lr", self.adam.lr.to_string()),
            ("train.beta1", self.adam.beta1.to_string()),
            ("train.beta2", self.adam.beta2.to_string()),
            ("train.eps", self.adam.eps.to_string()),
            ("train.lr_decay", self.lr_decay.to_string()),
            ("train.decay_epoch", self.decay_epoch.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.patch_size", self.patch_size.to_string()),
            ("train.patch_stride", self.patch_stride.to_string()),
            ("train.val_every", self.val_every.to_string()),
            ("train.seed", self.seed.to_string()),
            ("preprocess.gamma_default", p.gamma_default.to_string()),
            ("preprocess.disturb_probability", p.disturb_probability.to_string()),
            ("preprocess.disturb_center", p.disturb_center.to_string()),
            ("preprocess.disturb_halfwidth", p.disturb_halfwidth.to_string()),
            ("preprocess.seed", p.seed.to_string()),
            ("loss.mu", self.loss.mu.to_string()),
            ("loss.denominator", self.loss.denominator.as_str().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "train.lr" => self.adam.lr = kv::value(key, v)?,
            "train.beta1" => self.adam.beta1 = kv::value(key, v)?,
            "train.beta2" => self.adam.beta2 = kv::value(key, v)?,
            "train.eps" => self.adam.eps = kv::value(key, v)?,
            "train.lr_decay" => self.lr_decay = kv::value(key, v)?,
            "train.decay_epoch" => self.decay_epoch = kv::value(key, v)?,
            "train.batch_size" => self.batch_size = kv::value(key, v)?,
            "train.epochs" => self.epochs = kv::value(key, v)?,
            "train.patch_size" => self.patch_size = kv::value(key, v)?,
            "train.patch_stride" => self.patch_stride = kv::value(key, v)?,
            "train.val_every" => self.val_every = kv::value(key, v)?,
            "train.seed" => self.seed = kv::value(key, v)?,
            "preprocess.gamma_default" => self.preprocess.gamma_default = kv::value(key, v)?,
            "preprocess.disturb_probability" => {
                self.preprocess.disturb_probability = kv::value(key, v)?
            }
            "preprocess.disturb_center" => self.preprocess.disturb_center = kv::value(key, v)?,
            "preprocess.disturb_halfwidth" => self.preprocess.disturb_halfwidth = kv::value(key, v)?,
            "preprocess.seed" => self.preprocess.seed = kv::value(key, v)?,
            "loss.mu" => self.loss.mu = kv::value(key, v)?,
            "loss.denominator" => self.loss.denominator = TonemapDenominator::parse(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.adam.lr, 1e-4);
        assert_eq!((cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps), (0.9, 0.999, 1e-8));
        assert_eq!((cfg.batch_size, cfg.patch_size, cfg.patch_stride), (16, 256, 128));
        assert_eq!(cfg.loss.mu, 5000.0);
        assert_eq!((cfg.decay_epoch, cfg.epochs), (100, 200));
        assert!(cfg.validate().is_ok());
        assert!((cfg.lr_at(100) - 1e-5).abs() < 1e-20);
        assert_eq!(cfg.lr_at(99), 1e-4);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default().with_seed(9);
        cfg.adam.lr = 3.3e-4;
        cfg.loss.denominator = TonemapDenominator::OnePlusMu;
        let back = TrainConfig::from_pairs(&kv::parse(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn milestone_beyond_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 10,
            decay_epoch: 11,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}

//! Config resolution (defaults, config file, `--set` overrides) and run
//! manifests.

use std::fmt;
use std::path::{Path, PathBuf};

use adnet::data::Motion;
use adnet::kv::{self, KeyValue};
use anyhow::{Context, Result};

pub const SEED_ENV: &str = "ADNET_SEED";

/// Mistakes in how the tool was invoked; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Object-safe view of a [`KeyValue`] config.
pub trait Section {
    fn pairs(&self) -> Vec<(String, String)>;
    fn set(&mut self, key: &str, value: &str) -> adnet::Result<bool>;
}

impl<T: KeyValue> Section for T {
    fn pairs(&self) -> Vec<(String, String)> {
        KeyValue::pairs(self)
    }

    fn set(&mut self, key: &str, value: &str) -> adnet::Result<bool> {
        KeyValue::set(self, key, value)
    }
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn apply(sections: &mut [&mut dyn Section], key: &str, value: &str) -> Result<()> {
    // manifests carry bookkeeping keys next to the config
    if key.starts_with("manifest.") {
        return Ok(());
    }
    for s in sections.iter_mut() {
        if s.set(key, value).map_err(|e| usage(e.to_string()))? {
            return Ok(());
        }
    }
    Err(usage(format!("unknown config key {key:?}")))
}

/// Applies a config file (or manifest) and then `key=value` overrides.
pub fn resolve(sections: &mut [&mut dyn Section], config: Option<&Path>, sets: &[String]) -> Result<()> {
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in kv::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))? {
            apply(sections, &k, &v)?;
        }
    }
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got {s:?}")))?;
        apply(sections, k.trim(), v.trim())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub motion: Motion,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 4,
            height: 64,
            width: 64,
            motion: Motion::None,
            noise: 0.0,
            seed: adnet::train::DEFAULT_SEED,
        }
    }
}

pub fn parse_motion(s: &str) -> std::result::Result<Motion, String> {
    if s == "none" {
        return Ok(Motion::None);
    }
    let parse = |t: &str| t.trim().parse::<i32>().map_err(|_| format!("bad motion {s:?}, expected none or DY,DX"));
    match s.split_once(',') {
        Some((a, b)) => Ok(Motion::Shift(parse(a)?, parse(b)?)),
        None => Err(format!("bad motion {s:?}, expected none or DY,DX")),
    }
}

pub fn motion_text(m: Motion) -> String {
    match m {
        Motion::None => "none".into(),
        Motion::Shift(dy, dx) => format!("{dy},{dx}"),
    }
}

impl KeyValue for SynthConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("synth.count".into(), self.count.to_string()),
            ("synth.height".into(), self.height.to_string()),
            ("synth.width".into(), self.width.to_string()),
            ("synth.motion".into(), motion_text(self.motion)),
            ("synth.noise".into(), self.noise.to_string()),
            ("synth.seed".into(), self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> adnet::Result<bool> {
        match key {
            "synth.count" => self.count = kv::value(key, value)?,
            "synth.height" => self.height = kv::value(key, value)?,
            "synth.width" => self.width = kv::value(key, value)?,
            "synth.motion" => self.motion = parse_motion(value).map_err(adnet::Error::Config)?,
            "synth.noise" => self.noise = kv::value(key, value)?,
            "synth.seed" => self.seed = kv::value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferConfig {
    pub tta: bool,
    pub tile: Option<(usize, usize)>,
    pub overlap: usize,
    pub attention: bool,
}

pub fn parse_tile(s: &str) -> std::result::Result<(usize, usize), String> {
    let err = || format!("bad tile {s:?}, expected HxW");
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(err)?;
    Ok((h.trim().parse().map_err(|_| err())?, w.trim().parse().map_err(|_| err())?))
}

impl KeyValue for InferConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        vec![
            ("infer.tta".into(), self.tta.to_string()),
            (
                "infer.tile".into(),
                self.tile.map_or("none".into(), |(h, w)| format!("{h}x{w}")),
            ),
            ("infer.overlap".into(), self.overlap.to_string()),
            ("infer.attention".into(), self.attention.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> adnet::Result<bool> {
        match key {
            "infer.tta" => self.tta = kv::flag(key, value)?,
            "infer.tile" if value == "none" => self.tile = None,
            "infer.tile" => self.tile = Some(parse_tile(value).map_err(adnet::Error::Config)?),
            "infer.overlap" => self.overlap = kv::value(key, value)?,
            "infer.attention" => self.attention = kv::flag(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Everything needed to repeat a run.
pub struct RunManifest {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub inputs: Vec<(&'static str, PathBuf)>,
    pub outputs: Vec<(&'static str, PathBuf)>,
    pub config: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &'static str, sections: &[&dyn Section]) -> Self {
        RunManifest {
            command,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: sections.iter().flat_map(|s| s.pairs()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut pairs = vec![
            ("manifest.command".to_string(), self.command.to_string()),
            ("manifest.version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        if let Some(seed) = self.seed {
            pairs.push(("manifest.seed".into(), seed.to_string()));
        }
        for (name, p) in &self.inputs {
            pairs.push((format!("manifest.input.{name}"), p.display().to_string()));
        }
        for (name, p) in &self.outputs {
            pairs.push((format!("manifest.output.{name}"), p.display().to_string()));
        }
        pairs.extend(self.config.iter().cloned());
        kv::render(&pairs)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_motion_and_tiles() {
        assert_eq!(parse_motion("none"), Ok(Motion::None));
        assert_eq!(parse_motion("2,-3"), Ok(Motion::Shift(2, -3)));
        assert!(parse_motion("2").is_err());
        assert_eq!(parse_tile("64x80"), Ok((64, 80)));
        assert!(parse_tile("64").is_err());
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut s = SynthConfig::default();
        let mut i = InferConfig::default();
        resolve(
            &mut [&mut s, &mut i],
            None,
            &["synth.count=2".into(), "infer.tile = 8x8".into(), "manifest.command=x".into()],
        )
        .unwrap();
        assert_eq!((s.count, i.tile), (2, Some((8, 8))));
        let err = resolve(&mut [&mut s], None, &["nope=1".into()]).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn synth_config_round_trip() {
        let s = SynthConfig {
            motion: Motion::Shift(1, -2),
            noise: 0.01,
            ..Default::default()
        };
        let pairs = kv::parse(&s.to_text()).unwrap();
        assert_eq!(SynthConfig::from_pairs(&pairs).unwrap(), s);
    }
}

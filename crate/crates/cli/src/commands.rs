use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use adnet::data::{
    load_scene, make_synthetic_scene, pfm, pnm, save_scene, scene_tensors, Image, SceneSample,
    SceneTensors, EXPOSURES_FILE,
};
use adnet::model::{export_attention_heatmap, Adnet, HdrModel, ModelConfig, Variant};
use adnet::rng::{stream, tags};
use adnet::tensor::gradsuite::{check_op, resolve_op, SuiteConfig, OPS};
use adnet::tensor::Tensor;
use adnet::train::{
    ablation_table, load_checkpoint, metric_log, psnr, run_ablation, save_checkpoint, tiled_infer, train_loop,
    tta_infer, Dataset, PsnrDomain, TrainConfig,
};
use anyhow::{bail, Context, Result};
use clap::Args;

use crate::settings::{
    env_seed, parse_motion, parse_tile, resolve, usage, InferConfig, RunManifest, Section, SynthConfig,
};
use crate::ConfigArgs;

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// `none` or `DY,DX`: short frame moved by +(DY,DX), long frame by -(DY,DX)
    #[arg(long, value_parser = parse_motion)]
    motion: Option<adnet::data::Motion>,
    /// Gaussian sensor noise sigma on the short exposure
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut s = SynthConfig::default();
    if let Some(seed) = env_seed()? {
        s.seed = seed;
    }
    resolve(&mut [&mut s], a.cfg.config.as_deref(), &a.cfg.sets)?;
    s.count = a.count.unwrap_or(s.count);
    s.height = a.height.unwrap_or(s.height);
    s.width = a.width.unwrap_or(s.width);
    s.motion = a.motion.unwrap_or(s.motion);
    s.noise = a.noise.unwrap_or(s.noise);
    s.seed = a.seed.unwrap_or(s.seed);
    if s.height == 0 || s.width == 0 {
        return Err(usage("height and width must be positive"));
    }
    if !(s.noise >= 0.0) {
        return Err(usage("noise must be non-negative"));
    }

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = RunManifest::new("synth", &[&s]);
    manifest.seed = Some(s.seed);
    for i in 0..s.count {
        let scene = make_synthetic_scene(
            &mut stream(s.seed, &[tags::SCENE, i as u64]),
            s.height,
            s.width,
            s.motion,
            s.noise,
        );
        let dir = a.out.join(format!("scene_{i:03}"));
        save_scene(&dir, &scene).with_context(|| format!("writing {}", dir.display()))?;
    }
    manifest.outputs.push(("dir", a.out.clone()));
    manifest.write(&a.out)?;
    eprintln!("wrote {} scenes to {}", s.count, a.out.display());
    Ok(ExitCode::SUCCESS)
}

/// A scene directory, or a directory of scene directories (sorted by name).
fn load_scenes(dir: &Path) -> Result<Vec<SceneSample>> {
    if dir.join(EXPOSURES_FILE).exists() {
        return Ok(vec![load_scene(dir).with_context(|| format!("loading {}", dir.display()))?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(EXPOSURES_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenes under {}", dir.display());
    }
    dirs.iter()
        .map(|d| load_scene(d).with_context(|| format!("loading {}", d.display())))
        .collect()
}

fn load_dataset(data: &Path, val: Option<&Path>) -> Result<Dataset> {
    let train = load_scenes(data)?;
    let val = match val {
        Some(v) => load_scenes(v)?,
        None => Vec::new(),
    };
    if let Some(i) = train.iter().chain(&val).position(|s| s.gt.is_none()) {
        bail!("scene {i} has no ground truth");
    }
    Ok(Dataset { train, val })
}

/// Model and training configs with the seed precedence
/// default < environment < config file < `--set` < `--seed`.
fn training_settings(cfg: &ConfigArgs, seed: Option<u64>) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(s) = env_seed()? {
        train = train.with_seed(s);
    }
    resolve(&mut [&mut model, &mut train], cfg.config.as_deref(), &cfg.sets)?;
    if let Some(s) = seed {
        train = train.with_seed(s);
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok((model, train))
}

/// `--epochs` shortens the run; the decay milestone moves with it.
fn set_epochs(tc: &mut TrainConfig, epochs: usize) {
    tc.epochs = epochs;
    tc.decay_epoch = tc.decay_epoch.min(epochs);
}

#[derive(Args)]
pub struct TrainArgs {
    /// Scene directory or directory of scenes, all with ground truth
    #[arg(long)]
    data: PathBuf,
    /// Validation scenes for model selection (training patches if absent)
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_parser = Variant::parse)]
    variant: Option<Variant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints, metric log and manifest
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let (mut model_cfg, mut tc) = training_settings(&a.cfg, a.seed)?;
    if let Some(v) = a.variant {
        model_cfg.variant = v;
    }
    if let Some(e) = a.epochs {
        set_epochs(&mut tc, e);
    }
    tc.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_dataset(&a.data, a.val.as_deref())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let model = Adnet::init(model_cfg.clone(), tc.seed)?;
    eprintln!(
        "training {} ({} parameters) on {} scenes for {} epochs",
        model_cfg.variant,
        model.weights.count(),
        data.train.len(),
        tc.epochs
    );
    let outcome = match train_loop(model, &data, &tc, &mut |r| {
        if r.step % 50 == 0 {
            eprintln!("epoch {} step {} loss {:.6} lr {:e}", r.epoch, r.step, r.loss, r.lr);
        }
    }) {
        Ok(o) => o,
        Err(adnet::Error::NonFiniteLoss { epoch, step, dump }) => {
            let path = a.out.join("nonfinite.ckpt");
            save_checkpoint(&path, &dump)?;
            bail!("non-finite loss at epoch {epoch}, step {step}; state saved to {}", path.display());
        }
        Err(e) => return Err(e.into()),
    };

    let last = a.out.join("last.ckpt");
    let best = a.out.join("best.ckpt");
    let log = a.out.join("metrics.tsv");
    save_checkpoint(&last, &outcome.last)?;
    match &outcome.best {
        Some((m, ckpt)) => {
            save_checkpoint(&best, ckpt)?;
            eprintln!("best epoch {} PSNR-mu {:.4}", m.epoch, m.val_psnr_mu);
        }
        None => save_checkpoint(&best, &outcome.last)?,
    }
    fs::write(&log, metric_log(&outcome.log))?;
    let mut manifest = RunManifest::new("train", &[&model_cfg, &tc]);
    manifest.seed = Some(tc.seed);
    manifest.inputs.push(("data", a.data.clone()));
    if let Some(v) = &a.val {
        manifest.inputs.push(("val", v.clone()));
    }
    manifest.outputs.extend([("best", best), ("last", last), ("metrics", log)]);
    manifest.write(&a.out)?;
    Ok(ExitCode::SUCCESS)
}

/// Counts forward passes of the wrapped model.
struct Counted<'a, M: ?Sized> {
    inner: &'a M,
    passes: AtomicUsize,
}

impl<M: HdrModel<f32> + ?Sized> HdrModel<f32> for Counted<'_, M> {
    fn predict(&self, inputs: &SceneTensors<f32>) -> adnet::Result<Tensor<f32>> {
        self.passes.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(inputs)
    }

    fn input_divisor(&self) -> usize {
        self.inner.input_divisor()
    }

    fn receptive_field_radius(&self) -> Option<usize> {
        self.inner.receptive_field_radius()
    }
}

/// Test-time augmentation as a model, so it composes with tiling.
struct Ensemble<'a, M: ?Sized>(&'a M);

impl<M: HdrModel<f32> + ?Sized> HdrModel<f32> for Ensemble<'_, M> {
    fn predict(&self, inputs: &SceneTensors<f32>) -> adnet::Result<Tensor<f32>> {
        Ok(tta_infer(self.0, inputs)?.hdr)
    }

    fn input_divisor(&self) -> usize {
        self.0.input_divisor()
    }

    fn receptive_field_radius(&self) -> Option<usize> {
        self.0.receptive_field_radius()
    }
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene directory; ground truth is not needed
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Average over flips (and transposition on square inputs)
    #[arg(long)]
    tta: bool,
    /// Process HxW tiles independently
    #[arg(long, value_parser = parse_tile, value_name = "HxW")]
    tile: Option<(usize, usize)>,
    /// Pixels discarded on each interior tile side
    #[arg(long, requires = "tile")]
    overlap: Option<usize>,
    /// Also write the two attention maps as 16-bit grayscale images
    #[arg(long)]
    attention: bool,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn infer(a: InferArgs) -> Result<ExitCode> {
    let mut ic = InferConfig::default();
    resolve(&mut [&mut ic], a.cfg.config.as_deref(), &a.cfg.sets)?;
    ic.tta |= a.tta;
    ic.attention |= a.attention;
    if a.tile.is_some() {
        ic.tile = a.tile;
    }
    ic.overlap = a.overlap.unwrap_or(ic.overlap);

    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let model = Adnet::new(ckpt.model.clone(), ckpt.weights).context("incompatible checkpoint")?;
    let scene = load_scene(&a.scene).with_context(|| format!("loading {}", a.scene.display()))?;
    let inputs = scene_tensors::<f32>(&[&scene], &[ckpt.train.preprocess.gamma_default])?;
    if ic.tile.is_none() && (inputs.height() % model.input_divisor() != 0 || inputs.width() % model.input_divisor() != 0) {
        bail!(
            "{}x{} input is not divisible by {}; use --tile",
            inputs.height(),
            inputs.width(),
            model.input_divisor()
        );
    }

    let counted = Counted {
        inner: &model,
        passes: AtomicUsize::new(0),
    };
    let ensemble = Ensemble(&counted);
    let runner: &dyn HdrModel<f32> = if ic.tta { &ensemble } else { &counted };
    let hdr = match ic.tile {
        Some((th, tw)) => tiled_infer(runner, &inputs, th, tw, ic.overlap)?,
        None => runner.predict(&inputs)?,
    };
    let passes = counted.passes.load(Ordering::Relaxed);
    eprintln!("forward passes: {passes}");

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let result = a.out.join("result.pfm");
    pfm::write(&result, &Image::from_tensor(&hdr, 0))?;
    let mut manifest = RunManifest::new("infer", &[&ic]);
    manifest.inputs.extend([("checkpoint", a.checkpoint.clone()), ("scene", a.scene.clone())]);
    manifest.outputs.push(("result", result));
    if ic.attention {
        let maps = model.forward(&inputs)?.attention;
        let images = export_attention_heatmap(model.config.variant, &maps)?;
        for (name, img) in ["short", "long"].iter().zip(&images) {
            let path = a.out.join(format!("attention_{name}.pgm"));
            pnm::write(&path, img)?;
            manifest.outputs.push((if *name == "short" { "attention_short" } else { "attention_long" }, path));
        }
    }
    manifest.write(&a.out)?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted HDR image (PFM)
    #[arg(long)]
    result: PathBuf,
    /// Ground-truth HDR image (PFM)
    #[arg(long)]
    gt: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let mut tc = TrainConfig::default();
    resolve(&mut [&mut tc], a.cfg.config.as_deref(), &a.cfg.sets)?;
    let pred = pfm::read(&a.result).with_context(|| format!("reading {}", a.result.display()))?;
    let gt = pfm::read(&a.gt).with_context(|| format!("reading {}", a.gt.display()))?;
    if !pred.same_dims(&gt) {
        return Err(adnet::Error::DimensionMismatch(format!(
            "result {}x{}x{} vs gt {}x{}x{}",
            pred.height, pred.width, pred.channels, gt.height, gt.width, gt.channels
        ))
        .into());
    }
    let (p, g) = (pred.to_tensor::<f64>(), gt.to_tensor::<f64>());
    let l = psnr(&p, &g, PsnrDomain::Linear, &tc.loss)?;
    let m = psnr(&p, &g, PsnrDomain::Mu, &tc.loss)?;
    println!("PSNR-l {l:.4}\tPSNR-mu {m:.4}");
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Check every differentiable op
    #[arg(long, conflicts_with = "op")]
    all: bool,
    /// Single op to check
    op: Option<String>,
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let ops: Vec<&'static str> = match (a.all, a.op.as_deref()) {
        (true, _) => OPS.to_vec(),
        (false, Some(name)) => vec![resolve_op(name).map_err(|_| {
            usage(format!("unknown op {name:?}; expected one of {}", OPS.join(", ")))
        })?],
        (false, None) => return Err(usage("pass --all or an op name")),
    };
    let cfg = SuiteConfig::double();
    let (mut total, mut failed) = (0, 0);
    for op in ops {
        for r in check_op::<f64>(op, &cfg)? {
            println!(
                "{}\t{}\t{:.3e}\t{}",
                r.op,
                r.case,
                r.max_rel_error,
                if r.passed { "PASS" } else { "FAIL" }
            );
            total += 1;
            failed += usize::from(!r.passed);
        }
    }
    eprintln!("{} of {total} cases passed (tolerance {:e})", total - failed, cfg.tolerance);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

pub fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let (model_cfg, mut tc) = training_settings(&a.cfg, a.seed)?;
    if let Some(e) = a.epochs {
        set_epochs(&mut tc, e);
    }
    let data = load_dataset(&a.data, a.val.as_deref())?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let rows = run_ablation(&data, &model_cfg, &tc, &mut |v| eprintln!("training {}", v.label()))?;
    let table = ablation_table(&rows);
    print!("{table}");
    let path = a.out.join("ablation.tsv");
    fs::write(&path, &table)?;
    // the variant key is ignored; every variant is trained
    let sections: [&dyn Section; 2] = [&model_cfg, &tc];
    let mut manifest = RunManifest::new("ablate", &sections);
    manifest.seed = Some(tc.seed);
    manifest.inputs.push(("data", a.data.clone()));
    manifest.outputs.push(("table", path));
    manifest.write(&a.out)?;
    Ok(ExitCode::SUCCESS)
}


//! End-to-end acceptance checks. One PASS/FAIL line per criterion is
//! written straight to stderr so it shows up without `--nocapture`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use adnet::data::{
    gamma_correct, make_synthetic_scene, pfm, pnm, scene_tensors, Image, Motion, SceneSample, SceneTensors,
};
use adnet::deformable::deform_conv2d;
use adnet::model::{
    adnet_forward, attention_module, drdb_forward, param_count, Adnet, HdrModel, ModelConfig, ModelWeights, Variant,
};
use adnet::rng::{stream, tags};
use adnet::tensor::gradsuite::{check_all, SuiteConfig, OPS};
use adnet::tensor::{conv2d, conv_output_size, ConvParams, Graph, Tensor};
use adnet::train::{
    ablation_table, batch_loss, load_checkpoint, mu_law_scalar, psnr_from_mse, resume, run_ablation,
    save_checkpoint, tile_layout, tiled_infer, train_loop, tta_infer, Checkpoint, Dataset, LossConfig,
    TrainConfig, DEFAULT_PSNR_CAP,
};
use adnet::Error;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run(n: usize, title: &str, f: impl FnOnce() -> Check) -> bool {
    let t0 = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail, ok) = match result {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    let _ = writeln!(std::io::stderr(), "criterion {n} {tag}: {title} [{detail}] ({secs:.1}s)");
    ok
}

fn gradient_suite() -> Check {
    let t0 = Instant::now();
    let results = check_all::<f64>(&SuiteConfig::double()).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for op in OPS {
        let cases: Vec<_> = results.iter().filter(|r| r.op == *op).collect();
        ensure(cases.len() >= 20, format!("{op}: only {} cases", cases.len()))?;
        for c in cases {
            ensure(
                c.passed && c.max_rel_error < 1e-6,
                format!("{op} {}: rel err {:e}", c.case, c.max_rel_error),
            )?;
            worst = worst.max(c.max_rel_error);
        }
    }
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} ops, {} cases, worst rel err {worst:.2e}, {secs:.1}s", OPS.len(), results.len()))
}

fn deformable_identity() -> Check {
    let mut rng = stream(2, &[]);
    let (mut configs, mut worst) = (0, 0.0f32);
    while configs < 100 {
        let (h, w) = (rng.random_range(3..12), rng.random_range(3..12));
        let k = rng.random_range(1..4);
        let p = ConvParams::new(rng.random_range(1..4), rng.random_range(0..3), rng.random_range(1..3));
        let (Ok(oh), Ok(ow)) = (conv_output_size(h, k, p), conv_output_size(w, k, p)) else {
            continue;
        };
        let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
        let x = Tensor::<f32>::uniform([2, ci, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f32>::uniform([co, ci, k, k], -1.0, 1.0, &mut rng);
        let b = Tensor::<f32>::uniform([1, co, 1, 1], -1.0, 1.0, &mut rng);
        let off = Tensor::zeros([2, 2 * k * k, oh, ow]);
        let mask = Tensor::ones([2, k * k, oh, ow]);
        let d = deform_conv2d(&x, &off, &mask, &wt, Some(&b), p).map_err(|e| e.to_string())?;
        let c = conv2d(&x, &wt, Some(&b), p).map_err(|e| e.to_string())?;
        worst = worst.max(d.max_abs_diff(&c) as f32);
        configs += 1;
    }
    ensure(worst < 1e-6, format!("identity diff {worst:e}"))?;

    let mut shift_worst = 0.0f64;
    for case in 0..20 {
        let (dy, dx) = (rng.random_range(-2i64..3), rng.random_range(-2i64..3));
        let (h, w) = (rng.random_range(6..12), rng.random_range(6..12));
        let p = ConvParams::same(3, 1);
        let x = Tensor::<f32>::uniform([1, 2, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f32>::uniform([3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let off = Tensor::from_fn([1, 18, h, w], |[_, c, _, _]| if c % 2 == 0 { dy as f32 } else { dx as f32 });
        let mask = Tensor::ones([1, 9, h, w]);
        let got = deform_conv2d(&x, &off, &mask, &wt, None, p).map_err(|e| e.to_string())?;
        let inside = |v: i64, n: usize| v >= 0 && v < n as i64;
        let shifted = Tensor::from_fn([1, 2, h, w], |[n, c, y, xx]| {
            let (sy, sx) = (y as i64 + dy, xx as i64 + dx);
            if inside(sy, h) && inside(sx, w) {
                x.at([n, c, sy as usize, sx as usize])
            } else {
                0.0
            }
        });
        let want = conv2d(&shifted, &wt, None, p).map_err(|e| e.to_string())?;
        let mut compared = 0;
        for y in 1..h - 1 {
            for xx in 1..w - 1 {
                let clear = (-1..=1).all(|a| inside(y as i64 + a + dy, h) && inside(xx as i64 + a + dx, w));
                if clear {
                    for c in 0..3 {
                        shift_worst = shift_worst.max((got.at([0, c, y, xx]) - want.at([0, c, y, xx])).abs() as f64);
                    }
                    compared += 1;
                }
            }
        }
        ensure(compared > 0, format!("translation case {case} has no interior"))?;
    }
    ensure(shift_worst < 1e-6, format!("translation diff {shift_worst:e}"))?;
    Ok(format!("100 configs max diff {worst:.1e}; 20 translations max diff {shift_worst:.1e}"))
}

const OVERFIT_STEPS: usize = 2000;

fn overfit() -> Check {
    let scene = make_synthetic_scene(&mut stream(2021, &[tags::SCENE]), 64, 64, Motion::None, 0.0);
    let cfg = ModelConfig {
        variant: Variant::Full,
        base_channels: 16,
        drdb_count: 1,
        drdb_growth: 8,
        pyramid_levels: 3,
        dilation: 2,
    };
    let mut tc = TrainConfig::default();
    tc.epochs = OVERFIT_STEPS;
    tc.decay_epoch = OVERFIT_STEPS;
    tc.batch_size = 1;
    tc.patch_size = 64;
    tc.patch_stride = 64;
    tc.val_every = OVERFIT_STEPS;
    tc.preprocess.disturb_probability = 0.0;
    let data = Dataset {
        train: vec![scene.clone()],
        val: vec![],
    };
    let t0 = Instant::now();
    let model = Adnet::init(cfg.clone(), tc.seed).map_err(|e| e.to_string())?;
    let head = train_loop(
        model,
        &data,
        &TrainConfig {
            epochs: OVERFIT_STEPS - 1,
            decay_epoch: OVERFIT_STEPS - 1,
            ..tc.clone()
        },
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    let mut before_last = head.last;
    before_last.train = tc.clone();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("overfit.ckpt");
    save_checkpoint(&path, &before_last).map_err(|e| e.to_string())?;
    let tail = resume(before_last, &data, &mut |_| {}).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();

    let losses: Vec<f64> = head.steps.iter().chain(&tail.steps).map(|s| s.loss).collect();
    ensure(losses.len() == OVERFIT_STEPS, format!("{} steps", losses.len()))?;
    let ma: Vec<f64> = losses[..50].windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    ensure(
        ma.windows(2).all(|p| p[1] < p[0]),
        format!("5-step moving average not decreasing over the first 50 steps: {ma:?}"),
    )?;

    let fin = tail.log.last().ok_or("no final metrics")?;
    ensure(fin.val_psnr_mu > 40.0, format!("PSNR-mu {:.4}", fin.val_psnr_mu))?;
    ensure(secs < 900.0, format!("took {secs:.1}s"))?;

    // replay the last step from the serialized checkpoint
    let replay = resume(load_checkpoint(&path).map_err(|e| e.to_string())?, &data, &mut |_| {})
        .map_err(|e| e.to_string())?;
    let (a, b) = (tail.steps[0].loss, replay.steps[0].loss);
    ensure((a - b).abs() < 1e-7, format!("replayed final loss {b} vs {a}"))?;
    let final_path = dir.path().join("final.ckpt");
    save_checkpoint(&final_path, &tail.last).map_err(|e| e.to_string())?;
    let reloaded = load_checkpoint(&final_path).map_err(|e| e.to_string())?;
    let live = Adnet::new(cfg.clone(), tail.last.weights.clone()).map_err(|e| e.to_string())?;
    let back = Adnet::new(cfg, reloaded.weights).map_err(|e| e.to_string())?;
    let l0 = batch_loss(&live, &[&scene], &[2.2], &tc.loss).map_err(|e| e.to_string())?;
    let l1 = batch_loss(&back, &[&scene], &[2.2], &tc.loss).map_err(|e| e.to_string())?;
    ensure((l0 - l1).abs() < 1e-7, format!("reloaded loss {l1} vs {l0}"))?;

    Ok(format!(
        "{OVERFIT_STEPS} steps in {secs:.1}s, final loss {a:.6}, PSNR-l {:.4}, PSNR-mu {:.4}",
        fin.val_psnr_l, fin.val_psnr_mu
    ))
}

fn exact_scalars() -> Check {
    let cfg = LossConfig::default();
    let m0 = mu_law_scalar(0.0, cfg.mu, cfg.denom());
    let m1 = mu_law_scalar(1.0, cfg.mu, cfg.denom());
    ensure(m0.abs() < 1e-9, format!("mu_law(0) = {m0}"))?;
    ensure((m1 - 1.0).abs() < 1e-9, format!("mu_law(1) = {m1}"))?;
    let img = Image::from_vec(1, 1, 1, vec![0.5]).map_err(|e| e.to_string())?;
    let g = gamma_correct(&img, 4.0, 2.0).map_err(|e| e.to_string())?.data[0] as f64;
    ensure((g - 0.0625).abs() < 1e-9, format!("gamma_correct = {g}"))?;
    let p = psnr_from_mse(0.01, DEFAULT_PSNR_CAP);
    ensure((p - 20.0).abs() < 1e-9, format!("psnr = {p}"))?;
    Ok(format!("mu_law(0)={m0} mu_law(1)={m1} gamma={g} psnr={p:.4}"))
}

fn tiled_vs_full() -> Check {
    let cfg = ModelConfig {
        variant: Variant::Baseline,
        base_channels: 16,
        drdb_count: 3,
        drdb_growth: 8,
        pyramid_levels: 3,
        dilation: 2,
    };
    let model = Adnet::init(cfg, 5).map_err(|e| e.to_string())?;
    let radius = model.receptive_field_radius().ok_or("no finite receptive field")?;
    let scene = make_synthetic_scene(&mut stream(5, &[tags::SCENE]), 96, 160, Motion::Shift(2, 3), 0.01);
    let x = scene_tensors::<f32>(&[&scene], &[2.2]).map_err(|e| e.to_string())?;
    let full = model.predict(&x).map_err(|e| e.to_string())?;
    let (th, tw) = (64, 80);
    let tiles = tile_layout(96, th, radius).unwrap().len() * tile_layout(160, tw, radius).unwrap().len();
    let tiled = tiled_infer(&model, &x, th, tw, radius).map_err(|e| e.to_string())?;
    ensure(tiled.shape() == full.shape(), "shape changed")?;
    let d = tiled.max_abs_diff(&full);
    ensure(d < 1e-5, format!("max diff {d:e}"))?;
    Ok(format!("radius {radius}, {tiles} tiles of {th}x{tw}, max diff {d:.1e}"))
}

struct SymmetricConv {
    weight: Tensor<f64>,
}

impl HdrModel<f64> for SymmetricConv {
    fn predict(&self, inputs: &SceneTensors<f64>) -> adnet::Result<Tensor<f64>> {
        let y = conv2d(&inputs.gamma[1], &self.weight, None, ConvParams::same(3, 1))?;
        Ok(y.map(|v| 1.0 / (1.0 + (-v).exp())))
    }
}

fn tta_check() -> Check {
    let k = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
    let m = SymmetricConv {
        weight: Tensor::from_fn([3, 3, 3, 3], |[o, i, y, x]| if o == i { k[y][x] } else { -0.03 * k[y][x] }),
    };
    let scene = make_synthetic_scene(&mut stream(6, &[]), 24, 24, Motion::Shift(1, 2), 0.01);
    let x = scene_tensors::<f64>(&[&scene], &[2.2]).map_err(|e| e.to_string())?;
    let plain = m.predict(&x).map_err(|e| e.to_string())?;
    let tta = tta_infer(&m, &x).map_err(|e| e.to_string())?;
    let d = tta.hdr.max_abs_diff(&plain);
    ensure(tta.passes == 4, format!("{} passes", tta.passes))?;
    ensure(d < 1e-6, format!("max diff {d:e}"))?;
    Ok(format!("4 passes, max diff {d:.1e}"))
}

fn architecture() -> Check {
    let cfg = ModelConfig::new(Variant::Full);
    let w = ModelWeights::<f32>::init(&cfg, &mut stream(7, &[]));
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let mut rng = stream(8, &[]);
    let f1 = g.constant(Tensor::uniform([1, 64, 8, 8], -1.0, 1.0, &mut rng));
    let f2 = g.constant(Tensor::uniform([1, 64, 8, 8], -1.0, 1.0, &mut rng));
    let a = attention_module(&mut g, &vars, 0, f1, f2).map_err(|e| e.to_string())?;
    let trace = [g.shape(a.input).c(), g.shape(a.hidden).c(), g.shape(a.map).c()];
    ensure(trace == [128, 128, 64], format!("trace {trace:?}"))?;

    let small = ModelConfig {
        base_channels: 8,
        drdb_count: 1,
        drdb_growth: 4,
        ..cfg.clone()
    };
    let sw = ModelWeights::<f32>::init(&small, &mut stream(9, &[]));
    let scene = make_synthetic_scene(&mut stream(9, &[]), 16, 16, Motion::Shift(1, -1), 0.01);
    let x = scene_tensors::<f32>(&[&scene], &[2.2]).map_err(|e| e.to_string())?;
    let out = adnet_forward(&x, &small, &sw).map_err(|e| e.to_string())?;
    ensure(out.attention.len() == 2, "expected two attention maps")?;
    ensure(
        out.attention.iter().all(|m| m.data().iter().all(|&v| v > 0.0 && v < 1.0)),
        "attention outside (0,1)",
    )?;

    let mut dw = ModelWeights::<f32>::init(&cfg, &mut stream(10, &[]));
    dw.zero_drdb_fusion();
    let mut g = Graph::new();
    let vars = dw.register(&mut g, false);
    let feat = g.constant(Tensor::uniform([1, 64, 6, 7], -1.0, 1.0, &mut stream(11, &[])));
    let y = drdb_forward(&mut g, &vars, &cfg, 0, feat).map_err(|e| e.to_string())?;
    ensure(g.value(y) == g.value(feat), "zero-fused DRDB is not an identity")?;

    // counts from an independent shape walk
    let frozen = [
        (Variant::Full, 64, 3, 32, 3, 2_131_343),
        (Variant::Baseline, 64, 3, 32, 3, 924_899),
        (Variant::DeformSingle, 64, 3, 32, 3, 645_374),
        (Variant::PcdOnly, 64, 3, 32, 3, 1_577_935),
        (Variant::Full, 16, 1, 8, 3, 134_183),
        (Variant::Full, 8, 2, 4, 2, 31_732),
        (Variant::PcdOnly, 32, 2, 16, 4, 487_722),
        (Variant::Baseline, 16, 1, 8, 1, 46_763),
    ];
    for (variant, c, d, gr, l, want) in frozen {
        let mc = ModelConfig {
            variant,
            base_channels: c,
            drdb_count: d,
            drdb_growth: gr,
            pyramid_levels: l,
            dilation: 2,
        };
        let got = param_count(&mc);
        ensure(got == want, format!("{mc:?}: {got} != {want}"))?;
    }
    Ok(format!("trace 128->128->64, attention in (0,1), DRDB identity, {} param counts", frozen.len()))
}

fn ablation() -> Check {
    let scenes: Vec<SceneSample> = (0..8)
        .map(|i| make_synthetic_scene(&mut stream(8, &[tags::SCENE, i]), 16, 16, Motion::Shift(1, -1), 0.01))
        .collect();
    let data = Dataset {
        train: scenes,
        val: vec![],
    };
    let model = ModelConfig {
        variant: Variant::Full,
        base_channels: 8,
        drdb_count: 1,
        drdb_growth: 4,
        pyramid_levels: 2,
        dilation: 2,
    };
    let tc = TrainConfig {
        epochs: 2,
        decay_epoch: 2,
        batch_size: 4,
        patch_size: 16,
        patch_stride: 16,
        val_every: 2,
        ..TrainConfig::default()
    };
    let first = run_ablation(&data, &model, &tc, &mut |_| {}).map_err(|e| e.to_string())?;
    let second = run_ablation(&data, &model, &tc, &mut |_| {}).map_err(|e| e.to_string())?;
    let table = ablation_table(&first);
    ensure(first.len() == 4, "expected 4 rows")?;
    for (row, variant) in first.iter().zip(Variant::ALL) {
        let cfg = ModelConfig { variant, ..model.clone() };
        ensure(row.variant == variant && row.params == param_count(&cfg), format!("bad row {row:?}"))?;
    }
    ensure(table == ablation_table(&second), "ablation not reproducible")?;
    Ok(format!("reproducible, report only:\n{}", table.trim_end()))
}

fn formats() -> Check {
    let mut rng = stream(9, &[]);
    let ldr: Vec<f32> = (0..5 * 4 * 3).map(|_| (rng.random_range(0..=65535u32) as f32) / 65535.0).collect();
    let img = Image::from_vec(5, 4, 3, ldr).map_err(|e| e.to_string())?;
    let bytes = pnm::encode(&img).map_err(|e| e.to_string())?;
    let back = pnm::decode(&bytes).map_err(|e| e.to_string())?;
    ensure(pnm::encode(&back).map_err(|e| e.to_string())? == bytes, "PNM bytes changed")?;

    let hdr = Image::from_vec(3, 2, 3, (0..18).map(|i| i as f32 * 0.37 - 1.0).collect()).map_err(|e| e.to_string())?;
    let fbytes = pfm::encode(&hdr).map_err(|e| e.to_string())?;
    let fback = pfm::decode(&fbytes).map_err(|e| e.to_string())?;
    ensure(fback == hdr, "PFM values changed")?;
    ensure(pfm::encode(&fback).map_err(|e| e.to_string())? == fbytes, "PFM bytes changed")?;

    let cfg = ModelConfig {
        base_channels: 4,
        drdb_count: 1,
        drdb_growth: 2,
        pyramid_levels: 2,
        ..ModelConfig::new(Variant::Full)
    };
    let ckpt = Checkpoint::new(cfg.clone(), TrainConfig::default(), ModelWeights::init(&cfg, &mut rng));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &ckpt).map_err(|e| e.to_string())?;
    let cbytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    ensure(loaded == ckpt, "checkpoint contents changed")?;
    ensure(loaded.to_bytes().map_err(|e| e.to_string())? == cbytes, "checkpoint bytes changed")?;

    let mut bad = bytes.clone();
    bad[1] = b'3';
    ensure(matches!(pnm::decode(&bad), Err(Error::Format { format: "PNM", .. })), "PNM magic accepted")?;
    let mut bad = fbytes.clone();
    bad[0] = b'X';
    ensure(matches!(pfm::decode(&bad), Err(Error::Format { format: "PFM", .. })), "PFM magic accepted")?;
    let mut bad = cbytes.clone();
    bad[0] = b'X';
    ensure(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic(_))), "checkpoint magic accepted")?;
    let mut bad = cbytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    ensure(
        matches!(Checkpoint::from_bytes(&bad), Err(Error::VersionMismatch { found: 7, .. })),
        "version accepted",
    )?;
    ensure(
        matches!(Checkpoint::from_bytes(&cbytes[..cbytes.len() - 3]), Err(Error::Truncated(_))),
        "truncation accepted",
    )?;
    Ok(format!("PNM {} B, PFM {} B, checkpoint {} B", bytes.len(), fbytes.len(), cbytes.len()))
}

#[test]
fn acceptance_criteria() {
    let results = [
        run(1, "gradient suite (f64)", gradient_suite),
        run(2, "deformable identity and translation", deformable_identity),
        run(3, "overfit synthetic scene", overfit),
        run(4, "exact scalars", exact_scalars),
        run(5, "tiled equals full inference", tiled_vs_full),
        run(6, "TTA on equivariant toy model", tta_check),
        run(7, "architecture contract", architecture),
        run(8, "ablation harness", ablation),
        run(9, "format round trips", formats),
    ];
    let failed: Vec<usize> = (1..=9).filter(|&i| !results[i - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

use adnet::data::{make_synthetic_scene, scene_tensors, Motion, SceneSample, SceneTensors};
use adnet::model::{Adnet, HdrModel, ModelConfig, Variant};
use adnet::rng::stream;
use adnet::tensor::{conv2d, ConvParams, Tensor};
use adnet::train::{
    load_checkpoint, metric_log, resume, save_checkpoint, tiled_infer, train_loop, tta_infer, Checkpoint,
    Dataset, TrainConfig,
};
use adnet::Error;

fn tiny_model(variant: Variant) -> Adnet {
    let cfg = ModelConfig {
        variant,
        base_channels: 4,
        drdb_count: 1,
        drdb_growth: 2,
        pyramid_levels: 2,
        dilation: 2,
    };
    Adnet::init(cfg, 5).unwrap()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        decay_epoch: epochs / 2,
        batch_size: 2,
        patch_size: 8,
        patch_stride: 6,
        ..TrainConfig::default()
    }
}

fn scenes(n: usize) -> Vec<SceneSample> {
    (0..n)
        .map(|i| make_synthetic_scene(&mut stream(30, &[i as u64]), 12, 14, Motion::Shift(1, 0), 0.01))
        .collect()
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let model = tiny_model(Variant::Full);
    let data = Dataset {
        train: scenes(1),
        val: vec![],
    };
    let out = train_loop(model.clone(), &data, &tiny_config(0), &mut |_| {}).unwrap();
    assert_eq!(out.last.weights, model.weights);
    assert!(out.log.is_empty() && out.steps.is_empty() && out.best.is_none());
}

#[test]
fn identical_seeds_give_identical_logs() {
    let data = Dataset {
        train: scenes(2),
        val: vec![],
    };
    let cfg = tiny_config(3);
    let a = train_loop(tiny_model(Variant::PcdOnly), &data, &cfg, &mut |_| {}).unwrap();
    let b = train_loop(tiny_model(Variant::PcdOnly), &data, &cfg, &mut |_| {}).unwrap();
    assert_eq!(metric_log(&a.log), metric_log(&b.log));
    assert_eq!(a.last, b.last);
    assert_eq!(a.log.len(), 3);
    // 2 scenes x 4 patches, batches of 2
    assert_eq!(a.steps.len(), 12);
    assert_eq!(a.last.adam.step, 12);
    assert!(a.steps.iter().all(|s| s.loss.is_finite()));
    assert_eq!(a.steps[0].lr, 1e-4);
    assert!((a.steps[11].lr - 1e-5).abs() < 1e-20);
    let log = metric_log(&a.log);
    assert!(log.lines().all(|l| l.split('\t').count() == 4));

    let other = train_loop(tiny_model(Variant::PcdOnly), &data, &cfg.clone().with_seed(1), &mut |_| {}).unwrap();
    assert_ne!(metric_log(&a.log), metric_log(&other.log));
}

#[test]
fn resuming_matches_uninterrupted_run() {
    let data = Dataset {
        train: scenes(1),
        val: scenes(1),
    };
    let cfg = tiny_config(4);
    let full = train_loop(tiny_model(Variant::Baseline), &data, &cfg, &mut |_| {}).unwrap();
    let half = train_loop(
        tiny_model(Variant::Baseline),
        &data,
        &TrainConfig {
            epochs: 2,
            decay_epoch: 2,
            ..cfg.clone()
        },
        &mut |_| {},
    )
    .unwrap();
    let mut ckpt = half.last;
    ckpt.train = cfg;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let rest = resume(load_checkpoint(&path).unwrap(), &data, &mut |_| {}).unwrap();
    assert_eq!(rest.last.weights, full.last.weights);
    assert_eq!(rest.last.adam, full.last.adam);
    assert_eq!(rest.log[..], full.log[2..]);
}

#[test]
fn missing_ground_truth_rejected() {
    let mut s = scenes(1);
    s[0].gt = None;
    let data = Dataset { train: s, val: vec![] };
    assert!(train_loop(tiny_model(Variant::Full), &data, &tiny_config(1), &mut |_| {}).is_err());
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let mut model = tiny_model(Variant::Baseline);
    let w = model.weights.get_mut("fusion.conv_out.bias").unwrap();
    *w = w.map(|_| f32::NAN);
    let data = Dataset {
        train: scenes(1),
        val: vec![],
    };
    match train_loop(model.clone(), &data, &tiny_config(2), &mut |_| {}) {
        Err(Error::NonFiniteLoss { epoch, step, dump }) => {
            assert_eq!((epoch, step), (1, 1));
            assert_eq!(dump.weights.get("fusion.conv_in.weight"), model.weights.get("fusion.conv_in.weight"));
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let model = tiny_model(Variant::Full);
    let ckpt = Checkpoint::new(model.config.clone(), tiny_config(1), model.weights.clone());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"ADNT");
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    save_checkpoint(&path, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::MissingFile(_))));
}

/// Single 3x3 convolution with a kernel symmetric under flips and
/// transposition, applied to the reference frame.
struct SymmetricConv {
    weight: Tensor<f64>,
}

impl SymmetricConv {
    fn new() -> Self {
        let k = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
        let weight = Tensor::from_fn([3, 3, 3, 3], |[o, i, y, x]| if o == i { k[y][x] } else { 0.02 * k[y][x] });
        SymmetricConv { weight }
    }
}

impl HdrModel<f64> for SymmetricConv {
    fn predict(&self, inputs: &SceneTensors<f64>) -> adnet::Result<Tensor<f64>> {
        conv2d(&inputs.gamma[1], &self.weight, None, ConvParams::same(3, 1))
    }

    fn receptive_field_radius(&self) -> Option<usize> {
        Some(1)
    }
}

fn scene_inputs(h: usize, w: usize) -> SceneTensors<f64> {
    let s = make_synthetic_scene(&mut stream(40, &[]), h, w, Motion::None, 0.0);
    scene_tensors(&[&s], &[2.2]).unwrap()
}

#[test]
fn tta_on_equivariant_model() {
    let m = SymmetricConv::new();
    let x = scene_inputs(10, 10);
    let plain = m.predict(&x).unwrap();
    let tta = tta_infer(&m, &x).unwrap();
    assert_eq!(tta.passes, 4);
    assert!(tta.hdr.max_abs_diff(&plain) < 1e-12);
    let rect = scene_inputs(10, 12);
    let t = tta_infer(&m, &rect).unwrap();
    assert_eq!(t.passes, 3);
    assert!(t.hdr.max_abs_diff(&m.predict(&rect).unwrap()) < 1e-12);
}

#[test]
fn tiling_reproduces_full_inference() {
    let m = SymmetricConv::new();
    let x = scene_inputs(23, 31);
    let full = m.predict(&x).unwrap();
    assert_eq!(tiled_infer(&m, &x, 23, 31, 0).unwrap(), full);
    assert_eq!(tiled_infer(&m, &x, 100, 100, 5).unwrap(), full);
    let tiled = tiled_infer(&m, &x, 9, 12, 1).unwrap();
    assert_eq!(tiled.shape(), full.shape());
    assert!(tiled.max_abs_diff(&full) < 1e-12);
    // without overlap tile seams differ
    assert!(tiled_infer(&m, &x, 9, 12, 0).unwrap().max_abs_diff(&full) > 1e-6);
    assert!(tiled_infer(&m, &x, 8, 12, 4).is_err());
}

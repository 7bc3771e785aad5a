use adnet::data::{make_synthetic_scene, scene_tensors, Motion, SceneTensors};
use adnet::model::{
    adnet_forward, adnet_forward_with, apply_attention, attention_module, deform_align_single, drdb_forward,
    feature_pyramid, pcd_align, AlignSpec, ForwardOptions, ModelConfig, ModelWeights, Variant,
};
use adnet::rng::stream;
use adnet::tensor::{Graph, Tensor};

fn cfg(variant: Variant, c: usize) -> ModelConfig {
    ModelConfig {
        variant,
        base_channels: c,
        drdb_count: 2,
        drdb_growth: c / 2,
        pyramid_levels: 3,
        dilation: 2,
    }
}

fn scene(h: usize, w: usize, seed: u64) -> SceneTensors<f64> {
    let s = make_synthetic_scene(&mut stream(seed, &[]), h, w, Motion::Shift(2, -1), 0.01);
    scene_tensors(&[&s], &[2.2]).unwrap()
}

#[test]
fn attention_channel_trace_and_range() {
    let c = cfg(Variant::Full, 64);
    let w = ModelWeights::<f64>::init(&c, &mut stream(3, &[]));
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let mut rng = stream(4, &[]);
    let f1 = g.constant(Tensor::uniform([1, 64, 6, 5], -1.0, 1.0, &mut rng));
    let f2 = g.constant(Tensor::uniform([1, 64, 6, 5], -1.0, 1.0, &mut rng));
    let a = attention_module(&mut g, &vars, 0, f1, f2).unwrap();
    let trace = [g.shape(a.input).c(), g.shape(a.hidden).c(), g.shape(a.map).c()];
    assert_eq!(trace, [128, 128, 64]);
    assert!(g.value(a.map).data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(attention_module(&mut g, &vars, 1, f1, f2).is_err());
}

#[test]
fn zero_attention_weights_give_half() {
    let c = cfg(Variant::Baseline, 8);
    let w = ModelWeights::<f64>::zeros(&c);
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let mut rng = stream(4, &[]);
    let f1 = g.constant(Tensor::uniform([1, 8, 4, 4], -1.0, 1.0, &mut rng));
    let f2 = g.constant(Tensor::uniform([1, 8, 4, 4], -1.0, 1.0, &mut rng));
    let a = attention_module(&mut g, &vars, 2, f1, f2).unwrap();
    assert!(g.value(a.map).data().iter().all(|&v| v == 0.5));

    let ones = g.constant(Tensor::ones([1, 8, 4, 4]));
    let zeros = g.constant(Tensor::zeros([1, 8, 4, 4]));
    let kept = apply_attention(&mut g, f1, ones).unwrap();
    assert_eq!(g.value(kept), g.value(f1));
    let gone = apply_attention(&mut g, f1, zeros).unwrap();
    assert!(g.value(gone).data().iter().all(|&v| v == 0.0));
}

#[test]
fn reference_feature_bypasses_gating() {
    // with every attention map forced to zero only the reference survives
    let c = cfg(Variant::Baseline, 4);
    let mut w = ModelWeights::<f64>::init(&c, &mut stream(6, &[]));
    for frame in ["short", "long"] {
        let b = w.get_mut(&format!("attention.{frame}.conv2.bias")).unwrap();
        *b = b.map(|_| -1e4);
        let k = w.get_mut(&format!("attention.{frame}.conv2.weight")).unwrap();
        *k = k.map(|_| 0.0);
    }
    let a = scene(8, 8, 1);
    let mut b = a.clone();
    b.ldr[0] = b.ldr[0].map(|v| 1.0 - v);
    b.gamma[2] = b.gamma[2].scale(0.5);
    let oa = adnet_forward(&a, &c, &w).unwrap().hdr;
    let ob = adnet_forward(&b, &c, &w).unwrap().hdr;
    assert_eq!(oa, ob);
    let mut r = a.clone();
    r.ldr[1] = r.ldr[1].scale(0.5);
    assert!(adnet_forward(&r, &c, &w).unwrap().hdr.max_abs_diff(&oa) > 1e-6);
}

#[test]
fn drdb_with_zero_fusion_is_identity() {
    let c = cfg(Variant::Baseline, 64);
    let c = ModelConfig { drdb_growth: 32, ..c };
    let mut w = ModelWeights::<f64>::init(&c, &mut stream(8, &[]));
    w.zero_drdb_fusion();
    let mut g = Graph::new();
    let vars = w.register(&mut g, true);
    let x = g.param(Tensor::uniform([1, 64, 5, 6], -1.0, 1.0, &mut stream(9, &[])));
    let y = drdb_forward(&mut g, &vars, &c, 0, x).unwrap();
    assert_eq!(g.value(y), g.value(x));
    assert_eq!(w.get("fusion.drdb0.fuse.weight").unwrap().shape().c(), 64 + 3 * 32);
    for (j, want) in [64, 96, 128].into_iter().enumerate() {
        assert_eq!(w.get(&format!("fusion.drdb0.conv{j}.weight")).unwrap().shape().c(), want);
    }

    let probe = g.constant(Tensor::uniform([1, 64, 5, 6], -1.0, 1.0, &mut stream(10, &[])));
    let prod = g.mul(y, probe).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), g.value(probe));
}

fn twin_check(variant: Variant, h: usize, w: usize) {
    let c = cfg(variant, 6);
    let mut weights = ModelWeights::<f64>::init(&c, &mut stream(12, &[]));
    weights.zero_drdb_fusion();
    let x = scene(h, w, 13);
    let deform = adnet_forward(&x, &c, &weights).unwrap().hdr;
    let plain = adnet_forward_with(&x, &c, &weights, ForwardOptions { plain_deform: true })
        .unwrap()
        .hdr;
    let d = deform.max_abs_diff(&plain);
    assert!(d < 1e-6, "{variant}: {d}");
}

#[test]
fn zero_offsets_equal_plain_twin() {
    twin_check(Variant::Full, 16, 24);
    twin_check(Variant::PcdOnly, 8, 8);
    twin_check(Variant::DeformSingle, 7, 9);
}

#[test]
fn pcd_keeps_shape_and_single_level_is_definitional() {
    let c = ModelConfig {
        variant: Variant::PcdOnly,
        ..ModelConfig::default()
    };
    let w = ModelWeights::<f32>::init(&c, &mut stream(14, &[]));
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let mut rng = stream(15, &[]);
    let f = g.constant(Tensor::uniform([1, 64, 32, 32], -1.0, 1.0, &mut rng));
    let r = g.constant(Tensor::uniform([1, 64, 32, 32], -1.0, 1.0, &mut rng));
    let pf = feature_pyramid(&mut g, &vars, f, 3).unwrap();
    let pr = feature_pyramid(&mut g, &vars, r, 3).unwrap();
    let sizes: Vec<(usize, usize)> = pf.iter().map(|&v| (g.shape(v).h(), g.shape(v).w())).collect();
    assert_eq!(sizes, vec![(32, 32), (16, 16), (8, 8)]);
    let spec = c.align_spec().unwrap();
    let out = pcd_align(&mut g, &vars, spec, &pf, &pr, ForwardOptions::default()).unwrap();
    assert_eq!(g.shape(out).0, [1, 64, 32, 32]);
    let again = pcd_align(&mut g, &vars, spec, &pf, &pr, ForwardOptions::default()).unwrap();
    assert_eq!(g.value(out), g.value(again));

    let bad = g.constant(Tensor::zeros([1, 64, 30, 30]));
    let pb = feature_pyramid(&mut g, &vars, bad, 3).unwrap();
    assert!(pcd_align(&mut g, &vars, spec, &pb, &pb, ForwardOptions::default()).is_err());

    let single = ModelConfig {
        variant: Variant::DeformSingle,
        base_channels: 8,
        ..ModelConfig::default()
    };
    let w = ModelWeights::<f64>::init(&single, &mut stream(16, &[]));
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let f = g.constant(Tensor::uniform([1, 8, 5, 7], -1.0, 1.0, &mut rng));
    let r = g.constant(Tensor::uniform([1, 8, 5, 7], -1.0, 1.0, &mut rng));
    let a = deform_align_single(&mut g, &vars, f, r, ForwardOptions::default()).unwrap();
    let spec = AlignSpec {
        levels: 1,
        cascade: false,
    };
    let b = pcd_align(&mut g, &vars, spec, &[f], &[r], ForwardOptions::default()).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_eq!(g.shape(a), g.shape(f));
}

#[test]
fn variants_are_interchangeable() {
    let x = scene(12, 16, 17);
    for v in Variant::ALL {
        let c = cfg(v, 4);
        let w = ModelWeights::<f64>::init(&c, &mut stream(18, &[]));
        let a = adnet_forward(&x, &c, &w).unwrap();
        let b = adnet_forward(&x, &c, &w).unwrap();
        assert_eq!(a.hdr.shape().0, [1, 3, 12, 16]);
        assert_eq!(a.hdr, b.hdr);
        for m in &a.attention {
            assert!(m.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn concurrent_forward_passes_agree() {
    let c = cfg(Variant::Full, 4);
    let w = ModelWeights::<f64>::init(&c, &mut stream(19, &[]));
    let x = scene(8, 8, 20);
    let serial = adnet_forward(&x, &c, &w).unwrap().hdr;
    let outs: Vec<Tensor<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3).map(|_| s.spawn(|| adnet_forward(&x, &c, &w).unwrap().hdr)).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(outs.iter().all(|o| *o == serial));
}

use phcnet::autograd::Tape;
use phcnet::checkpoint::Checkpoint;
use phcnet::models::*;
use phcnet::rng::seeded;
use phcnet::Tensor;

fn configs(n: usize) -> Vec<ModelConfig> {
    vec![
        ModelConfig::Phresnet(PhResNetConfig { n, width: 16, blocks: vec![1, 1, 1, 1], ..Default::default() }),
        ModelConfig::Phresnet(PhResNetConfig {
            n,
            width: 16,
            blocks: vec![1, 1],
            block: phcnet::nn::BlockKind::Bottleneck,
            heads: 5,
            ..Default::default()
        }),
        ModelConfig::Phybonet(PhyboNetConfig { encoder_n: n, bottleneck_n: if n == 4 { 4 } else { 2 * n }, in_channels: n.max(2), width: 16, blocks: vec![1; 4], ..Default::default() }),
        ModelConfig::Physenet(PhyseNetConfig { n, in_channels: n.max(2), width: 16, blocks: vec![1; 4], ..Default::default() }),
        ModelConfig::Phunet(PhUNetConfig { n, width: 8, depth: 2, ..Default::default() }),
    ]
}

fn stored(model: &Model<f32>, name: &str) -> usize {
    model.store.lookup(name).map_or(0, |id| model.store.get(id).len())
}

#[test]
fn every_layer_follows_the_parameter_law() {
    for n in [1, 2, 4] {
        for cfg in configs(n) {
            let model = Model::<f32>::build(&cfg, 0).unwrap();
            let layers = model.layers();
            assert!(!layers.is_empty());
            let mut total = 0;
            for layer in &layers {
                let name = layer.name();
                let count = match layer {
                    LayerInfo::Phc { spec, .. } => {
                        let law = spec.n.pow(3)
                            + spec.cout * spec.cin * spec.kernel.0 * spec.kernel.1 / spec.n
                            + if spec.bias { spec.cout } else { 0 };
                        assert_eq!(layer.param_count(), law, "{name}");
                        stored(&model, &format!("{name}.a")) + stored(&model, &format!("{name}.f")) + stored(&model, &format!("{name}.bias"))
                    }
                    LayerInfo::BatchNorm { .. } => stored(&model, &format!("{name}.gamma")) + stored(&model, &format!("{name}.beta")),
                    LayerInfo::Dense { .. } => stored(&model, &format!("{name}.weight")) + stored(&model, &format!("{name}.bias")),
                };
                assert_eq!(count, layer.param_count(), "{} {name} n={n}", cfg.arch());
                total += count;
            }
            assert_eq!(total, model.param_count(), "{} n={n}", cfg.arch());
        }
    }
}

#[test]
fn resnet18_pattern_halves_at_order_two() {
    let cfg = ModelConfig::Phresnet(PhResNetConfig { n: 2, width: 64, ..Default::default() });
    let ph = Model::<f32>::build(&cfg, 0).unwrap().param_count() as f64;
    let real = Model::<f32>::build(&cfg.real_valued(), 0).unwrap().param_count() as f64;
    let ratio = ph / real;
    assert!((0.48..=0.52).contains(&ratio), "{ratio}");
}

#[test]
fn output_shapes() {
    let mut rng = seeded(1);
    for cfg in configs(2) {
        let model = Model::<f32>::build(&cfg, 3).unwrap();
        let tape = Tape::<f32>::frozen();
        let xs: Vec<_> = (0..cfg.inputs()).map(|_| tape.input(Tensor::randn(&[3, 2, 32, 32], &mut rng))).collect();
        let out = model.forward(&tape, &xs, false).unwrap();
        let shapes: Vec<Vec<usize>> = out.logits.iter().map(|l| l.shape()).collect();
        let want: Vec<Vec<usize>> = match &cfg {
            ModelConfig::Phresnet(c) => vec![vec![3, c.heads]],
            ModelConfig::Phybonet(_) | ModelConfig::Physenet(_) => vec![vec![3, 1], vec![3, 1]],
            ModelConfig::Phunet(_) => vec![vec![3, 1, 32, 32]],
        };
        assert_eq!(shapes, want, "{}", cfg.arch());
        for tap in TAPS {
            assert_eq!(out.tap(tap).unwrap().shape()[0], 3);
        }
        let mut bad = xs.clone();
        bad.push(xs[0]);
        assert!(model.forward(&tape, &bad, false).is_err());
    }
}

#[test]
fn shared_encoder_gradient_is_the_sum_over_sides() {
    let cfg = ModelConfig::Physenet(PhyseNetConfig { width: 8, blocks: vec![1, 1], refiners: 1, ..Default::default() });
    let model = Model::<f64>::build(&cfg, 5).unwrap();
    let mut rng = seeded(6);
    let left = Tensor::<f64>::randn(&[2, 2, 16, 16], &mut rng);
    let right = Tensor::<f64>::randn(&[2, 2, 16, 16], &mut rng);

    let grads = |sides: [bool; 2]| {
        let tape = Tape::new();
        let xs = [tape.input(left.clone()), tape.input(right.clone())];
        let out = model.forward(&tape, &xs, true).unwrap();
        let mut loss = None;
        for (z, on) in out.logits.iter().zip(sides) {
            if on {
                let s = z.sum();
                loss = Some(loss.map_or(s, |l: phcnet::autograd::Var<f64>| l.add(s).unwrap()));
            }
        }
        tape.backward(loss.unwrap()).unwrap()
    };
    let both = grads([true, true]);
    let l = grads([true, false]);
    let r = grads([false, true]);
    let mut checked = 0;
    for id in model.store.trainable_ids() {
        if !model.store.name(id).starts_with("encoder.") {
            continue;
        }
        let sum = l.param(id).unwrap().add(r.param(id).unwrap()).unwrap();
        assert_eq!(both.param(id).unwrap().data(), sum.data(), "{}", model.store.name(id));
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn transfer_maps_documented_prefixes() {
    let src_cfg = ModelConfig::Phresnet(PhResNetConfig { width: 8, blocks: vec![1; 4], heads: 5, refiners: 0, ..Default::default() });
    let src = Model::<f32>::build(&src_cfg, 1).unwrap();
    let ckpt = Checkpoint::from_model(&src);
    let trunk: Vec<&str> = src.store.ids().map(|id| src.store.name(id)).filter(|n| n.starts_with("trunk.")).collect();

    // patch classifier to whole-image classifier: the trunk verbatim
    let whole_cfg = ModelConfig::Phresnet(PhResNetConfig { width: 8, blocks: vec![1; 4], ..Default::default() });
    let mut whole = Model::<f32>::build(&whole_cfg, 2).unwrap();
    let fresh = whole.clone();
    assert_eq!(transfer_weights(&ckpt, &mut whole, TransferMap::infer(&whole_cfg)).unwrap(), trunk.len());
    for id in whole.store.ids() {
        let name = whole.store.name(id);
        let want = if name.starts_with("trunk.") { src.store.get(src.store.lookup(name).unwrap()) } else { fresh.store.get(id) };
        assert_eq!(whole.store.get(id), want, "{name}");
    }

    // two-view to PHYSEnet: trunk into the shared encoder
    let se_cfg = ModelConfig::Physenet(PhyseNetConfig { width: 8, blocks: vec![1; 4], ..Default::default() });
    let mut se = Model::<f32>::build(&se_cfg, 3).unwrap();
    assert_eq!(transfer_weights(&ckpt, &mut se, TransferMap::infer(&se_cfg)).unwrap(), trunk.len());
    for name in &trunk {
        let dst = format!("encoder.{}", name.strip_prefix("trunk.").unwrap());
        assert_eq!(se.store.get(se.store.lookup(&dst).unwrap()), src.store.get(src.store.lookup(name).unwrap()), "{dst}");
    }

    // two-view to PHYBOnet: the first two stages into both side encoders
    let bo_cfg = ModelConfig::Phybonet(PhyboNetConfig { width: 8, blocks: vec![1; 4], ..Default::default() });
    let mut bo = Model::<f32>::build(&bo_cfg, 4).unwrap();
    let fresh = bo.clone();
    let early: Vec<&&str> = trunk
        .iter()
        .filter(|n| ["trunk.stem.", "trunk.stage1.", "trunk.stage2."].iter().any(|p| n.starts_with(p)))
        .collect();
    assert!(!early.is_empty() && early.len() < trunk.len());
    assert_eq!(transfer_weights(&ckpt, &mut bo, TransferMap::infer(&bo_cfg)).unwrap(), 2 * early.len());
    let mut written = 0;
    for id in bo.store.ids() {
        let name = bo.store.name(id);
        if bo.store.get(id) != fresh.store.get(id) {
            assert!(name.starts_with("left_encoder.") || name.starts_with("right_encoder."), "{name}");
            written += 1;
        }
    }
    assert!(written > 0);
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in configs(2) {
        let model = Model::<f32>::build(&cfg, 7).unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        Checkpoint::from_model(&model).save(&a).unwrap();
        Checkpoint::<f32>::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{}", cfg.arch());
        let back = Checkpoint::<f32>::load(&b).unwrap().to_model().unwrap();
        assert_eq!(back.config, model.config);
        for id in model.store.ids() {
            assert_eq!(back.store.get(id), model.store.get(id));
        }
    }
}

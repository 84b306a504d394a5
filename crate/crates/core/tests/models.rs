mod common;

use common::{random_tensor, rng};
use moece::channel::{build_dataset, Dataset, LinkConfig, ProfileRegistry};
use moece::models::{count_complexity, BackboneConfig, ModelParams, ModelShape, RouterSpec};
use moece::moe::{decode_checkpoint, encode_checkpoint, Checkpoint, Estimator, MoEModel, SingleExpert, Thresholds};
use moece::numerics::{Tape, Tensor};
use moece::pipeline::{preprocess, train, TrainConfig};

/// MACs of every conv kernel under `prefix`, read off the parameter shapes.
fn enumerate_macs(params: &ModelParams, prefix: &str, h: usize, w: usize) -> u64 {
    params
        .with_prefix(prefix)
        .filter(|(n, _)| n.ends_with(".kernel"))
        .map(|(_, t)| {
            let s = t.shape();
            (h * w * s[0] * s[1] * s[2] * s[3]) as u64
        })
        .sum()
}

fn router_weights(m: &MoEModel, x: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let bound = m.params.bind(&mut tape, "router.", false);
    let w = m.router.forward(&mut tape, &bound, "router.", xv).unwrap();
    tape.value(w).data().to_vec()
}

#[test]
fn router_output_permutes_with_its_last_conv() {
    let r = 5;
    let mut m = MoEModel::new(
        BackboneConfig::resnet(1, 4, 2),
        r,
        1,
        Thresholds::defaults(r),
        &mut rng(3),
    )
    .unwrap();
    let x = random_tensor(&[3, 12, 2], &mut rng(4));
    let w = router_weights(&m, &x);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w.iter().all(|&v| v > 0.0));

    let perm = [3, 0, 4, 1, 2];
    let kernel = m.params.get("router.conv.2.kernel").unwrap().clone();
    let bias = m.params.get("router.conv.2.bias").unwrap().clone();
    let kp = m.params.get_mut("router.conv.2.kernel").unwrap();
    let cout = r;
    for (j, v) in kp.data_mut().iter_mut().enumerate() {
        let (row, co) = (j / cout, j % cout);
        *v = kernel.data()[row * cout + perm[co]];
    }
    let bp = m.params.get_mut("router.conv.2.bias").unwrap();
    for (co, &src) in perm.iter().enumerate() {
        bp.data_mut()[co] = bias.data()[src];
    }
    let wp = router_weights(&m, &x);
    for (co, &src) in perm.iter().enumerate() {
        assert_eq!(wp[co], w[src]);
    }
}

#[test]
fn zeroed_last_router_conv_gives_uniform_weights() {
    let mut m = MoEModel::new(
        BackboneConfig::resnet(1, 4, 2),
        4,
        1,
        Thresholds::defaults(4),
        &mut rng(1),
    )
    .unwrap();
    for name in ["router.conv.2.kernel", "router.conv.2.bias"] {
        m.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let w = router_weights(&m, &random_tensor(&[4, 24, 2], &mut rng(2)));
    assert_eq!(w, vec![0.25; 4]);
}

#[test]
fn one_set_of_weights_serves_every_grid_size() {
    let m = Estimator::Single(SingleExpert::new(BackboneConfig::resnet(2, 4, 2), &mut rng(0)).unwrap());
    for (h, w) in [(4, 24), (4, 54), (16, 240), (4, 324)] {
        let x = random_tensor(&[h, w, 2], &mut rng(h as u64 * w as u64));
        let (y, _) = m.predict(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }
    let moe = Estimator::Moe(
        MoEModel::new(
            BackboneConfig::resnet(1, 4, 2),
            4,
            2,
            Thresholds::defaults(4),
            &mut rng(0),
        )
        .unwrap(),
    );
    for w in [24, 54] {
        let (y, d) = moe.predict(&random_tensor(&[4, w, 2], &mut rng(w as u64))).unwrap();
        assert_eq!(y.shape(), &[4, w, 2]);
        assert_eq!(d.unwrap().selected.len(), 2);
    }
}

#[test]
fn zero_head_outputs_zeros() {
    let mut m = SingleExpert::new(BackboneConfig::resnet(2, 4, 2), &mut rng(5)).unwrap();
    for name in ["expert.0.head.kernel", "expert.0.head.bias"] {
        m.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let (y, _) = Estimator::Single(m)
        .predict(&random_tensor(&[4, 24, 2], &mut rng(6)))
        .unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn complexity_matches_parameter_map_enumeration() {
    let (h, w) = (16, 240);
    for (blocks, channels, r) in [(4, 16, 4), (2, 8, 4), (1, 4, 3), (3, 6, 6)] {
        let bb = BackboneConfig::resnet(blocks, channels, 4);
        let single = SingleExpert::new(bb.clone(), &mut rng(0)).unwrap();
        let moe = MoEModel::new(bb.clone(), r, 1, Thresholds::defaults(r), &mut rng(0)).unwrap();
        let router = RouterSpec::new(r, 4).unwrap();

        let expert = count_complexity(&ModelShape::Expert(bb.clone()), [h, w, 4]).unwrap();
        assert_eq!(expert.params, single.params.scalar_count("") as u64);
        assert_eq!(expert.macs, enumerate_macs(&single.params, "expert.0.", h, w));

        let rt = count_complexity(&ModelShape::Router(router), [h, w, 4]).unwrap();
        assert_eq!(rt.params, moe.params.scalar_count("router.") as u64);
        assert_eq!(rt.macs, enumerate_macs(&moe.params, "router.", h, w));

        for k in 1..=r {
            let c = count_complexity(
                &ModelShape::Moe {
                    backbone: bb.clone(),
                    router,
                    k,
                },
                [h, w, 4],
            )
            .unwrap();
            assert_eq!(c.params, moe.params.scalar_count("") as u64);
            assert_eq!(c.params - r as u64 * expert.params, rt.params);
            assert_eq!(
                c.macs,
                rt.macs + k as u64 * enumerate_macs(&moe.params, "expert.0.", h, w)
            );
            assert_eq!(c.flops, 2 * c.macs);
            assert_eq!(c.model_size_bytes, 4 * c.params);
        }
    }
}

#[test]
fn closed_form_conv_count() {
    let bb = BackboneConfig::resnet(1, 16, 16);
    let c = count_complexity(&ModelShape::Expert(bb), [16, 240, 16]).unwrap();
    // stem, two block convs and head are all 16 -> 16
    assert_eq!(c.macs, 4 * 8_847_360);
    assert_eq!(c.params, 4 * (9 * 16 * 16 + 16));
}

fn trained_moe() -> (Estimator, Dataset) {
    let p = ProfileRegistry::builtin().build("uma-like", None).unwrap();
    let links = [LinkConfig::new(2, 2, 0.0), LinkConfig::new(2, 2, 20.0)];
    let ds = build_dataset(&[p], &links, 8, 21).unwrap();
    let mut m = Estimator::Moe(
        MoEModel::new(
            BackboneConfig::resnet(1, 3, 2),
            3,
            1,
            Thresholds::defaults(3),
            &mut rng(8),
        )
        .unwrap(),
    );
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    train(&mut m, &ds, &Dataset::default(), &cfg).unwrap();
    (m, ds)
}

#[test]
fn checkpoint_round_trip_is_bit_exact_after_training() {
    let (m, ds) = trained_moe();
    assert!(m.as_moe().unwrap().bias.iter().any(|&b| b != 0.0));
    let ck = Checkpoint {
        model: m.clone(),
        trained_on: ds.config_tuples(),
    };
    let back = decode_checkpoint(&encode_checkpoint(&ck).unwrap()).unwrap();
    assert_eq!(back.trained_on, ck.trained_on);
    let (a, b) = (m.as_moe().unwrap(), back.model.as_moe().unwrap());
    assert_eq!(
        a.bias.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.bias.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.params, b.params);
    assert_eq!((a.k, a.thresholds, a.bias_at_eval), (b.k, b.thresholds, b.bias_at_eval));
    for s in ds.samples() {
        let (x, _) = preprocess(s).unwrap();
        let (ya, da) = m.predict(&x).unwrap();
        let (yb, db) = back.model.predict(&x).unwrap();
        assert_eq!(da, db);
        assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let (m, ds) = trained_moe();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint {
        model: m,
        trained_on: ds.config_tuples(),
    };
    moece::moe::save_checkpoint(&ck, &path).unwrap();
    let back = moece::moe::load_checkpoint(&path).unwrap();
    assert_eq!(encode_checkpoint(&back).unwrap(), encode_checkpoint(&ck).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        moece::moe::load_checkpoint(&path),
        Err(moece::Error::Parse(_))
    ));
}

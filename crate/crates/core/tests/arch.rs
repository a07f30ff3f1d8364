mod common;

use flowlab::arch::*;
use flowlab::data::{batch, generate_sample, ScenePolicy};
use flowlab::tensor::{gradcheck, Tensor};
use rand::Rng;

fn frames(h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let s = generate_sample(&ScenePolicy::default().draw(seed), (h, w), seed).unwrap();
    let (a, b, _) = batch(&[&s]).unwrap();
    (a, b)
}

#[test]
fn pwc_parameter_count_matches_hand_count() {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let widths = [16, 32, 48, 64];
    let mut expected = 0;
    let mut cin = 3;
    for &w in &widths {
        expected += conv(cin, w, 3) + conv(w, w, 3);
        cin = w;
    }
    for &w in &widths {
        expected += conv(81 + w + 2, 32, 3) + conv(32, 16, 3) + conv(16, 2, 3);
    }
    assert_eq!(expected, 277_432);
    let m = build_model(&ModelConfig::new(Arch::Pwc), 0).unwrap();
    assert_eq!(m.parameter_count(), expected);
}

#[test]
fn irr_shares_one_decoder_and_is_smaller() {
    let pwc = build_model(&ModelConfig::new(Arch::Pwc), 0).unwrap();
    let irr = build_model(&ModelConfig::new(Arch::Irr), 0).unwrap();
    assert!(irr.parameter_count() < pwc.parameter_count());
    let decoders: Vec<_> = irr.params().keys().filter(|k| k.starts_with("dec.")).collect();
    assert_eq!(decoders.len(), 6, "{decoders:?}");
    assert!(decoders.iter().all(|k| k.starts_with("dec.conv")));
}

#[test]
fn initialization_is_deterministic_per_seed() {
    for arch in Arch::ALL {
        let cfg = ModelConfig::new(arch);
        let a = build_model(&cfg, 3).unwrap();
        let b = build_model(&cfg, 3).unwrap();
        let c = build_model(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}

#[test]
fn output_shapes_and_scales() {
    let (f1, f2) = frames(64, 96, 1);
    for arch in Arch::ALL {
        let cfg = ModelConfig::new(arch);
        let m = build_model(&cfg, 0).unwrap();
        let p = predict(&m, &f1, &f2, &ForwardOptions::default()).unwrap();
        assert_eq!(p.len(), 1);
        let p = &p[0];
        assert_eq!((p.final_flow.width(), p.final_flow.height()), (96, 64));
        match arch {
            Arch::Raft => {
                assert_eq!(p.intermediates.len(), cfg.raft_iterations);
                assert!(p.intermediates.iter().all(|i| i.scale == 1));
            }
            _ => {
                let scales: Vec<usize> = p.intermediates.iter().map(|i| i.scale).collect();
                assert_eq!(scales, vec![16, 8, 4, 2]);
                for i in &p.intermediates {
                    assert_eq!(i.flow.width() * i.scale, 96);
                    assert_eq!(i.flow.height() * i.scale, 64);
                }
            }
        }
        assert!(p.final_flow.valid_count() == 64 * 96);
    }
}

#[test]
fn batched_prediction_matches_single() {
    let (a1, a2) = frames(32, 32, 1);
    let (b1, b2) = frames(32, 32, 2);
    let cat = |x: &Tensor<f32>, y: &Tensor<f32>| {
        let mut d = x.data().to_vec();
        d.extend_from_slice(y.data());
        Tensor::from_vec(vec![2, 3, 32, 32], d).unwrap()
    };
    for arch in Arch::ALL {
        let m = build_model(&ModelConfig::new(arch), 0).unwrap();
        let opts = ForwardOptions::default();
        let both = predict(&m, &cat(&a1, &b1), &cat(&a2, &b2), &opts).unwrap();
        let one = predict(&m, &b1, &b2, &opts).unwrap();
        let (x, y) = (&both[1].final_flow, &one[0].final_flow);
        for (p, q) in x.u().iter().zip(y.u()) {
            assert!((p - q).abs() < 1e-4, "{arch:?}");
        }
    }
}

#[test]
fn wrong_architecture_and_size_are_rejected() {
    let (f1, f2) = frames(64, 96, 1);
    let raft = build_model(&ModelConfig::new(Arch::Raft), 0).unwrap();
    assert!(matches!(forward_pwc(&raft, &f1, &f2), Err(ArchError::WrongArch { .. })));
    let pwc = build_model(&ModelConfig::new(Arch::Pwc), 0).unwrap();
    let (g1, g2) = frames(40, 40, 1);
    assert!(matches!(
        forward_pwc(&pwc, &g1, &g2),
        Err(ArchError::Divisibility { divisor: 16, .. })
    ));
}

#[test]
fn allpairs_budget_refuses_large_volumes() {
    let (f1, f2) = frames(64, 96, 1);
    let raft = build_model(&ModelConfig::new(Arch::Raft), 0).unwrap();
    let tight = ForwardOptions { allpairs_budget: 1000 };
    let err = forward_raft(&raft, &f1, &f2, &tight).unwrap_err();
    assert!(err.is_budget(), "{err}");
    let pwc = build_model(&ModelConfig::new(Arch::Pwc), 0).unwrap();
    assert!(predict(&pwc, &f1, &f2, &tight).is_ok());
}

#[test]
fn config_rejects_unknown_fields_and_bad_values() {
    assert!(serde_json::from_str::<ModelConfig>(r#"{"arch":"pwc","depth":3}"#).is_err());
    let c: ModelConfig = serde_json::from_str(r#"{"arch":"irr"}"#).unwrap();
    assert_eq!(c, ModelConfig::new(Arch::Irr));
    let mut bad = ModelConfig::new(Arch::Pwc);
    bad.widths.pop();
    assert!(build_model(&bad, 0).is_err());
    let mut bad = ModelConfig::new(Arch::Raft);
    bad.raft_iterations = 0;
    assert!(bad.validate().is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    for arch in Arch::ALL {
        let m = build_model(&ModelConfig::tiny(arch), 9).unwrap();
        let ck = Checkpoint::new(m.clone());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.state, m);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn checkpoint_carries_optimizer_state() {
    let m = build_model(&ModelConfig::tiny(Arch::Pwc), 1).unwrap();
    let mut r = common::rng(5);
    let mut first = std::collections::BTreeMap::new();
    let mut second = std::collections::BTreeMap::new();
    for (k, t) in m.params() {
        first.insert(k.clone(), (0..t.numel()).map(|_| r.gen::<f32>()).collect::<Vec<_>>());
        second.insert(k.clone(), (0..t.numel()).map(|_| r.gen::<f32>()).collect::<Vec<_>>());
    }
    let ck = Checkpoint {
        state: m,
        optimizer: Some(OptimizerState { step: 17, first, second }),
        meta: "{\"note\":1}".into(),
    };
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
}

#[test]
fn tiny_models_match_finite_differences() {
    for arch in Arch::ALL {
        for seed in 0..2 {
            let case = common::model_case(arch, seed);
            let mut r = common::rng(seed + 100);
            let coords: Vec<(usize, usize)> = (0..40)
                .map(|_| {
                    let i = r.gen_range(0..case.inputs.len());
                    (i, r.gen_range(0..case.inputs[i].numel()))
                })
                .collect();
            let rep = gradcheck::check(&case.inputs, 1e-5, Some(&coords), |g, v| (case.build)(g, v)).unwrap();
            assert!(rep.max_rel_error < 1e-3, "{arch:?} seed {seed}: {rep:?}");
        }
    }
}

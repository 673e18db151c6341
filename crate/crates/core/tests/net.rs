use galnet::data::{synth_generate, Modality, SegSample, SynthConfig};
use galnet::gal::GalVars;
use galnet::gradcheck::GradChecker;
use galnet::net::{infer, net_forward, NetConfig, NetParams, NetVars};
use galnet::train::{accumulate_sample, mean_loss, train, train_step, TrainConfig};
use galnet::{OpKind, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(in_channels: usize, with_gal: bool, seed: u64) -> NetConfig {
    NetConfig { base_channels: 2, ..NetConfig::new(in_channels, with_gal, seed) }
}

fn samples(modality: Modality, n: usize, seed: u64) -> Vec<SegSample> {
    synth_generate(&SynthConfig::new(modality, n, 16, 16, seed)).unwrap()
}

#[test]
fn whole_network_passes_the_gradient_check() {
    let params = NetParams::<f32>::init(small(1, true, 3)).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = Tensor::from_fn(&[8, 8, 1], |_| rng.gen_range(0.0..1.0));
    let labels: Vec<u8> = (0..64).map(|i| u8::from((i / 8 + i % 8) % 5 < 2)).collect();

    let mut inputs = vec![image];
    inputs.extend(params.named().into_iter().map(|(_, p)| p.value.clone()));
    assert_eq!(inputs.len(), 21);
    let f = |tape: &mut Tape<f64>, v: &[galnet::Var]| {
        let gal = GalVars::from_array(v[7..17].try_into().unwrap());
        let vars = NetVars {
            enc1_k: v[1],
            enc1_b: v[2],
            enc2_k: v[3],
            enc2_b: v[4],
            enc3_k: v[5],
            enc3_b: v[6],
            gal: Some(gal),
            fuse_w: v[17],
            fuse_b: v[18],
            dec_k: v[19],
            dec_b: v[20],
        };
        let out = net_forward(tape, v[0], &params, &vars)?;
        tape.softmax_cross_entropy(out.logits, &labels)
    };
    let report = GradChecker::default().check(f, &inputs).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

#[test]
fn parameter_order_matches_binding_order() {
    let params = NetParams::<f32>::init(small(1, true, 0)).unwrap();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "enc1.kernel");
    assert_eq!(names[6], "gal.edge_w1");
    assert_eq!(names[16], "fuse.weight");
    assert_eq!(names[19], "dec.bias");
    assert_eq!(names.len(), 20);
}

#[test]
fn one_step_lowers_the_loss_for_some_learning_rate() {
    let data = samples(Modality::TDisp, 2, 5);
    let refs: Vec<&SegSample> = data.iter().collect();
    let init = NetParams::<f32>::init(NetConfig::new(1, true, 2)).unwrap();
    let before = mean_loss(&init, &refs).unwrap();
    let improved: Vec<f32> = [1e-1, 1e-2, 1e-3]
        .into_iter()
        .filter(|&lr| {
            let mut params = init.clone();
            train_step(&mut params, &data, lr, 0.9).unwrap();
            mean_loss(&params, &refs).unwrap() < before
        })
        .collect();
    assert!(!improved.is_empty());
    assert!(improved.contains(&1e-3), "{improved:?}");
}

#[test]
fn loss_keeps_falling_over_a_short_run() {
    let data = samples(Modality::TDisp, 4, 5);
    let refs: Vec<&SegSample> = data.iter().collect();
    let mut params = NetParams::<f32>::init(NetConfig::new(1, true, 2)).unwrap();
    let before = mean_loss(&params, &refs).unwrap();
    for _ in 0..15 {
        train_step(&mut params, &data, 0.01, 0.9).unwrap();
    }
    let after = mean_loss(&params, &refs).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn forward_and_backward_stay_finite_across_seeds() {
    let data = samples(Modality::Rgb, 1, 9);
    for seed in 0..100 {
        for with_gal in [false, true] {
            let mut params = NetParams::<f32>::init(NetConfig::new(3, with_gal, seed)).unwrap();
            let loss = accumulate_sample(&mut params, &data[0]).unwrap();
            assert!(loss.is_finite(), "seed {seed} gal {with_gal}");
            for (name, p) in params.named() {
                assert!(p.grad.is_finite(), "seed {seed} gal {with_gal}: {name}");
            }
        }
    }
}

#[test]
fn baseline_records_no_graph_ops() {
    let image = samples(Modality::TDisp, 1, 1).remove(0).image;
    let kinds = |with_gal| {
        let params = NetParams::<f32>::init(NetConfig::new(1, with_gal, 0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(image.clone());
        let vars = params.bind(&mut tape);
        net_forward(&mut tape, x, &params, &vars).unwrap();
        tape.kinds()
    };
    let (base, gal) = (kinds(false), kinds(true));
    assert!(!base.contains(&OpKind::Gather) && !base.contains(&OpKind::MeanRows));
    assert!(gal.contains(&OpKind::Gather) && gal.contains(&OpKind::MeanRows));
}

#[test]
fn both_variants_share_their_common_initialisation() {
    let base = NetParams::<f32>::init(NetConfig::new(1, false, 4)).unwrap();
    let gal = NetParams::<f32>::init(NetConfig::new(1, true, 4)).unwrap();
    for (a, b) in [(&base.enc1_k, &gal.enc1_k), (&base.enc3_k, &gal.enc3_k), (&base.dec_k, &gal.dec_k)] {
        assert_eq!(a, b);
    }
    // the feature rows of the fusion weight are drawn identically
    let n = base.fuse_w.value.len();
    assert_eq!(base.fuse_w.value.data(), &gal.fuse_w.value.data()[..n]);
    let image = samples(Modality::TDisp, 1, 1).remove(0).image;
    assert_eq!(infer(&base, &image).unwrap().0, infer(&gal, &image).unwrap().0);
}

#[test]
fn muting_the_attention_rows_recovers_the_baseline() {
    let base = NetParams::<f32>::init(NetConfig::new(1, false, 6)).unwrap();
    let mut gal = NetParams::<f32>::init(NetConfig::new(1, true, 6)).unwrap();
    let n = base.fuse_w.value.len();
    gal.fuse_w.value.data_mut()[n..].iter_mut().for_each(|v| *v = 0.0);
    for s in samples(Modality::TDisp, 3, 2) {
        let (a, b) = (infer(&base, &s.image).unwrap().1, infer(&gal, &s.image).unwrap().1);
        assert!(a.max_abs_diff(&b) <= 1e-6);
    }
}

#[test]
fn training_is_deterministic() {
    let data = samples(Modality::TDisp, 4, 8);
    let refs: Vec<&SegSample> = data.iter().collect();
    let cfg = TrainConfig::new(2, 11);
    let run = || {
        let mut losses = Vec::new();
        let p = train(NetConfig::new(1, true, 0), &cfg, &refs, |_, l| losses.push(l)).unwrap();
        (p, losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let other = train(NetConfig::new(1, true, 0), &TrainConfig::new(2, 12), &refs, |_, _| {}).unwrap();
    assert_ne!(a, other);
}

#[test]
fn bad_training_configs_are_rejected() {
    let data = samples(Modality::TDisp, 2, 8);
    let refs: Vec<&SegSample> = data.iter().collect();
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::new(1, 0) },
        TrainConfig { batch_size: 0, ..TrainConfig::new(1, 0) },
        TrainConfig { lr: -1.0, ..TrainConfig::new(1, 0) },
        TrainConfig { momentum: 1.0, ..TrainConfig::new(1, 0) },
    ] {
        assert!(train(NetConfig::new(1, false, 0), &cfg, &refs, |_, _| {}).is_err(), "{cfg:?}");
    }
    assert!(train(NetConfig::new(1, false, 0), &TrainConfig::new(1, 0), &[], |_, _| {}).is_err());
}

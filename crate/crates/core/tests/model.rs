use jscc_core::autodiff::{Graph, NodeId, Tensor};
use jscc_core::channel::{convolve, power_profile};
use jscc_core::checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
use jscc_core::data::{batch_tensor, synth_dataset, Dataset, Split};
use jscc_core::model::{
    draw_channel, evaluate, forward, train, Adam, AdamConfig, Architecture, BnMode, EvalConfig, ModelParams, SnrSpec,
    TrainConfig, Variant,
};
use jscc_core::ofdm::{disassemble_packet, make_pilots, ComplexGrid};
use jscc_core::receiver::{equalize_mmse, estimate_channel_mmse};
use jscc_core::rng::seeded;

fn small_arch(variant: Variant) -> Architecture {
    Architecture {
        variant,
        height: 8,
        width: 8,
        channels: 3,
        fft_size: 16,
        cp_len: 4,
        pilot_symbols: 2,
        data_symbols: 3,
        width1: 4,
        width2: 6,
        subnet_width: 4,
    }
}

fn small_train(variant: Variant) -> (TrainConfig, Dataset) {
    let cfg = TrainConfig {
        arch: small_arch(variant),
        batch_size: 4,
        epochs: 3,
        lr_decay_epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    (cfg, synth_dataset(1, 8, 8, 8, 3, Split::Train).unwrap())
}

#[test]
fn zero_subnets_reduce_to_plain_receiver() {
    let arch = small_arch(Variant::Explicit);
    let mut rng = seeded(2);
    let params = ModelParams::init(&arch, &mut rng).unwrap();
    let data = synth_dataset(0, 2, 8, 8, 3, Split::Test).unwrap();
    let profile = power_profile(4, 4.0).unwrap();
    let draws: Vec<_> = (0..2).map(|_| draw_channel(&profile, &arch, 5.0, &mut rng).unwrap()).collect();
    let pilots = make_pilots(7, 2, 16);

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
    let x = g.constant(batch_tensor(&data.images.iter().collect::<Vec<_>>()).unwrap());
    let out = forward(&mut g, &arch, &ids, BnMode::Train, x, &draws, 1.2, &pilots).unwrap();

    let cfg = arch.ofdm(1.2);
    let packet = cfg.packet_len();
    let tx = g.value(out.tx).to_complex().unwrap();
    let input = g.value(out.decoder_input);
    assert_eq!(input.shape(), &[2, 6, 1, 16]);
    for (b, d) in draws.iter().enumerate() {
        let sent = &tx[b * packet..(b + 1) * packet];
        assert!(sent.iter().all(|z| z.norm() <= 1.2 + 1e-12));
        let rx: Vec<_> = convolve(sent, &d.taps).iter().zip(&d.noise).map(|(a, n)| a + n).collect();
        let (rp, rd) = disassemble_packet(&rx, &cfg).unwrap();
        let est = estimate_channel_mmse(&pilots, &rp, d.noise_var).unwrap();
        let eq: ComplexGrid = equalize_mmse(&rd, &est.response, d.noise_var).unwrap();
        for j in 0..3 {
            for k in 0..16 {
                let z = eq.get(j, k);
                let re = input.data()[((b * 6 + 2 * j) * 16) + k];
                let im = input.data()[((b * 6 + 2 * j + 1) * 16) + k];
                assert!((re - z.re).abs() < 1e-10 && (im - z.im).abs() < 1e-10, "b {} j {} k {}", b, j, k);
            }
        }
    }
}

#[test]
fn infinite_clip_ratio_matches_inactive_clip_bitwise() {
    for variant in [Variant::Direct, Variant::Implicit, Variant::Explicit] {
        let arch = small_arch(variant);
        let mut rng = seeded(4);
        let params = ModelParams::init(&arch, &mut rng).unwrap();
        let data = synth_dataset(0, 2, 8, 8, 3, Split::Test).unwrap();
        let profile = power_profile(4, 4.0).unwrap();
        let draws: Vec<_> = (0..2).map(|_| draw_channel(&profile, &arch, 10.0, &mut rng).unwrap()).collect();
        let pilots = make_pilots(7, 2, 16);
        let run = |rho: f64| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
            let x = g.constant(batch_tensor(&data.images.iter().collect::<Vec<_>>()).unwrap());
            let out = forward(&mut g, &arch, &ids, BnMode::Train, x, &draws, rho, &pilots).unwrap();
            (g.value(out.recon).clone(), g.op_name(out.tx) == "clip")
        };
        let (free, has_clip_free) = run(f64::INFINITY);
        let (inactive, has_clip) = run(1e300);
        assert!(!has_clip_free && has_clip);
        assert_eq!(free.data(), inactive.data());
    }
}

#[test]
fn training_bookkeeping_and_determinism() {
    let (cfg, data) = small_train(Variant::Explicit);
    let a = train(&cfg, &data).unwrap();
    assert_eq!(a.log.len(), 3);
    assert!(a.log.iter().all(|l| l.steps == 2));
    assert_eq!(a.optimizer.step, 6);
    assert_eq!(a.log[0].lr, 1e-3);
    assert!(a.log.iter().all(|l| l.train_loss.is_finite()));
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(
        a.log.iter().map(|l| l.train_loss.to_bits()).collect::<Vec<_>>(),
        b.log.iter().map(|l| l.train_loss.to_bits()).collect::<Vec<_>>()
    );
    let other = train(&TrainConfig { seed: 6, ..cfg }, &data).unwrap();
    assert_ne!(a.params, other.params);
}

#[test]
fn every_variant_trains_with_clipping_and_random_snr() {
    for variant in [Variant::Direct, Variant::Implicit, Variant::Explicit] {
        let (cfg, data) = small_train(variant);
        let cfg = TrainConfig {
            clip_ratio: 1.0,
            snr: SnrSpec::Uniform { low: 0.0, high: 20.0 },
            ..cfg
        };
        let s = train(&cfg, &data).unwrap();
        assert!(s.log.iter().all(|l| l.train_loss.is_finite() && l.train_loss > 0.0));
    }
}

#[test]
fn training_reduces_loss() {
    let (cfg, _) = small_train(Variant::Explicit);
    let data = synth_dataset(1, 32, 8, 8, 3, Split::Train).unwrap();
    let cfg = TrainConfig {
        epochs: 12,
        lr_decay_epochs: 4,
        batch_size: 8,
        lr: 3e-3,
        ..cfg
    };
    let s = train(&cfg, &data).unwrap();
    assert!(s.log.last().unwrap().train_loss < 0.85 * s.log[0].train_loss, "{:?}", s.log);
}

#[test]
fn adam_minimizes_quadratic_bowl() {
    let mut p = vec![Tensor::from_vec(vec![0.6]), Tensor::from_vec(vec![-0.8])];
    let mut adam = Adam::new(AdamConfig::default(), &p);
    // Scalar reference with the same hyperparameters.
    let (mut q, mut m, mut v) = ([0.6f64, -0.8], [0.0f64; 2], [0.0f64; 2]);
    for t in 1..=500 {
        let grads: Vec<Tensor> = p.iter().map(|t| t.map(|v| 2.0 * v)).collect();
        adam.update(&mut p, &grads, 1e-2).unwrap();
        for i in 0..2 {
            let g = 2.0 * q[i];
            m[i] = 0.5 * m[i] + 0.5 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            let mh = m[i] / (1.0 - 0.5f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            q[i] -= 1e-2 * mh / (vh.sqrt() + 1e-8);
            assert!((p[i].data()[0] - q[i]).abs() < 1e-12);
        }
    }
    let norm = (p[0].data()[0].powi(2) + p[1].data()[0].powi(2)).sqrt();
    assert!(norm < 1e-3, "norm {}", norm);
}

#[test]
fn checkpoint_contracts() {
    let (cfg, data) = small_train(Variant::Explicit);
    let s = train(&TrainConfig { epochs: 1, lr_decay_epochs: 1, ..cfg.clone() }, &data).unwrap();
    let ck = Checkpoint {
        params: s.params.clone(),
        optimizer: Some(s.optimizer.clone()),
        config_text: "seed = 5\n".into(),
        rng: Some(s.rng.clone()),
    };
    let bytes = encode_checkpoint(&ck);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.params, s.params);
    assert_eq!(back.optimizer, Some(s.optimizer.clone()));
    assert_eq!(encode_checkpoint(&back), bytes);
    assert!(s.params.names().iter().any(|n| n.starts_with("sub1.")));
    assert!(s.params.names().iter().any(|n| n.starts_with("sub2.")));

    let wide = Architecture { width1: 8, ..cfg.arch.clone() };
    assert!(back.expect_architecture(&wide).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(decode_checkpoint(&bad).is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());

    let implicit = ModelParams::init(&small_arch(Variant::Implicit), &mut seeded(0)).unwrap();
    assert!(!implicit.names().iter().any(|n| n.starts_with("sub")));
}

#[test]
fn evaluation_is_worker_invariant_and_covers_tap_sweep() {
    let arch = small_arch(Variant::Explicit);
    let params = ModelParams::init(&arch, &mut seeded(1)).unwrap();
    let data = synth_dataset(0, 6, 8, 8, 3, Split::Test).unwrap();
    let base = EvalConfig {
        realizations: 3,
        ..EvalConfig::default()
    };
    let one = evaluate(&params, &data, &base).unwrap();
    let many = evaluate(&params, &data, &EvalConfig { workers: 3, ..base.clone() }).unwrap();
    assert_eq!(one.psnr_db.to_bits(), many.psnr_db.to_bits());
    assert_eq!(one.ssim.to_bits(), many.ssim.to_bits());
    assert_eq!(one.per_image_psnr, many.per_image_psnr);
    assert_eq!((one.n_images, one.n_realizations, one.channel_draws), (6, 3, 18));

    let mean: f64 = one.per_image_psnr.iter().sum::<f64>() / 6.0;
    assert!((mean - one.psnr_db).abs() < 1e-9);

    for taps in 1..=14 {
        let r = evaluate(&params, &data, &EvalConfig { taps, realizations: 1, ..base.clone() }).unwrap();
        assert!(r.psnr_db.is_finite());
    }
}

#[test]
fn clipped_evaluation_bounds_papr() {
    let arch = small_arch(Variant::Implicit);
    let params = ModelParams::init(&arch, &mut seeded(1)).unwrap();
    let data = synth_dataset(0, 4, 8, 8, 3, Split::Test).unwrap();
    let r = evaluate(&params, &data, &EvalConfig { clip_ratio: 1.0, ..EvalConfig::default() }).unwrap();
    assert!(r.papr_p99_db <= 10.0 * (1.0f64 / 0.5).log10());
    let free = evaluate(&params, &data, &EvalConfig::default()).unwrap();
    assert!(free.papr_p99_db > r.papr_p99_db);
}

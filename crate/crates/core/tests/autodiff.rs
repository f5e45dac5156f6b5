use jscc_core::autodiff::{finite_diff_check, ConvGeometry, GradCheckOptions, Graph, NodeId, Tensor};
use jscc_core::rng::{complex_gaussian, seeded};
use jscc_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// `(⟨A x, u⟩, ⟨x, Aᵀ u⟩)` for a linear graph op `A`, with `Aᵀ u` taken from
/// the reverse pass.
fn adjoint_pair(x: Tensor, u_seed: u64, op: impl Fn(&mut Graph, NodeId) -> NodeId) -> (f64, f64) {
    let mut g = Graph::new();
    let xi = g.param(x.clone());
    let y = op(&mut g, xi);
    let u = normal(u_seed, g.value(y).shape());
    let lhs = g.value(y).dot(&u);
    let ui = g.constant(u);
    let p = g.mul(y, ui).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    (lhs, x.dot(&grads.get_or_zeros(xi)))
}

fn assert_adjoint((lhs, rhs): (f64, f64)) {
    assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dft_ops_are_adjoint_consistent(seed in 0u64..10_000, rows in 1usize..4, n in 1usize..12) {
        let x = normal(seed, &[rows, n, 2]);
        assert_adjoint(adjoint_pair(x.clone(), seed + 1, |g, x| g.dft(x).unwrap()));
        assert_adjoint(adjoint_pair(x, seed + 2, |g, x| g.idft(x).unwrap()));
    }

    #[test]
    fn cp_ops_are_adjoint_consistent(seed in 0u64..10_000, n in 1usize..10, cp in 0usize..10) {
        prop_assume!(cp <= n);
        assert_adjoint(adjoint_pair(normal(seed, &[2, n, 2]), seed + 1, |g, x| g.add_cp(x, cp).unwrap()));
        assert_adjoint(adjoint_pair(normal(seed, &[2, n + cp, 2]), seed + 2, |g, x| g.remove_cp(x, cp).unwrap()));
    }

    #[test]
    fn channel_op_is_adjoint_consistent(seed in 0u64..10_000, t in 4usize..20, taps in 1usize..4) {
        let mut rng = seeded(seed);
        let h: Vec<Vec<Complex64>> = (0..2).map(|_| (0..taps).map(|_| complex_gaussian(&mut rng, 1.0)).collect()).collect();
        assert_adjoint(adjoint_pair(normal(seed, &[2, t, 2]), seed + 3, move |g, x| g.apply_channel(x, h.clone(), None).unwrap()));
    }

    #[test]
    fn layout_ops_are_adjoint_consistent(seed in 0u64..10_000) {
        assert_adjoint(adjoint_pair(normal(seed, &[2, 3, 4]), seed + 1, |g, x| g.permute(x, &[1, 2, 0]).unwrap()));
        assert_adjoint(adjoint_pair(normal(seed, &[1, 2, 3, 2]), seed + 2, |g, x| g.upsample2x(x).unwrap()));
        assert_adjoint(adjoint_pair(normal(seed, &[3, 5]), seed + 3, |g, x| g.slice(x, 1, 1, 3).unwrap()));
    }

    #[test]
    fn conv_gradients_match_differences(seed in 0u64..10_000, stride in 1usize..3, pad in 0usize..2, k in 1usize..4) {
        let x = normal(seed, &[2, 2, 5, 4]);
        let w = normal(seed + 1, &[2, 2, k, k]);
        let b = normal(seed + 2, &[2]);
        let geo = ConvGeometry { stride, pad_h: pad, pad_w: pad };
        let rep = finite_diff_check(
            |g: &mut Graph, ids: &[NodeId]| {
                let y = g.conv2d(ids[0], ids[1], ids[2], geo)?;
                let y2 = g.mul(y, y)?;
                g.sum(y2)
            },
            &[x, w, b],
            &GradCheckOptions::default(),
        ).unwrap();
        prop_assert!(rep.pass, "{:?}", rep);
    }
}

#[test]
fn shared_inputs_accumulate_gradients() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.5, -2.0]));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let x = g.param(Tensor::from_vec(vec![3.0, 4.0]));
    let y = g.mul(c, x).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_errors_are_reported() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, b).is_err());
    assert!(g.matmul(a, a).is_err());
    assert!(g.reshape(a, &[4]).is_err());
    assert!(g.dft(a).is_err());
}

#[test]
fn matmul_matches_naive() {
    let a = normal(1, &[3, 4]);
    let b = normal(2, &[4, 5]);
    let mut g = Graph::new();
    let (ai, bi) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(ai, bi).unwrap();
    for i in 0..3 {
        for j in 0..5 {
            let want: f64 = (0..4).map(|k| a.data()[i * 4 + k] * b.data()[k * 5 + j]).sum();
            assert!((g.value(c).data()[i * 5 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn batch_norm_train_standardizes_channels() {
    let x = normal(3, &[4, 2, 3, 3]).map(|v| 5.0 * v + 2.0);
    let mut g = Graph::new();
    let xi = g.constant(x);
    let gamma = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let beta = g.constant(Tensor::from_vec(vec![0.0, -1.0]));
    let y = g.batch_norm_train(xi, gamma, beta).unwrap();
    let v = g.value(y).data();
    for ch in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|b| (0..9).map(move |i| (b * 2 + ch) * 9 + i)).map(|i| v[i]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let (gm, bt) = if ch == 0 { (1.0, 0.0) } else { (2.0, -1.0) };
        assert!((mean - bt).abs() < 1e-10);
        assert!((var - gm * gm).abs() < 1e-3 * gm * gm);
    }
}

#[test]
fn sigmoid_and_relu_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
    let s = g.sigmoid(x).unwrap();
    let r = g.relu(x).unwrap();
    assert!((g.value(s).data()[1] - 0.5).abs() < 1e-15);
    assert!((g.value(s).data()[2] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
}

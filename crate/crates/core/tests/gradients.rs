//! Hand-written backpropagation against central finite differences.

mod common;

use common::*;

const TOL: f64 = 1e-4;

#[test]
fn mlp_backward_matches_finite_differences() {
    let rep = check_mlp_backward(100, 11);
    assert!(rep.max_rel < TOL, "{rep:?}");
}

#[test]
fn critic_loss_gradient() {
    let rep = check_critic_loss(100, 12);
    assert!(rep.max_rel < TOL, "{rep:?}");
}

#[test]
fn actor_loss_gradient_including_lidar_offset() {
    let rep = check_actor_loss(100, 13);
    assert!(rep.max_rel < TOL, "{rep:?}");
    assert!(rep.resampled < rep.trials * 20, "conditioning filter rejects too often: {rep:?}");
}

#[test]
fn temperature_gradient() {
    let rep = check_temperature(100, 14);
    assert!(rep.max_rel < TOL, "{rep:?}");
}

#[test]
fn ten_parameter_network() {
    // 1 -> 3 -> 1 has exactly ten weights and biases
    use mcb_nav::sac::nn::{Activation, Mlp};
    use ndarray::array;
    let mut r = rng(15);
    let net = Mlp::<f64>::new(&[1, 3, 1], Activation::Tanh, 1.0, &mut r);
    assert_eq!(net.num_params(), 10);
    let x = array![[0.3], [-1.1]];
    let w = array![[1.0], [-0.5]];
    let (_, cache) = net.forward_cached(&x);
    let (g, _) = net.backward(&cache, &w, true);
    let g = g.unwrap();
    for (i, &a) in flat(&g.slices()).iter().enumerate() {
        let n = fd_param(&net, i, |m| (&m.forward(&x) * &w).sum());
        assert!(rel_err(a, n) < TOL, "param {i}: {a} vs {n}");
    }
}

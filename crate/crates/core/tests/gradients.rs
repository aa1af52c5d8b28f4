mod common;

use common::gradcheck::{self, TOL};
use stylepad::numerics::RngStream;

fn run(prefix: &str) {
    let mut rng = RngStream::new("gradcheck-entries", 0);
    let mut n = 0;
    for mut case in gradcheck::cases(11, 4).into_iter().filter(|c| c.name.starts_with(prefix)) {
        let r = gradcheck::check(&mut case, 24, &mut rng);
        assert!(r.max_rel < TOL, "{}: max rel err {:.3e} at {}", case.name, r.max_rel, r.worst);
        assert!(r.checked > 0, "{}", case.name);
        n += 1;
    }
    assert!(n > 0, "no cases for {prefix}");
}

#[test]
fn linear_gradients() {
    run("linear/");
}

#[test]
fn conv1d_gradients() {
    run("conv1d/");
}

#[test]
fn conv_transpose1d_gradients() {
    run("conv_transpose1d/");
}

#[test]
fn max_pool_gradients() {
    run("max_pool1d/");
}

#[test]
fn group_norm_gradients() {
    run("group_norm/");
}

#[test]
fn batch_norm_gradients() {
    run("batch_norm/");
}

#[test]
fn layer_norm_gradients() {
    run("layer_norm/");
}

#[test]
fn activation_gradients() {
    run("activations/");
}

#[test]
fn tensor_op_gradients() {
    run("tensor_ops/");
}

#[test]
fn loss_gradients() {
    run("losses/");
}

#[test]
fn embedding_mlp_gradients() {
    run("embedding_mlp/");
}

#[test]
fn two_layer_network_gradients() {
    run("two_layer/");
}

#[test]
fn conv1d_fixed_fixture_weight_gradient() {
    // 2x3x8 input, k=3: gradient of sum(conv) w.r.t. weight.
    use stylepad::numerics::layers::Conv1d;
    use stylepad::numerics::{Graph, ParameterSet, Tensor};
    let mut rng = RngStream::new("fixture", 3);
    let mut ps = ParameterSet::<f64>::new();
    let conv = Conv1d::new(&mut ps, "c", 3, 2, 3, 1, 0, &mut rng).unwrap();
    let x = Tensor::from_fn(&[2, 3, 8], |_| rng.normal());
    let loss = |ps: &ParameterSet<f64>, g: &mut Graph<f64>| {
        let xv = g.constant(x.clone());
        let y = conv.forward(g, ps, xv).unwrap();
        g.sum(y)
    };
    let mut g = Graph::new();
    let l = loss(&ps, &mut g);
    g.backward(l, &mut ps).unwrap();
    let analytic = ps.grad(conv.weight).unwrap().clone();
    for i in 0..analytic.numel() {
        let mut p = ps.clone();
        p.value_mut(conv.weight).data_mut()[i] += 1e-5;
        let mut g = Graph::inference();
        let l = loss(&p, &mut g);
        let up = g.value(l).item();
        p.value_mut(conv.weight).data_mut()[i] -= 2e-5;
        let mut g = Graph::inference();
        let l = loss(&p, &mut g);
        let down = g.value(l).item();
        let num = (up - down) / 2e-5;
        let a = analytic.data()[i];
        assert!((a - num).abs() / a.abs().max(1e-4) < 1e-4, "entry {i}: {a} vs {num}");
    }
}

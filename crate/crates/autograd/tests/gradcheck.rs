//! Central finite-difference checks for every differentiable operation.

use std::rc::Rc;

use autograd::{kernels, Graph, Tensor, Var};

fn pseudo(n: usize, seed: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 12.9898 + seed).sin() * 0.8).collect()
}

/// Compares the tape gradient of `f` at `inputs` against central differences
/// and returns the worst relative error.
fn check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);
    let eval = |inputs: &[Tensor<f64>]| {
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        f(&g, &vars).item()
    };
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            worst = worst.max(err);
        }
    }
    worst
}

fn t(shape: &[usize], seed: f64) -> Tensor<f64> {
    Tensor::new(shape, pseudo(shape.iter().product(), seed))
}

/// Contracts an arbitrary tensor to a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
fn weighted_sum<'g>(v: Var<'g, f64>) -> Var<'g, f64> {
    let shape = v.shape();
    let w = v.graph().constant(t(&shape, 99.0));
    (v * w).sum()
}

#[test]
fn elementwise_ops() {
    let a = t(&[3, 4], 1.0);
    let b = Tensor::new(&[3, 4], pseudo(12, 2.0).iter().map(|x| x + 2.0).collect());
    for err in [
        check(&[a.clone(), b.clone()], |_, v| weighted_sum(v[0] + v[1])),
        check(&[a.clone(), b.clone()], |_, v| weighted_sum(v[0] - v[1])),
        check(&[a.clone(), b.clone()], |_, v| weighted_sum(v[0] * v[1])),
        check(&[a.clone(), b.clone()], |_, v| weighted_sum(v[0].div(v[1]))),
        check(&[a.clone()], |_, v| weighted_sum(v[0].scale(-2.5).add_scalar(0.3))),
        check(&[a.clone()], |_, v| v[0].mean()),
    ] {
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn unary_ops() {
    let a = t(&[2, 5], 3.0);
    for err in [
        check(&[a.clone()], |_, v| weighted_sum(v[0].sin())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].sigmoid())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].softplus())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].tanh())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].exp())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].square())),
        check(&[a.clone()], |_, v| weighted_sum(v[0].leaky_relu(0.2))),
    ] {
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn row_broadcast_and_linear_ops() {
    let x = t(&[4, 3], 4.0);
    let w = t(&[3, 5], 5.0);
    let b = t(&[5], 6.0);
    let row = t(&[3], 7.0);
    assert!(check(&[x.clone(), row.clone()], |_, v| weighted_sum(v[0].add_row(v[1]))) < 1e-5);
    assert!(check(&[x.clone(), row.clone()], |_, v| weighted_sum(v[0].mul_row(v[1]))) < 1e-5);
    assert!(check(&[x.clone(), w.clone(), b.clone()], |_, v| weighted_sum(v[0].linear(v[1], Some(v[2])))) < 1e-5);
    assert!(check(&[x.clone(), w.clone()], |_, v| weighted_sum(v[0].linear(v[1], None))) < 1e-5);
    assert!(check(&[x.clone(), w.clone()], |_, v| weighted_sum(v[0].matmul(v[1]))) < 1e-5);
    assert!(check(&[x.clone()], |_, v| weighted_sum(v[0].slice_cols(1, 3))) < 1e-5);
    assert!(check(&[t(&[2, 3, 4], 8.0)], |_, v| weighted_sum(v[0].swap_last2())) < 1e-5);
    assert!(check(&[x], |_, v| weighted_sum(v[0].reshape(&[2, 6]))) < 1e-5);
}

#[test]
fn film_sine() {
    let pre = t(&[6, 4], 9.0);
    let gamma = Tensor::new(&[2, 4], pseudo(8, 10.0).iter().map(|x| 1.0 + x).collect());
    let beta = t(&[2, 4], 11.0);
    let err = check(&[pre, gamma, beta], |_, v| weighted_sum(v[0].film_sin(v[1], v[2])));
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn convolution_pooling_and_blur() {
    let x = t(&[2, 3, 5, 5], 12.0);
    let w = t(&[4, 3, 3, 3], 13.0);
    let b = t(&[4], 14.0);
    let err = check(&[x.clone(), w.clone(), b.clone()], |_, v| weighted_sum(v[0].conv2d(v[1], Some(v[2]), 2, 1)));
    assert!(err < 1e-5, "conv stride 2: {err}");
    let err = check(&[x.clone(), w.clone()], |_, v| weighted_sum(v[0].conv2d(v[1], None, 1, 1)));
    assert!(err < 1e-5, "conv stride 1: {err}");
    let err = check(&[x.clone()], |_, v| weighted_sum(v[0].mean_spatial()));
    assert!(err < 1e-5, "mean_spatial: {err}");
    let y = t(&[1, 2, 4, 6], 15.0);
    let err = check(&[y.clone()], |_, v| weighted_sum(v[0].avg_pool(2)));
    assert!(err < 1e-5, "avg_pool: {err}");
    let taps: Rc<[f64]> = kernels::gaussian_taps(2, 1.0).into();
    let err = check(&[y], |_, v| weighted_sum(v[0].blur(Rc::clone(&taps))));
    assert!(err < 1e-5, "blur: {err}");
}

#[test]
fn compositing() {
    let n = 5;
    let rays = 3;
    let rgb = Tensor::new(&[rays * n, 3], pseudo(rays * n * 3, 16.0).iter().map(|x| 0.5 + 0.5 * x).collect());
    let sigma = Tensor::new(&[rays * n, 1], pseudo(rays * n, 17.0).iter().map(|x| 1.0 + 2.0 * x.abs()).collect());
    let deltas: Rc<[f64]> = pseudo(rays * n, 18.0).iter().map(|x| 0.2 + 0.1 * x).collect::<Vec<_>>().into();
    let err = check(&[rgb, sigma], |_, v| {
        weighted_sum(v[0].composite(v[1], Rc::clone(&deltas), [0.1, 0.2, 0.3], n))
    });
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn camera_frame_and_ray_transforms() {
    let poses = Tensor::new(&[2, 2], vec![1.1, 0.4, 0.7, 3.5]);
    let err = check(&[poses.clone()], |_, v| weighted_sum(v[0].camera_frame(2.5)));
    assert!(err < 1e-5, "frame: {err}");
    let dirs = Rc::new(t(&[4, 3], 19.0));
    let depths: Rc<[f64]> = pseudo(8, 20.0).iter().map(|x| 2.0 + x).collect::<Vec<_>>().into();
    let err = check(&[poses.clone()], |_, v| {
        weighted_sum(v[0].camera_frame(2.5).transform_points(Rc::clone(&dirs), Rc::clone(&depths)))
    });
    assert!(err < 1e-5, "points: {err}");
    let err = check(&[poses], |_, v| weighted_sum(v[0].camera_frame(2.5).rotate_dirs(Rc::clone(&dirs))));
    assert!(err < 1e-5, "dirs: {err}");
}

#[test]
fn constants_receive_no_gradient_but_pass_it_through() {
    let g: Graph<f64> = Graph::new();
    let w = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let x = g.param(Tensor::from_f64(&[1, 2], &[1.0, 1.0]));
    let y = x.matmul(w).sum();
    let grads = g.backward(y);
    assert!(grads.get(w).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[3.0, 7.0]);
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    let g: Graph<f64> = Graph::new();
    let x = g.param(Tensor::from_f64(&[1], &[3.0]));
    let y = (x * x + x).sum();
    let grads = g.backward(y);
    assert_eq!(grads.get(x).unwrap().item(), 7.0);
}

#[test]
fn softplus_saturates_to_exact_zero() {
    let g: Graph<f64> = Graph::new();
    let x = g.constant(Tensor::from_f64(&[2], &[-1000.0, 1000.0]));
    let y = x.softplus().value();
    assert_eq!(y.data()[0], 0.0);
    assert_eq!(y.data()[1], 1000.0);
}

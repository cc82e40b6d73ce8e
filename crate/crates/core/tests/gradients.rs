//! Central finite-difference checks of every analytic gradient, in f64.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vcbench_core::datahub::ImageShape;
use vcbench_core::nets::output_mode::{release_backward, release_batch};
use vcbench_core::nets::{build_classifier, build_decoder, ClassifierSpec, Family, Network, OutputMode};
use vcbench_core::objectives::{
    categorical_ce_batch, reconstruction_loss_batch, weighted_bce_batch, TradeoffWeights,
};

const H: f64 = 1e-5;
/// Smaller step for ReLU networks, so a probe rarely straddles a kink.
const H_NET: f64 = 1e-7;
const TOL: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Checks `d/dx sum(r * f(x))` for a scalar-valued probe of a function with
/// a known vector-Jacobian product.
fn check_input_grad(
    h: f64,
    x: &Array2<f64>,
    analytic: &Array2<f64>,
    mut loss: impl FnMut(&Array2<f64>) -> f64,
    what: &str,
) {
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let mut xp = x.clone();
        xp[[i, j]] += h;
        let mut xm = x.clone();
        xm[[i, j]] -= h;
        let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
        let e = rel_err(fd, analytic[[i, j]]);
        if (fd - analytic[[i, j]]).abs() > 1e-8 {
            worst = worst.max(e);
        }
    }
    assert!(worst <= TOL, "{what}: worst relative error {worst:.2e}");
}

fn perturb_params(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    // zero-initialised layers would make the upstream gradients vanish
    for p in net.params_mut() {
        if p.trainable {
            p.value.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
        }
    }
}

fn check_network(mut net: Network<f64>, x: Array2<f64>, seed: u64, what: &str) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perturb_params(&mut net, &mut rng);
    let out_dim = net.out_dim();
    let r = random(&mut rng, x.nrows(), out_dim, -1.0, 1.0);
    let probe = |net: &mut Network<f64>, x: &Array2<f64>| -> f64 { (net.forward(x.clone()) * &r).sum() };

    net.zero_grad();
    net.forward(x.clone());
    let dx = net.backward(&r);
    let grads: Vec<Array2<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut worker = net.clone();
    check_input_grad(H_NET, &x, &dx, |xv| probe(&mut worker, xv), &format!("{what} input"));

    // a sample of parameter coordinates from every tensor
    let n_params = net.params().len();
    let mut worst: f64 = 0.0;
    for pi in 0..n_params {
        if !net.params()[pi].trainable {
            continue;
        }
        let len = net.params()[pi].value.len();
        for _ in 0..len.min(6) {
            let k = rng.random_range(0..len);
            let bump = |net: &mut Network<f64>, d: f64| {
                let mut ps = net.params_mut();
                let v = ps[pi].value.as_slice_mut().expect("standard layout");
                v[k] += d;
            };
            let mut a = net.clone();
            bump(&mut a, H_NET);
            let mut b = net.clone();
            bump(&mut b, -H_NET);
            let fd = (probe(&mut a, &x) - probe(&mut b, &x)) / (2.0 * H_NET);
            let an = grads[pi].as_slice().expect("standard layout")[k];
            if (fd - an).abs() > 1e-8 {
                worst = worst.max(rel_err(fd, an));
            }
        }
    }
    assert!(worst <= TOL, "{what} params: worst relative error {worst:.2e}");
}

#[test]
fn classifier_families_backpropagate_correctly() {
    let shape = ImageShape::new(16, 16, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (family, depth) in [(Family::Mlp, 28), (Family::Smallcnn, 28), (Family::Wideresnet, 10)] {
        let spec = ClassifierSpec { family, width: 1, depth, n_outputs: 3, input_shape: shape };
        let net = build_classifier::<f64>(&spec, 3).unwrap();
        let x = random(&mut rng, 4, shape.len(), 0.0, 1.0);
        check_network(net, x, 5, &format!("{family:?} classifier"));
    }
}

#[test]
fn decoder_families_backpropagate_correctly() {
    let shape = ImageShape::new(8, 8, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (family, depth) in [(Family::Mlp, 28), (Family::Smallcnn, 28), (Family::Wideresnet, 10)] {
        let spec = ClassifierSpec { family, width: 1, depth, n_outputs: 3, input_shape: shape };
        let net = build_decoder::<f64>(&spec.mirror(), 4).unwrap();
        let z = random(&mut rng, 2, 3, -2.0, 2.0);
        check_network(net, z, 6, &format!("{family:?} decoder"));
    }
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random(&mut rng, 4, 5, -3.0, 3.0);
    let y = [0, 4, 2, 2];
    let (_, g) = categorical_ce_batch(&z, &y);
    check_input_grad(H, &z, &g, |zv| categorical_ce_batch(zv, &y).0, "cross-entropy");
}

#[test]
fn weighted_bce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let z = random(&mut rng, 3, 4, -3.0, 3.0);
    let y = Array2::from_shape_fn((3, 4), |(i, j)| ((i + j) % 2) as u8);
    let w = [0.5, 1.0, 2.0, 3.0];
    let (_, g) = weighted_bce_batch(&z, y.view(), &w);
    check_input_grad(H, &z, &g, |zv| weighted_bce_batch(zv, y.view(), &w).0, "weighted bce");
}

#[test]
fn reconstruction_loss_gradient() {
    let shape = ImageShape::new(12, 12, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 2, shape.len(), 0.05, 0.95);
    let target = random(&mut rng, 2, shape.len(), 0.0, 1.0);
    for w in [
        TradeoffWeights::default(),
        TradeoffWeights { alpha: 0.0, ..Default::default() },
        TradeoffWeights { gamma: 0.0, ..Default::default() },
        TradeoffWeights { delta: 0.2, alpha: 0.5, gamma: 2.0, ..Default::default() },
    ] {
        let (_, g) = reconstruction_loss_batch(&x, &target, shape, &w);
        check_input_grad(H, &x, &g, |xv| reconstruction_loss_batch(xv, &target, shape, &w).0, &format!("{w:?}"));
    }
}

#[test]
fn colour_reconstruction_loss_gradient() {
    let shape = ImageShape::new(8, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, 1, shape.len(), 0.05, 0.95);
    let target = random(&mut rng, 1, shape.len(), 0.0, 1.0);
    let w = TradeoffWeights::default();
    let (_, g) = reconstruction_loss_batch(&x, &target, shape, &w);
    check_input_grad(H, &x, &g, |xv| reconstruction_loss_batch(xv, &target, shape, &w).0, "rgb reconstruction");
}

#[test]
fn release_transforms_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z = random(&mut rng, 3, 4, -3.0, 3.0);
    let r = random(&mut rng, 3, 4, -1.0, 1.0);
    for mode in [OutputMode::Logits, OutputMode::Softmax, OutputMode::Sigmoid] {
        let released = release_batch(&z, mode);
        let g = release_backward(&released, &r, mode);
        check_input_grad(H, &z, &g, |zv| (release_batch(zv, mode) * &r).sum(), &format!("{mode}"));
    }
}

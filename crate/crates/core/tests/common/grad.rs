use guided_zoom::nn::{softmax_cross_entropy, Layer, LayerParams, Network, Tape};
use guided_zoom::seed;
use guided_zoom::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Inputs whose entries are pairwise at least `gap` apart and at least
/// `gap` away from zero, so ReLU kinks and max-pool ties sit outside the
/// finite-difference stencil.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * gap * 4.0 - n as f64 * gap * 2.0).collect();
    for v in vals.iter_mut() {
        if v.abs() < gap {
            *v += 2.0 * gap;
        }
    }
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    Tensor::new(shape, vals).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(1e-6)
    }
}

/// `f(x) = Σ r ⊙ net(x)` for a fixed random projection `r`.
fn objective(net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    net.forward(x).unwrap().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst relative error over the input gradient and every parameter
/// gradient of `net` at `x`.
pub fn check(mut net: Network<f64>, x: Tensor<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let y = net.forward_tape(&x, &mut tape).unwrap();
    let r = uniform(rng, y.shape(), -1.0, 1.0);
    let dx = net.backward_to(&tape, &r, 0).unwrap();
    net.zero_grad();
    net.backward(&tape, &r).unwrap();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += H;
        xm.data_mut()[i] -= H;
        let num = (objective(&net, &xp, &r) - objective(&net, &xm, &r)) / (2.0 * H);
        worst = worst.max(rel_err(dx.data()[i], num));
    }
    for li in 0..net.layers().len() {
        let Some(p) = net.layers()[li].1.params().cloned() else { continue };
        for (which, analytic) in [(0, &p.grad_weight), (1, &p.grad_bias)] {
            for i in 0..analytic.len() {
                let eval = |delta: f64| {
                    let mut n2 = net.clone();
                    let q = n2.layers_mut()[li].1.params_mut().unwrap();
                    let t = if which == 0 { &mut q.weight } else { &mut q.bias };
                    t.data_mut()[i] += delta;
                    objective(&n2, &x, &r)
                };
                let num = (eval(H) - eval(-H)) / (2.0 * H);
                worst = worst.max(rel_err(analytic.data()[i], num));
            }
        }
    }
    worst
}

fn conv_net(rng: &mut ChaCha8Rng, cin: usize, cout: usize, k: usize, stride: usize, padding: usize) -> Network<f64> {
    let params = LayerParams::new(uniform(rng, &[cout, cin, k, k], -1.0, 1.0), uniform(rng, &[cout], -0.5, 0.5));
    Network::new(vec![("conv".into(), Layer::Conv2d { params, stride, padding })])
}

pub type Build = fn(&mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>);

/// Worst error over `instances` seeded instances of one layer kind.
pub fn worst(kind: &str, instances: u64, build: Build) -> f64 {
    (0..instances)
        .map(|s| {
            let mut rng = seed::rng(seed::derive(s, kind));
            let (net, x) = build(&mut rng);
            check(net, x, &mut rng)
        })
        .fold(0.0, f64::max)
}

fn conv(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..3);
    let padding = rng.gen_range(0..2);
    let side = rng.gen_range(k.max(3)..7);
    let n = rng.gen_range(1..3);
    (conv_net(rng, cin, cout, k, stride, padding), uniform(rng, &[n, cin, side, side], -1.0, 1.0))
}

// enough filters to take the tiled weight-gradient path
fn wide_conv(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    (conv_net(rng, 2, 40, 3, 1, 1), uniform(rng, &[2, 2, 5, 5], -1.0, 1.0))
}

fn relu(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(2..6), rng.gen_range(2..6)];
    (Network::new(vec![("relu".into(), Layer::Relu)]), separated(rng, &shape, 1e-3))
}

fn maxpool(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let size = rng.gen_range(1..4);
    let side = size * rng.gen_range(1..4);
    let shape = [rng.gen_range(1..3), rng.gen_range(1..4), side, side];
    (Network::new(vec![("pool".into(), Layer::MaxPool2d { size })]), separated(rng, &shape, 1e-3))
}

fn gap(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let shape = [rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6)];
    (Network::new(vec![("gap".into(), Layer::GlobalAvgPool)]), uniform(rng, &shape, -1.0, 1.0))
}

fn linear(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let (n, fin, fout) = (rng.gen_range(1..4), rng.gen_range(1..8), rng.gen_range(1..6));
    let params = LayerParams::new(uniform(rng, &[fout, fin], -1.0, 1.0), uniform(rng, &[fout], -0.5, 0.5));
    (Network::new(vec![("fc".into(), Layer::Linear { params })]), uniform(rng, &[n, fin], -1.0, 1.0))
}

fn stack(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>) {
    let c1 = conv_net(rng, 2, 3, 3, 1, 1).layers()[0].1.clone();
    let c2 = conv_net(rng, 3, 4, 3, 1, 1).layers()[0].1.clone();
    let fc = LayerParams::new(uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3], -0.5, 0.5));
    let net = Network::new(vec![
        ("c1".into(), c1),
        ("r1".into(), Layer::Relu),
        ("p1".into(), Layer::MaxPool2d { size: 2 }),
        ("c2".into(), c2),
        ("r2".into(), Layer::Relu),
        ("gap".into(), Layer::GlobalAvgPool),
        ("fc".into(), Layer::Linear { params: fc }),
    ]);
    (net, uniform(rng, &[2, 2, 6, 6], 0.0, 1.0))
}

/// Layer kind, instance count and instance builder.
pub const CASES: [(&str, u64, Build); 7] = [
    ("conv", 24, conv),
    ("wide-conv", 2, wide_conv),
    ("relu", 24, relu),
    ("maxpool", 24, maxpool),
    ("gap", 24, gap),
    ("linear", 24, linear),
    ("stack", 20, stack),
];

/// Worst error of the softmax cross-entropy gradient over 24 instances.
pub fn cross_entropy_worst() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..24u64 {
        let mut rng = seed::rng(seed::derive(s, "xent"));
        let (n, c) = (rng.gen_range(1..4), rng.gen_range(2..7));
        let logits = uniform(&mut rng, &[n, c], -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        for i in 0..logits.len() {
            let (mut lp, mut lm) = (logits.clone(), logits.clone());
            lp.data_mut()[i] += H;
            lm.data_mut()[i] -= H;
            let num = (softmax_cross_entropy(&lp, &labels).unwrap().0 - softmax_cross_entropy(&lm, &labels).unwrap().0)
                / (2.0 * H);
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    worst
}

//! Central-difference gradient suite shared by the gradient tests and the
//! acceptance run.

use hyperseg::numcore::{Graph, Padding, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SHAPES_PER_OP: usize = 20;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for kinks at the origin.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced far apart relative to `H`, for max pooling.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| order[i] as f64 * 0.01 - 0.3)
}

pub type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

/// Scalar objective `sum(out * r)` for a fixed random `r`.
fn objective(build: &Build, inputs: &[Tensor], weights: &Option<Tensor>) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = match weights {
        Some(r) => {
            let r = g.constant(r.clone());
            let prod = g.mul(out, r).unwrap();
            g.sum(prod)
        }
        None => out,
    };
    (g, loss, vars)
}

/// Max relative error between analytic and central-difference gradients
/// over every input element.
fn max_rel_error(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let weights = if probe == [1] { None } else { Some(random_tensor(rng, &probe)) };
    let (mut g, loss, vars) = objective(build, inputs, &weights);
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();

    let eval = |inputs: &[Tensor]| {
        let (g, loss, _) = objective(build, inputs, &weights);
        g.value(loss).item()
    };
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

pub type Case = (Vec<Tensor>, Box<Build<'static>>);
pub type CaseFn = fn(&mut ChaCha8Rng) -> Case;

/// Worst relative error over [`SHAPES_PER_OP`] random cases, with the
/// shapes of the worst case.
pub fn worst_error(seed: u64, case: CaseFn) -> (f64, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, Vec::new());
    for _ in 0..SHAPES_PER_OP {
        let (inputs, build) = case(&mut rng);
        let err = max_rel_error(build.as_ref(), &inputs, &mut rng);
        if err >= worst.0 {
            worst = (err, inputs.iter().map(|t| t.shape().to_vec()).collect());
        }
    }
    worst
}

pub fn padding(rng: &mut ChaCha8Rng) -> Padding {
    match rng.random_range(0..3) {
        0 => Padding::Valid,
        1 => Padding::Same,
        _ => Padding::Explicit(rng.random_range(0..3)),
    }
}

fn conv2d(rng: &mut ChaCha8Rng) -> Case {
    let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(kh..7), rng.random_range(kw..7));
    let stride = rng.random_range(1..3);
    let pad = padding(rng);
    let bias = rng.random_bool(0.5);
    let mut inputs = vec![random_tensor(rng, &[n, c, h, w]), random_tensor(rng, &[o, c, kh, kw])];
    if bias {
        inputs.push(random_tensor(rng, &[o]));
    }
    (
        inputs,
        Box::new(move |g: &mut Graph, v: &[Var]| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad).unwrap()),
    )
}

fn conv1x1(rng: &mut ChaCha8Rng) -> Case {
    let (n, c, o) = (rng.random_range(1..3), rng.random_range(1..6), rng.random_range(1..6));
    let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
    let mut inputs = vec![random_tensor(rng, &[n, c, h, w]), random_tensor(rng, &[o, c])];
    if rng.random_bool(0.5) {
        inputs.push(random_tensor(rng, &[o]));
    }
    (
        inputs,
        Box::new(|g: &mut Graph, v: &[Var]| g.conv1x1(v[0], v[1], v.get(2).copied()).unwrap()),
    )
}

fn conv_transpose2d(rng: &mut ChaCha8Rng) -> Case {
    let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (kh, kw) = (rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
    let stride = rng.random_range(1..3);
    let mut inputs = vec![random_tensor(rng, &[n, ci, h, w]), random_tensor(rng, &[ci, co, kh, kw])];
    if rng.random_bool(0.5) {
        inputs.push(random_tensor(rng, &[co]));
    }
    (
        inputs,
        Box::new(move |g: &mut Graph, v: &[Var]| g.conv_transpose2d(v[0], v[1], v.get(2).copied(), stride).unwrap()),
    )
}

fn maxpool2d(rng: &mut ChaCha8Rng) -> Case {
    let window = rng.random_range(1..4);
    let stride = rng.random_range(1..3);
    let shape = [
        rng.random_range(1..3),
        rng.random_range(1..3),
        rng.random_range(window..7),
        rng.random_range(window..7),
    ];
    (
        vec![distinct(rng, &shape)],
        Box::new(move |g: &mut Graph, v: &[Var]| g.maxpool2d(v[0], window, stride).unwrap()),
    )
}

fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [
        rng.random_range(1..3),
        rng.random_range(1..4),
        rng.random_range(1..5),
        rng.random_range(1..5),
    ]
}

fn relu(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    (vec![away_from_zero(rng, &shape)], Box::new(|g: &mut Graph, v: &[Var]| g.relu(v[0])))
}

fn add(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    (
        vec![random_tensor(rng, &shape), random_tensor(rng, &shape)],
        Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1]).unwrap()),
    )
}

fn mul(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    (
        vec![random_tensor(rng, &shape), random_tensor(rng, &shape)],
        Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]).unwrap()),
    )
}

fn concat_channels(rng: &mut ChaCha8Rng) -> Case {
    let [n, c, h, w] = random_shape(rng);
    let c2 = rng.random_range(1..4);
    (
        vec![random_tensor(rng, &[n, c, h, w]), random_tensor(rng, &[n, c2, h, w])],
        Box::new(|g: &mut Graph, v: &[Var]| g.concat_channels(v[0], v[1]).unwrap()),
    )
}

fn upsample_nearest(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    let factor = rng.random_range(1..4);
    (
        vec![random_tensor(rng, &shape)],
        Box::new(move |g: &mut Graph, v: &[Var]| g.upsample_nearest(v[0], factor).unwrap()),
    )
}

fn sum(rng: &mut ChaCha8Rng) -> Case {
    let shape = random_shape(rng);
    (vec![random_tensor(rng, &shape)], Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0])))
}

fn softmax_cross_entropy(rng: &mut ChaCha8Rng) -> Case {
    let [n, _, h, w] = random_shape(rng);
    let c = rng.random_range(2..5);
    let logits = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-3.0..3.0));
    let targets: Vec<usize> = (0..n * h * w).map(|_| rng.random_range(0..c)).collect();
    let ignore = rng.random_bool(0.5).then_some(0);
    (
        vec![logits],
        Box::new(move |g: &mut Graph, v: &[Var]| g.softmax_ce_loss(v[0], &targets, ignore).unwrap()),
    )
}

fn composed_network(rng: &mut ChaCha8Rng) -> Case {
    let (c, o) = (rng.random_range(1..3), rng.random_range(1..3));
    let inputs = vec![
        random_tensor(rng, &[1, c, 4, 4]),
        random_tensor(rng, &[o, c, 3, 3]),
        random_tensor(rng, &[o, o, 2, 2]),
        random_tensor(rng, &[2, o + o, 1, 1]),
    ];
    let targets: Vec<usize> = (0..16).map(|_| rng.random_range(0..2)).collect();
    (
        inputs,
        Box::new(move |g: &mut Graph, v: &[Var]| {
            let a = g.conv2d(v[0], v[1], None, 1, Padding::Same).unwrap();
            let p = g.maxpool2d(a, 2, 2).unwrap();
            let u = g.conv_transpose2d(p, v[2], None, 2).unwrap();
            let cat = g.concat_channels(u, a).unwrap();
            let logits = g.conv1x1(cat, v[3], None).unwrap();
            g.softmax_ce_loss(logits, &targets, None).unwrap()
        }),
    )
}

/// Every operator case: `(name, seed, generator)`.
pub const OPS: &[(&str, u64, CaseFn)] = &[
    ("conv2d", 1, conv2d),
    ("conv1x1", 2, conv1x1),
    ("conv_transpose2d", 3, conv_transpose2d),
    ("maxpool2d", 4, maxpool2d),
    ("relu", 5, relu),
    ("add", 6, add),
    ("mul", 7, mul),
    ("concat_channels", 8, concat_channels),
    ("upsample_nearest", 9, upsample_nearest),
    ("sum", 10, sum),
    ("softmax_ce_loss", 11, softmax_cross_entropy),
    ("conv-relu-pool-convT-concat", 12, composed_network),
];

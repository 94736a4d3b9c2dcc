use csp_tensor::gradcheck::{self, check_inputs};
use csp_tensor::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for l in 0..k {
                c[i * n + j] += a[i * k + l] * b[l * n + j];
            }
        }
    }
    c
}

#[test]
fn matmul_identity_and_small_product() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let m = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[11.0]);
    assert_eq!(g.shape(c), &[1, 1]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[5, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 3], -1.0, 1.0);
    let expect = naive_matmul(a.data(), b.data(), 5, 4, 3);
    let mut g = Graph::new();
    let (va, vb) = (g.leaf(&a, false), g.leaf(&b, false));
    let c = g.matmul(va, vb).unwrap();
    for (x, y) in g.value(c).iter().zip(&expect) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(matches!(err, TensorError::Dimension { .. }));
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
}

#[test]
fn backward_linear_and_quadratic() {
    let w = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let mut g = Graph::new();
    let v = g.leaf(&w, true);
    let s = g.sum(v);
    assert_eq!(g.backward(s).unwrap().get(v).unwrap(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let v = g.leaf(&w, true);
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq);
    assert_eq!(g.backward(s).unwrap().get(v).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_sums_branch_gradients() {
    let w = Tensor::vector(vec![0.3, -1.2]);
    let mut g = Graph::new();
    let v = g.leaf(&w, true);
    let a = g.sum(v);
    let b = g.sum(v);
    let total = g.add(a, b).unwrap();
    assert_eq!(g.backward(total).unwrap().get(v).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let w = Tensor::vector(vec![1.0, 2.0]);
    let mut g = Graph::new();
    let v = g.leaf(&w, true);
    let e = g.exp(v);
    assert!(matches!(g.backward(e), Err(TensorError::Contract(_))));
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let e = g.exp(z);
    assert_eq!(g.value(e), &[1.0]);
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![3.0]));
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.value(c), &[1.0, 2.0, 3.0]);
    let bad = g.constant(Tensor::zeros(&[2, 2]));
    assert!(g.add(a, bad).is_err());
    assert!(g.reshape(bad, &[3]).is_err());
}

#[test]
fn composite_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[3, 4], -1.0, 1.0);
    let w = random(&mut rng, &[4, 5], -1.0, 1.0);
    let b = random(&mut rng, &[5], -1.0, 1.0);
    let report = check_inputs(&[x, w, b], |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add_row(h, v[2])?;
        let t = g.tanh(h);
        let s = g.softmax(t);
        let l = g.log(s);
        let sq = g.mul(l, t)?;
        Ok(g.mean(sq))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

/// Reduces `out` to a scalar with fixed random weights so that every output
/// element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> csp_tensor::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out).to_vec();
    let r = g.constant(random(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(out, r)?;
    Ok(g.sum(p))
}

type Build = fn(&mut Graph, &[Var]) -> csp_tensor::Result<Var>;

struct OpCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    lo: f64,
    hi: f64,
    build: Build,
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase { name: "matmul", shapes: &[&[2, 3], &[3, 2]], lo: -1.0, hi: 1.0, build: |g, v| g.matmul(v[0], v[1]) },
        OpCase { name: "add_row", shapes: &[&[3, 2], &[2]], lo: -1.0, hi: 1.0, build: |g, v| g.add_row(v[0], v[1]) },
        OpCase { name: "add", shapes: &[&[4], &[4]], lo: -1.0, hi: 1.0, build: |g, v| g.add(v[0], v[1]) },
        OpCase { name: "sub", shapes: &[&[4], &[4]], lo: -1.0, hi: 1.0, build: |g, v| g.sub(v[0], v[1]) },
        OpCase { name: "mul", shapes: &[&[4], &[4]], lo: -1.0, hi: 1.0, build: |g, v| g.mul(v[0], v[1]) },
        OpCase { name: "div", shapes: &[&[4], &[4]], lo: 0.5, hi: 2.0, build: |g, v| g.div(v[0], v[1]) },
        OpCase { name: "scale", shapes: &[&[4]], lo: -1.0, hi: 1.0, build: |g, v| Ok(g.scale(v[0], -2.5)) },
        OpCase { name: "offset", shapes: &[&[4]], lo: -1.0, hi: 1.0, build: |g, v| Ok(g.offset(v[0], 0.7)) },
        OpCase { name: "exp", shapes: &[&[4]], lo: -2.0, hi: 2.0, build: |g, v| Ok(g.exp(v[0])) },
        OpCase { name: "log", shapes: &[&[4]], lo: 0.2, hi: 3.0, build: |g, v| Ok(g.log(v[0])) },
        OpCase { name: "tanh", shapes: &[&[4]], lo: -2.0, hi: 2.0, build: |g, v| Ok(g.tanh(v[0])) },
        OpCase { name: "sigmoid", shapes: &[&[4]], lo: -3.0, hi: 3.0, build: |g, v| Ok(g.sigmoid(v[0])) },
        OpCase { name: "square", shapes: &[&[4]], lo: -2.0, hi: 2.0, build: |g, v| Ok(g.square(v[0])) },
        OpCase { name: "leaky_relu", shapes: &[&[6]], lo: -2.0, hi: 2.0, build: |g, v| Ok(g.leaky_relu(v[0], 0.1)) },
        OpCase { name: "clamp", shapes: &[&[6]], lo: -2.0, hi: 2.0, build: |g, v| Ok(g.clamp(v[0], -1.0, 1.0)) },
        OpCase { name: "concat", shapes: &[&[2, 2], &[2, 3]], lo: -1.0, hi: 1.0, build: |g, v| g.concat(&[v[0], v[1]]) },
        OpCase { name: "slice_last", shapes: &[&[2, 5]], lo: -1.0, hi: 1.0, build: |g, v| g.slice_last(v[0], 1, 3) },
        OpCase { name: "reshape", shapes: &[&[2, 3]], lo: -1.0, hi: 1.0, build: |g, v| g.reshape(v[0], &[3, 2]) },
        OpCase { name: "swap_last2", shapes: &[&[2, 2, 3]], lo: -1.0, hi: 1.0, build: |g, v| g.swap_last2(v[0]) },
        OpCase { name: "sum", shapes: &[&[5]], lo: -1.0, hi: 1.0, build: |g, v| { let s = g.square(v[0]); Ok(g.sum(s)) } },
        OpCase { name: "mean", shapes: &[&[5]], lo: -1.0, hi: 1.0, build: |g, v| { let s = g.square(v[0]); Ok(g.mean(s)) } },
        OpCase { name: "sum_last", shapes: &[&[3, 4]], lo: -1.0, hi: 1.0, build: |g, v| Ok(g.sum_last(v[0])) },
        OpCase { name: "softmax", shapes: &[&[2, 4]], lo: -3.0, hi: 3.0, build: |g, v| Ok(g.softmax(v[0])) },
        OpCase { name: "log_softmax", shapes: &[&[2, 4]], lo: -3.0, hi: 3.0, build: |g, v| Ok(g.log_softmax(v[0])) },
        OpCase {
            name: "conv2d",
            shapes: &[&[2, 2, 5, 3], &[3, 2, 3, 2], &[3]],
            lo: -1.0,
            hi: 1.0,
            build: |g, v| g.conv2d(v[0], v[1], v[2], (1, 0)),
        },
        OpCase { name: "max_pool2d", shapes: &[&[2, 4, 3]], lo: -1.0, hi: 1.0, build: |g, v| g.max_pool2d(v[0], 2, 1) },
        OpCase {
            name: "gather_rows",
            shapes: &[&[3, 2]],
            lo: -1.0,
            hi: 1.0,
            build: |g, v| g.gather_rows(v[0], vec![Some(2), None, Some(0), Some(2)]),
        },
    ]
}

#[test]
fn every_op_matches_finite_differences_at_100_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in cases() {
        let mut worst = 0.0f64;
        for trial in 0..100 {
            let inputs: Vec<Tensor> = case.shapes.iter().map(|s| random(&mut rng, s, case.lo, case.hi)).collect();
            let build = case.build;
            let report = check_inputs(&inputs, |g, v| {
                let out = build(g, v)?;
                weighted_sum(g, out, trial)
            })
            .unwrap();
            worst = worst.max(report.max_relative_error);
        }
        println!("{:<12} max relative error {worst:.2e}", case.name);
        assert!(worst < 1e-4, "{} gradient mismatch: {worst:e}", case.name);
    }
}

#[test]
fn tanh_gradient_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[50], -3.0, 3.0);
    let mut g = Graph::new();
    let v = g.leaf(&x, true);
    let t = g.tanh(v);
    let s = g.sum(t);
    let grads = g.backward(s).unwrap();
    for (i, &a) in grads.get(v).unwrap().iter().enumerate() {
        let x0 = x.data()[i];
        let h = gradcheck::DEFAULT_STEP;
        let n = ((x0 + h).tanh() - (x0 - h).tanh()) / (2.0 * h);
        assert!(gradcheck::relative_error(a, n) < 1e-6);
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&mut rng, &[4, 6], -1.0, 1.0);
        let w = random(&mut rng, &[6, 6], -1.0, 1.0);
        let mut g = Graph::new();
        let (vx, vw) = (g.leaf(&x, true), g.leaf(&w, true));
        let h = g.matmul(vx, vw).unwrap();
        let h = g.tanh(h);
        let s = g.softmax(h);
        let l = g.sum(s);
        let grads = g.backward(l).unwrap();
        (g.value(h).to_vec(), grads.get(vw).unwrap().to_vec(), grads.get(vx).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.0), bits(&b.0));
    assert_eq!(bits(&a.1), bits(&b.1));
    assert_eq!(bits(&a.2), bits(&b.2));
}

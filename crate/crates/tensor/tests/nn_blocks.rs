use csp_tensor::gradcheck::{central_difference, check_inputs, relative_error, DEFAULT_STEP};
use csp_tensor::nn::{leaky_relu, max_pool2d, softmax, uniform_init, ConvLayer, LstmCell, LEAKY_RELU_ALPHA};
use csp_tensor::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn zero_store(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn lstm_zero_weights_analytic_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "lstm", 3, 4).unwrap();
    zero_store(&mut store);
    let c0 = [0.5, -1.0, 2.0, 0.0];
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(random(&mut rng, &[1, 3]));
    let h = g.constant(random(&mut rng, &[1, 4]));
    let zero = g.constant(Tensor::zeros(&[1, 4]));
    let (h1, c1) = cell.step(&mut g, &p, x, h, zero).unwrap();
    assert!(g.value(h1).iter().chain(g.value(c1)).all(|&v| v == 0.0));

    let c = g.constant(Tensor::new(&[1, 4], c0.to_vec()).unwrap());
    let (h2, c2) = cell.step(&mut g, &p, x, h, c).unwrap();
    for i in 0..4 {
        assert!((g.value(c2)[i] - 0.5 * c0[i]).abs() < 1e-15);
        assert!((g.value(h2)[i] - 0.5 * (0.5 * c0[i]).tanh()).abs() < 1e-15);
    }
}

#[test]
fn lstm_rejects_bad_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "lstm", 3, 4).unwrap();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 2]));
    let s = g.constant(Tensor::zeros(&[1, 4]));
    assert!(cell.step(&mut g, &p, x, s, s).is_err());
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let bad = g.constant(Tensor::zeros(&[1, 5]));
    assert!(cell.step(&mut g, &p, x, bad, s).is_err());
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "lstm", 3, 4).unwrap();
    let (x, h, c) = (random(&mut rng, &[2, 3]), random(&mut rng, &[2, 4]), random(&mut rng, &[2, 4]));
    let weights = random(&mut rng, &[2, 4]);

    let loss = |store: &ParamStore, g: &mut Graph, v: &[csp_tensor::Var], p: &csp_tensor::Bound| {
        let (h1, c1) = cell.step(g, p, v[0], v[1], v[2]).unwrap();
        let (h2, _) = cell.step(g, p, v[0], h1, c1).unwrap();
        let w = g.constant(weights.clone());
        let prod = g.mul(h2, w).unwrap();
        let _ = store;
        g.sum(prod)
    };

    // Inputs and states.
    let report = check_inputs(&[x.clone(), h.clone(), c.clone()], |g, v| {
        let p = store.bind(g);
        Ok(loss(&store, g, v, &p))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");

    // Parameters.
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let vars = [g.leaf(&x, false), g.leaf(&h, false), g.leaf(&c, false)];
    let out = loss(&store, &mut g, &vars, &p);
    let grads = g.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| grads.get(p.get(id)).unwrap().to_vec()).collect();
    drop(g);
    let ids: Vec<_> = store.ids().collect();
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let vars = [g.leaf(&x, false), g.leaf(&h, false), g.leaf(&c, false)];
        let out = loss(s, &mut g, &vars, &p);
        Ok(g.scalar(out))
    };
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).numel() {
            let n = central_difference(&mut store, |s| &mut s.get_mut(id).data_mut()[i], eval, DEFAULT_STEP).unwrap();
            worst = worst.max(relative_error(analytic[k][i], n));
        }
    }
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn shared_cell_gives_identical_outputs_for_identical_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, &mut rng, "enc", 2, 5).unwrap();
    let seq = random(&mut rng, &[6, 2]);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    // Two vehicles with the same history, batched.
    let mut h = g.constant(Tensor::zeros(&[2, 5]));
    let mut c = g.constant(Tensor::zeros(&[2, 5]));
    for t in 0..6 {
        let x = g.constant(Tensor::new(&[2, 2], [seq.data()[2 * t], seq.data()[2 * t + 1]].repeat(2)).unwrap());
        (h, c) = cell.step(&mut g, &p, x, h, c).unwrap();
    }
    let v = g.value(h);
    assert_eq!(&v[..5], &v[5..]);
}

/// Six nested loops, straight from the definition of cross-correlation.
fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], pad: (usize, usize)) -> Vec<f64> {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (h + 2 * pad.0 - kh + 1, wd + 2 * pad.1 - kw + 1);
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o];
                for ci in 0..c {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let (y, xx) = (i + ki, j + kj);
                            if y < pad.0 || xx < pad.1 || y - pad.0 >= h || xx - pad.1 >= wd {
                                continue;
                            }
                            acc += w.data()[((o * c + ci) * kh + ki) * kw + kj] * x.data()[(ci * h + y - pad.0) * wd + xx - pad.1];
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

fn conv_once(layer: &ConvLayer, store: &ParamStore, x: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let v = g.leaf(x, false);
    let y = layer.forward(&mut g, &p, v).unwrap();
    (g.shape(y).to_vec(), g.value(y).to_vec())
}

#[test]
fn conv_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let layer = ConvLayer::new(&mut store, &mut rng, "c", 1, 1, (1, 1), (0, 0)).unwrap();
    store.get_mut(layer.weight).data_mut()[0] = 1.0;
    store.get_mut(layer.bias).data_mut()[0] = 0.0;
    let x = random(&mut rng, &[1, 4, 3]);
    let (shape, y) = conv_once(&layer, &store, &x);
    assert_eq!(shape, vec![1, 4, 3]);
    assert_eq!(y, x.data());
}

#[test]
fn conv_ones_kernel_sums_nine_taps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let layer = ConvLayer::new(&mut store, &mut rng, "c", 1, 1, (3, 3), (0, 0)).unwrap();
    store.get_mut(layer.weight).data_mut().iter_mut().for_each(|v| *v = 1.0);
    store.get_mut(layer.bias).data_mut()[0] = 0.0;
    let (shape, y) = conv_once(&layer, &store, &Tensor::full(&[1, 5, 5], 1.0));
    assert_eq!(shape, vec![1, 3, 3]);
    assert!(y.iter().all(|&v| v == 9.0));
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (pad, kernel) in [((0, 0), (3, 3)), ((1, 0), (3, 1)), ((1, 1), (2, 3))] {
        let mut store = ParamStore::new();
        let layer = ConvLayer::new(&mut store, &mut rng, "c", 3, 4, kernel, pad).unwrap();
        let x = random(&mut rng, &[3, 13, 3]);
        let (shape, y) = conv_once(&layer, &store, &x);
        let (oh, ow) = layer.output_extent(13, 3).unwrap();
        assert_eq!(shape, vec![4, oh, ow]);
        let expect = naive_conv(&x, store.get(layer.weight), store.get(layer.bias).data(), pad);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[2, 3, 6, 3]);
    let w = random(&mut rng, &[4, 3, 3, 3]);
    let b = random(&mut rng, &[4]);
    let r = random(&mut rng, &[2, 4, 4, 1]);
    let report = check_inputs(&[x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], (0, 0))?;
        let y = g.leaky_relu(y, LEAKY_RELU_ALPHA);
        let rv = g.constant(r.clone());
        let p = g.mul(y, rv)?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn conv_kernel_larger_than_input_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let layer = ConvLayer::new(&mut store, &mut rng, "c", 1, 1, (3, 3), (0, 0)).unwrap();
    assert!(layer.output_extent(2, 5).is_err());
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.constant(Tensor::zeros(&[1, 2, 5]));
    assert!(layer.forward(&mut g, &p, x).is_err());
}

fn naive_pool(x: &[f64], planes: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for p in 0..planes {
        for i in 0..h / ph {
            for j in 0..w / pw {
                let mut m = f64::NEG_INFINITY;
                for a in 0..ph {
                    for b in 0..pw {
                        m = m.max(x[p * h * w + (i * ph + a) * w + j * pw + b]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn max_pool_examples_and_oracle() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full(&[2, 4, 4], 3.5));
    let y = max_pool2d(&mut g, c, 2, 2).unwrap();
    assert_eq!(g.shape(y), &[2, 2, 2]);
    assert!(g.value(y).iter().all(|&v| v == 3.5));

    let x = g.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = max_pool2d(&mut g, x, 2, 2).unwrap();
    assert_eq!(g.value(y), &[4.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let r = random(&mut rng, &[3, 9, 5]);
    let x = g.constant(r.clone());
    let y = max_pool2d(&mut g, x, 2, 2).unwrap();
    assert_eq!(g.value(y), naive_pool(r.data(), 3, 9, 5, 2, 2));

    assert!(max_pool2d(&mut g, x, 10, 1).is_err());
    assert!(max_pool2d(&mut g, x, 0, 1).is_err());
}

#[test]
fn max_pool_ties_route_to_first_element() {
    let t = Tensor::new(&[1, 2, 2], vec![1.0, 5.0, 5.0, 5.0]).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(&t, true);
    let y = max_pool2d(&mut g, x, 2, 2).unwrap();
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let s = softmax(&mut g, z);
    assert!(g.value(s).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    let big = g.constant(Tensor::vector(vec![1000.0, 0.0]));
    let s = softmax(&mut g, big);
    assert!(g.value(s).iter().all(|v| v.is_finite()));
    assert!((g.value(s)[0] - 1.0).abs() < 1e-15 && g.value(s)[1] < 1e-300);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random(&mut rng, &[7]);
    let report = check_inputs(&[logits], |g, v| {
        let s = softmax(g, v[0]);
        let sq = g.square(s);
        let t = g.sum(sq);
        let raw = g.sum(s);
        assert!((g.scalar(raw) - 1.0).abs() < 1e-12);
        Ok(t)
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-4);
}

#[test]
fn leaky_relu_values_and_slopes() {
    let t = Tensor::vector(vec![5.0, -2.0, 0.7, -0.3]);
    let mut g = Graph::new();
    let x = g.leaf(&t, true);
    let y = leaky_relu(&mut g, x, 0.1);
    assert_eq!(g.value(y)[0], 5.0);
    assert!((g.value(y)[1] + 0.2).abs() < 1e-15);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let report = check_inputs(&[t], |g, v| {
        let y = leaky_relu(g, v[0], 0.1);
        Ok(g.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error < 1e-6);
    assert_eq!(grads.get(x).unwrap(), &[1.0, 0.1, 1.0, 0.1]);

    // Subgradient at exactly zero is alpha.
    let z = Tensor::scalar(0.0);
    let mut g = Graph::new();
    let x = g.leaf(&z, true);
    let y = leaky_relu(&mut g, x, 0.1);
    assert_eq!(g.backward(y).unwrap().get(x).unwrap(), &[0.1]);
}

#[test]
fn uniform_init_respects_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t = uniform_init(&mut rng, &[16, 8], 16);
    assert!(t.data().iter().all(|v| v.abs() <= 0.25));
}

proptest! {
    #[test]
    fn softmax_is_a_probability_vector(v in proptest::collection::vec(-700.0f64..700.0, 1..12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(v));
        let s = softmax(&mut g, x);
        let total: f64 = g.value(s).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(g.value(s).iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn max_pool_never_exceeds_input_max(v in proptest::collection::vec(-1e6f64..1e6, 12)) {
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 4, 3], v).unwrap());
        let y = max_pool2d(&mut g, x, 2, 1).unwrap();
        prop_assert!(g.value(y).iter().all(|&p| p <= max));
    }
}

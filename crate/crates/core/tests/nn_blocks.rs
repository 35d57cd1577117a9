use std::rc::Rc;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdcp_core::autodiff::{grad_check, ParameterStore, Tape, Value};
use cdcp_core::nn::{skip_connect, EgateLayer, GruCell, Linear, MhaLayer, LEAKY_RELU_SLOPE};

fn randn(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// ---- multi-head attention --------------------------------------------------

#[test]
fn uniform_logits_average_values_per_head() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = MhaLayer::new(&mut store, &mut rng, "mha", 8, 2).unwrap();
    let tape = Tape::new();

    // All-zero queries give equal logits, so attention weights are uniform
    // and each head outputs the mean of its value slice.
    let q = Value::constant(Array2::zeros((3, 8)));
    let k = Value::constant(randn(&mut rng, 5, 8));
    let v = Value::constant(randn(&mut rng, 5, 8));
    let out = layer.attend(&tape, &q, &k, &v, None).unwrap();

    let mean = v.data().mean_axis(ndarray::Axis(0)).unwrap();
    for r in 0..3 {
        for c in 0..8 {
            assert!((out.data()[[r, c]] - mean[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_unmasked_key_passes_its_value_through() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = MhaLayer::new(&mut store, &mut rng, "mha", 4, 2).unwrap();
    let tape = Tape::new();

    let q = Value::constant(randn(&mut rng, 1, 4));
    let k = Value::constant(randn(&mut rng, 3, 4));
    let v = Value::constant(randn(&mut rng, 3, 4));
    let mask = Rc::new(array![[true, false, true]]);
    let out = layer.attend(&tape, &q, &k, &v, Some(&mask)).unwrap();
    for c in 0..4 {
        assert!((out.data()[[0, c]] - v.data()[[1, c]]).abs() < 1e-12);
    }
}

#[test]
fn mha_matches_dense_reference() {
    // Independent dense-path oracle computed with plain ndarray arithmetic.
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 8;
    let heads = 2;
    let layer = MhaLayer::new(&mut store, &mut rng, "mha", dim, heads).unwrap();
    let tape = Tape::new();

    let x = randn(&mut rng, 5, dim);
    let xv = Value::constant(x.clone());
    let out = layer.forward(&tape, &store, &xv, &xv, &xv, None).unwrap();

    let wq = store.value(layer.wq);
    let wk = store.value(layer.wk);
    let wv = store.value(layer.wv);
    let wo = store.value(layer.wo);
    let (q, k, v) = (x.dot(wq), x.dot(wk), x.dot(wv));
    let dh = dim / heads;
    let mut ctx = Array2::zeros((5, dim));
    for h in 0..heads {
        let span = ndarray::s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(span).to_owned();
        let kh = k.slice(span).to_owned();
        let vh = v.slice(span).to_owned();
        let scores = qh.dot(&kh.t()) / (dh as f64).sqrt();
        for r in 0..5 {
            let row = scores.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..5 {
                    acc += exps[j] / sum * vh[[j, c]];
                }
                ctx[[r, h * dh + c]] = acc;
            }
        }
    }
    let expect = ctx.dot(wo);
    for (a, b) in out.data().iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn mha_is_permutation_equivariant() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = MhaLayer::new(&mut store, &mut rng, "mha", 8, 4).unwrap();
    let tape = Tape::new();

    for trial in 0..100 {
        let n = 4 + trial % 4;
        let x = randn(&mut rng, n, 8);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut px = Array2::zeros((n, 8));
        for (to, &from) in perm.iter().enumerate() {
            px.row_mut(to).assign(&x.row(from));
        }
        let xv = Value::constant(x);
        let pxv = Value::constant(px);
        let out = layer.forward(&tape, &store, &xv, &xv, &xv, None).unwrap();
        let pout = layer.forward(&tape, &store, &pxv, &pxv, &pxv, None).unwrap();
        for (to, &from) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!(
                    (pout.data()[[to, c]] - out.data()[[from, c]]).abs() < 1e-9,
                    "trial {trial}"
                );
            }
        }
    }
}

#[test]
fn mha_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for rep in 0..10 {
        let mut store = ParameterStore::new();
        let layer = MhaLayer::new(&mut store, &mut rng, "mha", 4, 2).unwrap();
        let x = randn(&mut rng, 3, 4);
        let mask = Rc::new(array![
            [false, true, false],
            [false, false, false],
            [true, false, false]
        ]);
        let tape = Tape::new();
        let err = grad_check(
            &tape,
            &mut store,
            |t, s| {
                let xv = Value::constant(x.clone());
                let out = layer.forward(t, s, &xv, &xv, &xv, Some(&mask))?;
                Ok(t.sum_all(&t.tanh(&out)))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rep {rep}: FD error {err}");
    }
}

// ---- skip connections -------------------------------------------------------

#[test]
fn skip_connection_identities() {
    let tape = Tape::new();
    let x = Value::constant(array![[1.0, -2.0], [3.0, 0.5]]);
    let zero = Value::constant(Array2::zeros((2, 2)));
    let same = skip_connect(&tape, &x, &zero).unwrap();
    assert_eq!(same.data(), x.data());
    let other = skip_connect(&tape, &zero, &x).unwrap();
    assert_eq!(other.data(), x.data());
    assert!(skip_connect(&tape, &x, &Value::constant(Array2::zeros((1, 2)))).is_err());
}

#[test]
fn skip_connection_gradient_splits_additively() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::new();
    let id = store.add("x", randn(&mut rng, 2, 3)).unwrap();
    let tape = Tape::new();
    let err = grad_check(
        &tape,
        &mut store,
        |t, s| {
            let x = Value::param(s, id);
            let sub = t.tanh(&x);
            let y = skip_connect(t, &x, &sub)?;
            Ok(t.sum_all(&t.sigmoid(&y)))
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "FD error {err}");
}

// ---- EGATE -------------------------------------------------------------------

fn full_mask(n: usize) -> Rc<Array2<bool>> {
    Rc::new(Array2::from_elem((n, n), false))
}

fn pair_rows(n: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Array2<f64> {
    let probe = f(0, 0);
    let mut out = Array2::zeros((n * n, probe.len()));
    for i in 0..n {
        for j in 0..n {
            for (c, v) in f(i, j).iter().enumerate() {
                out[[i * n + j, c]] = *v;
            }
        }
    }
    out
}

#[test]
fn egate_symmetric_two_node_graph_gives_symmetric_embeddings() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layer = EgateLayer::new(&mut store, &mut rng, "egate", 4, 2, LEAKY_RELU_SLOPE).unwrap();
    let tape = Tape::new();

    let nodes = Value::constant(array![[0.3, -0.1, 0.7, 0.2], [0.3, -0.1, 0.7, 0.2]]);
    let edges = Value::constant(pair_rows(2, |i, j| {
        if i == j {
            vec![0.0, 0.0]
        } else {
            vec![0.5, 1.0]
        }
    }));
    let out = layer
        .forward(&tape, &store, &nodes, &edges, &full_mask(2))
        .unwrap();
    for c in 0..4 {
        assert!((out.data()[[0, c]] - out.data()[[1, c]]).abs() < 1e-12);
    }
}

#[test]
fn masked_edge_features_do_not_influence_output() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = EgateLayer::new(&mut store, &mut rng, "egate", 4, 2, LEAKY_RELU_SLOPE).unwrap();
    let tape = Tape::new();

    let n = 3;
    let nodes = Value::constant(randn(&mut rng, n, 4));
    let mut mask = Array2::from_elem((n, n), false);
    mask[[0, 2]] = true; // exclude edge (0, 2) from node 0's aggregation
    let mask = Rc::new(mask);

    let base_edges = randn(&mut rng, n * n, 2);
    let mut perturbed = base_edges.clone();
    perturbed[[2, 0]] += 10.0; // row 0*n+2 is the pair (0, 2)
    perturbed[[2, 1]] -= 5.0;

    let out_a = layer
        .forward(&tape, &store, &nodes, &Value::constant(base_edges), &mask)
        .unwrap();
    let out_b = layer
        .forward(&tape, &store, &nodes, &Value::constant(perturbed), &mask)
        .unwrap();
    for c in 0..4 {
        assert!((out_a.data()[[0, c]] - out_b.data()[[0, c]]).abs() < 1e-12);
    }
    // Unmasked: the same perturbation must change node 0's output.
    let nomask = full_mask(n);
    let base_edges2 = randn(&mut rng, n * n, 2);
    let mut perturbed2 = base_edges2.clone();
    perturbed2[[2, 0]] += 10.0;
    let out_c = layer
        .forward(&tape, &store, &nodes, &Value::constant(base_edges2), &nomask)
        .unwrap();
    let out_d = layer
        .forward(&tape, &store, &nodes, &Value::constant(perturbed2), &nomask)
        .unwrap();
    let diff: f64 = (0..4)
        .map(|c| (out_c.data()[[0, c]] - out_d.data()[[0, c]]).abs())
        .sum();
    assert!(diff > 1e-9, "edge features should matter when unmasked");
}

#[test]
fn egate_matches_dense_reference() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (dn, de, n) = (4, 2, 4);
    let layer = EgateLayer::new(&mut store, &mut rng, "egate", dn, de, LEAKY_RELU_SLOPE).unwrap();
    let tape = Tape::new();

    let nodes = randn(&mut rng, n, dn);
    let edges = randn(&mut rng, n * n, de);
    let out = layer
        .forward(
            &tape,
            &store,
            &Value::constant(nodes.clone()),
            &Value::constant(edges.clone()),
            &full_mask(n),
        )
        .unwrap();

    // Hand-rolled dense computation.
    let h = nodes.dot(store.value(layer.w_node));
    let g = edges.dot(store.value(layer.w_edge));
    let a = store.value(layer.w_score);
    let lrelu = |x: f64| if x >= 0.0 { x } else { LEAKY_RELU_SLOPE * x };
    let mut expect = Array2::zeros((n, dn));
    for i in 0..n {
        let mut logits = vec![0.0; n];
        for j in 0..n {
            let mut cat = Vec::with_capacity(2 * dn + de);
            cat.extend(h.row(i).iter());
            cat.extend(h.row(j).iter());
            cat.extend(g.row(i * n + j).iter());
            logits[j] = cat.iter().enumerate().map(|(k, &x)| lrelu(x) * a[[k, 0]]).sum();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..dn {
            expect[[i, c]] = (0..n).map(|j| exps[j] / sum * h[[j, c]]).sum::<f64>();
        }
    }
    for (o, e) in out.data().iter().zip(expect.iter()) {
        assert!((o - e).abs() < 1e-10, "{o} vs {e}");
    }
}

/// Draws EGATE inputs whose pre-activation entries stay clear of the
/// LeakyReLU kink, where finite differences and the subgradient disagree.
fn egate_case_off_kink(
    rng: &mut impl Rng,
    store: &ParameterStore,
    layer: &EgateLayer,
    n: usize,
) -> (Array2<f64>, Array2<f64>) {
    'outer: loop {
        let nodes = randn(rng, n, layer.node_dim);
        let edges = randn(rng, n * n, layer.edge_dim);
        let h = nodes.dot(store.value(layer.w_node));
        let g = edges.dot(store.value(layer.w_edge));
        for i in 0..n {
            for j in 0..n {
                let near_kink = h
                    .row(i)
                    .iter()
                    .chain(h.row(j).iter())
                    .chain(g.row(i * n + j).iter())
                    .any(|v| v.abs() < 1e-3);
                if near_kink {
                    continue 'outer;
                }
            }
        }
        return (nodes, edges);
    }
}

#[test]
fn egate_gradients_pass_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for rep in 0..10 {
        let mut store = ParameterStore::new();
        let layer = EgateLayer::new(&mut store, &mut rng, "egate", 3, 2, LEAKY_RELU_SLOPE).unwrap();
        let n = 3;
        let (nodes, edges) = egate_case_off_kink(&mut rng, &store, &layer, n);
        let tape = Tape::new();
        let mask = full_mask(n);
        let err = grad_check(
            &tape,
            &mut store,
            |t, s| {
                let out = layer.forward(
                    t,
                    s,
                    &Value::constant(nodes.clone()),
                    &Value::constant(edges.clone()),
                    &mask,
                )?;
                let y = t.sum_all(&t.tanh(&out));
                // The score coordinates acting on the source-node block shift
                // every logit of a row equally and cancel in the softmax, so
                // their true gradient is exactly zero; a linear term moves
                // those gradients off the relative-error floor without
                // affecting FD accuracy (FD is exact on linear terms).
                let reg = t.scale(&t.sum_all(&Value::param(s, layer.w_score)), 0.01);
                t.add(&y, &reg)
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rep {rep}: FD error {err}");
    }
}

// ---- GRU ---------------------------------------------------------------------

#[test]
fn zero_parameters_halve_the_hidden_state() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cell = GruCell::new(&mut store, &mut rng, "gru", 3, 4).unwrap();
    for id in 0..store.len() {
        let shape = store.value(id).dim();
        store.set_value(id, Array2::zeros(shape)).unwrap();
    }
    let tape = Tape::new();
    let x = Value::constant(array![[1.0, -1.0, 0.5]]);
    let h = Value::constant(array![[0.4, -0.8, 1.2, 0.0]]);
    let out = cell.step(&tape, &store, &x, &h).unwrap();
    // update gate sigmoid(0) = 1/2, candidate tanh(0) = 0 => h' = h/2
    for c in 0..4 {
        assert!((out.data()[[0, c]] - h.data()[[0, c]] / 2.0).abs() < 1e-15);
    }
}

#[test]
fn gru_gradient_through_three_steps_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParameterStore::new();
    let cell = GruCell::new(&mut store, &mut rng, "gru", 2, 3).unwrap();
    let inputs: Vec<Array2<f64>> = (0..3).map(|_| randn(&mut rng, 1, 2)).collect();
    let tape = Tape::new();
    let err = grad_check(
        &tape,
        &mut store,
        |t, s| {
            let mut h = Value::constant(Array2::zeros((1, 3)));
            for x in &inputs {
                h = cell.step(t, s, &Value::constant(x.clone()), &h)?;
            }
            Ok(t.sum_all(&h))
        },
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "FD error {err}");
}

#[test]
fn hidden_norm_stays_bounded_over_long_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParameterStore::new();
    let cell = GruCell::new(&mut store, &mut rng, "gru", 4, 8).unwrap();
    let tape = Tape::new();
    let mut h = Value::constant(Array2::zeros((1, 8)));
    for _ in 0..100 {
        let x = Value::constant(randn(&mut rng, 1, 4));
        h = cell.step(&tape, &store, &x, &h).unwrap();
        assert!(h.data().iter().all(|v| v.is_finite()));
    }
    let norm: f64 = h.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e3, "hidden norm {norm}");
}

// ---- linear ------------------------------------------------------------------

#[test]
fn linear_is_affine() {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let lin = Linear::new(&mut store, &mut rng, "lin", 3, 2, true).unwrap();
    let tape = Tape::new();
    let x = randn(&mut rng, 4, 3);
    let y = lin
        .forward(&tape, &store, &Value::constant(x.clone()))
        .unwrap();
    let expect = x.dot(store.value(lin.w)) + store.value(lin.b.unwrap());
    for (a, b) in y.data().iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

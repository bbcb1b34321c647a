use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soil_pinn::diffnet::layers::{Activation, Dense, EncoderBlock, EncoderStack, TemporalConv};
use soil_pinn::diffnet::{adam_step, AdamConfig, Graph, ParamId, ParamStore, Tensor, Var};

fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks every parameter gradient of `build` against central differences.
///
/// `build` records a forward pass and returns a non-scalar output; the loss
/// is a fixed random projection of it so that no gradient is trivially
/// symmetric.
fn check_param_gradients(store: &mut ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Var) {
    let probe = {
        let mut g = Graph::new();
        let y = build(&mut g, store);
        g.value(y).len()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let weights: Vec<f64> = (0..probe).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |store: &ParamStore| {
        let mut g = Graph::new();
        let y = build(&mut g, store);
        let l = g.weighted_sum(y, weights.clone()).unwrap();
        (g, l)
    };

    let (g, l) = loss(store);
    let grads = g.backward(l).unwrap().for_store(store);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for p in 0..store.len() {
        let id = ParamId(p);
        for i in 0..store.value(id).len() {
            let x = store.value(id).data[i];
            store.value_mut(id).data[i] = x + h;
            let (gp, lp) = loss(store);
            store.value_mut(id).data[i] = x - h;
            let (gm, lm) = loss(store);
            store.value_mut(id).data[i] = x;
            let fd = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
            let an = grads[p].data[i];
            let err = (an - fd).abs() / fd.abs().max(1e-3);
            worst = worst.max(err);
            assert!(err < 1e-4, "{}[{i}]: analytic {an} vs fd {fd}", store.get(id).name);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn dense_gradients_every_activation() {
    for act in [Activation::Linear, Activation::Relu, Activation::Softplus, Activation::Gelu, Activation::Tanh] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 5, 4, act, &mut rng);
        let x = random_tensor(&mut rng, 3, 5);
        check_param_gradients(&mut store, |g, s| {
            let x = g.input(x.clone());
            d.forward(g, s, x).unwrap()
        });
    }
}

#[test]
fn composite_mlp_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let l1 = Dense::new(&mut store, "l1", 6, 20, Activation::Softplus, &mut rng);
    let l2 = Dense::new(&mut store, "l2", 20, 20, Activation::Softplus, &mut rng);
    let l3 = Dense::new(&mut store, "l3", 20, 3, Activation::Linear, &mut rng);
    let x = random_tensor(&mut rng, 4, 6);
    check_param_gradients(&mut store, |g, s| {
        let x = g.input(x.clone());
        let h = l1.forward(g, s, x).unwrap();
        let h = l2.forward(g, s, h).unwrap();
        let y = l3.forward(g, s, h).unwrap();
        // a nonlinear loss head exercises abs, square and clamp
        let a = g.abs(y);
        let b = g.square(y);
        let c = g.clamp(y, -0.3, 10.0);
        let ab = g.add(a, b).unwrap();
        g.add(ab, c).unwrap()
    });
}

#[test]
fn temporal_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let conv = TemporalConv::new(&mut store, "c", 9, 6, 15, 15, &mut rng);
    let x = random_tensor(&mut rng, 2 * 60, 9);
    check_param_gradients(&mut store, |g, s| {
        let x = g.input(x.clone());
        conv.forward(g, s, x, 2).unwrap()
    });
}

#[test]
fn encoder_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let block = EncoderBlock::new(&mut store, "b", 8, 2, 12, &mut rng);
    let x = random_tensor(&mut rng, 2 * 4, 8);
    check_param_gradients(&mut store, |g, s| {
        let x = g.input(x.clone());
        block.forward(g, s, x, 2).unwrap()
    });
}

#[test]
fn encoder_stack_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let stack = EncoderStack::new(&mut store, "e", 4, 8, 2, 4, 16, &mut rng).unwrap();
    let x = random_tensor(&mut rng, 3 * 4, 8);
    check_param_gradients(&mut store, |g, s| {
        let x = g.input(x.clone());
        stack.forward(g, s, x, 3).unwrap()
    });
}

#[test]
fn elementwise_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, 3, 4));
    let mut b = random_tensor(&mut rng, 3, 4);
    b.data.iter_mut().for_each(|v| *v += 3.0);
    let b = store.add("b", b);
    let r = store.add("r", random_tensor(&mut rng, 1, 4));
    check_param_gradients(&mut store, |g, s| {
        let a = g.param(s, a);
        let b = g.param(s, b);
        let r = g.param(s, r);
        let sa = g.sin(a);
        let cb = g.cos(b);
        let t = g.tanh(a);
        let q = g.div(sa, b).unwrap();
        let m = g.mul(cb, t).unwrap();
        let d = g.sub(q, m).unwrap();
        let d = g.mul_row(d, r).unwrap();
        let d = g.add_row(d, r).unwrap();
        let d = g.scale(d, 1.7);
        let d = g.offset(d, -0.2);
        let n = g.layer_norm(d, 1e-5);
        let sl = g.slice_cols(n, 1, 3).unwrap();
        let cat = g.concat_cols(&[sl, d]).unwrap();
        let mask = (0..g.value(cat).len()).map(|i| i % 3 != 0).collect();
        let other = g.scale(cat, -2.0);
        g.select(mask, cat, other).unwrap()
    });
}

#[test]
fn conv_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let (c, f, k, st, steps, batch) = (9, 5, 15, 15, 60, 3);
    let conv = TemporalConv::new(&mut store, "c", c, f, k, st, &mut rng);
    let x = random_tensor(&mut rng, batch * steps, c);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = conv.forward(&mut g, &store, xv, batch).unwrap();
    let out = g.value(y);
    let w = store.value(conv.weight);
    let bias = store.value(conv.bias);
    let l = conv.output_len(steps);
    assert_eq!(out.shape, [batch * l, f]);
    for b in 0..batch {
        for t in 0..l {
            for o in 0..f {
                let mut acc = bias.data[o];
                for tap in 0..k {
                    for ch in 0..c {
                        acc += x.at(b * steps + t * st + tap, ch) * w.at(tap * c + ch, o);
                    }
                }
                assert!((out.at(b * l + t, o) - acc).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn dense_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", 7, 5, Activation::Linear, &mut rng);
    let x = random_tensor(&mut rng, 4, 7);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = d.forward(&mut g, &store, xv).unwrap();
    let (w, b) = (store.value(d.weight), store.value(d.bias));
    for r in 0..4 {
        for o in 0..5 {
            let want: f64 = b.data[o] + (0..7).map(|i| x.at(r, i) * w.at(i, o)).sum::<f64>();
            assert!((g.value(y).at(r, o) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_matches_direct_loop_and_rows_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (blocks, len, width, heads) = (3, 4, 8, 2);
    let q = random_tensor(&mut rng, blocks * len, width);
    let k = random_tensor(&mut rng, blocks * len, width);
    let v = random_tensor(&mut rng, blocks * len, width);
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
    let y = g.attention(qv, kv, vv, blocks, heads).unwrap();
    let probs = g.attention_weights(y).unwrap();
    for row in probs.chunks(len) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let dh = width / heads;
    for b in 0..blocks {
        for h in 0..heads {
            for i in 0..len {
                let scores: Vec<f64> = (0..len)
                    .map(|j| (0..dh).map(|t| q.at(b * len + i, h * dh + t) * k.at(b * len + j, h * dh + t)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                for t in 0..dh {
                    let want: f64 = (0..len).map(|j| scores[j].exp() / z * v.at(b * len + j, h * dh + t)).sum();
                    assert!((g.value(y).at(b * len + i, h * dh + t) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn stop_gradient_blocks_exactly() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::row(vec![0.3, -1.2, 2.0]));
    let mut g = Graph::new();
    let av = g.param(&store, a);
    let blocked = g.stop_gradient(av);
    let sq = g.square(blocked);
    let s = g.sin(av);
    let s = g.stop_gradient(s);
    let both = g.add(sq, s).unwrap();
    let l = g.sum(both);
    let grads = g.backward(l).unwrap().for_store(&store);
    assert!(grads[0].data.iter().all(|&x| x == 0.0));
}

#[test]
fn forward_and_backward_are_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let stack = EncoderStack::new(&mut store, "e", 4, 8, 2, 2, 16, &mut rng).unwrap();
        let x = random_tensor(&mut rng, 2 * 4, 8);
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = stack.forward(&mut g, &store, xv, 2).unwrap();
        let l = g.mean(y);
        let l = g.square(l);
        let grads = g.backward(l).unwrap().for_store(&store);
        (g.value(y).clone(), grads)
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_descends_quadratic_bowl() {
    // reference: plain bias-corrected Adam written out by hand
    let target = [1.5, -2.0, 0.25];
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::row(vec![0.0, 0.0, 0.0]));
    let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
    let mut x = [0.0f64; 3];
    let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
    let mut losses = Vec::new();
    for step in 1..=100 {
        let grad: Vec<f64> = store.value(p).data.iter().zip(target).map(|(a, t)| 2.0 * (a - t)).collect();
        adam_step(&mut store, &[Tensor::row(grad)], &cfg).unwrap();
        for i in 0..3 {
            let gi = 2.0 * (x[i] - target[i]);
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / (1.0 - cfg.beta1.powi(step));
            let vh = v[i] / (1.0 - cfg.beta2.powi(step));
            x[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
        for i in 0..3 {
            assert!((store.value(p).data[i] - x[i]).abs() < 1e-12);
        }
        losses.push(store.value(p).data.iter().zip(target).map(|(a, t)| (a - t).powi(2)).sum::<f64>());
    }
    assert_eq!(store.step, 100);
    assert!(losses[10..40].windows(2).all(|w| w[1] < w[0]));
    assert!(losses[99] < 1e-2 * losses[0]);
}

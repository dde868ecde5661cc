use neural::gradcheck::{check_params, GradCheckConfig};
use neural::nn::{sinusoidal_table, AttentionPool, Decoder, Encoder, TransformerConfig};
use neural::optim::{clip_global_norm, Adam, AdamConfig};
use neural::pca::Pca;
use neural::vq::{lookup, nearest_index, quantize, Codebook, EmaCodebook};
use neural::{Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn small_cfg() -> TransformerConfig {
    TransformerConfig {
        d_model: 8,
        d_ff: 16,
        layers: 2,
        heads: 2,
        dropout: 0.0,
    }
}

#[test]
fn attention_pool_of_single_state_is_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let pool = AttentionPool::new(&mut store, "pool", 8, 2, &mut rng);
    let s = random(1, 8, &mut rng);
    let mut g = Graph::new(&store);
    let sv = g.constant(s.clone());
    let out = pool.forward(&mut g, sv).unwrap();
    let v = pool.attn.v.forward(&mut g, sv).unwrap();
    let expected = pool.attn.o.forward(&mut g, v).unwrap();
    for (a, b) in g.value(out).iter().zip(g.value(expected)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_pool_ignores_duplicated_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let pool = AttentionPool::new(&mut store, "pool", 8, 4, &mut rng);
    let s = random(1, 8, &mut rng);
    let mut g = Graph::new(&store);
    let one = g.constant(s.clone());
    let three = g.constant(Tensor::from_rows(&[s.data().to_vec(), s.data().to_vec(), s.data().to_vec()]).unwrap());
    let a = pool.forward(&mut g, one).unwrap();
    let b = pool.forward(&mut g, three).unwrap();
    for (x, y) in g.value(a).iter().zip(g.value(b)) {
        assert!((x - y).abs() < 1e-12);
    }
}

/// Single-head attention pooling written out with plain loops.
#[test]
fn attention_pool_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 6;
    let t = 5;
    let mut store = ParamStore::<f64>::new();
    let pool = AttentionPool::new(&mut store, "pool", d, 1, &mut rng);
    let s = random(t, d, &mut rng);

    let lin = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>| -> Vec<f64> {
        (0..d)
            .map(|j| (0..d).map(|i| x[i] * w.data()[i * d + j]).sum::<f64>() + b.data()[j])
            .collect()
    };
    let p = |id| store.get(id);
    let a = &pool.attn;
    let q = lin(p(pool.query).data(), p(a.q.w), p(a.q.b));
    let keys: Vec<Vec<f64>> = (0..t).map(|r| lin(s.row(r), p(a.k.w), p(a.k.b))).collect();
    let vals: Vec<Vec<f64>> = (0..t).map(|r| lin(s.row(r), p(a.v.w), p(a.v.b))).collect();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
    let mut ctx = vec![0.0; d];
    for (sc, v) in scores.iter().zip(&vals) {
        let w = (sc - m).exp() / z;
        for j in 0..d {
            ctx[j] += w * v[j];
        }
    }
    let expected = lin(&ctx, p(a.o.w), p(a.o.b));

    let mut g = Graph::new(&store);
    let sv = g.constant(s);
    let out = pool.forward(&mut g, sv).unwrap();
    for (x, y) in g.value(out).iter().zip(&expected) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn decoder_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, "dec", &small_cfg(), &mut rng);
    let memory = random(3, 8, &mut rng);
    let x = random(6, 8, &mut rng);
    let run = |x: &Tensor<f64>| {
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let m = g.constant(memory.clone());
        let out = dec.forward(&mut g, xv, m).unwrap();
        g.to_tensor(out)
    };
    let base = run(&x);
    for changed in 1..6 {
        let mut x2 = x.clone();
        for v in &mut x2.data_mut()[changed * 8..] {
            *v += 0.7;
        }
        let out = run(&x2);
        for row in 0..changed {
            assert_eq!(base.row(row), out.row(row), "row {row} saw position {changed}");
        }
        assert_ne!(base.row(changed), out.row(changed));
    }
}

#[test]
fn incremental_decoding_matches_full_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, "dec", &small_cfg(), &mut rng);
    let memory = random(4, 8, &mut rng);
    let x = random(5, 8, &mut rng);

    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let m = g.constant(memory.clone());
    let full = dec.forward(&mut g, xv, m).unwrap();
    let full = g.to_tensor(full);

    let mut cache = dec.start_cache(&store, &memory).unwrap();
    for t in 0..5 {
        let mut g = Graph::new(&store);
        let row = g.constant(Tensor::matrix(1, 8, x.row(t).to_vec()).unwrap());
        let out = dec.step(&mut g, row, &mut cache).unwrap();
        for (a, b) in g.value(out).iter().zip(full.row(t)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert_eq!(cache.len(), 5);
}

#[test]
fn encoder_decoder_parameters_pass_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg();
    let enc = Encoder::new(&mut store, "enc", &cfg, &mut rng);
    let dec = Decoder::new(&mut store, "dec", &cfg, &mut rng);
    let pool = AttentionPool::new(&mut store, "pool", 8, 2, &mut rng);
    let out = store.add_uniform("out.w", 8, 7, 8, &mut rng);
    let src = random(4, 8, &mut rng);
    let tgt = random(5, 8, &mut rng);
    let report = check_params(
        &store,
        |g| {
            let s = g.constant(src.clone());
            let mem = enc.forward(g, s)?;
            let p = pool.forward(g, mem)?;
            let t = g.constant(tgt.clone());
            let t = g.add_row(t, p)?;
            let h = dec.forward(g, t, mem)?;
            let w = g.param(out);
            let logits = g.matmul(h, w)?;
            g.cross_entropy(logits, &[1, 6, 0, 3, 3])
        },
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{} {}", report.max_rel_error, report.worst);
}

#[test]
fn sinusoidal_table_first_row() {
    let t = sinusoidal_table::<f64>(4, 6);
    assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert!((t.row(1)[0] - 1f64.sin()).abs() < 1e-15);
}

#[test]
fn vq_lookup_examples() {
    let cb = Tensor::<f64>::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let r = lookup(&cb, &[0.9, 0.8]).unwrap();
    assert_eq!(r.index, 1);
    assert_eq!(r.quantized, vec![1.0, 1.0]);
    let tie = lookup(&cb, &[0.5, 0.5]).unwrap();
    assert_eq!(tie.index, 0);
    assert!((r.codebook_loss - 0.05).abs() < 1e-12);
    assert_eq!(r.codebook_loss, r.commitment_loss);
}

#[test]
fn vq_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (k, d) = (64, 128);
    let cb = random(k, d, &mut rng);
    for _ in 0..1000 {
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut best = (f64::INFINITY, 0);
        for i in 0..k {
            let dist: f64 = cb.row(i).iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        assert_eq!(nearest_index(cb.data(), d, &z), best.1);
    }
}

#[test]
fn straight_through_passes_decoder_gradient_to_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let cb = Codebook::new(&mut store, "codebook", 4, 3, &mut rng);
    let mut g = Graph::new(&store);
    let z = g.input(random(1, 3, &mut rng));
    let c = g.param(cb.entries);
    let q = quantize(&mut g, c, z).unwrap();
    let w = g.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
    let y = g.mul(q.straight_through, w).unwrap();
    let loss = g.sum(y).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(z).unwrap(), &[1.0, -2.0, 0.5]);
    // the forward value is the selected entry
    for (a, b) in g.value(q.straight_through).iter().zip(store.get(cb.entries).row(q.index)) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn ema_moves_used_entry_toward_assignments() {
    let mut cb = Tensor::<f64>::matrix(2, 2, vec![0.0, 0.0, 5.0, 5.0]).unwrap();
    let mut ema = EmaCodebook::new(&cb, 0.5);
    ema.update(&mut cb, &[(0, vec![1.0, 1.0]), (0, vec![1.0, 1.0])]);
    assert!(cb.row(0)[0] > 0.0 && cb.row(0)[0] <= 1.0);
    assert!(cb.row(1).iter().all(|v| v.is_finite()));
}

#[test]
fn pca_recovers_a_line() {
    let rows: Vec<Vec<f64>> = (0..50).map(|i| {
        let t = i as f64 / 10.0;
        vec![1.0 + 3.0 * t, -2.0 + 4.0 * t]
    }).collect();
    let pca = Pca::fit(&rows, 2).unwrap();
    let c = &pca.components[0];
    assert!((c[0].abs() - 0.6).abs() < 1e-9 && (c[1].abs() - 0.8).abs() < 1e-9);
    assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
}

#[test]
fn pca_isotropic_gaussian_spreads_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 5;
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let pca = Pca::fit(&rows, d).unwrap();
    for r in &pca.explained_variance_ratio {
        assert!((r - 0.2).abs() < 0.03, "{r}");
    }
    for w in pca.explained_variance.windows(2) {
        assert!(w[0] >= w[1]);
    }
    for (i, a) in pca.components.iter().enumerate() {
        for (j, b) in pca.components.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_full_rank_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
    let pca = Pca::fit(&rows, 4).unwrap();
    for r in &rows {
        let back = pca.reconstruct(&pca.project(r));
        for (a, b) in back.iter().zip(r) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn pca_rejects_degenerate_input() {
    assert!(Pca::fit(&[vec![1.0, 2.0]], 1).is_err());
    assert!(Pca::fit(&[vec![1.0, 2.0], vec![2.0, 3.0]], 3).is_err());
}

#[test]
fn adam_is_deterministic_and_respects_frozen() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f32>::new();
        store.add_uniform("a", 2, 3, 2, &mut rng);
        store.add_uniform("b", 1, 3, 2, &mut rng);
        let before_b = store.get(store.id("b").unwrap()).clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        let grads = vec![vec![0.5f32; 6], vec![1.0f32; 3]];
        for _ in 0..3 {
            adam.step(&mut store, &grads, 0.01, &[false, true]);
        }
        assert_eq!(store.get(store.id("b").unwrap()), &before_b);
        assert_eq!(adam.steps(), 3);
        store.get(store.id("a").unwrap()).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut store = ParamStore::<f64>::new();
    store.add("p", Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
    let mut adam = Adam::new(&store, AdamConfig::default());
    adam.step(&mut store, &[vec![3.0, -0.2]], 0.1, &[]);
    let p = store.get(store.id("p").unwrap()).data();
    assert!((p[0] - 0.9).abs() < 1e-9 && (p[1] - 1.1).abs() < 1e-9);
}

#[test]
fn global_norm_clipping() {
    let mut g = vec![vec![3.0f64], vec![4.0]];
    let n = clip_global_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
    let mut small = vec![vec![0.1f64]];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0][0], 0.1);
}

proptest! {
    #[test]
    fn nearest_index_is_a_minimizer(seed in 0u64..500, k in 1usize..12, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cb = random(k, d, &mut rng);
        let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let i = nearest_index(cb.data(), d, &z);
        let dist = |r: &[f64]| r.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = dist(cb.row(i));
        for j in 0..k {
            prop_assert!(best <= dist(cb.row(j)));
            if j < i { prop_assert!(dist(cb.row(j)) > best); }
        }
    }
}

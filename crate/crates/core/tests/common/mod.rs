//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use gdgm::attention::{AttentionConfig, HeteroAttention, Neighborhoods};
use gdgm::autodiff::{DenseArray, Elementwise, ParameterStore, Segments, SparseMatrix, Tape, Var};
use gdgm::encoder::{integrate, Encoder, EncoderConfig, ObservationSequence, Solver};
use gdgm::graph::{MultiRelationalGraph, Relation, RelationKind, TransactionRecord};
use gdgm::trainer::{cross_entropy, GdgmModel, Normalizer, Prepared, RunConfig, Target};
use gdgm::wavelet::apply_beta_kernel;
use gdgm::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
/// Entries whose analytic and numeric values both fall below this are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseArray {
    DenseArray::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Gradient check of `f` with respect to all `inputs`, through the scalar
/// `sum(f(inputs) * R)` for a fixed random `R`. Returns the worst entry's
/// relative error.
pub fn check_op<F>(inputs: &[DenseArray], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let probe = {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vs).expect("forward");
        let shape = t.value(out).shape().to_vec();
        random(&mut rng(seed), shape[0], shape[1], 1.0)
    };
    let loss = |xs: &[DenseArray], backward: bool| -> (f64, Vec<DenseArray>) {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vs).expect("forward");
        let r = t.constant(probe.clone());
        let prod = t.mul(out, r).expect("mul");
        let l = t.sum(prod);
        let v = t.value(l).item();
        if !backward {
            return (v, Vec::new());
        }
        t.backward(l).expect("backward");
        let grads = vs
            .iter()
            .zip(xs)
            .map(|(&x, a)| t.grad(x).cloned().unwrap_or_else(|| DenseArray::zeros(a.rows(), a.cols())))
            .collect();
        (v, grads)
    };
    let (_, grads) = loss(inputs, true);
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        for j in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let num = (loss(&plus, false).0 - loss(&minus, false).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[k].data()[j], num));
        }
    }
    worst
}

/// Gradient check of a scalar `f(store)` with respect to every trainable
/// parameter in `store`.
pub fn check_store<F>(store: &ParameterStore, f: F) -> f64
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var>,
{
    let value = |s: &ParameterStore| {
        let mut t = Tape::new();
        let l = f(&mut t, s).expect("forward");
        t.value(l).item()
    };
    let mut analytic = store.clone();
    analytic.zero_grad();
    {
        let mut t = Tape::new();
        let l = f(&mut t, &analytic).expect("forward");
        t.backward_into(l, &mut analytic).expect("backward");
    }
    let mut worst: f64 = 0.0;
    let names: Vec<String> = store.iter().filter(|(_, p)| p.trainable).map(|(n, _)| n.to_string()).collect();
    for name in names {
        let len = store.value(&name).unwrap().len();
        for j in 0..len {
            let mut plus = store.clone();
            plus.value_mut(&name).unwrap().data_mut()[j] += FD_STEP;
            let mut minus = store.clone();
            minus.value_mut(&name).unwrap().data_mut()[j] -= FD_STEP;
            let num = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.grad(&name).unwrap().data()[j], num));
        }
    }
    worst
}

/// Inputs bounded away from zero so kinked primitives are differentiable.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseArray {
    DenseArray::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.random_range(0.2..1.5);
                if rng.random_bool(0.5) { m } else { -m }
            })
            .collect(),
    )
}

fn segments() -> Arc<Segments> {
    let mut s = Segments::new();
    s.push(0, [1, 2, 3]);
    s.push(1, [0]);
    s.push(2, []);
    s.push(3, [0, 1, 2, 3, 4]);
    s.push(4, [2, 4]);
    Arc::new(s)
}

fn laplacian() -> Arc<SparseMatrix> {
    Arc::new(gdgm::wavelet::laplacian_from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (1, 4)]))
}

/// Finite-difference check of every differentiable primitive.
pub fn primitive_suite() -> Vec<(&'static str, f64)> {
    let mut r = rng(11);
    let a = random(&mut r, 3, 4, 1.0);
    let b = random(&mut r, 4, 2, 1.0);
    let c = random(&mut r, 3, 4, 1.0);
    let row = random(&mut r, 1, 4, 1.0);
    let col = random(&mut r, 3, 1, 1.0);
    let pos = DenseArray::from_vec(3, 4, (0..12).map(|_| r.random_range(0.2..2.0)).collect());
    let kinked = away_from_zero(&mut r, 3, 4);
    let five = random(&mut r, 5, 3, 1.0);
    let sc = random(&mut r, 5, 1, 1.0);
    let sm = random(&mut r, 5, 1, 1.0);
    let h = random(&mut r, 2, 3, 0.5);
    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<DenseArray>, f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>| {
        out.push((name, check_op(&inputs, 5, f)));
    };
    run("matmul", vec![a.clone(), b.clone()], &|t, v| t.matmul(v[0], v[1]));
    run("add", vec![a.clone(), c.clone()], &|t, v| t.add(v[0], v[1]));
    run("add_row_broadcast", vec![a.clone(), row.clone()], &|t, v| t.add(v[0], v[1]));
    run("add_col_broadcast", vec![a.clone(), col.clone()], &|t, v| t.add(v[0], v[1]));
    run("sub", vec![a.clone(), row.clone()], &|t, v| t.sub(v[0], v[1]));
    run("mul", vec![a.clone(), c.clone()], &|t, v| t.mul(v[0], v[1]));
    run("mul_col_broadcast", vec![a.clone(), col.clone()], &|t, v| t.mul(v[0], v[1]));
    run("affine", vec![a.clone()], &|t, v| Ok(t.affine(v[0], -1.5, 0.3)));
    run("scale", vec![a.clone()], &|t, v| Ok(t.scale(v[0], 2.5)));
    run("sigmoid", vec![a.clone()], &|t, v| Ok(t.sigmoid(v[0])));
    run("tanh", vec![a.clone()], &|t, v| Ok(t.tanh(v[0])));
    run("relu", vec![kinked.clone()], &|t, v| Ok(t.relu(v[0])));
    run("leaky_relu", vec![kinked.clone()], &|t, v| Ok(t.leaky_relu(v[0], 0.2)));
    run("log", vec![pos.clone()], &|t, v| Ok(t.log(v[0], 1e-12)));
    run("concat_cols", vec![a.clone(), col.clone()], &|t, v| t.concat(&[v[0], v[1]], 1));
    run("concat_rows", vec![a.clone(), row.clone()], &|t, v| t.concat(&[v[0], v[1]], 0));
    run("slice_rows", vec![a.clone()], &|t, v| t.slice(v[0], 0, 1, 3));
    run("slice_cols", vec![a.clone()], &|t, v| t.slice(v[0], 1, 1, 3));
    run("sum", vec![a.clone()], &|t, v| Ok(t.sum(v[0])));
    run("mean", vec![a.clone()], &|t, v| t.mean(v[0]));
    run("sum_axis0", vec![a.clone()], &|t, v| t.sum_axis(v[0], 0));
    run("sum_axis1", vec![a.clone()], &|t, v| t.sum_axis(v[0], 1));
    run("softmax_axis0", vec![a.clone()], &|t, v| t.softmax(v[0], 0));
    run("softmax_axis1", vec![a.clone()], &|t, v| t.softmax(v[0], 1));
    run("gather_rows", vec![a.clone()], &|t, v| t.gather_rows(v[0], Arc::new(vec![2, 0, 2, 1])));
    run("sparse_mul", vec![five.clone()], &|t, v| t.sparse_mul(laplacian(), v[0]));
    run("segment_mean", vec![five.clone()], &|t, v| t.segment_mean(v[0], segments()));
    run("segment_attention", vec![sc.clone(), sm.clone(), five.clone()], &|t, v| {
        t.segment_attention(v[0], v[1], v[2], segments(), 0.2)
    });
    run("elementwise_mul", vec![a.clone(), c.clone()], &|t, v| t.elementwise(Elementwise::Mul, &[v[0], v[1]]));
    run("beta_kernel", vec![five.clone()], &|t, v| apply_beta_kernel(t, &laplacian(), v[0], 1, 3));
    run("rk4_integrate", vec![h.clone()], &|t, v| {
        let w = t.constant(DenseArray::from_rows(&[vec![0.3, -0.4, 0.1], vec![0.2, 0.1, -0.5], vec![-0.3, 0.2, 0.2]]));
        integrate(t, v[0], &[0.7, 0.2], Solver::Rk4, 3, |t: &mut Tape, x| {
            let y = t.matmul(x, w)?;
            Ok(t.tanh(y))
        })
    });
    run("euler_integrate", vec![h.clone()], &|t, v| {
        integrate(t, v[0], &[0.5, 1.0], Solver::Euler, 4, |t: &mut Tape, x| Ok(t.sigmoid(x)))
    });
    out
}

/// Encoder and GRU parameters checked through one short sequence batch.
pub fn encoder_gradient_error() -> f64 {
    let enc = Encoder::new(EncoderConfig { steps: 2, ..EncoderConfig::new(3, 4) }).unwrap();
    let mut store = ParameterStore::new();
    enc.init_params(&mut store, &mut rng(3)).unwrap();
    let mut r = rng(4);
    let seqs = vec![
        ObservationSequence::new(vec![0.0, 0.4, 1.1, 1.5, 2.0], (0..5).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect())
            .unwrap(),
        ObservationSequence::new(vec![0.3, 0.9], (0..2).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect()).unwrap(),
    ];
    let probe = random(&mut r, 2, 4, 1.0);
    check_store(&store, |t, s| {
        let h = enc.encode_batch_var(t, s, &seqs, gdgm::encoder::EncoderKind::OdeRnn)?;
        let p = t.constant(probe.clone());
        let m = t.mul(h, p)?;
        Ok(t.sum(m))
    })
}

/// Attention stack parameters checked on a small multigraph.
pub fn attention_gradient_error() -> f64 {
    let g = random_multigraph(8, 3, 0.35, &mut rng(21));
    let cfg = AttentionConfig { hidden: 3, q_dim: 4, ..AttentionConfig::new(3, 3) };
    let att = HeteroAttention::new(cfg).unwrap();
    let mut store = ParameterStore::new();
    att.init_params(&mut store, &mut rng(22)).unwrap();
    let labels: Vec<u8> = (0..8).map(|i| u8::from(i % 3 == 0)).collect();
    let hoods = Neighborhoods::new(&g, &labels, 2).unwrap();
    let x = random(&mut rng(23), 8, 3, 1.0);
    let probe = random(&mut rng(24), 8, 3 * 7, 1.0);
    check_store(&store, |t, s| {
        let xv = t.constant(x.clone());
        let out = att.forward(t, s, xv, &hoods)?;
        let p = t.constant(probe.clone());
        let m = t.mul(out.final_embedding, p)?;
        Ok(t.sum(m))
    })
}

/// Random multigraph with `r` relations; each pair joins each relation
/// with probability `p`.
pub fn random_multigraph(n: usize, r: usize, p: f64, rng: &mut ChaCha8Rng) -> MultiRelationalGraph {
    let kinds = [RelationKind::SameAccount, RelationKind::SameInstrument, RelationKind::PriceAdjacent];
    let relations = (0..r)
        .map(|k| {
            let mut e = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(p) {
                        e.push((u, v));
                    }
                }
            }
            Relation::from_edges(kinds[k % 3], n, e)
        })
        .collect();
    MultiRelationalGraph {
        n,
        relations,
        features: DenseArray::zeros(n, 1),
        labels: vec![None; n],
        timestamps: (0..n).map(|i| i as f64).collect(),
        txn_ids: (0..n as u64).collect(),
        train_mask: vec![false; n],
        valid_mask: vec![false; n],
        test_mask: vec![false; n],
    }
}

/// Ten transactions from three accounts on two instruments.
pub fn micro_records() -> Vec<TransactionRecord> {
    let mut r = rng(31);
    let accounts = ["a", "b", "c"];
    (0..10)
        .map(|i| {
            let mut features: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            features[0] = 100.0 + r.random_range(-0.3..0.3);
            TransactionRecord {
                txn_id: i as u64,
                timestamp: 10.0 * i as f64 + r.random_range(0.0..5.0),
                account: accounts[i % 3].to_string(),
                instrument: if i % 2 == 0 { "x" } else { "y" }.to_string(),
                features,
                label: Some(u8::from(i % 4 == 1)),
            }
        })
        .collect()
}

pub fn micro_config() -> RunConfig {
    RunConfig {
        h_dim: 3,
        solver_steps: 2,
        max_len: 4,
        att_hidden: 3,
        q_dim: 3,
        cls_hidden: 3,
        wavelet_hidden: 3,
        wavelet_post_hidden: 2,
        ..RunConfig::default()
    }
}

/// Full-pipeline gradient check: encoder, attention and classifier
/// parameters through the cross-entropy loss on the micro instance.
pub fn end_to_end_gradient_error() -> f64 {
    let recs = micro_records();
    let cfg = micro_config();
    let x = DenseArray::from_vec(10, 4, recs.iter().flat_map(|r| r.features.clone()).collect());
    let norm = Normalizer::fit(&x, &(0..10).collect::<Vec<_>>()).unwrap();
    let data = Prepared::new(&recs, &cfg, &norm).unwrap();
    let model = GdgmModel::new(&cfg, 4, data.graph.num_relations(), 0.1).unwrap();
    let mut store = ParameterStore::new();
    model.init_params(&mut store, &mut rng(32)).unwrap();
    store.set_trainable("bwgnn.", false);
    let grouping: Vec<u8> = (0..10).map(|i| u8::from(i % 3 == 1)).collect();
    let targets: Vec<Target> = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| Target { node: i, class: r.label.unwrap(), weight: if i % 2 == 0 { 1.0 } else { 0.5 } })
        .collect();
    let known = vec![None; 10];
    check_store(&store, |t, s| {
        let f = model.forward(t, s, &data, &known, Some((&grouping, None)))?;
        cross_entropy(t, f.probs, &targets)
    })
}

/// Max-abs deviation of `sum_i W_{i,C-i}` from `((C+1)/2) I`.
pub fn wavelet_identity_error(n: usize, order: usize, p: f64, seed: u64) -> f64 {
    let g = random_multigraph(n, 3, p, &mut rng(seed));
    let lap = gdgm::wavelet::normalized_laplacian(&g);
    let mut total = DenseArray::zeros(n, n);
    for i in 0..=order {
        total.add_assign(&gdgm::wavelet::beta_kernel(&lap, i, order).unwrap());
    }
    let target = (order as f64 + 1.0) / 2.0;
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let want = if r == c { target } else { 0.0 };
            worst = worst.max((total.get(r, c) - want).abs());
        }
    }
    worst
}

pub fn attention_model(d_in: usize, seed: u64) -> (HeteroAttention, ParameterStore) {
    let cfg = AttentionConfig { hidden: 6, q_dim: 8, ..AttentionConfig::new(d_in, 3) };
    let att = HeteroAttention::new(cfg).unwrap();
    let mut store = ParameterStore::new();
    att.init_params(&mut store, &mut rng(seed)).unwrap();
    (att, store)
}

/// Worst deviation from 1 over all intra-attention segments (every relation
/// and group, layer 0) and all inter-attention rows (every layer).
pub fn simplex_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let g = random_multigraph(n, 3, 0.2, &mut r);
    let (att, store) = attention_model(4, seed + 1);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
    let hoods = Neighborhoods::new(&g, &labels, 2).unwrap();
    let x = random(&mut r, n, 4, 1.0);
    let mut worst: f64 = 0.0;
    for rel in 0..3 {
        let mut segs = vec![hoods.all[rel].clone()];
        segs.extend(hoods.grouped[rel].iter().cloned());
        for seg in segs {
            for s in 0..seg.len() {
                if seg.members(s).is_empty() {
                    continue;
                }
                let w = att.intra_weights(&store, &x, 0, rel, &seg, s).unwrap();
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    let mut t = Tape::new();
    let xv = t.constant(x);
    let out = att.forward(&mut t, &store, xv, &hoods).unwrap();
    for a in out.inter_alpha {
        let a = t.value(a);
        for i in 0..a.rows() {
            worst = worst.max((a.row_slice(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

/// Whether permuting nodes permutes the full-stack output bit for bit.
pub fn equivariance_trial(n: usize, seed: u64) -> bool {
    let mut r = rng(seed);
    let g = random_multigraph(n, 3, 0.25, &mut r);
    let (att, store) = attention_model(5, seed + 7);
    let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.3))).collect();
    let x = random(&mut r, n, 5, 1.0);
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut r);
    let mut inv = vec![0; n];
    for (v, &p) in perm.iter().enumerate() {
        inv[p] = v;
    }
    let run = |g: &MultiRelationalGraph, labels: &[u8], x: &DenseArray| {
        let hoods = Neighborhoods::new(g, labels, 2).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let out = att.forward(&mut t, &store, xv, &hoods).unwrap();
        t.value(out.final_embedding).clone()
    };
    let base = run(&g, &labels, &x);
    let pg = g.permute(&perm);
    let plabels: Vec<u8> = inv.iter().map(|&v| labels[v]).collect();
    let px = x.gather_rows(&inv);
    let moved = run(&pg, &plabels, &px);
    (0..n).all(|v| base.row_slice(v) == moved.row_slice(perm[v]))
}

//! Criterion-level checks shared by the oracle tests and the acceptance
//! harness. Each returns its worst observed error.

use cvtgad::cvt::{
    attention_matrix, cross_view_attention, self_attention, AttentionConfig, CrossedMatrix, CvtConfig, Normalization,
    ViewBlock,
};
use cvtgad::encoders::{gcn_layer, gcn_propagation, gin_layer, gin_propagation};
use cvtgad::graph::{Dataset, Graph, GraphBatch};
use cvtgad::model::ModelConfig;
use cvtgad::objective::{graph_loss, node_loss, total_loss, ScoreStats};
use cvtgad::params::{glorot, Mlp, ParamStore};
use cvtgad::tensor::{Tape, Tensor};
use cvtgad::train::score_batch;
use cvtgad::views::{build_views, make_view_pair, view_dims, ViewConfig};
use cvtgad::Cvtgad;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

fn mlp_layers(store: &ParamStore, mlp: &Mlp) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    mlp.layers
        .iter()
        .map(|l| (store.get(l.weight).to_rows(), store.get(l.bias).data().to_vec()))
        .collect()
}

fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for t in store.values_mut() {
        for x in t.data_mut() {
            *x += rng.gen_range(-scale..scale);
        }
    }
}

/// GIN layer against `MLP((I + A)·H)` on every connected graph with up to
/// `max_n` nodes.
pub fn gin_oracle(max_n: usize) -> (f64, usize) {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut r, "gin", 3, 5, 4, 2, true).unwrap();
    jitter(&mut store, &mut r, 0.3);
    let layers = mlp_layers(&store, &mlp);
    let (mut worst, mut count) = (0.0f64, 0);
    for n in 1..=max_n {
        for edges in connected_graphs(n) {
            let h = random_rows(&mut r, n, 3);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let x = tape.constant(to_tensor(&h));
            let out = gin_layer(&mut tape, &bound, x, &gin_propagation(n, &edges), &mlp).unwrap();
            let mut a = dense_adjacency(n, &edges);
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += 1.0;
            }
            let want = dense_mlp(&dense_matmul(&a, &h), &layers, |_| true);
            worst = worst.max(max_abs(&tape.value(out).to_rows(), &want));
            count += 1;
        }
    }
    (worst, count)
}

/// GCN layer against `ReLU(D̂^{-1/2}(A + I)D̂^{-1/2}·H·W)` on every connected
/// graph with up to `max_n` nodes.
pub fn gcn_oracle(max_n: usize) -> (f64, usize) {
    let mut r = rng(12);
    let mut store = ParamStore::new();
    let w = store.add("w", glorot(&mut r, 3, 4));
    let wd = store.get(w).to_rows();
    let (mut worst, mut count) = (0.0f64, 0);
    for n in 1..=max_n {
        for edges in connected_graphs(n) {
            let h = random_rows(&mut r, n, 3);
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let x = tape.constant(to_tensor(&h));
            let out = gcn_layer(&mut tape, &bound, x, &gcn_propagation(n, &edges), w).unwrap();
            let mut a = dense_adjacency(n, &edges);
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += 1.0;
            }
            let d: Vec<f64> = a.iter().map(|row| row.iter().sum::<f64>()).collect();
            let norm: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| a[i][j] / (d[i].sqrt() * d[j].sqrt())).collect())
                .collect();
            let mut want = dense_matmul(&dense_matmul(&norm, &h), &wd);
            for v in want.iter_mut().flatten() {
                *v = v.max(0.0);
            }
            worst = worst.max(max_abs(&tape.value(out).to_rows(), &want));
            count += 1;
        }
    }
    (worst, count)
}

/// Node- and graph-level losses against double-loop evaluation on
/// `instances` random batches.
pub fn loss_oracle(instances: usize) -> f64 {
    let mut r = rng(13);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = r.gen_range(2..=5);
        let sizes: Vec<usize> = (0..m).map(|_| r.gen_range(1..=5)).collect();
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let d = r.gen_range(2..=6);
        let tau = r.gen_range(0.1..1.0);
        let (hf, hs) = (random_rows(&mut r, total, d), random_rows(&mut r, total, d));
        let (gf, gs) = (random_rows(&mut r, m, d), random_rows(&mut r, m, d));

        let mut tape = Tape::new();
        let (a, b) = (tape.constant(to_tensor(&hf)), tape.constant(to_tensor(&hs)));
        let nl = node_loss(&mut tape, a, b, &offsets, tau).unwrap();
        let (c, e) = (tape.constant(to_tensor(&gf)), tape.constant(to_tensor(&gs)));
        let gl = graph_loss(&mut tape, c, e, tau).unwrap();

        let want_node = brute_node_loss(&hf, &hs, &offsets, tau);
        let want_graph = brute_rows(&gf, &gs, tau);
        for (x, y) in tape.value(nl.per_graph).data().iter().zip(&want_node) {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in tape.value(gl.per_graph).data().iter().zip(&want_graph) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// A dataset of `sizes.len()` random connected graphs with 3 attributes.
pub fn random_dataset(r: &mut ChaCha8Rng, sizes: &[usize]) -> Dataset {
    let graphs: Vec<Graph> = sizes
        .iter()
        .map(|&n| {
            let extra = r.gen_range(0..=n);
            random_graph(r, n, extra, 3)
        })
        .collect();
    Dataset::new("random", graphs)
}

/// Worst relative error between autodiff and central differences of the
/// weighted total loss over every model parameter.
pub fn gradient_check(seed: u64) -> (f64, usize, String) {
    let mut r = rng(seed);
    let sizes: Vec<usize> = (0..3).map(|_| r.gen_range(2..=5)).collect();
    let ds = random_dataset(&mut r, &sizes);
    let vcfg = ViewConfig::default();
    let views = build_views(&ds, &vcfg).unwrap();
    let (df, dsd) = view_dims(&ds, &vcfg);
    let mut model = Cvtgad::new(ModelConfig::default(), df, dsd, seed).unwrap();
    jitter(&mut model.store, &mut r, 0.2);
    let batch = GraphBatch::from_indices(&ds, &[0, 1, 2]).unwrap();
    let (l1, l2) = (0.7, 1.3);

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape, true);
    let out = model.forward(&mut tape, &bound, &batch, &views).unwrap();
    let loss = total_loss(&mut tape, out.node.mean, out.graph.mean, l1, l2).unwrap();
    tape.backward(loss).unwrap();
    let analytic = model.store.grads(&tape, &bound);

    let mut params = model.store.values().to_vec();
    let scalars = model.store.num_scalars();
    let mut probe = model.clone();
    let (worst, at) = fd_check(&mut params, &analytic, 1e-4, 1e-6, |p| {
        probe.store.values_mut().clone_from_slice(p);
        let mut tape = Tape::new();
        let bound = probe.store.bind(&mut tape, false);
        let out = probe.forward(&mut tape, &bound, &batch, &views).unwrap();
        let loss = total_loss(&mut tape, out.node.mean, out.graph.mean, l1, l2).unwrap();
        tape.value(loss).item()
    });
    (worst, scalars, at)
}

/// Results of the randomized attention checks.
#[derive(Debug, Default)]
pub struct AttentionReport {
    pub softmax_row_err: f64,
    pub l1_col_err: f64,
    pub self_attention_mismatches: usize,
    pub swap_mismatches: usize,
    pub cases: usize,
}

pub fn attention_invariants(cases: usize) -> AttentionReport {
    let mut r = rng(14);
    let mut rep = AttentionReport::default();
    for _ in 0..cases {
        let m = r.gen_range(1..=8);
        let d_k = r.gen_range(1..=6);
        let spread = r.gen_range(0.1..5.0);
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&random_rows(&mut r, m, d_k)).unwrap());
        let k = tape.constant(Tensor::from_rows(&random_rows(&mut r, m, d_k)).unwrap());
        let q = tape.scale(q, spread);
        let soft = attention_matrix(&mut tape, q, k, d_k, Normalization::SoftmaxOnly).unwrap();
        let both = attention_matrix(&mut tape, q, k, d_k, Normalization::SoftmaxL1).unwrap();
        let soft = tape.value(soft);
        for i in 0..m {
            let s: f64 = soft.row(i).iter().sum();
            rep.softmax_row_err = rep.softmax_row_err.max((s - 1.0).abs());
        }
        let both = tape.value(both);
        for j in 0..m {
            let s: f64 = (0..m).map(|i| both.get(i, j)).sum();
            rep.l1_col_err = rep.l1_col_err.max((s - 1.0).abs());
        }

        let cfg = CvtConfig {
            attention: AttentionConfig {
                d_k,
                ..AttentionConfig::default()
            },
            ..CvtConfig::default()
        };
        let mut store = ParamStore::new();
        let bf = ViewBlock::new(&mut store, &mut r, "f", d_k, &cfg).unwrap();
        let bs = ViewBlock::new(&mut store, &mut r, "s", d_k, &cfg).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let zf = tape.constant(Tensor::from_rows(&random_rows(&mut r, m, d_k)).unwrap());
        let zs = tape.constant(Tensor::from_rows(&random_rows(&mut r, m, d_k)).unwrap());

        let plain = AttentionConfig {
            crossed_matrix: CrossedMatrix::None,
            normalization: Normalization::SoftmaxOnly,
            d_k,
            ..AttentionConfig::default()
        };
        let (of, os) = cross_view_attention(&mut tape, &bound, zf, zs, &bf, &bs, &plain).unwrap();
        let sf = self_attention(&mut tape, &bound, zf, &bf, d_k).unwrap();
        let ss = self_attention(&mut tape, &bound, zs, &bs, d_k).unwrap();
        if tape.value(of) != tape.value(sf) || tape.value(os) != tape.value(ss) {
            rep.self_attention_mismatches += 1;
        }

        let crossed = AttentionConfig {
            d_k,
            ..AttentionConfig::default()
        };
        let (af, as_) = cross_view_attention(&mut tape, &bound, zf, zs, &bf, &bs, &crossed).unwrap();
        let (bf2, bs2) = cross_view_attention(&mut tape, &bound, zs, zf, &bs, &bf, &crossed).unwrap();
        if tape.value(af) != tape.value(bs2) || tape.value(as_) != tape.value(bf2) {
            rep.swap_mismatches += 1;
        }
        rep.cases += 1;
    }
    rep
}

/// Largest change of a test graph's anomaly score when its nodes are
/// relabelled, scoring every test graph in one fixed batch.
pub fn permutation_check(model: &Cvtgad, stats: &ScoreStats, ds: &Dataset, test: &[usize], vcfg: &ViewConfig) -> f64 {
    let mut r = rng(15);
    let views = build_views(ds, vcfg).unwrap();
    let batch = GraphBatch::from_indices(ds, test).unwrap();
    let base = score_batch(model, stats, &batch, &views).unwrap();
    let mut worst = 0.0f64;
    for (pos, &gi) in test.iter().enumerate() {
        let g = &ds.graphs[gi];
        let mut perm: Vec<usize> = (0..g.node_count).collect();
        perm.shuffle(&mut r);
        let mut moved = ds.clone();
        moved.graphs[gi] = g.permuted(&perm).unwrap();
        let mut moved_views = views.clone();
        moved_views[gi] = make_view_pair(&moved.graphs[gi], &ds.node_label_values, vcfg).unwrap();
        let batch = GraphBatch::from_indices(&moved, test).unwrap();
        let scores = score_batch(model, stats, &batch, &moved_views).unwrap();
        worst = worst.max((scores[pos] - base[pos]).abs());
    }
    worst
}

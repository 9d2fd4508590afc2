#![allow(dead_code)]

pub mod checks;

use std::path::PathBuf;

use cvtgad::graph::{parse_tu_dataset, Dataset, Graph};
use cvtgad::tensor::Tensor;
use cvtgad::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn toy() -> Dataset {
    parse_tu_dataset(&fixture_dir().join("TOY"), "TOY").unwrap()
}

pub fn toy_config(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: "TOY".into(),
        data_dir: fixture_dir(),
        epochs: Some(epochs),
        batch_size: 4,
        ..ExperimentConfig::default()
    }
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize, d: usize) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v));
    }
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        edges.push((a, b));
    }
    let attrs: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Graph::new(n, &edges, 0)
        .unwrap()
        .with_attributes(Tensor::matrix(n, d, attrs).unwrap())
        .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every connected labelled graph on `n` nodes, as edge lists.
pub fn connected_graphs(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<_> = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &e)| e)
            .collect();
        if is_connected(n, &edges) {
            out.push(edges);
        }
    }
    out
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|v| find(&mut parent, v) == root)
}

/// Dense row-major `n×n` adjacency.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(u, v) in edges {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    a
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i][l] * b[l][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_rows()
}

pub fn max_abs(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `relu(x·W + b)` layers applied row by row with plain loops.
pub fn dense_mlp(
    x: &[Vec<f64>],
    layers: &[(Vec<Vec<f64>>, Vec<f64>)],
    relu_after: impl Fn(usize) -> bool,
) -> Vec<Vec<f64>> {
    let mut h = x.to_vec();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut out = dense_matmul(&h, w);
        for row in &mut out {
            for (v, bias) in row.iter_mut().zip(b) {
                *v += bias;
                if relu_after(l) && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        h = out;
    }
    h
}

/// InfoNCE of row `i` against all rows of `other`, positive at `i`.
fn info_nce(anchor: &[Vec<f64>], other: &[Vec<f64>], i: usize, tau: f64) -> f64 {
    let pos = cvt_cos(&anchor[i], &other[i]) / tau;
    let mut neg = 0.0;
    for (j, o) in other.iter().enumerate() {
        if j != i {
            neg += (cvt_cos(&anchor[i], o) / tau).exp();
        }
    }
    -(pos.exp() / neg).ln()
}

fn cvt_cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    dot / (nu.sqrt() * nv.sqrt() + 1e-8)
}

/// Symmetrised per-row contrastive loss; zero when there are no negatives.
pub fn brute_rows(f: &[Vec<f64>], s: &[Vec<f64>], tau: f64) -> Vec<f64> {
    if f.len() < 2 {
        return vec![0.0; f.len()];
    }
    (0..f.len())
        .map(|i| 0.5 * (info_nce(f, s, i, tau) + info_nce(s, f, i, tau)))
        .collect()
}

/// Per-graph mean of [`brute_rows`] within each graph's node range.
pub fn brute_node_loss(f: &[Vec<f64>], s: &[Vec<f64>], offsets: &[usize], tau: f64) -> Vec<f64> {
    (0..offsets.len())
        .map(|p| {
            let end = offsets.get(p + 1).copied().unwrap_or(f.len());
            let rows = brute_rows(&f[offsets[p]..end], &s[offsets[p]..end], tau);
            rows.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Worst relative error `|a − n| / max(|a|, |n|, floor)` between analytic
/// gradients and five-point central differences of `f` over every entry of
/// `params`. Where the estimates at `h` and `h / 10` disagree, a ReLU kink
/// lies inside the wider stencil and the narrower estimate is used.
pub fn fd_check(
    params: &mut [Tensor],
    analytic: &[Tensor],
    h: f64,
    floor: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for p in 0..params.len() {
        for k in 0..params[p].numel() {
            let orig = params[p].data()[k];
            let mut five_point = |h: f64| {
                let mut at = |dx: f64| {
                    params[p].data_mut()[k] = orig + dx;
                    f(params)
                };
                let (m2, m1, p1, p2) = (at(-2.0 * h), at(-h), at(h), at(2.0 * h));
                (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h)
            };
            let wide = five_point(h);
            let narrow = five_point(h / 10.0);
            params[p].data_mut()[k] = orig;
            let smooth = (wide - narrow).abs() <= 1e-5 * wide.abs().max(narrow.abs()).max(floor);
            let num = if smooth { wide } else { narrow };
            let ana = analytic[p].data()[k];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("param {p} entry {k}: analytic {ana:e}, numeric {num:e}"));
            }
        }
    }
    worst
}

//! Graph datasets: TU-format ingestion, anomaly labelling, the normal-only
//! train split, and mini-batching.
//!
//! TU datasets are a directory of plain-text files sharing a `{name}_`
//! prefix. Node and graph ids in the files are 1-based; everything in memory
//! is 0-based and local to its graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub node_count: usize,
    /// Undirected edges stored once as `(lo, hi)`, sorted, without self-loops.
    pub edges: Vec<(usize, usize)>,
    /// `node_count × d_f` raw attributes, if the dataset has them.
    pub node_attributes: Option<Tensor>,
    pub node_labels: Option<Vec<i64>>,
    pub class_label: i64,
    /// 0 normal, 1 anomalous.
    pub anomaly_label: u8,
}

impl Graph {
    /// Builds a graph, canonicalising `edges` (any orientation, duplicates
    /// and self-loops allowed on input).
    pub fn new(node_count: usize, edges: &[(usize, usize)], class_label: i64) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::contract(format!(
                    "edge ({a}, {b}) outside graph of {node_count} nodes"
                )));
            }
            if a != b {
                canon.push((a.min(b), a.max(b)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            node_count,
            edges: canon,
            node_attributes: None,
            node_labels: None,
            class_label,
            anomaly_label: 0,
        })
    }

    pub fn with_attributes(mut self, attributes: Tensor) -> Result<Self> {
        if attributes.rows() != self.node_count || attributes.shape().len() != 2 {
            return Err(Error::contract(format!(
                "attribute matrix {:?} does not match {} nodes",
                attributes.shape(),
                self.node_count
            )));
        }
        self.node_attributes = Some(attributes);
        Ok(self)
    }

    pub fn with_node_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.node_count {
            return Err(Error::contract(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.node_count
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::contract("permutation length differs from node count"));
        }
        let mut inverse = vec![usize::MAX; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            if new >= perm.len() || inverse[new] != usize::MAX {
                return Err(Error::contract("not a permutation"));
            }
            inverse[new] = old;
        }
        let edges: Vec<_> = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let mut g = Graph::new(self.node_count, &edges, self.class_label)?;
        g.anomaly_label = self.anomaly_label;
        if let Some(x) = &self.node_attributes {
            let rows: Vec<Vec<f64>> = inverse.iter().map(|&old| x.row(old).to_vec()).collect();
            g.node_attributes = Some(Tensor::matrix(self.node_count, x.cols(), rows.concat())?);
        }
        if let Some(l) = &self.node_labels {
            g.node_labels = Some(inverse.iter().map(|&old| l[old]).collect());
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_fraction_normal: f64,
    pub stratified: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Width of the raw attribute rows; 0 for plain graphs.
    pub attr_dim: usize,
    /// Sorted distinct node-label values across the dataset.
    pub node_label_values: Vec<i64>,
    pub split: Option<Split>,
}

/// How raw class labels map onto anomaly labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelRule {
    /// The least frequent raw class is anomalous.
    Minority,
    /// The given raw class is anomalous.
    Class(i64),
}

impl std::str::FromStr for LabelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("minority") {
            return Ok(LabelRule::Minority);
        }
        let c = s.strip_prefix("class:").unwrap_or(s);
        c.trim()
            .parse()
            .map(LabelRule::Class)
            .map_err(|_| Error::Config(format!("bad label rule {s:?}; use minority or class:<c>")))
    }
}

impl std::fmt::Display for LabelRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelRule::Minority => f.write_str("minority"),
            LabelRule::Class(c) => write!(f, "class:{c}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelReport {
    pub anomalous_class: i64,
    pub anomalies: usize,
    pub total: usize,
}

impl LabelReport {
    pub fn ratio(&self) -> f64 {
        self.anomalies as f64 / self.total.max(1) as f64
    }
}

impl Dataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Self {
        let attr_dim = graphs
            .iter()
            .find_map(|g| g.node_attributes.as_ref().map(Tensor::cols))
            .unwrap_or(0);
        let mut values: Vec<i64> = graphs
            .iter()
            .filter_map(|g| g.node_labels.as_ref())
            .flatten()
            .copied()
            .collect();
        values.sort_unstable();
        values.dedup();
        Self {
            name: name.into(),
            graphs,
            attr_dim,
            node_label_values: values,
            split: None,
        }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn has_node_labels(&self) -> bool {
        !self.node_label_values.is_empty()
    }

    pub fn mean_nodes(&self) -> f64 {
        self.graphs.iter().map(|g| g.node_count).sum::<usize>() as f64 / self.len().max(1) as f64
    }

    pub fn mean_edges(&self) -> f64 {
        self.graphs.iter().map(Graph::edge_count).sum::<usize>() as f64 / self.len().max(1) as f64
    }

    /// Raw class label → number of graphs.
    pub fn class_counts(&self) -> BTreeMap<i64, usize> {
        let mut counts = BTreeMap::new();
        for g in &self.graphs {
            *counts.entry(g.class_label).or_insert(0) += 1;
        }
        counts
    }

    pub fn assign_anomaly_labels(&mut self, rule: LabelRule) -> Result<LabelReport> {
        let counts = self.class_counts();
        let anomalous_class = match rule {
            LabelRule::Class(c) => {
                if !counts.contains_key(&c) {
                    return Err(Error::Protocol(format!(
                        "{}: class {c} does not occur (classes {:?})",
                        self.name,
                        counts.keys().collect::<Vec<_>>()
                    )));
                }
                c
            }
            LabelRule::Minority => {
                let min = *counts
                    .values()
                    .min()
                    .ok_or_else(|| Error::Protocol(format!("{}: no graphs", self.name)))?;
                let tied: Vec<i64> = counts.iter().filter(|(_, n)| **n == min).map(|(c, _)| *c).collect();
                if tied.len() > 1 {
                    return Err(Error::Protocol(format!(
                        "{}: classes {tied:?} tie for minority ({min} graphs each); \
                         choose an explicit anomalous class",
                        self.name
                    )));
                }
                tied[0]
            }
        };
        let mut anomalies = 0;
        for g in &mut self.graphs {
            g.anomaly_label = u8::from(g.class_label == anomalous_class);
            anomalies += usize::from(g.anomaly_label);
        }
        self.split = None;
        Ok(LabelReport {
            anomalous_class,
            anomalies,
            total: self.len(),
        })
    }

    /// Every anomaly goes to test, plus a seeded `test_fraction_normal` share
    /// of the normal graphs. The remaining normal graphs train.
    pub fn make_split(&mut self, test_fraction_normal: f64, seed: u64) -> Result<&Split> {
        self.make_split_with(test_fraction_normal, false, seed)
    }

    /// As [`Dataset::make_split`]; with `stratified` the test share is drawn
    /// separately from each raw class of the normal graphs.
    pub fn make_split_with(&mut self, test_fraction_normal: f64, stratified: bool, seed: u64) -> Result<&Split> {
        if !(0.0..=1.0).contains(&test_fraction_normal) {
            return Err(Error::Config(format!(
                "test_fraction_normal {test_fraction_normal} outside [0, 1]"
            )));
        }
        let (normal, anomalous): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| self.graphs[i].anomaly_label == 0);
        if anomalous.is_empty() {
            return Err(Error::Protocol(format!(
                "{}: no anomalous graphs; assign anomaly labels first",
                self.name
            )));
        }
        let strata: Vec<Vec<usize>> = if stratified {
            let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
            for &i in &normal {
                by_class.entry(self.graphs[i].class_label).or_default().push(i);
            }
            by_class.into_values().collect()
        } else {
            vec![normal]
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut test = anomalous;
        let mut train = Vec::new();
        for mut stratum in strata {
            stratum.shuffle(&mut rng);
            let n_test = (test_fraction_normal * stratum.len() as f64).round() as usize;
            test.extend_from_slice(&stratum[..n_test]);
            train.extend_from_slice(&stratum[n_test..]);
        }
        test.sort_unstable();
        train.sort_unstable();
        self.split = Some(Split {
            train,
            test,
            test_fraction_normal,
            stratified,
            seed,
        });
        Ok(self.split.as_ref().expect("just set"))
    }

    pub fn split(&self) -> Result<&Split> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("{}: no train/test split", self.name)))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Ingest(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn parse_num<T: std::str::FromStr>(file: &Path, line: usize, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Format {
        file: file.to_path_buf(),
        line,
        msg: format!("cannot parse {:?}", s.trim()),
    })
}

/// Non-empty lines with their 1-based line numbers.
fn numbered(lines: &[String]) -> impl Iterator<Item = (usize, &str)> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Reads `{name}_A.txt`, `{name}_graph_indicator.txt`, `{name}_graph_labels.txt`
/// and, when present, `{name}_node_attributes.txt` / `{name}_node_labels.txt`.
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let file = |suffix: &str| -> PathBuf { dir.join(format!("{name}_{suffix}.txt")) };

    let ind_path = file("graph_indicator");
    let indicator_lines = read_lines(&ind_path)?;
    let labels_path = file("graph_labels");
    let label_lines = read_lines(&labels_path)?;
    let a_path = file("A");
    let a_lines = read_lines(&a_path)?;

    let mut class_labels = Vec::new();
    for (ln, l) in numbered(&label_lines) {
        class_labels.push(parse_num::<i64>(&labels_path, ln, l)?);
    }
    let n_graphs = class_labels.len();

    // global node -> (graph, local index)
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut sizes = vec![0usize; n_graphs];
    for (ln, l) in numbered(&indicator_lines) {
        let gid: usize = parse_num(&ind_path, ln, l)?;
        if gid == 0 || gid > n_graphs {
            return Err(Error::Format {
                file: ind_path.clone(),
                line: ln,
                msg: format!("graph id {gid} outside 1..={n_graphs}"),
            });
        }
        node_graph.push(gid - 1);
        node_local.push(sizes[gid - 1]);
        sizes[gid - 1] += 1;
    }
    let n_nodes = node_graph.len();
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Format {
            file: ind_path.clone(),
            line: 0,
            msg: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for (ln, l) in numbered(&a_lines) {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format {
                file: a_path.clone(),
                line: ln,
                msg: format!("expected `src, dst`, got {l:?}"),
            });
        };
        let a: usize = parse_num(&a_path, ln, a)?;
        let b: usize = parse_num(&a_path, ln, b)?;
        for v in [a, b] {
            if v == 0 || v > n_nodes {
                return Err(Error::Format {
                    file: a_path.clone(),
                    line: ln,
                    msg: format!("node id {v} outside 1..={n_nodes}"),
                });
            }
        }
        let (ga, gb) = (node_graph[a - 1], node_graph[b - 1]);
        if ga != gb {
            return Err(Error::Format {
                file: a_path.clone(),
                line: ln,
                msg: format!("edge joins graphs {} and {}", ga + 1, gb + 1),
            });
        }
        edges[ga].push((node_local[a - 1], node_local[b - 1]));
    }

    let attr_path = file("node_attributes");
    let attributes = if attr_path.exists() {
        let lines = read_lines(&attr_path)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_nodes);
        for (ln, l) in numbered(&lines) {
            let row = l
                .split(',')
                .map(|v| parse_num::<f64>(&attr_path, ln, v))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Format {
                        file: attr_path.clone(),
                        line: ln,
                        msg: format!("expected {} attributes, got {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.len() != n_nodes {
            return Err(Error::Format {
                file: attr_path.clone(),
                line: lines.len(),
                msg: format!("{} attribute rows for {n_nodes} nodes", rows.len()),
            });
        }
        Some(rows)
    } else {
        None
    };

    let nl_path = file("node_labels");
    let node_labels = if nl_path.exists() {
        let lines = read_lines(&nl_path)?;
        let mut labels = Vec::with_capacity(n_nodes);
        for (ln, l) in numbered(&lines) {
            // Some datasets carry several label columns; the first is the node label.
            let first = l.split(',').next().unwrap_or(l);
            labels.push(parse_num::<i64>(&nl_path, ln, first)?);
        }
        if labels.len() != n_nodes {
            return Err(Error::Format {
                file: nl_path.clone(),
                line: lines.len(),
                msg: format!("{} node labels for {n_nodes} nodes", labels.len()),
            });
        }
        Some(labels)
    } else {
        None
    };

    let mut members: Vec<Vec<usize>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (v, &g) in node_graph.iter().enumerate() {
        members[g].push(v);
    }
    let mut graphs = Vec::with_capacity(n_graphs);
    for (g, nodes) in members.iter().enumerate() {
        let mut graph = Graph::new(nodes.len(), &edges[g], class_labels[g])?;
        if let Some(rows) = &attributes {
            let d = rows[0].len();
            let data: Vec<f64> = nodes.iter().flat_map(|&v| rows[v].iter().copied()).collect();
            graph = graph.with_attributes(Tensor::matrix(nodes.len(), d, data)?)?;
        }
        if let Some(labels) = &node_labels {
            graph = graph.with_node_labels(nodes.iter().map(|&v| labels[v]).collect())?;
        }
        graphs.push(graph);
    }
    Ok(Dataset::new(name, graphs))
}

/// Writes `dataset` in TU format (both edge orientations, as the public
/// datasets do).
pub fn write_tu_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mut a, mut ind, mut gl, mut attrs, mut nl) = (
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    );
    let mut offset = 0;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for _ in 0..g.node_count {
            let _ = writeln!(ind, "{}", gi + 1);
        }
        for &(u, v) in &g.edges {
            let _ = writeln!(a, "{}, {}", offset + u + 1, offset + v + 1);
            let _ = writeln!(a, "{}, {}", offset + v + 1, offset + u + 1);
        }
        let _ = writeln!(gl, "{}", g.class_label);
        if let Some(x) = &g.node_attributes {
            for r in 0..x.rows() {
                let row: Vec<String> = x.row(r).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(attrs, "{}", row.join(", "));
            }
        }
        if let Some(l) = &g.node_labels {
            for v in l {
                let _ = writeln!(nl, "{v}");
            }
        }
        offset += g.node_count;
    }
    let name = &dataset.name;
    let mut files = vec![("A", a), ("graph_indicator", ind), ("graph_labels", gl)];
    if dataset.attr_dim > 0 {
        files.push(("node_attributes", attrs));
    }
    if dataset.has_node_labels() {
        files.push(("node_labels", nl));
    }
    for (suffix, body) in files {
        let path = dir.join(format!("{name}_{suffix}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// A mini-batch of graphs laid out as one disjoint union.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBatch {
    /// Dataset indices of the member graphs, in batch order.
    pub graph_indices: Vec<usize>,
    /// First node row of each member graph.
    pub offsets: Vec<usize>,
    /// Member position (0-based within the batch) of every node row.
    pub membership: Arc<Vec<usize>>,
    /// Undirected edges in batch-global node numbering.
    pub edges: Vec<(usize, usize)>,
    pub node_count: usize,
}

impl GraphBatch {
    pub fn from_indices(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(indices.len());
        let mut membership = Vec::new();
        let mut edges = Vec::new();
        let mut offset = 0;
        for (pos, &gi) in indices.iter().enumerate() {
            let g = dataset
                .graphs
                .get(gi)
                .ok_or_else(|| Error::contract(format!("graph index {gi} outside dataset of {}", dataset.len())))?;
            offsets.push(offset);
            membership.extend(std::iter::repeat_n(pos, g.node_count));
            edges.extend(g.edges.iter().map(|&(a, b)| (offset + a, offset + b)));
            offset += g.node_count;
        }
        Ok(Self {
            graph_indices: indices.to_vec(),
            offsets,
            membership: Arc::new(membership),
            edges,
            node_count: offset,
        })
    }

    pub fn len(&self) -> usize {
        self.graph_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph_indices.is_empty()
    }

    /// Node-row range of member `pos`.
    pub fn node_range(&self, pos: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(pos + 1).copied().unwrap_or(self.node_count);
        self.offsets[pos]..end
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.len()).map(|p| self.node_range(p).len()).collect()
    }
}

/// Chunks `indices` into batches of at most `batch_size` graphs, optionally
/// after a seeded shuffle.
pub fn batch_graphs(
    dataset: &Dataset,
    indices: &[usize],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<Vec<GraphBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = indices.to_vec();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size)
        .map(|chunk| GraphBatch::from_indices(dataset, chunk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sized_dataset(sizes: &[usize]) -> Dataset {
        let graphs = sizes
            .iter()
            .map(|&n| {
                let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                Graph::new(n, &edges, 0).unwrap()
            })
            .collect();
        Dataset::new("sized", graphs)
    }

    fn labelled(classes: &[i64]) -> Dataset {
        let graphs = classes.iter().map(|&c| Graph::new(2, &[(0, 1)], c).unwrap()).collect();
        Dataset::new("labelled", graphs)
    }

    #[test]
    fn canonical_edges() {
        let g = Graph::new(3, &[(1, 0), (0, 1), (2, 2), (2, 1)], 0).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert!(Graph::new(2, &[(0, 2)], 0).is_err());
    }

    #[test]
    fn minority_rule() {
        let mut d = labelled(&[0, 0, 0, 1]);
        let r = d.assign_anomaly_labels(LabelRule::Minority).unwrap();
        let labels: Vec<u8> = d.graphs.iter().map(|g| g.anomaly_label).collect();
        assert_eq!(labels, vec![0, 0, 0, 1]);
        assert_eq!(r.anomalies, 1);
        assert!((r.ratio() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn minority_tie_demands_explicit_class() {
        let mut d = labelled(&[0, 1]);
        assert!(matches!(
            d.assign_anomaly_labels(LabelRule::Minority),
            Err(Error::Protocol(_))
        ));
        let r = d.assign_anomaly_labels(LabelRule::Class(0)).unwrap();
        assert_eq!(r.anomalies, 1);
        assert_eq!(d.graphs[0].anomaly_label, 1);
    }

    #[test]
    fn label_rule_parses() {
        assert_eq!("minority".parse::<LabelRule>().unwrap(), LabelRule::Minority);
        assert_eq!("class:3".parse::<LabelRule>().unwrap(), LabelRule::Class(3));
        assert_eq!("-1".parse::<LabelRule>().unwrap(), LabelRule::Class(-1));
        assert!("most".parse::<LabelRule>().is_err());
    }

    #[test]
    fn split_arithmetic() {
        let mut classes = vec![0; 10];
        classes.extend([1, 1]);
        let mut d = labelled(&classes);
        d.assign_anomaly_labels(LabelRule::Minority).unwrap();
        let s = d.make_split(0.2, 7).unwrap().clone();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.test.len(), 4);
        assert!(s.train.iter().all(|&i| d.graphs[i].anomaly_label == 0));
        assert_eq!(s.test.iter().filter(|&&i| d.graphs[i].anomaly_label == 1).count(), 2);
        assert!(s.train.iter().all(|i| !s.test.contains(i)));

        let again = d.make_split(0.2, 7).unwrap().clone();
        assert_eq!(s, again);

        let zero = d.make_split(0.0, 7).unwrap();
        assert_eq!(zero.test, vec![10, 11]);
    }

    #[test]
    fn stratified_split_draws_per_class() {
        let mut classes = vec![0; 10];
        classes.extend([2; 5]);
        classes.push(1);
        let mut d = labelled(&classes);
        d.assign_anomaly_labels(LabelRule::Class(1)).unwrap();
        let s = d.make_split_with(0.2, true, 3).unwrap().clone();
        let count = |c: i64| s.test.iter().filter(|&&i| d.graphs[i].class_label == c).count();
        assert_eq!((count(0), count(2), count(1)), (2, 1, 1));
        assert!(s.stratified);
    }

    #[test]
    fn split_without_anomalies_fails() {
        let mut d = labelled(&[0, 0, 0]);
        assert!(matches!(d.make_split(0.2, 0), Err(Error::Protocol(_))));
    }

    #[test]
    fn batching_layout() {
        let d = sized_dataset(&[2, 3, 4]);
        let batches = batch_graphs(&d, &[0, 1, 2], 2, false, 0).unwrap();
        let totals: Vec<usize> = batches.iter().map(|b| b.node_count).collect();
        assert_eq!(totals, vec![5, 4]);
        assert_eq!(batches[0].offsets, vec![0, 2]);
        assert_eq!(*batches[0].membership, vec![0, 0, 1, 1, 1]);
        assert_eq!(batches[0].edges, vec![(0, 1), (2, 3), (3, 4)]);
        assert!(batch_graphs(&d, &[], 2, false, 0).unwrap().is_empty());
    }

    #[test]
    fn shuffled_batches_are_seeded() {
        let d = sized_dataset(&[1, 2, 3, 4, 5, 6]);
        let idx: Vec<usize> = (0..6).collect();
        let a = batch_graphs(&d, &idx, 4, true, 11).unwrap();
        let b = batch_graphs(&d, &idx, 4, true, 11).unwrap();
        assert_eq!(a, b);
        let mut seen: Vec<usize> = a.iter().flat_map(|b| b.graph_indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, idx);
    }

    #[test]
    fn permuted_graph_moves_rows() {
        let g = Graph::new(3, &[(0, 1)], 0)
            .unwrap()
            .with_attributes(Tensor::matrix(3, 1, vec![10.0, 11.0, 12.0]).unwrap())
            .unwrap();
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.edges, vec![(0, 2)]);
        assert_eq!(p.node_attributes.unwrap().data(), &[11.0, 12.0, 10.0]);
    }
}

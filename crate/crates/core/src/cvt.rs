//! Simplified transformer with cross-view attention.
//!
//! Each level (nodes, graphs) and each view owns a block made of a
//! projection MLP, a residual MLP, single-head Q/K/V projections, a
//! feed-forward MLP and a post-norm LayerNorm:
//!
//! ```text
//! z   = project(E)
//! a   = attention(z, z_other)        // one of Q/K/V borrowed from the other view
//! out = layer_norm(feed_forward(a + residual(z)))
//! ```
//!
//! Attention rows are softmax-normalised over keys; with
//! [`Normalization::SoftmaxL1`] the columns are then L1-normalised as well.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, Mlp, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Which projection a view borrows from the other view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossedMatrix {
    Q,
    K,
    V,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    SoftmaxL1,
    SoftmaxOnly,
}

/// Which node rows attend to each other at node level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeScope {
    /// Every node of every graph in the batch.
    Batch,
    /// Only nodes of the same graph.
    PerGraph,
}

macro_rules! text_enum {
    ($ty:ty, $($text:literal => $variant:expr),+ $(,)?) => {
        impl std::str::FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }
    };
}

text_enum!(CrossedMatrix, "k" => CrossedMatrix::K, "q" => CrossedMatrix::Q,
    "v" => CrossedMatrix::V, "none" => CrossedMatrix::None);
text_enum!(Normalization, "softmax_l1" => Normalization::SoftmaxL1,
    "softmax_only" => Normalization::SoftmaxOnly);
text_enum!(NodeScope, "batch" => NodeScope::Batch, "per_graph" => NodeScope::PerGraph);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub crossed_matrix: CrossedMatrix,
    pub normalization: Normalization,
    pub d_k: usize,
    pub node_scope: NodeScope,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            crossed_matrix: CrossedMatrix::K,
            normalization: Normalization::SoftmaxL1,
            d_k: 16,
            node_scope: NodeScope::Batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvtConfig {
    /// `false` skips the transformer entirely (the "w/o Transformer-CA" ablation).
    pub enabled: bool,
    pub attention: AttentionConfig,
    pub proj_layers: usize,
    pub residual_layers: usize,
}

impl Default for CvtConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            attention: AttentionConfig::default(),
            proj_layers: 2,
            residual_layers: 2,
        }
    }
}

/// Parameters of one view at one level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewBlock {
    pub proj: Mlp,
    pub residual: Mlp,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub ff: Mlp,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl ViewBlock {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d_in: usize, cfg: &CvtConfig) -> Result<Self> {
        let d_k = cfg.attention.d_k;
        if d_k == 0 {
            return Err(Error::Config("cvt.d_k must be at least 1".into()));
        }
        let proj = Mlp::new(
            store,
            rng,
            &format!("{name}.proj"),
            d_in,
            d_k,
            d_k,
            cfg.proj_layers,
            false,
        )?;
        let residual = Mlp::new(
            store,
            rng,
            &format!("{name}.residual"),
            d_k,
            d_k,
            d_k,
            cfg.residual_layers,
            false,
        )?;
        let w_q = store.add(format!("{name}.w_q"), glorot(rng, d_k, d_k));
        let w_k = store.add(format!("{name}.w_k"), glorot(rng, d_k, d_k));
        let w_v = store.add(format!("{name}.w_v"), glorot(rng, d_k, d_k));
        let ff = Mlp::new(store, rng, &format!("{name}.ff"), d_k, d_k, d_k, 2, false)?;
        let gamma = store.add(format!("{name}.ln.gamma"), Tensor::ones(&[d_k]));
        let beta = store.add(format!("{name}.ln.beta"), Tensor::zeros(&[d_k]));
        Ok(Self {
            proj,
            residual,
            w_q,
            w_k,
            w_v,
            ff,
            gamma,
            beta,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelParams {
    pub feature: ViewBlock,
    pub structure: ViewBlock,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvtParams {
    pub node: LevelParams,
    pub graph: LevelParams,
}

impl CvtParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, d_h: usize, cfg: &CvtConfig) -> Result<Self> {
        let mut level = |name: &str| -> Result<LevelParams> {
            Ok(LevelParams {
                feature: ViewBlock::new(store, rng, &format!("cvt.{name}.f"), d_h, cfg)?,
                structure: ViewBlock::new(store, rng, &format!("cvt.{name}.s"), d_h, cfg)?,
            })
        };
        Ok(Self {
            node: level("node")?,
            graph: level("graph")?,
        })
    }
}

pub fn project(tape: &mut Tape, bound: &Bound, e: Var, proj: &Mlp) -> Result<Var> {
    proj.forward(tape, bound, e)
}

/// `norm(Q Kᵀ / √d_k) · V`.
pub fn attend(tape: &mut Tape, q: Var, k: Var, v: Var, d_k: usize, normalization: Normalization) -> Result<Var> {
    let att = attention_matrix(tape, q, k, d_k, normalization)?;
    tape.matmul(att, v)
}

pub fn attention_matrix(tape: &mut Tape, q: Var, k: Var, d_k: usize, normalization: Normalization) -> Result<Var> {
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d_k as f64).sqrt());
    let att = tape.softmax_rows(logits)?;
    match normalization {
        Normalization::SoftmaxOnly => Ok(att),
        Normalization::SoftmaxL1 => tape.l1_normalize_cols(att),
    }
}

fn qkv(tape: &mut Tape, bound: &Bound, z: Var, block: &ViewBlock) -> Result<(Var, Var, Var)> {
    Ok((
        tape.matmul(z, bound.var(block.w_q))?,
        tape.matmul(z, bound.var(block.w_k))?,
        tape.matmul(z, bound.var(block.w_v))?,
    ))
}

/// Plain single-head self-attention `softmax(QKᵀ/√d_k)·V` over the rows of `z`.
pub fn self_attention(tape: &mut Tape, bound: &Bound, z: Var, block: &ViewBlock, d_k: usize) -> Result<Var> {
    let (q, k, v) = qkv(tape, bound, z, block)?;
    attend(tape, q, k, v, d_k, Normalization::SoftmaxOnly)
}

/// Attention outputs of the feature and structure views, each borrowing the
/// configured matrix from the other view.
pub fn cross_view_attention(
    tape: &mut Tape,
    bound: &Bound,
    z_f: Var,
    z_s: Var,
    block_f: &ViewBlock,
    block_s: &ViewBlock,
    cfg: &AttentionConfig,
) -> Result<(Var, Var)> {
    let (mf, ms) = (tape.dims(z_f).0, tape.dims(z_s).0);
    if mf != ms {
        return Err(Error::contract(format!(
            "cross-view attention needs aligned rows, got {mf} and {ms}"
        )));
    }
    let (qf, kf, vf) = qkv(tape, bound, z_f, block_f)?;
    let (qs, ks, vs) = qkv(tape, bound, z_s, block_s)?;
    let ((q1, k1, v1), (q2, k2, v2)) = match cfg.crossed_matrix {
        CrossedMatrix::K => ((qf, ks, vf), (qs, kf, vs)),
        CrossedMatrix::Q => ((qs, kf, vf), (qf, ks, vs)),
        CrossedMatrix::V => ((qf, kf, vs), (qs, ks, vf)),
        CrossedMatrix::None => ((qf, kf, vf), (qs, ks, vs)),
    };
    let out_f = attend(tape, q1, k1, v1, cfg.d_k, cfg.normalization)?;
    let out_s = attend(tape, q2, k2, v2, cfg.d_k, cfg.normalization)?;
    Ok((out_f, out_s))
}

fn finish(tape: &mut Tape, bound: &Bound, a: Var, z: Var, block: &ViewBlock) -> Result<Var> {
    let r = block.residual.forward(tape, bound, z)?;
    let sum = tape.add(a, r)?;
    let ff = block.ff.forward(tape, bound, sum)?;
    tape.layer_norm(ff, bound.var(block.gamma), bound.var(block.beta))
}

/// Both views through their blocks at one level. With `segments`, attention
/// only runs within each row range (per-graph node scope).
pub fn transformer_block(
    tape: &mut Tape,
    bound: &Bound,
    e_f: Var,
    e_s: Var,
    level: &LevelParams,
    cfg: &AttentionConfig,
    segments: Option<&[Range<usize>]>,
) -> Result<(Var, Var)> {
    let z_f = project(tape, bound, e_f, &level.feature.proj)?;
    let z_s = project(tape, bound, e_s, &level.structure.proj)?;
    let (a_f, a_s) = match segments {
        None => cross_view_attention(tape, bound, z_f, z_s, &level.feature, &level.structure, cfg)?,
        Some(ranges) => {
            let mut parts_f = Vec::with_capacity(ranges.len());
            let mut parts_s = Vec::with_capacity(ranges.len());
            for r in ranges {
                let rows: Vec<usize> = r.clone().collect();
                let zf = tape.gather_rows(z_f, rows.clone())?;
                let zs = tape.gather_rows(z_s, rows)?;
                let (af, as_) = cross_view_attention(tape, bound, zf, zs, &level.feature, &level.structure, cfg)?;
                parts_f.push(af);
                parts_s.push(as_);
            }
            (tape.concat_rows(&parts_f)?, tape.concat_rows(&parts_s)?)
        }
    };
    let out_f = finish(tape, bound, a_f, z_f, &level.feature)?;
    let out_s = finish(tape, bound, a_s, z_s, &level.structure)?;
    Ok((out_f, out_s))
}

/// Replaces the preliminary embeddings with transformer outputs at node and
/// graph level. A disabled transformer returns the input untouched.
pub fn embed_batch(
    tape: &mut Tape,
    bound: &Bound,
    emb: &EmbeddingBatch,
    params: &CvtParams,
    cfg: &CvtConfig,
) -> Result<EmbeddingBatch> {
    if !cfg.enabled {
        return Ok(emb.clone());
    }
    let node_count = tape.dims(emb.node_f).0;
    let ranges: Vec<Range<usize>>;
    let segments = match cfg.attention.node_scope {
        NodeScope::Batch => None,
        NodeScope::PerGraph => {
            ranges = (0..emb.graphs).map(|p| emb.node_range(p, node_count)).collect();
            Some(ranges.as_slice())
        }
    };
    let (node_f, node_s) = transformer_block(
        tape,
        bound,
        emb.node_f,
        emb.node_s,
        &params.node,
        &cfg.attention,
        segments,
    )?;
    let (graph_f, graph_s) = transformer_block(
        tape,
        bound,
        emb.graph_f,
        emb.graph_s,
        &params.graph,
        &cfg.attention,
        None,
    )?;
    Ok(EmbeddingBatch {
        node_f,
        node_s,
        graph_f,
        graph_s,
        membership: emb.membership.clone(),
        offsets: emb.offsets.clone(),
        graphs: emb.graphs,
    })
}

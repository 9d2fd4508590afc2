//! The full detector: two view encoders, the cross-view transformer, and the
//! node/graph contrastive losses for one batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvt::{embed_batch, CvtConfig, CvtParams};
use crate::encoders::{encode, EmbeddingBatch, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::GraphBatch;
use crate::objective::{graph_loss, node_loss, LevelLoss, LossConfig};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Tape, Tensor};
use crate::views::ViewPair;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub cvt: CvtConfig,
    pub loss: LossConfig,
}

#[derive(Clone, Debug)]
pub struct Cvtgad {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub structure_dim: usize,
    pub store: ParamStore,
    pub encoder_f: Encoder,
    pub encoder_s: Encoder,
    /// `None` when the transformer is disabled.
    pub cvt: Option<CvtParams>,
}

/// Loss handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub embeddings: EmbeddingBatch,
    pub node: LevelLoss,
    pub graph: LevelLoss,
}

impl Cvtgad {
    pub fn new(config: ModelConfig, feature_dim: usize, structure_dim: usize, seed: u64) -> Result<Self> {
        if !(config.loss.tau > 0.0) {
            return Err(Error::Config(format!(
                "loss.tau must be positive, got {}",
                config.loss.tau
            )));
        }
        if config.loss.alpha < 0.0 {
            return Err(Error::Config(format!(
                "loss.alpha must be ≥ 0, got {}",
                config.loss.alpha
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder_f = Encoder::new(&mut store, &mut rng, "enc.f", feature_dim, &config.encoder)?;
        let encoder_s = Encoder::new(&mut store, &mut rng, "enc.s", structure_dim, &config.encoder)?;
        let cvt = if config.cvt.enabled {
            Some(CvtParams::new(
                &mut store,
                &mut rng,
                config.encoder.hidden_dim,
                &config.cvt,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            feature_dim,
            structure_dim,
            store,
            encoder_f,
            encoder_s,
            cvt,
        })
    }

    /// Concatenated feature/structure view rows for the graphs of `batch`.
    pub fn stack_views(&self, batch: &GraphBatch, views: &[ViewPair]) -> Result<(Tensor, Tensor)> {
        let mut f = Vec::with_capacity(batch.node_count * self.feature_dim);
        let mut s = Vec::with_capacity(batch.node_count * self.structure_dim);
        for &gi in &batch.graph_indices {
            let vp = views
                .get(gi)
                .ok_or_else(|| Error::contract(format!("no views for graph {gi}")))?;
            if vp.feature.cols() != self.feature_dim || vp.structure.cols() != self.structure_dim {
                return Err(Error::Config(format!(
                    "view widths ({}, {}) differ from model input widths ({}, {})",
                    vp.feature.cols(),
                    vp.structure.cols(),
                    self.feature_dim,
                    self.structure_dim
                )));
            }
            f.extend_from_slice(vp.feature.data());
            s.extend_from_slice(vp.structure.data());
        }
        Ok((
            Tensor::matrix(batch.node_count, self.feature_dim, f)?,
            Tensor::matrix(batch.node_count, self.structure_dim, s)?,
        ))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &GraphBatch,
        views: &[ViewPair],
    ) -> Result<BatchForward> {
        let (xf, xs) = self.stack_views(batch, views)?;
        let xf = tape.constant(xf);
        let xs = tape.constant(xs);
        let prelim = encode(tape, bound, batch, xf, xs, &self.encoder_f, &self.encoder_s)?;
        let embeddings = match &self.cvt {
            Some(params) => embed_batch(tape, bound, &prelim, params, &self.config.cvt)?,
            None => prelim,
        };
        let tau = self.config.loss.tau;
        let node = node_loss(tape, embeddings.node_f, embeddings.node_s, &embeddings.offsets, tau)?;
        let graph = graph_loss(tape, embeddings.graph_f, embeddings.graph_s, tau)?;
        Ok(BatchForward {
            embeddings,
            node,
            graph,
        })
    }

    /// Per-graph `(L_node, L_graph)` for `batch` without tracking gradients.
    pub fn batch_losses(&self, batch: &GraphBatch, views: &[ViewPair]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, batch, views)?;
        Ok((
            tape.value(out.node.per_graph).data().to_vec(),
            tape.value(out.graph.per_graph).data().to_vec(),
        ))
    }
}

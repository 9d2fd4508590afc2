//! Experiment configuration and its `key = value` text format.
//!
//! ```text
//! # comment
//! dataset = AIDS
//! encoder.kind = gin
//! cvt.crossed_matrix = k
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabelRule;
use crate::model::ModelConfig;
use crate::optim::AdamConfig;
use crate::train::{EvalConfig, TrainConfig};
use crate::views::ViewConfig;

/// Datasets of roughly 8k graphs that default to a shorter schedule.
const LARGE_DATASETS: [&str; 4] = ["HSE", "MMP", "p53", "PPAR-gamma"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub seed: u64,
    /// `None` picks 100, or 20 for the large datasets.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub test_fraction_normal: f64,
    pub stratify: bool,
    /// `None` uses the dataset default (see [`default_label_rule`]).
    pub label_rule: Option<LabelRule>,
    pub variant: String,
    pub output: PathBuf,
    pub views: ViewConfig,
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "AIDS".into(),
            data_dir: PathBuf::from("data"),
            seed: 0,
            epochs: None,
            batch_size: 64,
            test_fraction_normal: 0.2,
            stratify: false,
            label_rule: None,
            variant: "full".into(),
            output: PathBuf::from("results"),
            views: ViewConfig::default(),
            model: ModelConfig::default(),
            optim: AdamConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Anomalous-class rule used when none is configured. ENZYMES has six
/// equally sized classes, so the minority rule cannot decide there.
pub fn default_label_rule(dataset: &str) -> LabelRule {
    match dataset {
        "ENZYMES" => LabelRule::Class(1),
        _ => LabelRule::Minority,
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl ExperimentConfig {
    pub fn epochs(&self) -> usize {
        self.epochs
            .unwrap_or(if LARGE_DATASETS.contains(&self.dataset.as_str()) {
                20
            } else {
                100
            })
    }

    pub fn label_rule(&self) -> LabelRule {
        self.label_rule.unwrap_or_else(|| default_label_rule(&self.dataset))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            batch_size: self.batch_size,
            optim: self.optim,
            seed: self.seed,
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, value) = (key.trim(), value.trim());
        let m = &mut self.model;
        match key {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse_auto(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "split.test_fraction_normal" => self.test_fraction_normal = parse(key, value)?,
            "split.stratify" => self.stratify = parse_bool(key, value)?,
            "labels.rule" => self.label_rule = parse_auto(key, value)?,
            "variant" => self.variant = value.to_string(),
            "output" => self.output = PathBuf::from(value),
            "views.walk_steps" => self.views.walk_steps = parse(key, value)?,
            "views.use_node_labels" => self.views.use_node_labels = parse_bool(key, value)?,
            "encoder.kind" => m.encoder.kind = value.parse()?,
            "encoder.layers" => m.encoder.layers = parse(key, value)?,
            "encoder.hidden_dim" => m.encoder.hidden_dim = parse(key, value)?,
            "cvt.enabled" => m.cvt.enabled = parse_bool(key, value)?,
            "cvt.crossed_matrix" => m.cvt.attention.crossed_matrix = value.parse()?,
            "cvt.normalization" => m.cvt.attention.normalization = value.parse()?,
            "cvt.node_scope" => m.cvt.attention.node_scope = value.parse()?,
            "cvt.d_k" => m.cvt.attention.d_k = parse(key, value)?,
            "cvt.proj_layers" => m.cvt.proj_layers = parse(key, value)?,
            "cvt.residual_layers" => m.cvt.residual_layers = parse(key, value)?,
            "loss.tau" => m.loss.tau = parse(key, value)?,
            "loss.alpha" => m.loss.alpha = parse(key, value)?,
            "optim.lr" => self.optim.lr = parse(key, value)?,
            "optim.beta1" => self.optim.beta1 = parse(key, value)?,
            "optim.beta2" => self.optim.beta2 = parse(key, value)?,
            "optim.eps" => self.optim.eps = parse(key, value)?,
            "eval.max_nodes" => self.eval.max_nodes = parse(key, value)?,
            "eval.batch_size" => self.eval.batch_size = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every setting of a `key = value` document on top of `self`.
    /// `cvt.d_k` follows `encoder.hidden_dim` unless given explicitly.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut d_k_given = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            d_k_given |= key.trim() == "cvt.d_k";
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        if !d_k_given {
            self.model.cvt.attention.d_k = self.model.encoder.hidden_dim;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &m.cvt.attention;
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let rows: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.clone()),
            ("data_dir", self.data_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", auto(self.epochs.map(|e| e.to_string()))),
            ("batch_size", self.batch_size.to_string()),
            ("split.test_fraction_normal", self.test_fraction_normal.to_string()),
            ("split.stratify", self.stratify.to_string()),
            ("labels.rule", auto(self.label_rule.map(|r| r.to_string()))),
            ("variant", self.variant.clone()),
            ("output", self.output.display().to_string()),
            ("views.walk_steps", self.views.walk_steps.to_string()),
            ("views.use_node_labels", self.views.use_node_labels.to_string()),
            ("encoder.kind", m.encoder.kind.to_string()),
            ("encoder.layers", m.encoder.layers.to_string()),
            ("encoder.hidden_dim", m.encoder.hidden_dim.to_string()),
            ("cvt.enabled", m.cvt.enabled.to_string()),
            ("cvt.crossed_matrix", a.crossed_matrix.to_string()),
            ("cvt.normalization", a.normalization.to_string()),
            ("cvt.node_scope", a.node_scope.to_string()),
            ("cvt.d_k", a.d_k.to_string()),
            ("cvt.proj_layers", m.cvt.proj_layers.to_string()),
            ("cvt.residual_layers", m.cvt.residual_layers.to_string()),
            ("loss.tau", m.loss.tau.to_string()),
            ("loss.alpha", m.loss.alpha.to_string()),
            ("optim.lr", self.optim.lr.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("eval.max_nodes", self.eval.max_nodes.to_string()),
            ("eval.batch_size", self.eval.batch_size.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

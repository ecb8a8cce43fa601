//! Self-describing JSON checkpoints.
//!
//! ```json
//! { "format_version": 1,
//!   "metadata": { "input_dim": 28, "message_dim": 100, "num_classes": 4 },
//!   "bottleneck": { "vocab_size": 100, "temperature": 1.0, "seed": 7 } | null,
//!   "sender":   [ { "in_dim": 28, "out_dim": 64, "activation": "relu",
//!                   "weights": [...], "bias": [...] }, ... ],
//!   "receiver": [ ... ] }
//! ```
//!
//! Weights are row-major `[out, in]` decimal numbers rendered with the
//! shortest representation that round-trips, so reloading is bit-exact.

use serde::{Deserialize, Serialize};

use crate::channel::GumbelSoftmaxSampler;
use crate::error::{Error, Result};
use crate::layer::{Activation, DenseLayer};
use crate::model::ModelGraph;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub input_dim: usize,
    pub message_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckDoc {
    pub vocab_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub metadata: Metadata,
    pub bottleneck: Option<BottleneckDoc>,
    pub sender: Vec<LayerDoc>,
    pub receiver: Vec<LayerDoc>,
}

fn layer_doc(l: &DenseLayer) -> LayerDoc {
    LayerDoc {
        in_dim: l.in_dim(),
        out_dim: l.out_dim(),
        activation: l.activation(),
        weights: l.weights().data().to_vec(),
        bias: l.bias().data().to_vec(),
    }
}

fn layer_from_doc(d: &LayerDoc, where_: &str) -> Result<DenseLayer> {
    let corrupt = |what: &str| Error::Format(format!("{where_}: {what}"));
    if d.in_dim == 0 || d.out_dim == 0 {
        return Err(corrupt("zero layer dimension"));
    }
    if d.weights.len() != d.in_dim * d.out_dim {
        return Err(corrupt(&format!(
            "{} weights for a {}x{} layer",
            d.weights.len(),
            d.out_dim,
            d.in_dim
        )));
    }
    if d.bias.len() != d.out_dim {
        return Err(corrupt(&format!("{} biases for {} units", d.bias.len(), d.out_dim)));
    }
    DenseLayer::new(
        Tensor::new(vec![d.out_dim, d.in_dim], d.weights.clone())?,
        Tensor::vector(d.bias.clone()),
        d.activation,
    )
}

impl Checkpoint {
    pub fn from_model(model: &ModelGraph) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            metadata: Metadata {
                input_dim: model.input_dim(),
                message_dim: model.message_dim(),
                num_classes: model.num_classes(),
            },
            bottleneck: model.bottleneck().map(|b| BottleneckDoc {
                vocab_size: b.vocab_size(),
                temperature: b.temperature(),
                seed: b.seed(),
            }),
            sender: model.sender().iter().map(layer_doc).collect(),
            receiver: model.receiver().iter().map(layer_doc).collect(),
        }
    }

    pub fn into_model(self) -> Result<ModelGraph> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let layers = |docs: &[LayerDoc], part: &str| -> Result<Vec<DenseLayer>> {
            docs.iter()
                .enumerate()
                .map(|(i, d)| layer_from_doc(d, &format!("{part} layer {i}")))
                .collect()
        };
        let sender = layers(&self.sender, "sender")?;
        let receiver = layers(&self.receiver, "receiver")?;
        let bottleneck = self
            .bottleneck
            .map(|b| GumbelSoftmaxSampler::new(b.vocab_size, b.temperature, b.seed))
            .transpose()
            .map_err(|e| Error::Format(format!("bottleneck: {e}")))?;
        let model = ModelGraph::from_parts(sender, bottleneck, receiver)
            .map_err(|e| Error::Format(format!("inconsistent layers: {e}")))?;
        let m = &self.metadata;
        if (m.input_dim, m.message_dim, m.num_classes)
            != (model.input_dim(), model.message_dim(), model.num_classes())
        {
            return Err(Error::Format(format!(
                "metadata {m:?} disagrees with the stored layers"
            )));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &ModelGraph) -> String {
    let mut s = serde_json::to_string_pretty(&Checkpoint::from_model(model))
        .expect("checkpoint serializes");
    s.push('\n');
    s
}

pub fn load_checkpoint(document: &str) -> Result<ModelGraph> {
    let doc: Checkpoint = serde_json::from_str(document)
        .map_err(|e| Error::Format(format!("checkpoint is not valid: {e}")))?;
    doc.into_model()
}

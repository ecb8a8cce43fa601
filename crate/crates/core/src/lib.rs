//! Emergent-symbol classification.
//!
//! A sender network maps features to K logits, a Gumbel-softmax channel
//! turns them into (relaxed) one-hot symbols, and a receiver classifies
//! from the symbol alone. Everything is implemented on a small dense `f64`
//! substrate with hand-written backward passes, together with Integrated
//! Gradients and neuron conductance for tracing symbols back to input
//! features.

pub mod attribution;
pub mod channel;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod layer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use attribution::{AttributionConfig, ConductanceReport, OutputKind, Target};
pub use channel::{GumbelSoftmaxSampler, Noise, SamplerMode, SymbolRecord};
pub use data::{Dataset, SynthSpec};
pub use error::{Error, Result};
pub use layer::{Activation, DenseLayer};
pub use metrics::EvalReport;
pub use model::{Architecture, BottleneckPath, Mode, ModelGraph, NeuronRef, Part};
pub use optim::{AdamConfig, AdamState};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainLog};

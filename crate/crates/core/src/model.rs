//! Sender → symbol channel → receiver composition.
//!
//! An emergent-language (EL) model routes the sender's K-way output through
//! a [`GumbelSoftmaxSampler`]; the baseline feeds it straight into the
//! receiver. Both share the same layer layout so that a baseline and an EL
//! model built from the same seed carry identical weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{hard_decode, one_hot, relax, relaxation_vjp, GumbelSoftmaxSampler, SamplerMode, SymbolRecord};
use crate::error::{Error, Result};
use crate::layer::{Activation, DenseLayer};
use crate::tensor::Tensor;

/// Layer widths and channel settings for a sender/receiver pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub sender_hidden: Vec<usize>,
    pub vocab_size: usize,
    pub receiver_hidden: Vec<usize>,
    pub num_classes: usize,
    pub temperature: f64,
    /// `false` builds the baseline without a symbol channel.
    pub bottleneck: bool,
}

impl Architecture {
    /// input → 64 → 64 → K for the sender, K → 64 → C for the receiver.
    pub fn emergent(input_dim: usize, vocab_size: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            sender_hidden: vec![64, 64],
            vocab_size,
            receiver_hidden: vec![64],
            num_classes,
            temperature: 1.0,
            bottleneck: true,
        }
    }

    pub fn baseline(input_dim: usize, vocab_size: usize, num_classes: usize) -> Self {
        Self {
            bottleneck: false,
            ..Self::emergent(input_dim, vocab_size, num_classes)
        }
    }

    /// Builds a freshly initialized model. Layer weights depend only on the
    /// widths and `seed`, never on whether the channel is present.
    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sender = stack(self.input_dim, &self.sender_hidden, self.vocab_size, &mut rng)?;
        let receiver = stack(self.vocab_size, &self.receiver_hidden, self.num_classes, &mut rng)?;
        let bottleneck = if self.bottleneck {
            Some(GumbelSoftmaxSampler::new(
                self.vocab_size,
                self.temperature,
                channel_seed(seed),
            )?)
        } else {
            None
        };
        ModelGraph::from_parts(sender, bottleneck, receiver)
    }
}

pub(crate) fn channel_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

fn stack(
    input: usize,
    hidden: &[usize],
    output: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DenseLayer>> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            DenseLayer::glorot(w[0], w[1], act, rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Soft relaxation with sampled noise.
    Train,
    /// Hard one-hot symbols, noise-free; symbols are recorded.
    Eval,
}

/// How attribution and bypass comparisons traverse the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottleneckPath {
    /// Sender logits go straight to the receiver.
    Identity,
    /// Noise-free relaxation `softmax(log_softmax(ℓ)/τ)`.
    Relaxed,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub symbols: Option<Vec<SymbolRecord>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub classes: Vec<usize>,
    pub symbols: Option<Vec<usize>>,
}

/// Gradients in [`ModelGraph::params`] order, plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    sender: Vec<DenseLayer>,
    bottleneck: Option<GumbelSoftmaxSampler>,
    receiver: Vec<DenseLayer>,
}

/// A single differentiable step along a deterministic path through a model.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stage<'a> {
    Dense(&'a DenseLayer),
    Relax(f64),
}

impl ModelGraph {
    pub fn from_parts(
        sender: Vec<DenseLayer>,
        bottleneck: Option<GumbelSoftmaxSampler>,
        receiver: Vec<DenseLayer>,
    ) -> Result<Self> {
        if sender.is_empty() || receiver.is_empty() {
            return Err(Error::Input("sender and receiver need at least one layer each".into()));
        }
        for (name, layers) in [("sender", &sender), ("receiver", &receiver)] {
            for (i, w) in layers.windows(2).enumerate() {
                if w[0].out_dim() != w[1].in_dim() {
                    return Err(Error::Dimension(format!(
                        "{name} layer {i} emits {} features but layer {} takes {}",
                        w[0].out_dim(),
                        i + 1,
                        w[1].in_dim()
                    )));
                }
            }
        }
        let sent = sender.last().map(DenseLayer::out_dim).unwrap_or(0);
        if let Some(b) = &bottleneck {
            if b.vocab_size() != sent {
                return Err(Error::Dimension(format!(
                    "sender emits {sent} logits but the vocabulary has {} symbols",
                    b.vocab_size()
                )));
            }
        }
        if receiver[0].in_dim() != sent {
            return Err(Error::Dimension(format!(
                "receiver takes {} inputs but the sender emits {sent}",
                receiver[0].in_dim()
            )));
        }
        Ok(Self {
            sender,
            bottleneck,
            receiver,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sender[0].in_dim()
    }

    /// Width of the sender's output; the vocabulary size for EL models.
    pub fn message_dim(&self) -> usize {
        self.sender.last().map(DenseLayer::out_dim).unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        self.receiver.last().map(DenseLayer::out_dim).unwrap_or(0)
    }

    pub fn sender(&self) -> &[DenseLayer] {
        &self.sender
    }

    pub fn receiver(&self) -> &[DenseLayer] {
        &self.receiver
    }

    pub fn bottleneck(&self) -> Option<&GumbelSoftmaxSampler> {
        self.bottleneck.as_ref()
    }

    pub fn bottleneck_mut(&mut self) -> Option<&mut GumbelSoftmaxSampler> {
        self.bottleneck.as_mut()
    }

    pub fn has_bottleneck(&self) -> bool {
        self.bottleneck.is_some()
    }

    /// The same layers with the channel removed.
    pub fn without_bottleneck(&self) -> Self {
        let mut m = self.clone();
        m.bottleneck = None;
        m.clear_caches();
        m
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.sender
            .iter()
            .chain(&self.receiver)
            .flat_map(|l| [l.weights(), l.bias()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.sender
            .iter_mut()
            .chain(self.receiver.iter_mut())
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::Dimension(format!(
                "snapshot holds {} tensors, model has {}",
                snapshot.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter_mut().zip(snapshot) {
            p.expect_shape("snapshot tensor", s.shape())?;
            **p = s.clone();
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        for l in self.sender.iter_mut().chain(self.receiver.iter_mut()) {
            l.clear_cache();
        }
        if let Some(b) = &mut self.bottleneck {
            b.clear_cache();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_matrix("model input", self.input_dim())
    }

    /// Forward pass that caches everything [`ModelGraph::backward`] needs.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &mut self.sender {
            h = l.forward(&h)?;
        }
        let mut symbols = None;
        if let Some(b) = &mut self.bottleneck {
            match mode {
                Mode::Train => {
                    b.set_mode(SamplerMode::Soft);
                    h = b.forward(&h)?;
                }
                Mode::Eval => {
                    b.set_mode(SamplerMode::HardEval);
                    let decoded = hard_decode(&h);
                    h = b.forward(&h)?;
                    symbols = Some(
                        decoded
                            .into_iter()
                            .enumerate()
                            .map(|(sample_id, symbol_index)| SymbolRecord {
                                symbol_index,
                                relaxed_vector: None,
                                sample_id,
                            })
                            .collect(),
                    );
                }
            }
        }
        for l in &mut self.receiver {
            h = l.forward(&h)?;
        }
        Ok(ForwardOutput { logits: h, symbols })
    }

    /// Backpropagates `logit_grad` through the last forward. A hard
    /// evaluation forward passes no gradient back into the sender.
    pub fn backward(&mut self, logit_grad: &Tensor) -> Result<Gradients> {
        let mut receiver_grads = Vec::with_capacity(self.receiver.len());
        let mut g = logit_grad.clone();
        for l in self.receiver.iter().rev() {
            let lg = l.backward(&g)?;
            g = lg.input;
            receiver_grads.push([lg.weights, lg.bias]);
        }
        if let Some(b) = &self.bottleneck {
            g = match b.mode() {
                SamplerMode::Soft => b.backward(&g)?,
                SamplerMode::HardEval => Tensor::zeros(g.shape()),
            };
        }
        let mut sender_grads = Vec::with_capacity(self.sender.len());
        for l in self.sender.iter().rev() {
            let lg = l.backward(&g)?;
            g = lg.input;
            sender_grads.push([lg.weights, lg.bias]);
        }
        let params = sender_grads
            .into_iter()
            .rev()
            .chain(receiver_grads.into_iter().rev())
            .flatten()
            .collect();
        Ok(Gradients { params, input: g })
    }

    /// Cache-free evaluation: hard symbols for EL models, class argmax.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.sender {
            h = l.apply(&h)?.1;
        }
        let symbols = self.bottleneck.as_ref().map(|b| {
            let s = hard_decode(&h);
            h = one_hot(&s, b.vocab_size());
            s
        });
        for l in &self.receiver {
            h = l.apply(&h)?.1;
        }
        let classes = hard_decode(&h);
        Ok(Prediction {
            logits: h,
            classes,
            symbols,
        })
    }

    /// Sender output logits (before the channel).
    pub fn sender_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.sender {
            h = l.apply(&h)?.1;
        }
        Ok(h)
    }

    /// Deterministic logits along `path`; baselines ignore the path.
    pub fn logits_along(&self, x: &Tensor, path: BottleneckPath) -> Result<Tensor> {
        self.check_input(x)?;
        let stages = self.stages(path);
        Ok(run_stages(&stages, x)?.pop().expect("at least one stage").output)
    }

    pub(crate) fn stages(&self, path: BottleneckPath) -> Vec<Stage<'_>> {
        let mut stages: Vec<Stage<'_>> = self.sender.iter().map(Stage::Dense).collect();
        if let (Some(b), BottleneckPath::Relaxed) = (&self.bottleneck, path) {
            stages.push(Stage::Relax(b.temperature()));
        }
        stages.extend(self.receiver.iter().map(Stage::Dense));
        stages
    }

    /// Index of the stage holding `neuron` along `path`.
    pub(crate) fn stage_index(&self, neuron: &NeuronRef, path: BottleneckPath) -> Result<usize> {
        let (layers, offset) = match neuron.part {
            Part::Sender => (&self.sender, 0),
            Part::Receiver => {
                let relax = usize::from(self.has_bottleneck() && path == BottleneckPath::Relaxed);
                (&self.receiver, self.sender.len() + relax)
            }
        };
        let layer = layers.get(neuron.layer).ok_or_else(|| {
            Error::Input(format!(
                "{:?} has {} layers, no layer {}",
                neuron.part,
                layers.len(),
                neuron.layer
            ))
        })?;
        if neuron.unit >= layer.out_dim() {
            return Err(Error::Input(format!(
                "{:?} layer {} has {} units, no unit {}",
                neuron.part,
                neuron.layer,
                layer.out_dim(),
                neuron.unit
            )));
        }
        if neuron.part == Part::Receiver && neuron.layer + 1 == self.receiver.len() {
            return Err(Error::Input(
                "the receiver's output logits are not hidden units".into(),
            ));
        }
        Ok(offset + neuron.layer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Sender,
    Receiver,
}

/// A post-activation unit: `unit` of layer `layer` in `part`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronRef {
    pub part: Part,
    pub layer: usize,
    pub unit: usize,
}

impl NeuronRef {
    /// The sender output logit that feeds vocabulary slot `symbol`.
    pub fn symbol_logit(model: &ModelGraph, symbol: usize) -> Self {
        Self {
            part: Part::Sender,
            layer: model.sender().len() - 1,
            unit: symbol,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StageTrace {
    /// Pre-activation for dense stages, the output for relaxation stages.
    pub(crate) inner: Tensor,
    pub(crate) output: Tensor,
}

pub(crate) fn run_stages(stages: &[Stage<'_>], x: &Tensor) -> Result<Vec<StageTrace>> {
    let mut traces: Vec<StageTrace> = Vec::with_capacity(stages.len());
    for stage in stages {
        let input = traces.last().map(|t| &t.output).unwrap_or(x);
        let t = match stage {
            Stage::Dense(l) => {
                let (inner, output) = l.apply(input)?;
                StageTrace { inner, output }
            }
            Stage::Relax(tau) => {
                let out = relax(input, None, *tau)?;
                StageTrace {
                    inner: out.clone(),
                    output: out,
                }
            }
        };
        traces.push(t);
    }
    Ok(traces)
}

/// Gradient w.r.t. the model input given the gradient at the output of
/// stage `from`.
pub(crate) fn backprop_to_input(
    stages: &[Stage<'_>],
    traces: &[StageTrace],
    from: usize,
    grad: Tensor,
) -> Result<Tensor> {
    let mut g = grad;
    for i in (0..=from).rev() {
        g = match stages[i] {
            Stage::Dense(l) => l.input_grad(&traces[i].inner, &g)?,
            Stage::Relax(tau) => relaxation_vjp(&traces[i].inner, &g, tau),
        };
    }
    Ok(g)
}

/// Gradient at the output of stage `to` given the gradient at the final output.
pub(crate) fn backprop_to_stage(
    stages: &[Stage<'_>],
    traces: &[StageTrace],
    to: usize,
    grad: Tensor,
) -> Result<Tensor> {
    let mut g = grad;
    for i in ((to + 1)..stages.len()).rev() {
        g = match stages[i] {
            Stage::Dense(l) => l.input_grad(&traces[i].inner, &g)?,
            Stage::Relax(tau) => relaxation_vjp(&traces[i].inner, &g, tau),
        };
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Noise;

    fn tiny(bottleneck: bool) -> ModelGraph {
        Architecture {
            input_dim: 6,
            sender_hidden: vec![5],
            vocab_size: 5,
            receiver_hidden: vec![4],
            num_classes: 3,
            temperature: 1.0,
            bottleneck,
        }
        .build(9)
        .unwrap()
    }

    fn input(batch: usize) -> Tensor {
        let data = (0..batch * 6).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        Tensor::new(vec![batch, 6], data).unwrap()
    }

    #[test]
    fn default_architecture_widths() {
        let m = Architecture::emergent(28, 100, 4).build(0).unwrap();
        let dims: Vec<_> = m.sender().iter().map(|l| (l.in_dim(), l.out_dim())).collect();
        assert_eq!(dims, vec![(28, 64), (64, 64), (64, 100)]);
        let dims: Vec<_> = m.receiver().iter().map(|l| (l.in_dim(), l.out_dim())).collect();
        assert_eq!(dims, vec![(100, 64), (64, 4)]);
        assert_eq!(m.sender()[2].activation(), Activation::Identity);
        assert_eq!(m.receiver()[0].activation(), Activation::Relu);
    }

    #[test]
    fn both_variants_produce_class_logits() {
        let x = input(3);
        for b in [true, false] {
            let mut m = tiny(b);
            let out = m.forward(&x, Mode::Train).unwrap();
            assert_eq!(out.logits.shape(), &[3, 3]);
        }
    }

    #[test]
    fn identity_bypass_reproduces_baseline() {
        let el = tiny(true);
        let base = tiny(false);
        assert_eq!(el.snapshot(), base.snapshot());
        let x = input(4);
        let a = el.logits_along(&x, BottleneckPath::Identity).unwrap();
        let b = base.predict(&x).unwrap().logits;
        assert_eq!(a, b);
        assert_eq!(el.without_bottleneck().predict(&x).unwrap().logits, b);
    }

    #[test]
    fn zero_noise_unit_temperature_is_softmax_bottleneck() {
        let mut m = tiny(true);
        m.bottleneck_mut().unwrap().set_noise(Noise::Zero);
        let x = input(2);
        let train = m.forward(&x, Mode::Train).unwrap().logits;
        let relaxed = m.logits_along(&x, BottleneckPath::Relaxed).unwrap();
        for (a, b) in train.data().iter().zip(relaxed.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_records_one_symbol_per_sample() {
        let mut m = Architecture::emergent(28, 100, 4).build(1).unwrap();
        let x = Tensor::filled(&[1, 28], 0.5);
        let out = m.forward(&x, Mode::Eval).unwrap();
        let syms = out.symbols.unwrap();
        assert_eq!(syms.len(), 1);
        assert!(syms[0].symbol_index < 100);
        let p = m.predict(&x).unwrap();
        assert_eq!(p.symbols.unwrap(), vec![syms[0].symbol_index]);
        assert_eq!(p.logits, out.logits);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let mut m = tiny(true);
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 5]), Mode::Train),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn mismatched_parts_rejected() {
        let m = tiny(true);
        let wrong = GumbelSoftmaxSampler::new(7, 1.0, 0).unwrap();
        assert!(ModelGraph::from_parts(m.sender().to_vec(), Some(wrong), m.receiver().to_vec()).is_err());
    }

    #[test]
    fn snapshot_restore_round_trips() {
        let mut m = tiny(true);
        let snap = m.snapshot();
        for p in m.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
        assert_ne!(m.snapshot(), snap);
        m.restore(&snap).unwrap();
        assert_eq!(m.snapshot(), snap);
    }

    #[test]
    fn neuron_selectors_validated() {
        let m = tiny(true);
        let ok = NeuronRef::symbol_logit(&m, 4);
        assert_eq!(m.stage_index(&ok, BottleneckPath::Identity).unwrap(), 1);
        let bad_unit = NeuronRef { unit: 5, ..ok };
        assert!(m.stage_index(&bad_unit, BottleneckPath::Identity).is_err());
        let out_logit = NeuronRef { part: Part::Receiver, layer: 1, unit: 0 };
        assert!(m.stage_index(&out_logit, BottleneckPath::Identity).is_err());
        let hidden = NeuronRef { part: Part::Receiver, layer: 0, unit: 0 };
        assert_eq!(m.stage_index(&hidden, BottleneckPath::Relaxed).unwrap(), 3);
    }
}

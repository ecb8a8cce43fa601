//! Integrated Gradients and neuron conductance.
//!
//! Both integrals along the straight path from the baseline `x′` to `x` are
//! approximated by the midpoint rule with `m` steps, evaluated as a single
//! `[m, D]` batch:
//!
//! - `IG_i(x) = (x_i − x′_i) · mean_s ∂F/∂x_i (p_s)`
//! - `Cond^y_i(x) = (x_i − x′_i) · mean_s ∂F/∂y (p_s) · ∂y/∂x_i (p_s)`
//!
//! with `p_s = x′ + (s − ½)/m · (x − x′)`. For any hidden layer the
//! conductances of its units sum to IG at every path point, so layer
//! completeness holds up to rounding.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::model::{backprop_to_input, backprop_to_stage, run_stages, BottleneckPath, ModelGraph, NeuronRef, StageTrace};
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 300;

/// Which scalar output `F` is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Pre-softmax logit of the target class.
    Logit,
    /// Softmax probability of the target class.
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The class the model predicts for `x`.
    Predicted,
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionConfig {
    /// `None` means the zero vector.
    pub baseline: Option<Tensor>,
    pub steps: usize,
    pub target: Target,
    pub output: OutputKind,
    pub path: BottleneckPath,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            baseline: None,
            steps: DEFAULT_STEPS,
            target: Target::Predicted,
            output: OutputKind::Logit,
            path: BottleneckPath::Identity,
        }
    }
}

impl AttributionConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Input("riemann steps must be at least 1".into()));
        }
        if let Some(b) = &self.baseline {
            if b.len() != input_dim {
                return Err(Error::Dimension(format!(
                    "baseline has {} values, input has {input_dim}",
                    b.len()
                )));
            }
            if !b.is_finite() {
                return Err(Error::Input("baseline contains non-finite values".into()));
            }
        }
        Ok(())
    }

    fn baseline_for(&self, dim: usize) -> Vec<f64> {
        self.baseline
            .as_ref()
            .map(|b| b.data().to_vec())
            .unwrap_or_else(|| vec![0.0; dim])
    }
}

struct PathEval<'m> {
    stages: Vec<crate::model::Stage<'m>>,
    traces: Vec<StageTrace>,
    delta: Vec<f64>,
    output_grad: Tensor,
}

fn check_point(model: &ModelGraph, x: &Tensor) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "attribution input has {} values, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Input("attribution input contains non-finite values".into()));
    }
    Ok(())
}

fn resolve_target(model: &ModelGraph, x: &Tensor, target: Target) -> Result<usize> {
    match target {
        Target::Class(c) if c < model.num_classes() => Ok(c),
        Target::Class(c) => Err(Error::Input(format!(
            "target class {c} out of range for {} classes",
            model.num_classes()
        ))),
        Target::Predicted => {
            let row = Tensor::new(vec![1, x.len()], x.data().to_vec())?;
            Ok(model.predict(&row)?.classes[0])
        }
    }
}

/// `F` and `∂F/∂logits` for each row of `logits`.
fn output_and_grad(logits: &Tensor, target: usize, kind: OutputKind) -> (Vec<f64>, Tensor) {
    let c = logits.cols();
    let mut values = Vec::with_capacity(logits.rows());
    let mut grad = Tensor::zeros(logits.shape());
    for (r, row) in logits.iter_rows().enumerate() {
        let g = grad.row_mut(r);
        match kind {
            OutputKind::Logit => {
                values.push(row[target]);
                g[target] = 1.0;
            }
            OutputKind::Probability => {
                let p = softmax(row);
                values.push(p[target]);
                for k in 0..c {
                    let onehot = if k == target { 1.0 } else { 0.0 };
                    g[k] = p[target] * (onehot - p[k]);
                }
            }
        }
    }
    (values, grad)
}

fn eval_path<'m>(model: &'m ModelGraph, x: &Tensor, config: &AttributionConfig) -> Result<PathEval<'m>> {
    check_point(model, x)?;
    config.validate(model.input_dim())?;
    let target = resolve_target(model, x, config.target)?;
    let d = x.len();
    let m = config.steps;
    let base = config.baseline_for(d);
    let delta: Vec<f64> = x.data().iter().zip(&base).map(|(a, b)| a - b).collect();
    let mut pts = Vec::with_capacity(m * d);
    for s in 0..m {
        let alpha = (s as f64 + 0.5) / m as f64;
        pts.extend(base.iter().zip(&delta).map(|(b, dl)| b + alpha * dl));
    }
    let points = Tensor::new(vec![m, d], pts)?;
    let stages = model.stages(config.path);
    let traces = run_stages(&stages, &points)?;
    let logits = &traces.last().expect("non-empty model").output;
    if let Some(step) = logits.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical {
            step: step + 1,
            detail: "non-finite model output along the attribution path".into(),
        });
    }
    let (_, output_grad) = output_and_grad(logits, target, config.output);
    Ok(PathEval {
        stages,
        traces,
        delta,
        output_grad,
    })
}

fn finite_or_step(g: &Tensor) -> Result<()> {
    if let Some(step) = g.iter_rows().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numerical {
            step: step + 1,
            detail: "non-finite gradient along the attribution path".into(),
        });
    }
    Ok(())
}

/// The attributed scalar `F(x)` for `config`'s target and output kind.
pub fn output_value(model: &ModelGraph, x: &Tensor, config: &AttributionConfig) -> Result<f64> {
    check_point(model, x)?;
    let target = resolve_target(model, x, config.target)?;
    let row = Tensor::new(vec![1, x.len()], x.data().to_vec())?;
    let logits = model.logits_along(&row, config.path)?;
    Ok(output_and_grad(&logits, target, config.output).0[0])
}

/// `F(x) − F(x′)` with the target resolved at `x`; the quantity IG sums to.
pub fn endpoint_gap(model: &ModelGraph, x: &Tensor, config: &AttributionConfig) -> Result<f64> {
    check_point(model, x)?;
    config.validate(model.input_dim())?;
    let fixed = AttributionConfig {
        target: Target::Class(resolve_target(model, x, config.target)?),
        ..config.clone()
    };
    let base = Tensor::vector(config.baseline_for(x.len()));
    Ok(output_value(model, x, &fixed)? - output_value(model, &base, &fixed)?)
}

pub fn integrated_gradients(model: &ModelGraph, x: &Tensor, config: &AttributionConfig) -> Result<Tensor> {
    let p = eval_path(model, x, config)?;
    let last = p.stages.len() - 1;
    let grads = backprop_to_input(&p.stages, &p.traces, last, p.output_grad)?;
    finite_or_step(&grads)?;
    let m = config.steps as f64;
    let mut ig = vec![0.0; p.delta.len()];
    for row in grads.iter_rows() {
        for (a, g) in ig.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok(Tensor::vector(
        ig.iter().zip(&p.delta).map(|(s, d)| d * s / m).collect(),
    ))
}

fn conductance_from(p: &PathEval<'_>, stage: usize, units: &[usize], steps: usize) -> Result<Vec<Tensor>> {
    let upstream = backprop_to_stage(&p.stages, &p.traces, stage, p.output_grad.clone())?;
    finite_or_step(&upstream)?;
    let width = upstream.cols();
    let m = steps as f64;
    units
        .iter()
        .map(|&unit| {
            // ∂y/∂x for y = unit, weighted by ∂F/∂y at each path point
            let mut seed = Tensor::zeros(&[steps, width]);
            for s in 0..steps {
                seed.row_mut(s)[unit] = upstream.row(s)[unit];
            }
            let g = backprop_to_input(&p.stages, &p.traces, stage, seed)?;
            finite_or_step(&g)?;
            let mut acc = vec![0.0; p.delta.len()];
            for row in g.iter_rows() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Ok(Tensor::vector(
                acc.iter().zip(&p.delta).map(|(s, d)| d * s / m).collect(),
            ))
        })
        .collect()
}

pub fn neuron_conductance(
    model: &ModelGraph,
    x: &Tensor,
    neuron: &NeuronRef,
    config: &AttributionConfig,
) -> Result<Tensor> {
    let stage = model.stage_index(neuron, config.path)?;
    let p = eval_path(model, x, config)?;
    Ok(conductance_from(&p, stage, &[neuron.unit], config.steps)?.remove(0))
}

/// Conductance of every unit in one layer, in unit order.
pub fn layer_conductance(
    model: &ModelGraph,
    x: &Tensor,
    part: crate::model::Part,
    layer: usize,
    config: &AttributionConfig,
) -> Result<Vec<Tensor>> {
    let probe = NeuronRef { part, layer, unit: 0 };
    let stage = model.stage_index(&probe, config.path)?;
    let width = match part {
        crate::model::Part::Sender => model.sender()[layer].out_dim(),
        crate::model::Part::Receiver => model.receiver()[layer].out_dim(),
    };
    let units: Vec<usize> = (0..width).collect();
    let p = eval_path(model, x, config)?;
    conductance_from(&p, stage, &units, config.steps)
}

/// Mean conductance per decoded symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceReport {
    pub symbols: Vec<usize>,
    pub counts: Vec<usize>,
    /// `[num_symbols, input_dim]` mean attributions, rows in `symbols` order.
    pub matrix: Tensor,
    pub feature_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolBlockSummary {
    pub symbol: usize,
    pub count: usize,
    pub dominant_block: usize,
    /// Fraction of total absolute attribution falling in the dominant block.
    pub share: f64,
    /// Mean absolute attribution per block.
    pub block_mean_abs: Vec<f64>,
}

impl ConductanceReport {
    pub fn row(&self, symbol: usize) -> Option<&[f64]> {
        self.symbols
            .iter()
            .position(|&s| s == symbol)
            .map(|i| self.matrix.row(i))
    }

    /// CSV with header `symbol,count,f0,…,f{D-1}`.
    pub fn to_csv(&self) -> String {
        let d = self.matrix.cols();
        let mut s = String::from("symbol,count");
        for i in 0..d {
            s.push_str(&format!(",f{i}"));
        }
        s.push('\n');
        for (r, (sym, count)) in self.symbols.iter().zip(&self.counts).enumerate() {
            s.push_str(&format!("{sym},{count}"));
            for v in self.matrix.row(r) {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }

    /// Splits the features into consecutive blocks of `block_size` and
    /// reports where each symbol's absolute attribution concentrates.
    pub fn block_summary(&self, block_size: usize) -> Result<Vec<SymbolBlockSummary>> {
        let d = self.matrix.cols();
        if block_size == 0 || !d.is_multiple_of(block_size) {
            return Err(Error::Input(format!(
                "block size {block_size} does not divide {d} features"
            )));
        }
        let blocks = d / block_size;
        Ok(self
            .symbols
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(r, (&symbol, &count))| {
                let row = self.matrix.row(r);
                let mass: Vec<f64> = (0..blocks)
                    .map(|b| row[b * block_size..(b + 1) * block_size].iter().map(|v| v.abs()).sum())
                    .collect();
                let total: f64 = mass.iter().sum();
                let mut dominant = 0;
                for (b, &v) in mass.iter().enumerate() {
                    if v > mass[dominant] {
                        dominant = b;
                    }
                }
                SymbolBlockSummary {
                    symbol,
                    count,
                    dominant_block: dominant,
                    share: if total > 0.0 { mass[dominant] / total } else { 0.0 },
                    block_mean_abs: mass.iter().map(|m| m / block_size as f64).collect(),
                }
            })
            .collect())
    }
}

/// For every sample: decode its symbol, attribute the sender logit of that
/// symbol back to the input, then average per symbol.
pub fn per_symbol_report(
    model: &ModelGraph,
    dataset: &Dataset,
    config: &AttributionConfig,
) -> Result<ConductanceReport> {
    if !model.has_bottleneck() {
        return Err(Error::UnsupportedModel(
            "per-symbol conductance needs a model with a symbol channel".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Input("cannot attribute an empty dataset".into()));
    }
    if dataset.num_features() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "dataset has {} features, model expects {}",
            dataset.num_features(),
            model.input_dim()
        )));
    }
    config.validate(model.input_dim())?;
    let symbols = model
        .predict(&dataset.features)?
        .symbols
        .expect("bottleneck models decode symbols");

    let rows: Vec<Result<(usize, Tensor)>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = Tensor::vector(dataset.features.row(i).to_vec());
            let neuron = NeuronRef::symbol_logit(model, symbols[i]);
            Ok((symbols[i], neuron_conductance(model, &x, &neuron, config)?))
        })
        .collect();

    let d = model.input_dim();
    let mut acc: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for r in rows {
        let (sym, cond) = r?;
        let e = acc.entry(sym).or_insert_with(|| (vec![0.0; d], 0));
        for (a, v) in e.0.iter_mut().zip(cond.data()) {
            *a += v;
        }
        e.1 += 1;
    }
    let mut syms = Vec::with_capacity(acc.len());
    let mut counts = Vec::with_capacity(acc.len());
    let mut data = Vec::with_capacity(acc.len() * d);
    for (sym, (sum, n)) in acc {
        syms.push(sym);
        counts.push(n);
        data.extend(sum.iter().map(|v| v / n as f64));
    }
    Ok(ConductanceReport {
        matrix: Tensor::new(vec![syms.len(), d], data)?,
        symbols: syms,
        counts,
        feature_labels: dataset.feature_names.clone(),
    })
}

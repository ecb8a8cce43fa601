//! Classification metrics and the symbol inventory.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolUsage {
    pub symbol: usize,
    pub count: usize,
    /// Number of samples carrying this symbol per predicted class.
    pub predicted_classes: Vec<usize>,
}

/// Sorted unique symbols with usage statistics. Empty for baseline models.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolInventory(pub Vec<SymbolUsage>);

impl SymbolInventory {
    pub fn from_symbols(symbols: &[usize], predicted: &[usize], num_classes: usize) -> Self {
        let mut map: BTreeMap<usize, SymbolUsage> = BTreeMap::new();
        for (&s, &p) in symbols.iter().zip(predicted) {
            let e = map.entry(s).or_insert_with(|| SymbolUsage {
                symbol: s,
                count: 0,
                predicted_classes: vec![0; num_classes],
            });
            e.count += 1;
            e.predicted_classes[p] += 1;
        }
        Self(map.into_values().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn symbols(&self) -> Vec<usize> {
        self.0.iter().map(|u| u.symbol).collect()
    }
}

/// `"4, 20, 47, 58"`, or `"None"` when no symbols were produced.
impl fmt::Display for SymbolInventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("None");
        }
        let parts: Vec<String> = self.0.iter().map(|u| u.symbol.to_string()).collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Macro-averaged F1 over all classes.
    pub f1: f64,
    pub per_class_f1: Vec<f64>,
    pub symbol_inventory: SymbolInventory,
}

impl EvalReport {
    pub fn from_predictions(
        predicted: &[usize],
        truth: &[usize],
        num_classes: usize,
        symbols: Option<&[usize]>,
    ) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Input("cannot evaluate on an empty set".into()));
        }
        if predicted.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
        let per_class_f1 = per_class_f1(predicted, truth, num_classes);
        let f1 = per_class_f1.iter().sum::<f64>() / num_classes as f64;
        let symbol_inventory = symbols
            .map(|s| SymbolInventory::from_symbols(s, predicted, num_classes))
            .unwrap_or_default();
        Ok(Self {
            samples: truth.len(),
            correct,
            accuracy: correct as f64 / truth.len() as f64,
            f1,
            per_class_f1,
            symbol_inventory,
        })
    }
}

/// F1 per class; a class absent from both predictions and truth scores 0.
pub fn per_class_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> Vec<f64> {
    (0..num_classes)
        .map(|c| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for (&p, &t) in predicted.iter().zip(truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .collect()
}

pub fn macro_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> f64 {
    per_class_f1(predicted, truth, num_classes).iter().sum::<f64>() / num_classes as f64
}

//! Mini-batch Adam training with early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{gumbel_noise, relax};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::softmax_cross_entropy;
use crate::metrics::EvalReport;
use crate::model::{channel_seed, Mode, ModelGraph};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub temperature: f64,
    /// Per-epoch multiplicative temperature decay; 1.0 keeps τ constant.
    pub temperature_decay: f64,
    pub min_temperature: f64,
    pub straight_through: bool,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            temperature: 1.0,
            temperature_decay: 1.0,
            min_temperature: 1.0,
            straight_through: false,
            vocab_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) {
            return Err(Error::Input(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Input("batch size, max epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Input(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !positive(self.temperature) || !positive(self.min_temperature) {
            return Err(Error::Input("temperatures must be positive".into()));
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay <= 1.0) {
            return Err(Error::Input(format!(
                "temperature decay must lie in (0, 1], got {}",
                self.temperature_decay
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Input("vocabulary needs at least 2 symbols".into()));
        }
        Ok(())
    }

    /// Channel temperature for a 1-based epoch.
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        let t = self.temperature * self.temperature_decay.powi(epoch as i32 - 1);
        t.max(self.min_temperature.min(self.temperature))
    }
}

/// Patience-based stopping on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|(_, b)| loss < b);
        if improved {
            self.best = Some((epoch, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,temperature\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                e.epoch, e.train_loss, e.val_loss, e.temperature
            ));
        }
        s
    }
}

/// Seed of the validation noise stream for a run seeded with `seed`.
pub fn val_seed(seed: u64) -> u64 {
    seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407)
}

fn check_dataset(model: &ModelGraph, d: &Dataset, what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Input(format!("{what} set is empty")));
    }
    if d.num_features() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "{what} set has {} features, model expects {}",
            d.num_features(),
            model.input_dim()
        )));
    }
    if let Some(&l) = d.labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::Input(format!(
            "{what} set has label {l} but the model predicts {} classes",
            model.num_classes()
        )));
    }
    if !d.features.is_finite() {
        return Err(Error::Input(format!("{what} set has non-finite features")));
    }
    Ok(())
}

/// Logits through the soft channel with noise drawn from `rng`, or plain
/// logits for baselines. Does not touch any training cache.
pub fn stochastic_logits(model: &ModelGraph, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut h = model.sender_logits(x)?;
    if let Some(b) = model.bottleneck() {
        let noise = gumbel_noise(h.len(), rng).reshape(h.shape().to_vec())?;
        h = relax(&h, Some(&noise), b.temperature())?;
    }
    for l in model.receiver() {
        h = l.apply(&h)?.1;
    }
    Ok(h)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Input(_) => Error::TrainingDiverged { epoch },
        e => e,
    }
}

/// Mean cross-entropy on `data` using a fresh noise stream from `seed`.
pub fn validation_loss(model: &ModelGraph, data: &Dataset, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = stochastic_logits(model, &data.features, &mut rng)?;
    Ok(softmax_cross_entropy(&logits, &data.labels)?.0)
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation loss.
pub fn train(model: &mut ModelGraph, train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    check_dataset(model, train, "training")?;
    check_dataset(model, val, "validation")?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    if let Some(b) = model.bottleneck_mut() {
        b.reseed(channel_seed(config.seed));
        b.set_straight_through(config.straight_through);
        b.set_noise(crate::channel::Noise::Sampled);
    }
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.snapshot();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let vseed = val_seed(config.seed);

    for epoch in 1..=config.max_epochs {
        let tau = config.temperature_at(epoch);
        if let Some(b) = model.bottleneck_mut() {
            b.set_temperature(tau)?;
        }
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train.features.select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            // finite inputs reaching the channel as non-finite logits means the
            // weights have blown up
            let out = model.forward(&x, Mode::Train).map_err(|e| diverged(e, epoch))?;
            let (loss, grad) = softmax_cross_entropy(&out.logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * batch.len() as f64;
            let grads = model.backward(&grad)?;
            adam.step(&mut model.params_mut(), &grads.params)?;
            if !model.params().iter().all(|t| t.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
        model.clear_caches();
        let train_loss = total / train.len() as f64;
        let val_loss = validation_loss(model, val, vseed).map_err(|e| diverged(e, epoch))?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            temperature: tau,
        });
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = model.snapshot();
        }
        if decision.stop {
            break;
        }
    }

    model.restore(&best)?;
    let best_epoch = stopper.best_epoch().expect("at least one epoch ran");
    if let Some(b) = model.bottleneck_mut() {
        b.set_temperature(config.temperature_at(best_epoch))?;
    }
    Ok(TrainLog {
        stopped_early: epochs.len() < config.max_epochs,
        best_epoch,
        best_val_loss: stopper.best_loss().expect("at least one epoch ran"),
        epochs,
    })
}

/// Hard-decoded evaluation: accuracy, macro-F1 and the symbol inventory.
pub fn evaluate(model: &ModelGraph, test: &Dataset) -> Result<EvalReport> {
    check_dataset(model, test, "test")?;
    let p = model.predict(&test.features)?;
    EvalReport::from_predictions(&p.classes, &test.labels, model.num_classes(), p.symbols.as_deref())
}

//! The symbol channel: Gumbel noise, the Gumbel-softmax relaxation and hard
//! symbol decoding.
//!
//! In soft mode each row of sender logits `ℓ` becomes
//! `w̃ = softmax((log_softmax(ℓ) + g) / τ)` with `g` standard Gumbel noise.
//! Because `log_softmax` only shifts a row, its Jacobian drops out of the
//! backward pass and the logit gradient is the softmax Jacobian of `w̃`
//! scaled by `1/τ`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::log_softmax;
use crate::tensor::Tensor;

/// Uniform draws are clamped to `(UNIFORM_EPS, 1 − UNIFORM_EPS)`.
pub const UNIFORM_EPS: f64 = 1e-12;

/// `−log(−log(u))` with `u` clamped away from 0 and 1.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// `count` independent standard Gumbel draws.
pub fn gumbel_noise<R: RngCore + ?Sized>(count: usize, rng: &mut R) -> Tensor {
    let data = (0..count)
        .map(|_| gumbel_from_uniform(rng.random::<f64>()))
        .collect();
    Tensor::vector(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Continuous relaxation, used for training.
    Soft,
    /// Exact one-hot vectors of the decoded symbol.
    HardEval,
}

/// Where the perturbation `g` comes from on the next soft forward.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Fresh draws from the sampler's own stream.
    Sampled,
    /// `g = 0`; the relaxation reduces to a tempered softmax.
    Zero,
    /// A fixed `[batch, K]` noise matrix, e.g. for gradient checks.
    Fixed(Tensor),
}

/// One decoded symbol for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolRecord {
    pub symbol_index: usize,
    pub relaxed_vector: Option<Tensor>,
    pub sample_id: usize,
}

#[derive(Debug, Clone)]
struct ChannelCache {
    output: Tensor,
}

#[derive(Debug, Clone)]
pub struct GumbelSoftmaxSampler {
    vocab_size: usize,
    temperature: f64,
    mode: SamplerMode,
    straight_through: bool,
    noise: Noise,
    seed: u64,
    rng: ChaCha8Rng,
    cache: Option<ChannelCache>,
}

impl GumbelSoftmaxSampler {
    pub fn new(vocab_size: usize, temperature: f64, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Input(format!(
                "vocabulary size must be at least 2, got {vocab_size}"
            )));
        }
        check_temperature(temperature)?;
        Ok(Self {
            vocab_size,
            temperature,
            mode: SamplerMode::Soft,
            straight_through: false,
            noise: Noise::Sampled,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        check_temperature(temperature)?;
        self.temperature = temperature;
        Ok(())
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: SamplerMode) {
        self.mode = mode;
    }

    pub fn straight_through(&self) -> bool {
        self.straight_through
    }

    /// Forward emits the one-hot of the relaxed sample while gradients flow
    /// through the soft relaxation.
    pub fn set_straight_through(&mut self, on: bool) {
        self.straight_through = on;
    }

    pub fn set_noise(&mut self, noise: Noise) {
        self.noise = noise;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Restarts the noise stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_logits(&self, logits: &Tensor) -> Result<()> {
        logits.expect_matrix("sampler logits", self.vocab_size)?;
        if !logits.is_finite() {
            return Err(Error::Input("sampler logits contain non-finite values".into()));
        }
        Ok(())
    }

    fn draw_noise(&mut self, batch: usize) -> Result<Option<Tensor>> {
        let k = self.vocab_size;
        match &self.noise {
            Noise::Zero => Ok(None),
            Noise::Fixed(t) => {
                t.expect_shape("fixed sampler noise", &[batch, k])?;
                Ok(Some(t.clone()))
            }
            Noise::Sampled => {
                let g = gumbel_noise(batch * k, &mut self.rng);
                Ok(Some(g.reshape(vec![batch, k])?))
            }
        }
    }

    /// Relaxed sample for each row of `logits` (`[batch, K]`). In
    /// [`SamplerMode::HardEval`] the output is the one-hot of the noise-free
    /// argmax instead.
    pub fn forward(&mut self, logits: &Tensor) -> Result<Tensor> {
        self.check_logits(logits)?;
        if self.mode == SamplerMode::HardEval {
            self.cache = None;
            return Ok(one_hot(&hard_decode(logits), self.vocab_size));
        }
        let noise = self.draw_noise(logits.rows())?;
        let soft = relax(logits, noise.as_ref(), self.temperature)?;
        let out = if self.straight_through {
            one_hot(&hard_decode(&soft), self.vocab_size)
        } else {
            soft.clone()
        };
        self.cache = Some(ChannelCache { output: soft });
        Ok(out)
    }

    /// Jacobian-vector product of the relaxation with noise held fixed:
    /// `∂L/∂ℓ_k = w̃_k (u_k − Σ_j u_j w̃_j) / τ` for upstream gradient `u`.
    pub fn backward(&self, upstream: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::State("sampler backward called without a cached soft forward".into())
        })?;
        upstream.expect_shape("sampler upstream gradient", cache.output.shape())?;
        Ok(relaxation_vjp(&cache.output, upstream, self.temperature))
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Input(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// `softmax((log_softmax(ℓ) + g) / τ)` row by row.
pub fn relax(logits: &Tensor, noise: Option<&Tensor>, temperature: f64) -> Result<Tensor> {
    let k = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for (r, row) in logits.iter_rows().enumerate() {
        let logp = log_softmax(row);
        let scaled: Vec<f64> = match noise {
            Some(g) => logp
                .iter()
                .zip(g.row(r))
                .map(|(l, gi)| (l + gi) / temperature)
                .collect(),
            None => logp.iter().map(|l| l / temperature).collect(),
        };
        out.extend(crate::loss::softmax(&scaled));
    }
    Tensor::new(vec![logits.rows(), k], out)
}

pub(crate) fn relaxation_vjp(output: &Tensor, upstream: &Tensor, temperature: f64) -> Tensor {
    let mut grad = Vec::with_capacity(output.len());
    for (w, u) in output.iter_rows().zip(upstream.iter_rows()) {
        let dot: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
        grad.extend(w.iter().zip(u).map(|(wk, uk)| wk * (uk - dot) / temperature));
    }
    Tensor::new(output.shape().to_vec(), grad).expect("shape preserved")
}

/// Row-wise argmax; ties go to the lowest index.
pub fn hard_decode(relaxed: &Tensor) -> Vec<usize> {
    relaxed
        .iter_rows()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn one_hot(symbols: &[usize], vocab_size: usize) -> Tensor {
    let mut t = Tensor::zeros(&[symbols.len(), vocab_size]);
    for (r, &s) in symbols.iter().enumerate() {
        t.row_mut(r)[s] = 1.0;
    }
    t
}

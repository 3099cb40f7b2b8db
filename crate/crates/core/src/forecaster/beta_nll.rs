//! Variance-weighted Gaussian negative log-likelihood (beta-NLL) and a
//! full-batch gradient-descent trainer for the linear two-head model.
//!
//! Each step's NLL term is weighted by `variance^beta`, and the weight is
//! held constant when differentiating (a stop-gradient). `beta = 0` is the
//! plain Gaussian NLL without its constant term.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    check_training_set, LinearTwoHeadModel, SeriesWindow, VarianceLink, DEFAULT_BETA,
    DEFAULT_VARIANCE_FLOOR,
};
use crate::error::{Error, Result};

/// Beta-NLL of one horizon.
pub fn beta_nll_loss(y: &[f64], means: &[f64], variances: &[f64], beta: f64) -> Result<f64> {
    if y.len() != means.len() || y.len() != variances.len() {
        return Err(Error::invalid("beta-NLL inputs differ in length"));
    }
    let mut loss = 0.0;
    for ((y, f), &v) in y.iter().zip(means).zip(variances) {
        if !(v > 0.0) {
            return Err(Error::invalid(format!("variance {v} is not positive")));
        }
        let r = y - f;
        loss += v.powf(beta) * (0.5 * v.ln() + r * r / (2.0 * v));
    }
    Ok(loss)
}

/// Mean beta-NLL over `batch` under `model`, with the per-step weights taken
/// from `weights_from` instead of `model`. Its gradient in `model`'s
/// parameters, evaluated at `weights_from == model`, is what
/// [`beta_nll_gradient`] returns.
pub fn frozen_weight_objective(
    model: &LinearTwoHeadModel,
    weights_from: &LinearTwoHeadModel,
    batch: &[SeriesWindow],
) -> Result<f64> {
    let mut total = 0.0;
    for w in batch {
        let x = model.features(&w.past)?;
        let (means, vars, _) = model.heads(&x);
        let (_, frozen, _) = weights_from.heads(&weights_from.features(&w.past)?);
        for (t, y) in w.future()?.iter().enumerate() {
            let r = y - means[t];
            let v = vars[t];
            total += frozen[t].powf(model.beta) * (0.5 * v.ln() + r * r / (2.0 * v));
        }
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean batch loss, laid out like the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl ModelGradient {
    fn zeros(horizon: usize, n_features: usize) -> Self {
        Self {
            mean: vec![vec![0.0; n_features]; horizon],
            var: vec![vec![0.0; n_features]; horizon],
        }
    }

    /// All components, mean head first.
    pub fn flatten(&self) -> Vec<f64> {
        self.mean
            .iter()
            .chain(&self.var)
            .flatten()
            .copied()
            .collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.mean
            .iter()
            .chain(&self.var)
            .flatten()
            .map(|g| g * g)
            .sum()
    }
}

/// Exact gradient of the mean beta-NLL over `batch`, treating the
/// `variance^beta` weights as constants.
pub fn beta_nll_gradient(
    model: &LinearTwoHeadModel,
    batch: &[SeriesWindow],
) -> Result<ModelGradient> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient needs a non-empty batch"));
    }
    let h = model.horizon();
    let mut grad = ModelGradient::zeros(h, model.n_features());
    for w in batch {
        let y = w.future()?;
        if y.len() != h {
            return Err(Error::invalid(format!(
                "series `{}` has {} future values, model horizon is {h}",
                w.id,
                y.len()
            )));
        }
        let x = model.features(&w.past)?;
        let (means, vars, z) = model.heads(&x);
        for t in 0..h {
            let v = vars[t];
            let weight = v.powf(model.beta);
            let r = y[t] - means[t];
            let d_mean = weight * (-r / v);
            let d_var = weight
                * (0.5 / v - r * r / (2.0 * v * v))
                * model.link.derivative(z[t], model.variance_floor);
            for (j, xj) in x.iter().enumerate() {
                grad.mean[t][j] += d_mean * xj;
                grad.var[t][j] += d_var * xj;
            }
        }
    }
    let n = batch.len() as f64;
    for g in grad.mean.iter_mut().chain(grad.var.iter_mut()).flatten() {
        *g /= n;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaNllConfig {
    pub lag: usize,
    pub horizon: usize,
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub variance_floor: f64,
}

impl BetaNllConfig {
    pub fn new(lag: usize, horizon: usize) -> Self {
        Self {
            lag,
            horizon,
            beta: DEFAULT_BETA,
            epochs: 1000,
            learning_rate: 0.1,
            seed: 0,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

/// Result of a beta-NLL training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: LinearTwoHeadModel,
    /// Mean training loss before the first epoch and after each epoch.
    pub losses: Vec<f64>,
}

const MAX_HALVINGS: usize = 60;
const STEP_GROWTH: f64 = 1.2;

#[derive(Clone, Copy)]
enum Block {
    Mean,
    Var,
}

/// Full-batch gradient descent from a seeded small random start. Each epoch
/// steps the mean head, then the variance head, each with its own learning
/// rate. A step that raises the loss is retried at half the rate, so the
/// recorded loss never increases; an accepted step lets the rate grow.
///
/// The variance head follows the stop-gradient direction, which is not always
/// a descent direction for the weighted loss itself; when no step size helps,
/// that block is skipped for the epoch. The mean-head gradient is exact for
/// both, so the mean head keeps making progress either way.
pub fn fit_beta_nll(train: &[SeriesWindow], config: &BetaNllConfig) -> Result<TrainingRun> {
    let BetaNllConfig {
        lag,
        horizon,
        beta,
        epochs,
        learning_rate,
        seed,
        variance_floor,
    } = *config;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta {beta} outside [0,1]")));
    }
    if !(learning_rate > 0.0) || !(variance_floor > 0.0) {
        return Err(Error::invalid(
            "learning rate and variance floor must be positive",
        ));
    }
    check_training_set(train, lag, horizon)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..horizon)
            .map(|_| (0..n).map(|_| init.sample(&mut rng)).collect())
            .collect()
    };
    let mean_weights = draw(lag + 1);
    let var_weights = draw(lag + 1);
    let mut model = LinearTwoHeadModel {
        lag,
        mean_weights,
        var_weights,
        variance_floor,
        beta,
        link: VarianceLink::Softplus,
        ridge_fallback: false,
    };

    let mut loss = batch_loss(&model, train)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss });
    }
    let mut losses = vec![loss];
    let mut rates = [learning_rate; 2];
    for epoch in 1..=epochs {
        let mut moved = false;
        for (block, lr) in [Block::Mean, Block::Var].into_iter().zip(rates.iter_mut()) {
            let grad = beta_nll_gradient(&model, train)?;
            let mut trial = *lr;
            for _ in 0..MAX_HALVINGS {
                let candidate = step(&model, &grad, block, trial);
                let cand_loss = batch_loss(&candidate, train)?;
                if cand_loss.is_finite() && cand_loss <= loss {
                    moved |= candidate != model;
                    model = candidate;
                    loss = cand_loss;
                    *lr = trial * STEP_GROWTH;
                    break;
                }
                trial *= 0.5;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        losses.push(loss);
        if !moved {
            // no descent at any step size: stationary to working precision
            break;
        }
    }
    Ok(TrainingRun { model, losses })
}

fn step(
    model: &LinearTwoHeadModel,
    grad: &ModelGradient,
    block: Block,
    lr: f64,
) -> LinearTwoHeadModel {
    let mut next = model.clone();
    let (weights, g) = match block {
        Block::Mean => (&mut next.mean_weights, &grad.mean),
        Block::Var => (&mut next.var_weights, &grad.var),
    };
    for (w, g) in weights.iter_mut().zip(g) {
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= lr * gi;
        }
    }
    next
}

/// Mean beta-NLL over the batch with the weights at the current parameters.
pub fn batch_loss(model: &LinearTwoHeadModel, batch: &[SeriesWindow]) -> Result<f64> {
    let mut total = 0.0;
    for w in batch {
        let (means, vars) = model.predict_past(&w.past)?;
        total += beta_nll_loss(w.future()?, &means, &vars, model.beta)?;
    }
    Ok(total / batch.len() as f64)
}

//! Plug-in conditional-risk estimator.
//!
//! A direct multi-horizon linear forecaster with two heads: one predicts the
//! `H` future values, the other their conditional variances. Under squared
//! error the conditional risk of a step is its conditional variance, so the
//! variance head is what every abstention policy consumes.
//!
//! Features for a window are `[1, y[T-L+1], ..., y[T]]`: an intercept plus
//! the `L` most recent past values, oldest first.

mod beta_nll;
mod two_stage;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskProfile;

pub use beta_nll::{
    batch_loss, beta_nll_gradient, beta_nll_loss, fit_beta_nll, frozen_weight_objective,
    BetaNllConfig, ModelGradient, TrainingRun,
};
pub use two_stage::{fit_two_stage, fit_two_stage_with, TwoStageConfig};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_BETA: f64 = 0.5;
/// Ridge penalty used when the least-squares design is singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// One series: observed past and, when known, the realized future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub id: String,
    pub past: Vec<f64>,
    pub future: Option<Vec<f64>>,
}

impl SeriesWindow {
    pub fn new(id: impl Into<String>, past: Vec<f64>, future: Option<Vec<f64>>) -> Result<Self> {
        let id = id.into();
        if past.is_empty() {
            return Err(Error::invalid(format!("series `{id}` has an empty past")));
        }
        let finite = past
            .iter()
            .chain(future.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!(
                "series `{id}` has non-finite values"
            )));
        }
        Ok(Self { id, past, future })
    }

    pub fn future(&self) -> Result<&[f64]> {
        self.future
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("series `{}` has no future values", self.id)))
    }
}

/// Per-series horizon predictions and variance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastBundle {
    pub id: String,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ForecastBundle {
    pub fn new(id: impl Into<String>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if means.is_empty() || means.len() != variances.len() {
            return Err(Error::invalid(format!(
                "bundle `{id}`: {} means vs {} variances",
                means.len(),
                variances.len()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!(
                "bundle `{id}`: variance {v} is not a positive finite number"
            )));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid(format!("bundle `{id}`: non-finite mean")));
        }
        Ok(Self {
            id,
            means,
            variances,
        })
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    /// Variances are the plug-in per-step conditional risks.
    pub fn profile(&self) -> RiskProfile {
        RiskProfile::new(&self.variances).expect("bundle variances are validated positive")
    }

    /// Per-step squared errors against a realized future.
    pub fn squared_errors(&self, future: &[f64]) -> Result<Vec<f64>> {
        if future.len() != self.horizon() {
            return Err(Error::invalid(format!(
                "bundle `{}`: future has {} steps, expected {}",
                self.id,
                future.len(),
                self.horizon()
            )));
        }
        Ok(self
            .means
            .iter()
            .zip(future)
            .map(|(m, y)| (y - m) * (y - m))
            .collect())
    }
}

/// How the variance head's linear output becomes a variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceLink {
    /// `max(z, floor)`; used by the least-squares fit.
    Clamp,
    /// `softplus(z) + floor`; keeps the variance positive during training.
    Softplus,
}

impl VarianceLink {
    #[inline]
    pub fn apply(self, z: f64, floor: f64) -> f64 {
        match self {
            VarianceLink::Clamp => z.max(floor),
            VarianceLink::Softplus => softplus(z) + floor,
        }
    }

    /// d variance / d z.
    #[inline]
    pub fn derivative(self, z: f64, floor: f64) -> f64 {
        match self {
            VarianceLink::Clamp => {
                if z > floor {
                    1.0
                } else {
                    0.0
                }
            }
            VarianceLink::Softplus => sigmoid(z),
        }
    }
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Direct linear forecaster with a mean head and a variance head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTwoHeadModel {
    pub lag: usize,
    /// `H` rows of `lag + 1` weights, intercept first.
    pub mean_weights: Vec<Vec<f64>>,
    pub var_weights: Vec<Vec<f64>>,
    pub variance_floor: f64,
    pub beta: f64,
    pub link: VarianceLink,
    /// Set when a least-squares solve needed the ridge fallback.
    #[serde(default)]
    pub ridge_fallback: bool,
}

impl LinearTwoHeadModel {
    pub fn horizon(&self) -> usize {
        self.mean_weights.len()
    }

    pub fn n_features(&self) -> usize {
        self.lag + 1
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        if h == 0 || self.var_weights.len() != h {
            return Err(Error::invalid("model heads disagree on the horizon"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid("variance floor must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta {} outside [0,1]", self.beta)));
        }
        let ok = self
            .mean_weights
            .iter()
            .chain(&self.var_weights)
            .all(|w| w.len() == self.lag + 1 && w.iter().all(|v| v.is_finite()));
        if !ok {
            return Err(Error::invalid("model weights are malformed or non-finite"));
        }
        Ok(())
    }

    pub(crate) fn features(&self, past: &[f64]) -> Result<Vec<f64>> {
        features(past, self.lag)
    }

    /// Means and variances for all horizon steps, given a feature vector.
    pub(crate) fn heads(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let means = self.mean_weights.iter().map(|w| dot(w, x)).collect();
        let z: Vec<f64> = self.var_weights.iter().map(|w| dot(w, x)).collect();
        let vars = z
            .iter()
            .map(|&z| self.link.apply(z, self.variance_floor))
            .collect();
        (means, vars, z)
    }

    /// Predicts all `H` steps at once from the past values.
    pub fn predict_past(&self, past: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.features(past)?;
        let (means, vars, _) = self.heads(&x);
        Ok((means, vars))
    }

    pub fn predict(&self, window: &SeriesWindow) -> Result<ForecastBundle> {
        let (means, variances) = self.predict_past(&window.past)?;
        Ok(ForecastBundle {
            id: window.id.clone(),
            means,
            variances,
        })
    }

    pub fn predict_all(&self, windows: &[SeriesWindow]) -> Result<Vec<ForecastBundle>> {
        windows.iter().map(|w| self.predict(w)).collect()
    }

    /// Mean squared error of the mean head over windows with futures.
    pub fn mse(&self, windows: &[SeriesWindow]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for w in windows {
            let bundle = self.predict(w)?;
            let errs = bundle.squared_errors(w.future()?)?;
            total += errs.iter().sum::<f64>();
            count += errs.len();
        }
        if count == 0 {
            return Err(Error::invalid("no windows to score"));
        }
        Ok(total / count as f64)
    }
}

pub(crate) fn features(past: &[f64], lag: usize) -> Result<Vec<f64>> {
    if past.len() < lag {
        return Err(Error::invalid(format!(
            "past has {} values, model needs at least {lag}",
            past.len()
        )));
    }
    let mut x = Vec::with_capacity(lag + 1);
    x.push(1.0);
    x.extend_from_slice(&past[past.len() - lag..]);
    Ok(x)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks shared fit preconditions and returns the training futures.
pub(crate) fn check_training_set(train: &[SeriesWindow], lag: usize, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    if train.len() < lag + 2 {
        return Err(Error::invalid(format!(
            "need at least {} training windows for lag {lag}, got {}",
            lag + 2,
            train.len()
        )));
    }
    for w in train {
        let fut = w.future()?;
        if fut.len() != horizon {
            return Err(Error::invalid(format!(
                "series `{}` has {} future values, expected {horizon}",
                w.id,
                fut.len()
            )));
        }
        if w.past.len() < lag {
            return Err(Error::invalid(format!(
                "series `{}` has {} past values, lag is {lag}",
                w.id,
                w.past.len()
            )));
        }
    }
    Ok(())
}

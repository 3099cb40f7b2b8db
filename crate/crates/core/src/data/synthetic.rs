//! Exchangeable AR(1) series whose noise level can be read off the input.
//!
//! Each series has a level `mu ~ U(0, 1)` and fluctuates around it as an
//! AR(1) process. Series with `mu >= 0.5` are in the high regime: the last
//! quarter of their past and their whole future are driven by noise whose
//! variance is `noise_amplification` times the base variance. A forecaster
//! that sees the recent past can therefore tell which series will be hard to
//! predict.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forecaster::SeriesWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_series: usize,
    pub past_len: usize,
    pub horizon: usize,
    pub ar_coeff: f64,
    pub base_noise_sd: f64,
    pub noise_amplification: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_series: 2000,
            past_len: 40,
            horizon: 10,
            ar_coeff: 0.5,
            base_noise_sd: 0.1,
            noise_amplification: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 || self.past_len == 0 || self.horizon == 0 {
            return Err(Error::invalid(
                "series count, past length and horizon must all be positive",
            ));
        }
        if !(self.ar_coeff > -1.0 && self.ar_coeff < 1.0) {
            return Err(Error::invalid(format!(
                "AR coefficient {} outside (-1, 1)",
                self.ar_coeff
            )));
        }
        if !(self.base_noise_sd > 0.0 && self.base_noise_sd.is_finite()) {
            return Err(Error::invalid("base noise sd must be positive"));
        }
        if !(self.noise_amplification >= 1.0 && self.noise_amplification.is_finite()) {
            return Err(Error::invalid("noise amplification must be >= 1"));
        }
        Ok(())
    }
}

/// Generator-side facts about one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTruth {
    pub id: String,
    pub level: f64,
    pub high_regime: bool,
    /// Variance of each future value given the past (1-based step `t` at
    /// index `t - 1`).
    pub variances: Vec<f64>,
}

impl SeriesTruth {
    /// Conditional mean of future step `t` (1-based) given the last past
    /// value.
    pub fn conditional_mean(&self, last: f64, ar_coeff: f64, t: usize) -> f64 {
        self.level + ar_coeff.powi(t as i32) * (last - self.level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub windows: Vec<SeriesWindow>,
    pub truth: Vec<SeriesTruth>,
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let SyntheticConfig {
        n_series,
        past_len,
        horizon,
        ar_coeff: a,
        base_noise_sd,
        noise_amplification,
        seed,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter = (past_len / 4).max(1);
    let high_sd = base_noise_sd * noise_amplification.sqrt();
    let stationary_sd = base_noise_sd / (1.0 - a * a).sqrt();

    let mut windows = Vec::with_capacity(n_series);
    let mut truth = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let id = format!("s{i}");
        let level: f64 = rng.random();
        let high = level >= 0.5;
        let future_sd = if high { high_sd } else { base_noise_sd };

        let mut dev = stationary_sd * rng.sample::<f64, _>(StandardNormal);
        let mut past = Vec::with_capacity(past_len);
        past.push(level + dev);
        for t in 1..past_len {
            let sd = if high && t >= past_len - quarter {
                high_sd
            } else {
                base_noise_sd
            };
            dev = a * dev + sd * rng.sample::<f64, _>(StandardNormal);
            past.push(level + dev);
        }
        let mut future = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            dev = a * dev + future_sd * rng.sample::<f64, _>(StandardNormal);
            future.push(level + dev);
        }

        let mut acc = 0.0;
        let variances = (0..horizon)
            .map(|k| {
                acc += a.powi(2 * k as i32);
                future_sd * future_sd * acc
            })
            .collect();
        windows.push(SeriesWindow {
            id: id.clone(),
            past,
            future: Some(future),
        });
        truth.push(SeriesTruth {
            id,
            level,
            high_regime: high,
            variances,
        });
    }
    Ok(SyntheticData { windows, truth })
}

//! Data plumbing: synthetic generation, CSV ingestion, min-max scaling and
//! whole-series train/calibration/test splits.

mod csv_io;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::SeriesWindow;

pub(crate) use csv_io::write_text;
pub use csv_io::{
    read_predictions_csv, read_series_csv, series_length, sniff_header, write_decisions_csv,
    write_predictions_csv, write_series_csv, write_truth_csv,
};
pub use synthetic::{generate, SeriesTruth, SyntheticConfig, SyntheticData};

/// Per-series affine map sending the past minimum to 0 and maximum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScale {
    pub id: String,
    pub min: f64,
    pub max: f64,
}

impl MinMaxScale {
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }

    /// Squared errors scale by the squared range.
    pub fn inverse_squared_error(&self, e: f64) -> f64 {
        e * (self.max - self.min).powi(2)
    }

    fn apply(&self, w: &SeriesWindow, f: impl Fn(&Self, f64) -> f64) -> SeriesWindow {
        SeriesWindow {
            id: w.id.clone(),
            past: w.past.iter().map(|&v| f(self, v)).collect(),
            future: w
                .future
                .as_ref()
                .map(|fut| fut.iter().map(|&v| f(self, v)).collect()),
        }
    }
}

/// Scales each series with statistics of its own past.
pub fn minmax_normalize(windows: &[SeriesWindow]) -> Result<(Vec<SeriesWindow>, Vec<MinMaxScale>)> {
    let mut out = Vec::with_capacity(windows.len());
    let mut scales = Vec::with_capacity(windows.len());
    for w in windows {
        let min = w.past.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.past.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::DegenerateScale {
                id: w.id.clone(),
                value: min,
            });
        }
        let scale = MinMaxScale {
            id: w.id.clone(),
            min,
            max,
        };
        out.push(scale.apply(w, MinMaxScale::forward));
        scales.push(scale);
    }
    Ok((out, scales))
}

/// Undoes [`minmax_normalize`].
pub fn minmax_denormalize(
    windows: &[SeriesWindow],
    scales: &[MinMaxScale],
) -> Result<Vec<SeriesWindow>> {
    if windows.len() != scales.len() {
        return Err(Error::invalid("one scale per series is required"));
    }
    windows
        .iter()
        .zip(scales)
        .map(|(w, s)| {
            if w.id != s.id {
                return Err(Error::invalid(format!(
                    "scale for `{}` applied to series `{}`",
                    s.id, w.id
                )));
            }
            Ok(s.apply(w, MinMaxScale::inverse))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<SeriesWindow>,
    pub calib: Vec<SeriesWindow>,
    pub test: Vec<SeriesWindow>,
}

/// Seeded shuffle of whole series, then a 60/20/20 partition.
pub fn split_60_20_20(windows: &[SeriesWindow], seed: u64) -> Result<Split> {
    let n = windows.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "need at least 5 series to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.6 * n as f64).round() as usize;
    let n_calib = (0.2 * n as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| windows[i].clone()).collect();
    Ok(Split {
        train: pick(&order[..n_train]),
        calib: pick(&order[n_train..n_train + n_calib]),
        test: pick(&order[n_train + n_calib..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn series(n: usize) -> Vec<SeriesWindow> {
        (0..n)
            .map(|i| {
                SeriesWindow::new(format!("s{i}"), vec![i as f64, i as f64 + 1.0], None).unwrap()
            })
            .collect()
    }

    #[test]
    fn normalize_example_and_inverse() {
        let w = SeriesWindow::new("a", vec![0.0, 10.0], Some(vec![5.0])).unwrap();
        let (n, s) = minmax_normalize(std::slice::from_ref(&w)).unwrap();
        assert_eq!(n[0].past, vec![0.0, 1.0]);
        assert_eq!(n[0].future, Some(vec![0.5]));
        let back = minmax_denormalize(&n, &s).unwrap();
        assert_eq!(back[0], w);

        let odd = SeriesWindow::new("b", vec![0.3, -1.7, 2.9, 0.1], Some(vec![4.4, -3.0])).unwrap();
        let (n, s) = minmax_normalize(std::slice::from_ref(&odd)).unwrap();
        let back = minmax_denormalize(&n, &s).unwrap();
        for (x, y) in back[0]
            .past
            .iter()
            .chain(back[0].future.as_ref().unwrap())
            .zip(odd.past.iter().chain(odd.future.as_ref().unwrap()))
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_past_is_degenerate() {
        let w = SeriesWindow::new("flat", vec![3.0, 3.0], None).unwrap();
        assert!(matches!(
            minmax_normalize(&[w]),
            Err(Error::DegenerateScale { .. })
        ));
    }

    #[test]
    fn split_sizes_and_partition() {
        let ws = series(10);
        let s = split_60_20_20(&ws, 4).unwrap();
        assert_eq!((s.train.len(), s.calib.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s, split_60_20_20(&ws, 4).unwrap());
        let ids: Vec<&str> = s
            .train
            .iter()
            .chain(&s.calib)
            .chain(&s.test)
            .map(|w| w.id.as_str())
            .collect();
        let set: HashSet<&str> = ids.iter().copied().collect();
        assert_eq!(ids.len(), 10);
        assert_eq!(set.len(), 10);
        assert!(split_60_20_20(&series(4), 0).is_err());
        for n in 5..60 {
            let s = split_60_20_20(&series(n), 1).unwrap();
            let nf = n as f64;
            assert!((s.train.len() as f64 - 0.6 * nf).abs() <= 1.0);
            assert!((s.calib.len() as f64 - 0.2 * nf).abs() <= 1.0);
            assert!((s.test.len() as f64 - 0.2 * nf).abs() <= 1.0);
        }
    }
}

use nalgebra::{DMatrix, DVector};

use super::{
    check_training_set, features, LinearTwoHeadModel, SeriesWindow, VarianceLink, DEFAULT_BETA,
    DEFAULT_VARIANCE_FLOOR, RIDGE_FALLBACK,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStageConfig {
    pub lag: usize,
    pub horizon: usize,
    pub variance_floor: f64,
    /// Fraction of the training windows (taken from the end) reserved for the
    /// variance regression. `0.0` fits both heads on every window.
    pub variance_holdout: f64,
}

impl TwoStageConfig {
    pub fn new(lag: usize, horizon: usize) -> Self {
        Self {
            lag,
            horizon,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            variance_holdout: 0.0,
        }
    }
}

/// Least-squares mean head, then least-squares regression of the squared
/// residuals for the variance head.
pub fn fit_two_stage(
    train: &[SeriesWindow],
    lag: usize,
    horizon: usize,
    variance_floor: f64,
) -> Result<LinearTwoHeadModel> {
    fit_two_stage_with(
        train,
        &TwoStageConfig {
            variance_floor,
            ..TwoStageConfig::new(lag, horizon)
        },
    )
}

pub fn fit_two_stage_with(
    train: &[SeriesWindow],
    config: &TwoStageConfig,
) -> Result<LinearTwoHeadModel> {
    let TwoStageConfig {
        lag,
        horizon,
        variance_floor,
        variance_holdout,
    } = *config;
    if !(variance_floor > 0.0) {
        return Err(Error::invalid("variance floor must be positive"));
    }
    if !(0.0..1.0).contains(&variance_holdout) {
        return Err(Error::invalid("variance holdout must lie in [0, 1)"));
    }
    check_training_set(train, lag, horizon)?;

    let n_var = (variance_holdout * train.len() as f64).round() as usize;
    let (mean_set, var_set) = if n_var == 0 {
        (train, train)
    } else {
        let split = train.len() - n_var;
        (&train[..split], &train[split..])
    };
    if mean_set.len() < lag + 2 || var_set.len() < lag + 2 {
        return Err(Error::invalid(
            "variance holdout leaves too few windows for one of the heads",
        ));
    }

    let (x, y) = design(mean_set, lag, horizon)?;
    let (mean_w, ridge_mean) = least_squares(&x, &y);

    let (xv, yv) = design(var_set, lag, horizon)?;
    let fitted = &xv * &mean_w;
    let sq_resid = (&yv - fitted).map(|r| r * r);
    let (var_w, ridge_var) = least_squares(&xv, &sq_resid);

    let rows = |w: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..horizon)
            .map(|t| w.column(t).iter().copied().collect())
            .collect()
    };
    Ok(LinearTwoHeadModel {
        lag,
        mean_weights: rows(&mean_w),
        var_weights: rows(&var_w),
        variance_floor,
        beta: DEFAULT_BETA,
        link: VarianceLink::Clamp,
        ridge_fallback: ridge_mean || ridge_var,
    })
}

/// Feature matrix (n x (L+1)) and target matrix (n x H).
fn design(
    windows: &[SeriesWindow],
    lag: usize,
    horizon: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = windows.len();
    let mut x = DMatrix::zeros(n, lag + 1);
    let mut y = DMatrix::zeros(n, horizon);
    for (i, w) in windows.iter().enumerate() {
        for (j, v) in features(&w.past, lag)?.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for (t, v) in w.future()?.iter().enumerate() {
            y[(i, t)] = *v;
        }
    }
    Ok((x, y))
}

/// Solves the normal equations for every target column at once. Falls back
/// to a small ridge penalty when the Gram matrix is numerically singular;
/// the flag reports whether that happened.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let gram = x.transpose() * x;
    let rhs = x.transpose() * y;
    if let Some(sol) = well_conditioned_solve(&gram, &rhs) {
        return (sol, false);
    }
    let p = gram.nrows();
    let ridged = &gram + DMatrix::<f64>::identity(p, p) * RIDGE_FALLBACK;
    let sol = match ridged.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => ridged
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DMatrix::zeros(p, y.ncols())),
    };
    (sol, true)
}

fn well_conditioned_solve(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = gram.diagonal().max();
    if !(scale > 0.0) {
        return None;
    }
    let ch = gram.clone().cholesky()?;
    let l: DVector<f64> = ch.l_dirty().diagonal();
    let min_pivot = l.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return None;
    }
    Some(ch.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(id: usize, past: Vec<f64>, future: Vec<f64>) -> SeriesWindow {
        SeriesWindow::new(format!("s{id}"), past, Some(future)).unwrap()
    }

    /// Gaussian elimination with partial pivoting on the normal equations,
    /// kept separate from the Cholesky path under test.
    fn normal_equations_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for (row, &target) in x.iter().zip(y) {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += row[i] * row[j];
                }
                a[i][p] += row[i] * target;
            }
        }
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
                .unwrap();
            a.swap(col, piv);
            let pivot_row = a[col].clone();
            for (r, row) in a.iter_mut().enumerate() {
                if r != col {
                    let f = row[col] / pivot_row[col];
                    for (x, y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * y;
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn noiseless_doubling_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train: Vec<_> = (0..50)
            .map(|i| {
                let past: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
                let last = past[5];
                window(i, past, vec![2.0 * last; 3])
            })
            .collect();
        let m = fit_two_stage(&train, 3, 3, 1e-6).unwrap();
        assert!(!m.ridge_fallback);
        for w in &m.mean_weights {
            // intercept, y[T-2], y[T-1], y[T]
            assert!((w[3] - 2.0).abs() < 1e-8, "{w:?}");
            assert!(w[0].abs() < 1e-8 && w[1].abs() < 1e-8 && w[2].abs() < 1e-8);
        }
        for win in &train {
            let b = m.predict(win).unwrap();
            assert!(b.variances.iter().all(|&v| v == 1e-6));
        }
    }

    #[test]
    fn constant_series_uses_ridge_fallback() {
        let train: Vec<_> = (0..10)
            .map(|i| window(i, vec![5.0; 4], vec![5.0; 2]))
            .collect();
        let m = fit_two_stage(&train, 2, 2, 1e-6).unwrap();
        assert!(m.ridge_fallback);
        let b = m.predict(&train[0]).unwrap();
        for mean in &b.means {
            assert!((mean - 5.0).abs() < 1e-6, "{mean}");
        }
        assert!(b.variances.iter().all(|&v| v == 1e-6));
    }

    #[test]
    fn mean_head_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train: Vec<_> = (0..200)
            .map(|i| {
                let past: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fut = vec![
                    0.3 + 0.7 * past[4] - 0.2 * past[3] + rng.random_range(-0.1..0.1),
                    -0.1 + 0.4 * past[2] + rng.random_range(-0.3..0.3),
                ];
                window(i, past, fut)
            })
            .collect();
        let lag = 4;
        let m = fit_two_stage(&train, lag, 2, 1e-6).unwrap();
        let xs: Vec<Vec<f64>> = train
            .iter()
            .map(|w| features(&w.past, lag).unwrap())
            .collect();
        for t in 0..2 {
            let ys: Vec<f64> = train
                .iter()
                .map(|w| w.future.as_ref().unwrap()[t])
                .collect();
            let oracle = normal_equations_oracle(&xs, &ys);
            for (a, b) in m.mean_weights[t].iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_missing_futures_and_small_sets() {
        let mut train: Vec<_> = (0..6)
            .map(|i| window(i, vec![1.0, 2.0, 3.0], vec![1.0]))
            .collect();
        assert!(fit_two_stage(&train, 5, 1, 1e-6).is_err());
        train[2].future = None;
        assert!(matches!(
            fit_two_stage(&train, 1, 1, 1e-6),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn holdout_fits_variance_on_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train: Vec<_> = (0..100)
            .map(|i| {
                let past: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let f = past[2] + rng.random_range(-0.5..0.5);
                window(i, past, vec![f])
            })
            .collect();
        let cfg = TwoStageConfig {
            variance_holdout: 0.3,
            ..TwoStageConfig::new(2, 1)
        };
        let a = fit_two_stage_with(&train, &cfg).unwrap();
        let b = fit_two_stage(&train, 2, 1, 1e-6).unwrap();
        assert_ne!(a.mean_weights, b.mean_weights);
        let bad = TwoStageConfig {
            variance_holdout: 1.0,
            ..cfg
        };
        assert!(fit_two_stage_with(&train, &bad).is_err());
    }
}

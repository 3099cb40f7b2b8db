//! Data-parallel execution switch.
//!
//! Hot loops (per-series selections, oracle enumeration, sweep cells) go
//! through [`Execution::map`]. With the `parallel` feature they run on the
//! rayon global pool; without it, or with [`Execution::Sequential`], they run
//! as a plain iterator. Results are always returned in input order, so both
//! paths produce identical output.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Maps `f` over `0..n` and returns the results in index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Sum of `f` over the items. The parallel path reduces in a fixed
    /// order only for integer-valued results; use it for counts.
    pub fn sum_usize<T, F>(self, items: &[T], f: F) -> usize
    where
        T: Sync,
        F: Fn(&T) -> usize + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).sum()
            }
            _ => items.iter().map(f).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Execution::Sequential.map(&xs, |x| x * x);
        let b = Execution::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(
            Execution::Sequential.sum_usize(&xs, |&x| x as usize),
            Execution::Parallel.sum_usize(&xs, |&x| x as usize)
        );
        assert_eq!(
            Execution::Parallel.map_range(10, |i| i + 1),
            (1..=10).collect::<Vec<_>>()
        );
    }
}

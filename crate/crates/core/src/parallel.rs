//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) batch work runs on the rayon pool;
//! without it every helper degrades to a plain iterator. Results are always
//! returned in input order so parallel and sequential runs are bit-identical.

/// How a batch should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon pool when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Order-independent maximum of `f(i)` over `0..n` (NaNs ignored).
pub fn max_range<F>(exec: Exec, n: usize, f: F) -> Option<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let fold = |a: Option<f64>, b: f64| match a {
        Some(a) if a >= b || b.is_nan() => Some(a),
        _ if b.is_nan() => a,
        _ => Some(b),
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(&f).fold(|| None, fold).reduce(
            || None,
            |a, b| match (a, b) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, None) => a,
                (None, b) => b,
            },
        );
    }
    let _ = exec;
    (0..n).map(f).fold(None, fold)
}

/// Stable 64-bit mix of a master seed and an index (SplitMix64 finalizer),
/// used to derive per-sample seeds independent of execution order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = map_slice(Exec::Sequential, &xs, |x| x * 2.0);
        let b = map_slice(Exec::Parallel, &xs, |x| x * 2.0);
        assert_eq!(a, b);
        let m1 = max_range(Exec::Sequential, xs.len(), |i| xs[i]);
        let m2 = max_range(Exec::Parallel, xs.len(), |i| xs[i]);
        assert_eq!(m1, m2);
        assert_eq!(max_range(Exec::Parallel, 0, |_| 1.0), None);
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(7, 9), derive_seed(7, 9));
    }
}

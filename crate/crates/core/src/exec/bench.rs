use std::time::Instant;

use crate::model::gflops;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchResult {
    /// Fastest of the timed runs.
    pub best_seconds: f64,
    pub mean_seconds: f64,
    pub reps: usize,
    pub gflops: f64,
}

/// Runs `run` `warmups` times untimed, then `reps` (at least 1) times timed.
/// GFLOPS are computed for an `m x n x k` GEMM at the best time.
pub fn benchmark<E>(
    mut run: impl FnMut() -> Result<(), E>,
    (m, n, k): (i64, i64, i64),
    warmups: usize,
    reps: usize,
) -> Result<BenchResult, E> {
    for _ in 0..warmups {
        run()?;
    }
    let reps = reps.max(1);
    let mut best = f64::INFINITY;
    let mut total = 0.0;
    for _ in 0..reps {
        let t = Instant::now();
        run()?;
        let s = t.elapsed().as_secs_f64();
        best = best.min(s);
        total += s;
    }
    let best_seconds = best.max(f64::MIN_POSITIVE);
    Ok(BenchResult {
        best_seconds,
        mean_seconds: total / reps as f64,
        reps,
        gflops: gflops(m, n, k, best_seconds).unwrap_or(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rep_runs_once_after_warmup() {
        let mut calls = 0;
        let r = benchmark::<()>(
            || {
                calls += 1;
                Ok(())
            },
            (1, 1, 1),
            2,
            1,
        )
        .unwrap();
        assert_eq!(calls, 3);
        assert_eq!(r.reps, 1);
        assert!(r.best_seconds > 0.0);
        assert_eq!(r.gflops, gflops(1, 1, 1, r.best_seconds).unwrap());
    }
}

//! Repeatable latency measurement of the disparity pipeline.

use std::time::Instant;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pipeline::{compute_disparity, compute_disparity_with_stats, PipelineStats};

/// Latency measurements of repeated pipeline runs on one pair.
#[derive(Debug, Clone)]
pub struct BenchReport {
    /// Wall times of the timed runs under the caller's thread pool, in run
    /// order (a warm-up run precedes them and is not recorded).
    pub runs_ms: Vec<f64>,
    /// Median of `runs_ms` (even counts: mean of the two central values).
    pub median_ms: f64,
    /// Wall time of one additional run forced onto a single worker thread.
    pub single_thread_ms: f64,
    /// Per-stage breakdown of the single-thread run. Because nothing ran
    /// concurrently, its stage times sum to approximately the wall time.
    pub single_thread_stats: PipelineStats,
}

/// Times `repetitions` pipeline runs (after one untimed warm-up), then one
/// single-thread-enforced run with a per-stage breakdown.
///
/// Multi-threaded timings use whatever thread pool the caller installed.
/// `repetitions` must be at least 3.
pub fn run_benchmark(
    left: &GrayImage,
    right: &GrayImage,
    cfg: &SolverConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "benchmark needs at least 3 repetitions, got {repetitions}"
        )));
    }
    compute_disparity(left, right, cfg)?; // warm-up, untimed

    let mut runs_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        compute_disparity(left, right, cfg)?;
        runs_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = runs_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let median_ms = if repetitions % 2 == 1 {
        sorted[repetitions / 2]
    } else {
        0.5 * (sorted[repetitions / 2 - 1] + sorted[repetitions / 2])
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("single-thread pool: {e}")))?;
    let t = Instant::now();
    let (_, single_thread_stats) = pool.install(|| compute_disparity_with_stats(left, right, cfg))?;
    let single_thread_ms = t.elapsed().as_secs_f64() * 1e3;

    Ok(BenchReport { runs_ms, median_ms, single_thread_ms, single_thread_stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render_pair, DisparityModel};

    #[test]
    fn records_exactly_the_requested_runs_and_their_median() {
        let pair = render_pair(96, 64, &DisparityModel::Shift { amount: 3.0 }, 5, None).unwrap();
        let cfg = SolverConfig::for_size(96, 64);
        let report = run_benchmark(&pair.left, &pair.right, &cfg, 3).unwrap();
        assert_eq!(report.runs_ms.len(), 3);
        let mut sorted = report.runs_ms.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(report.median_ms, sorted[1]);
        assert!(report.runs_ms.iter().all(|ms| *ms > 0.0));
    }

    #[test]
    fn single_thread_stage_times_account_for_the_wall_time() {
        let pair = render_pair(128, 96, &DisparityModel::Shift { amount: 4.0 }, 6, None).unwrap();
        let cfg = SolverConfig::for_size(128, 96);
        let report = run_benchmark(&pair.left, &pair.right, &cfg, 3).unwrap();
        let sum = report.single_thread_stats.stage_sum_ms();
        assert!(sum <= report.single_thread_ms);
        // With one worker there is no overlap; unattributed overhead must be
        // a small fraction of the wall time.
        assert!(
            sum >= 0.80 * report.single_thread_stats.total_ms,
            "stage sum {sum} ms vs pipeline total {} ms",
            report.single_thread_stats.total_ms
        );
    }

    #[test]
    fn rejects_too_few_repetitions() {
        let pair = render_pair(32, 32, &DisparityModel::Shift { amount: 1.0 }, 2, None).unwrap();
        let cfg = SolverConfig { num_levels: 1, gamma: 0.25, max_disparity: 8.0, ..SolverConfig::default() };
        assert!(run_benchmark(&pair.left, &pair.right, &cfg, 2).is_err());
    }
}

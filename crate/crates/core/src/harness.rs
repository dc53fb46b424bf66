//! Seeded Monte Carlo trials and parameter sweeps.
//!
//! Trial `i` of a run uses seed `base_seed + i`. A rejected draw is redrawn
//! on the next ChaCha stream of the same seed, so a trial's outcome depends
//! only on `(config, seed)`. Trials run in parallel when the `parallel`
//! feature is on; results are always reduced in trial order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{check_channel, evaluate};
use crate::optimizer::{check_feasible, equal_power_baseline, solve, SolveResult};
use crate::sysmodel::{partition_users, ChannelRealization, ModelError, SystemConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("all {trials} trials were rejected")]
    AllRejected { trials: usize },
    #[error("sweep values must be non-empty and sorted ascending")]
    BadSweepValues,
    #[error("{parameter} = {value}: {source}")]
    Config {
        parameter: &'static str,
        value: f64,
        source: ModelError,
    },
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Metrics of one solved trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialMetrics {
    /// Lower-bound energy efficiency of the optimized allocation, bit/J/Hz.
    pub ee_proposed: f64,
    pub ee_equal: f64,
    /// Achievable sum rate, bit/s/Hz.
    pub sum_rate_proposed: f64,
    pub sum_rate_equal: f64,
    /// Energy efficiency from achievable rates.
    pub ee_achievable_proposed: f64,
    pub ee_achievable_equal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub rejected: bool,
    pub converged: bool,
    pub outer_iters: usize,
    /// Redraws consumed before the accepted (or final rejected) draw.
    pub redraws: u32,
    pub metrics: Option<TrialMetrics>,
}

/// The realization trial `seed` solves and the redraw index that produced
/// it. A draw is accepted when the estimation error is admissible, every
/// channel norm exceeds `K` and the rate floors fit the group budgets; each
/// redraw uses the next ChaCha stream of the same seed.
pub fn trial_realization(config: &SystemConfig, seed: u64) -> Option<(ChannelRealization, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..=config.redraw_budget).find_map(|redraw| {
        rng.set_stream(redraw as u64);
        rng.set_word_pos(0);
        let ch = ChannelRealization::draw(config, &mut rng).ok()?;
        let partition = partition_users(&ch.beta, config);
        check_channel(&ch).ok()?;
        check_feasible(&ch, &partition, config).ok()?;
        Some((ch, redraw))
    })
}

fn trial_metrics(
    ch: &ChannelRealization,
    solved: &SolveResult,
    config: &SystemConfig,
) -> Option<TrialMetrics> {
    let a = evaluate(&solved.powers, ch, config).ok()?;
    let b = evaluate(&equal_power_baseline(config), ch, config).ok()?;
    Some(TrialMetrics {
        ee_proposed: a.ee_lb,
        ee_equal: b.ee_lb,
        sum_rate_proposed: a.sum_rate,
        sum_rate_equal: b.sum_rate,
        ee_achievable_proposed: a.ee,
        ee_achievable_equal: b.ee,
    })
}

/// One realization, partition, solve and equal-power baseline. Failures are
/// folded into the `rejected` and `converged` flags.
pub fn run_trial(config: &SystemConfig, seed: u64) -> TrialResult {
    let Some((ch, redraws)) = trial_realization(config, seed) else {
        return TrialResult {
            seed,
            rejected: true,
            converged: false,
            outer_iters: 0,
            redraws: config.redraw_budget,
            metrics: None,
        };
    };
    let partition = partition_users(&ch.beta, config);
    let (converged, outer_iters, metrics) = match solve(&ch, &partition, config) {
        Ok(solved) => {
            let metrics = trial_metrics(&ch, &solved, config);
            (
                solved.converged && metrics.is_some(),
                solved.outer_iters,
                metrics,
            )
        }
        Err(_) => (false, config.max_outer_iters, None),
    };
    TrialResult {
        seed,
        rejected: false,
        converged,
        outer_iters,
        redraws,
        metrics,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Sample mean and standard deviation (n - 1 denominator, zero for n = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub n_trials: usize,
    pub converged: usize,
    pub unconverged: usize,
    pub rejected: usize,
    pub ee_proposed: Moments,
    pub ee_equal: Moments,
    pub sum_rate_proposed: Moments,
    pub sum_rate_equal: Moments,
    pub ee_achievable_proposed: Moments,
    pub ee_achievable_equal: Moments,
    /// `ee_proposed - ee_equal` per trial.
    pub ee_gap: Moments,
    /// Fraction of converged trials with `ee_proposed >= ee_equal`.
    pub win_fraction: f64,
    pub trials: Vec<TrialResult>,
}

impl MonteCarloSummary {
    pub fn from_trials(trials: Vec<TrialResult>) -> Self {
        let ok: Vec<TrialMetrics> = trials
            .iter()
            .filter(|t| t.converged)
            .filter_map(|t| t.metrics)
            .collect();
        let pick = |f: fn(&TrialMetrics) -> f64| Moments::of(&ok.iter().map(f).collect::<Vec<_>>());
        let rejected = trials.iter().filter(|t| t.rejected).count();
        let wins = ok.iter().filter(|m| m.ee_proposed >= m.ee_equal).count();
        Self {
            n_trials: trials.len(),
            converged: ok.len(),
            unconverged: trials.len() - ok.len() - rejected,
            rejected,
            ee_proposed: pick(|m| m.ee_proposed),
            ee_equal: pick(|m| m.ee_equal),
            sum_rate_proposed: pick(|m| m.sum_rate_proposed),
            sum_rate_equal: pick(|m| m.sum_rate_equal),
            ee_achievable_proposed: pick(|m| m.ee_achievable_proposed),
            ee_achievable_equal: pick(|m| m.ee_achievable_equal),
            ee_gap: pick(|m| m.ee_proposed - m.ee_equal),
            win_fraction: if ok.is_empty() {
                f64::NAN
            } else {
                wins as f64 / ok.len() as f64
            },
            trials,
        }
    }
}

fn run_all(config: &SystemConfig, seeds: Vec<u64>, execution: Execution) -> Vec<TrialResult> {
    match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            seeds
                .into_par_iter()
                .map(|s| run_trial(config, s))
                .collect()
        }
        _ => seeds.into_iter().map(|s| run_trial(config, s)).collect(),
    }
}

/// Runs `n_trials` trials with seeds `base_seed + i` and aggregates the
/// converged ones.
pub fn monte_carlo(
    config: &SystemConfig,
    n_trials: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<MonteCarloSummary, HarnessError> {
    if n_trials == 0 {
        return Err(HarnessError::NoTrials);
    }
    config.validate()?;
    let seeds = (0..n_trials as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect();
    let summary = MonteCarloSummary::from_trials(run_all(config, seeds, execution));
    if summary.rejected == n_trials {
        return Err(HarnessError::AllRejected { trials: n_trials });
    }
    Ok(summary)
}

/// Runs `f` on a dedicated pool of `threads` workers.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Both RF log-variances, set jointly.
    RfVar,
    EstErrVar,
    RMin,
    Antennas,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::RfVar => "rf_var",
            Self::EstErrVar => "est_err_var",
            Self::RMin => "r_min",
            Self::Antennas => "antennas",
        }
    }

    pub fn apply(self, config: &SystemConfig, value: f64) -> Result<SystemConfig, HarnessError> {
        let mut c = config.clone();
        match self {
            Self::RfVar => {
                c.rf_var_rx = value;
                c.rf_var_tx = value;
            }
            Self::EstErrVar => c.est_err_var = value,
            Self::RMin => c.r_min = value,
            Self::Antennas => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(HarnessError::Config {
                        parameter: self.name(),
                        value,
                        source: ModelError::Validation {
                            field: "antennas",
                            reason: "must be a positive integer".into(),
                        },
                    });
                }
                c.antennas = value as usize;
            }
        }
        c.validate().map_err(|source| HarnessError::Config {
            parameter: self.name(),
            value,
            source,
        })?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: MonteCarloSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
}

/// One Monte Carlo run per value, all with the same per-trial seeds.
pub fn sweep(
    config: &SystemConfig,
    parameter: SweepParam,
    values: &[f64],
    n_trials: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<SweepTable, HarnessError> {
    if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(HarnessError::BadSweepValues);
    }
    let rows = values
        .iter()
        .map(|&value| {
            let c = parameter.apply(config, value)?;
            Ok(SweepRow {
                value,
                summary: monte_carlo(&c, n_trials, base_seed, execution)?,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(SweepTable { parameter, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig {
            antennas: 16,
            users: 2,
            coherence_interval: 3.0,
            pilot_length: 2.0,
            ..Default::default()
        }
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = small();
        assert_eq!(run_trial(&cfg, 11), run_trial(&cfg, 11));
    }

    #[test]
    fn unreachable_estimation_accuracy_rejects() {
        // Every user sits beyond the distance where the estimation error
        // exceeds the path gain.
        let mut cfg = SystemConfig {
            cell_radius: 5000.0,
            min_distance: 4900.0,
            redraw_budget: 2,
            ..small()
        };
        cfg.est_err_var = 0.999_999 * cfg.path_gain(cfg.min_distance);
        cfg.validate().unwrap();
        let t = run_trial(&cfg, 3);
        assert!(t.rejected && t.metrics.is_none());
        assert!(matches!(
            monte_carlo(&cfg, 2, 0, Execution::Sequential),
            Err(HarnessError::AllRejected { trials: 2 })
        ));
    }

    #[test]
    fn single_trial_summary_matches_trial() {
        let cfg = small();
        let s = monte_carlo(&cfg, 1, 5, Execution::Sequential).unwrap();
        let t = run_trial(&cfg, 5);
        if let (true, Some(m)) = (t.converged, t.metrics) {
            assert_eq!(s.ee_proposed.mean, m.ee_proposed);
            assert_eq!(s.ee_proposed.std, 0.0);
            assert_eq!(s.sum_rate_equal.mean, m.sum_rate_equal);
        }
        assert_eq!(s.trials, vec![t]);
    }

    #[test]
    fn execution_modes_agree() {
        let cfg = small();
        let a = monte_carlo(&cfg, 12, 100, Execution::Sequential).unwrap();
        let b = monte_carlo(&cfg, 12, 100, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_trials, a.converged + a.unconverged + a.rejected);
    }

    #[test]
    fn sweep_rows_follow_values() {
        let cfg = small();
        let t = sweep(
            &cfg,
            SweepParam::RMin,
            &[0.5, 1.0, 1.5],
            3,
            0,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[2].value, 1.5);
        let seeds = |r: &SweepRow| r.summary.trials.iter().map(|t| t.seed).collect::<Vec<_>>();
        assert_eq!(seeds(&t.rows[0]), seeds(&t.rows[1]));
        assert!(sweep(
            &cfg,
            SweepParam::RMin,
            &[1.0, 0.5],
            1,
            0,
            Execution::Sequential
        )
        .is_err());
        assert!(sweep(
            &cfg,
            SweepParam::Antennas,
            &[2.5],
            1,
            0,
            Execution::Sequential
        )
        .is_err());
    }

    #[test]
    fn rf_sweep_sets_both_sides() {
        let c = SweepParam::RfVar.apply(&small(), 1.5).unwrap();
        assert_eq!((c.rf_var_rx, c.rf_var_tx), (1.5, 1.5));
    }

    #[test]
    fn moments_by_hand() {
        let m = Moments::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}

//! SINR, achievable rate, the Jensen lower bound on the rate, and energy
//! efficiency.

use serde::Serialize;
use thiserror::Error;

use crate::sysmodel::{ChannelRealization, SystemConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("user {user}: channel norm {norm_sq} does not exceed the user count {users}")]
    DegenerateChannel {
        user: usize,
        norm_sq: f64,
        users: usize,
    },
    #[error("user {user}: rate lower bound is undefined at zero power")]
    NonpositiveArgument { user: usize },
    #[error("power allocation entry {index} is {value}")]
    InvalidPower { index: usize, value: f64 },
}

/// Per-user transmit powers, watts.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PowerAllocation(Vec<f64>);

impl PowerAllocation {
    pub fn new(p: Vec<f64>) -> Result<Self, MetricsError> {
        if let Some((index, &value)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(MetricsError::InvalidPower { index, value });
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PowerAllocation {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// All per-user and aggregate metrics of one allocation on one realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub rate_lb: Vec<f64>,
    pub sum_rate: f64,
    /// Sum of achievable rates over total consumed power.
    pub ee: f64,
    /// Sum of rate lower bounds over total consumed power.
    pub ee_lb: f64,
}

/// Received power of user `k` as seen by the SINR expression,
/// `p_k |u_rx|^2 |u_tx|^-2 ||h_k||^2`.
fn received_power(k: usize, p: &[f64], ch: &ChannelRealization) -> f64 {
    p[k] * ch.rf_power_ratio(k) * ch.gain_norm_sq(k)
}

/// SINR of user `k`. Interfering users contribute linearly in their power,
/// consistent with the `sqrt(p tau_d)` amplitude of the received signal.
pub fn sinr(k: usize, p: &[f64], ch: &ChannelRealization, config: &SystemConfig) -> f64 {
    let tau = config.pilot_length;
    let beta = ch.beta[k];
    let interference: f64 = (0..ch.users())
        .filter(|&j| j != k)
        .map(|j| received_power(j, p, ch))
        .sum();
    beta * tau * received_power(k, p, ch) / (tau * beta * interference + config.effective_noise())
}

/// `((T - tau_d) / T) log2(1 + gamma)`.
pub fn rate(gamma: f64, config: &SystemConfig) -> f64 {
    config.data_fraction() * gamma.ln_1p() / std::f64::consts::LN_2
}

/// Interference-plus-noise term of the rate lower bound for user `k`:
/// `e^{2 delta_t^2} tau_d sum_{j != k} p_j / beta_j + P tau_d sigma_eps^2 + sigma^2`.
pub fn lower_bound_denominator(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> f64 {
    let scaled: f64 = (0..ch.users())
        .filter(|&j| j != k)
        .map(|j| p[j] / ch.beta[j])
        .sum();
    interference_weight(config) * scaled + config.effective_noise()
}

/// `e^{2 delta_t^2} tau_d`.
pub fn interference_weight(config: &SystemConfig) -> f64 {
    (2.0 * config.rf_var_tx).exp() * config.pilot_length
}

/// Lower bound on the rate of user `k`:
/// `log2((||h_k||^2 - K) beta_k p_k tau_d / denominator)`. It may be negative.
pub fn rate_lower_bound(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> Result<f64, MetricsError> {
    let users = ch.users();
    let norm_sq = ch.gain_norm_sq(k);
    if norm_sq <= users as f64 {
        return Err(MetricsError::DegenerateChannel {
            user: k,
            norm_sq,
            users,
        });
    }
    if p[k] <= 0.0 {
        return Err(MetricsError::NonpositiveArgument { user: k });
    }
    let num = (norm_sq - users as f64) * ch.beta[k] * p[k] * config.pilot_length;
    Ok((num / lower_bound_denominator(k, p, ch, config)).log2())
}

/// `sum(rates) / (sum(p) + M P_c)`.
pub fn energy_efficiency(p: &[f64], rates: &[f64], config: &SystemConfig) -> f64 {
    rates.iter().sum::<f64>() / (p.iter().sum::<f64>() + config.circuit_power())
}

/// Fails with [`MetricsError::DegenerateChannel`] when some `||h_k||^2 <= K`.
pub fn check_channel(ch: &ChannelRealization) -> Result<(), MetricsError> {
    let users = ch.users();
    match (0..users).find(|&k| ch.gain_norm_sq(k) <= users as f64) {
        Some(k) => Err(MetricsError::DegenerateChannel {
            user: k,
            norm_sq: ch.gain_norm_sq(k),
            users,
        }),
        None => Ok(()),
    }
}

/// Sum of rate lower bounds.
pub fn sum_rate_lower_bound(
    p: &[f64],
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> Result<f64, MetricsError> {
    (0..ch.users())
        .map(|k| rate_lower_bound(k, p, ch, config))
        .sum()
}

pub fn evaluate(
    p: &PowerAllocation,
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> Result<RateReport, MetricsError> {
    let p = p.as_slice();
    let sinr: Vec<f64> = (0..ch.users()).map(|k| sinr(k, p, ch, config)).collect();
    let rate: Vec<f64> = sinr.iter().map(|&g| rate(g, config)).collect();
    let rate_lb = (0..ch.users())
        .map(|k| rate_lower_bound(k, p, ch, config))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RateReport {
        sum_rate: rate.iter().sum(),
        ee: energy_efficiency(p, &rate, config),
        ee_lb: energy_efficiency(p, &rate_lb, config),
        sinr,
        rate,
        rate_lb,
    })
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn sinr_single_user_unit() {
        let ch = realization(&[1.0], &[1.0]);
        assert_eq!(sinr(0, &[1.0], &ch, &unit_config(1)), 1.0);
    }

    #[test]
    fn sinr_two_symmetric_users() {
        let ch = realization(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(sinr(0, &[1.0, 1.0], &ch, &unit_config(2)), 0.5);
    }

    #[test]
    fn sinr_zero_power_is_zero() {
        let ch = realization(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(sinr(0, &[0.0, 1.0], &ch, &unit_config(2)), 0.0);
    }

    #[test]
    fn rate_by_hand() {
        let cfg = unit_config(1);
        assert_eq!(rate(1.0, &cfg), 0.5);
        assert_eq!(rate(0.0, &cfg), 0.0);
        let cfg = SystemConfig {
            coherence_interval: 4.0,
            ..cfg
        };
        assert!((rate(3.0, &cfg) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rate_lower_bound_by_hand() {
        let cfg = unit_config(2);
        let ch = realization(&[1.0, 1.0], &[3.0, 3.0]);
        assert_eq!(rate_lower_bound(0, &[1.0, 0.0], &ch, &cfg).unwrap(), 0.0);
        let ch = realization(&[1.0, 1.0], &[5.0, 5.0]);
        let r = rate_lower_bound(0, &[1.0, 0.0], &ch, &cfg).unwrap();
        assert!((r - 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn rate_lower_bound_domain_errors() {
        let cfg = unit_config(2);
        let ch = realization(&[1.0, 1.0], &[2.0, 2.0]);
        assert!(matches!(
            rate_lower_bound(0, &[1.0, 1.0], &ch, &cfg),
            Err(MetricsError::DegenerateChannel { user: 0, .. })
        ));
        let ch = realization(&[1.0, 1.0], &[5.0, 5.0]);
        assert_eq!(
            rate_lower_bound(1, &[1.0, 0.0], &ch, &cfg),
            Err(MetricsError::NonpositiveArgument { user: 1 })
        );
    }

    #[test]
    fn energy_efficiency_by_hand() {
        let cfg = SystemConfig {
            antennas: 1,
            circuit_power_per_antenna: 1.0,
            ..Default::default()
        };
        assert_eq!(energy_efficiency(&[0.5, 0.5], &[2.0, 3.0], &cfg), 2.5);
        assert_eq!(energy_efficiency(&[0.5, 0.5], &[0.0, 0.0], &cfg), 0.0);

        let ee1 = energy_efficiency(&[1e-9], &[4.0], &cfg);
        let cfg2 = SystemConfig {
            circuit_power_per_antenna: 2.0,
            ..cfg
        };
        let ee2 = energy_efficiency(&[1e-9], &[4.0], &cfg2);
        assert!((ee1 - 4.0).abs() < 1e-8 && (ee2 - 2.0).abs() < 1e-8);
    }

    #[test]
    fn invalid_power_is_rejected() {
        assert!(PowerAllocation::new(vec![1.0, -1.0]).is_err());
        assert!(PowerAllocation::new(vec![f64::NAN]).is_err());
        assert_eq!(PowerAllocation::new(vec![0.0, 2.0]).unwrap().total(), 2.0);
    }
}

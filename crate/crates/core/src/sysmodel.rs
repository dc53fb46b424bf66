//! Physical model: configuration, user placement, large-scale fading,
//! estimated small-scale channels, RF mismatch gains and user grouping.
//!
//! Distances enter every gain through `d / ref_distance`, so large-scale
//! gains and the estimated-channel variance are dimensionless and the noise
//! variance is referred to the reference distance (see
//! [`SystemConfig::noise_var`]). With `ref_distance` equal to the cell
//! radius, a cell-edge user has unit small-scale channel variance before the
//! estimation error is removed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid config: `{field}` {reason}")]
    Validation { field: &'static str, reason: String },
    #[error(
        "estimation error variance {est_err_var} is not below the path gain {path_gain} of user {user}"
    )]
    InfeasibleEstimation {
        user: usize,
        est_err_var: f64,
        path_gain: f64,
    },
}

/// Every scalar parameter of the downlink model and of the allocation
/// algorithm. Missing keys in a config file take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of BS antennas (M).
    pub antennas: usize,
    /// Number of single-antenna users (K).
    pub users: usize,
    /// Coherence interval T, in symbols.
    pub coherence_interval: f64,
    /// Pilot length tau_d, in symbols.
    pub pilot_length: f64,
    /// Flexible total transmission power P, watts.
    pub total_power: f64,
    /// Explicit noise variance; when absent it is derived from
    /// `noise_psd_dbm_hz` and `bandwidth_hz`.
    pub noise_variance: Option<f64>,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    /// Carrier / antenna-gain constant.
    pub nu: f64,
    pub pathloss_exp: f64,
    /// Standard deviation of `10 log10(shadowing)`, dB.
    pub shadow_std_db: f64,
    /// Log-variance of the receive-side RF gain amplitude.
    pub rf_var_rx: f64,
    /// Log-variance of the transmit-side RF gain amplitude.
    pub rf_var_tx: f64,
    /// Maximal RF mismatch phase, radians.
    pub rf_phase_max: f64,
    /// Channel-estimation error variance.
    pub est_err_var: f64,
    /// Circuit power per antenna, watts.
    pub circuit_power_per_antenna: f64,
    /// Minimum rate per user, bit/s/Hz.
    pub r_min: f64,
    pub cell_radius: f64,
    pub min_distance: f64,
    /// Distance that normalizes path gains; defaults to the cell radius.
    pub ref_distance: f64,
    /// Threshold on the large-scale gain separating center from edge users.
    /// When absent, the median gain of each realization is used.
    pub group_threshold: Option<f64>,
    /// Power-amplifier efficiency, used for the initial upper EE bound.
    pub pa_efficiency: f64,
    /// Stopping width of the EE bisection.
    pub bisect_tol: f64,
    pub step_omega_c: f64,
    pub step_omega_e: f64,
    pub step_lambda: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub max_multiplier_iters: usize,
    /// Relative power change that ends a Gauss-Seidel power sweep.
    pub inner_tol: f64,
    /// Redraws allowed before a trial realization is counted as rejected.
    pub redraw_budget: u32,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            antennas: 100,
            users: 4,
            coherence_interval: 5.0,
            pilot_length: 4.0,
            total_power: 0.1,
            noise_variance: None,
            noise_psd_dbm_hz: -170.0,
            bandwidth_hz: 10.0e6,
            nu: 1.0,
            pathloss_exp: 3.8,
            shadow_std_db: 10.0,
            rf_var_rx: 0.3,
            rf_var_tx: 0.3,
            rf_phase_max: std::f64::consts::FRAC_PI_6,
            est_err_var: 0.03,
            circuit_power_per_antenna: 0.01,
            r_min: 1.0,
            cell_radius: 500.0,
            min_distance: 35.0,
            ref_distance: 500.0,
            group_threshold: None,
            pa_efficiency: 0.5,
            bisect_tol: 1e-4,
            step_omega_c: 1.0,
            step_omega_e: 1.0,
            step_lambda: 1.0,
            max_outer_iters: 100,
            max_inner_iters: 10_000,
            max_multiplier_iters: 30,
            inner_tol: 1e-12,
            redraw_budget: 10,
        }
    }
}

fn check(ok: bool, field: &'static str, reason: impl Into<String>) -> Result<(), ModelError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::Validation {
            field,
            reason: reason.into(),
        })
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        check(self.antennas >= 1, "antennas", "must be at least 1")?;
        check(self.users >= 1, "users", "must be at least 1")?;
        check(
            finite_pos(self.coherence_interval),
            "coherence_interval",
            "must be positive",
        )?;
        check(
            finite_pos(self.pilot_length),
            "pilot_length",
            "must be positive",
        )?;
        check(
            self.pilot_length < self.coherence_interval,
            "pilot_length",
            format!(
                "must be below coherence_interval ({} >= {})",
                self.pilot_length, self.coherence_interval
            ),
        )?;
        check(
            finite_pos(self.total_power),
            "total_power",
            "must be positive",
        )?;
        if let Some(v) = self.noise_variance {
            check(finite_pos(v), "noise_variance", "must be positive")?;
        } else {
            check(
                self.noise_psd_dbm_hz.is_finite(),
                "noise_psd_dbm_hz",
                "must be finite",
            )?;
            check(
                finite_pos(self.bandwidth_hz),
                "bandwidth_hz",
                "must be positive",
            )?;
        }
        check(finite_pos(self.nu), "nu", "must be positive")?;
        check(
            (2.0..=6.0).contains(&self.pathloss_exp),
            "pathloss_exp",
            "must lie in [2, 6]",
        )?;
        check(
            finite_nonneg(self.shadow_std_db),
            "shadow_std_db",
            "must be non-negative",
        )?;
        check(
            finite_nonneg(self.rf_var_rx),
            "rf_var_rx",
            "must be non-negative",
        )?;
        check(
            finite_nonneg(self.rf_var_tx),
            "rf_var_tx",
            "must be non-negative",
        )?;
        check(
            finite_nonneg(self.rf_phase_max),
            "rf_phase_max",
            "must be non-negative",
        )?;
        check(
            finite_nonneg(self.est_err_var),
            "est_err_var",
            "must be non-negative",
        )?;
        check(
            finite_pos(self.circuit_power_per_antenna),
            "circuit_power_per_antenna",
            "must be positive",
        )?;
        check(finite_nonneg(self.r_min), "r_min", "must be non-negative")?;
        check(
            finite_pos(self.cell_radius),
            "cell_radius",
            "must be positive",
        )?;
        check(
            finite_pos(self.min_distance),
            "min_distance",
            "must be positive",
        )?;
        check(
            self.min_distance < self.cell_radius,
            "min_distance",
            "must be below cell_radius",
        )?;
        check(
            finite_pos(self.ref_distance),
            "ref_distance",
            "must be positive",
        )?;
        let max_gain = self.path_gain(self.min_distance);
        check(
            self.est_err_var < max_gain,
            "est_err_var",
            format!("must be below the path gain at min_distance ({max_gain})"),
        )?;
        if let Some(l) = self.group_threshold {
            check(finite_pos(l), "group_threshold", "must be positive")?;
        }
        check(
            self.pa_efficiency > 0.0 && self.pa_efficiency <= 1.0,
            "pa_efficiency",
            "must lie in (0, 1]",
        )?;
        check(
            finite_pos(self.bisect_tol),
            "bisect_tol",
            "must be positive",
        )?;
        check(
            finite_pos(self.step_omega_c),
            "step_omega_c",
            "must be positive",
        )?;
        check(
            finite_pos(self.step_omega_e),
            "step_omega_e",
            "must be positive",
        )?;
        check(
            finite_pos(self.step_lambda),
            "step_lambda",
            "must be positive",
        )?;
        check(
            self.max_outer_iters >= 1,
            "max_outer_iters",
            "must be at least 1",
        )?;
        check(
            self.max_inner_iters >= 1,
            "max_inner_iters",
            "must be at least 1",
        )?;
        check(
            self.max_multiplier_iters >= 1,
            "max_multiplier_iters",
            "must be at least 1",
        )?;
        check(finite_pos(self.inner_tol), "inner_tol", "must be positive")?;
        Ok(())
    }

    /// Noise variance in the normalized gain units.
    pub fn noise_var(&self) -> f64 {
        match self.noise_variance {
            Some(v) => v,
            None => {
                let n0_w_per_hz = 10f64.powf((self.noise_psd_dbm_hz - 30.0) / 10.0);
                n0_w_per_hz * self.bandwidth_hz * self.ref_distance.powf(self.pathloss_exp)
            }
        }
    }

    /// `(d / ref_distance)^(-pathloss_exp)`.
    pub fn path_gain(&self, d: f64) -> f64 {
        (d / self.ref_distance).powf(-self.pathloss_exp)
    }

    /// Fraction of the coherence interval carrying data, `(T - tau_d) / T`.
    pub fn data_fraction(&self) -> f64 {
        (self.coherence_interval - self.pilot_length) / self.coherence_interval
    }

    /// Total per-symbol power budget `P / (T - tau_d)` shared by both groups.
    pub fn power_budget(&self) -> f64 {
        self.total_power / (self.coherence_interval - self.pilot_length)
    }

    /// Noise plus estimation-error floor `P tau_d sigma_eps^2 + sigma^2`.
    pub fn effective_noise(&self) -> f64 {
        self.total_power * self.pilot_length * self.est_err_var + self.noise_var()
    }

    pub fn circuit_power(&self) -> f64 {
        self.antennas as f64 * self.circuit_power_per_antenna
    }

    /// `2^R_min - 1`.
    pub fn rate_floor_factor(&self) -> f64 {
        self.r_min.exp2() - 1.0
    }
}

/// Distances drawn uniformly by area over the annulus
/// `[min_distance, cell_radius]`.
pub fn draw_user_positions<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Vec<f64> {
    let r0 = config.min_distance * config.min_distance;
    let r1 = config.cell_radius * config.cell_radius;
    let unit = Uniform::new(0.0, 1.0).expect("unit interval");
    (0..config.users)
        .map(|_| {
            let u: f64 = unit.sample(rng);
            (r0 + u * (r1 - r0))
                .sqrt()
                .clamp(config.min_distance, config.cell_radius)
        })
        .collect()
}

/// Large-scale gain of one user together with the shadowing sample behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleGain {
    pub beta: f64,
    pub shadowing: f64,
}

/// `beta = nu * shadowing * (d / ref)^(-eps)` with `10 log10(shadowing)`
/// drawn from `N(0, shadow_std_db^2)`.
pub fn large_scale_fading<R: Rng + ?Sized>(
    d: f64,
    config: &SystemConfig,
    rng: &mut R,
) -> LargeScaleGain {
    let shadow_db = if config.shadow_std_db > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        z * config.shadow_std_db
    } else {
        0.0
    };
    let shadowing = 10f64.powf(shadow_db / 10.0);
    LargeScaleGain {
        beta: config.nu * shadowing * config.path_gain(d),
        shadowing,
    }
}

/// Per-user variance of the estimated channel entries,
/// `(d / ref)^(-eps) - sigma_eps^2`.
pub fn estimated_channel_variance(d: f64, config: &SystemConfig) -> f64 {
    config.path_gain(d) - config.est_err_var
}

/// Draws the `M x K` estimated channel; column `k` has i.i.d. CN(0, s_k)
/// entries with `s_k` from [`estimated_channel_variance`].
pub fn draw_estimated_channel<R: Rng + ?Sized>(
    distances: &[f64],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<DMatrix<Complex64>, ModelError> {
    let variances = distances
        .iter()
        .enumerate()
        .map(|(user, &d)| {
            let s = estimated_channel_variance(d, config);
            if s > 0.0 {
                Ok(s)
            } else {
                Err(ModelError::InfeasibleEstimation {
                    user,
                    est_err_var: config.est_err_var,
                    path_gain: config.path_gain(d),
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let m = config.antennas;
    let mut h = DMatrix::zeros(m, variances.len());
    for (k, s) in variances.iter().enumerate() {
        let std = (s / 2.0).sqrt();
        for i in 0..m {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            h[(i, k)] = Complex64::new(re * std, im * std);
        }
    }
    Ok(h)
}

fn draw_rf_side<R: Rng + ?Sized>(log_var: f64, phase_max: f64, rng: &mut R) -> Complex64 {
    let ln_amp = if log_var > 0.0 {
        Normal::new(0.0, log_var.sqrt())
            .expect("finite std")
            .sample(rng)
    } else {
        0.0
    };
    let phase = if phase_max > 0.0 {
        Uniform::new_inclusive(-phase_max, phase_max)
            .expect("valid phase range")
            .sample(rng)
    } else {
        0.0
    };
    Complex64::from_polar(ln_amp.exp(), phase)
}

/// Receive- and transmit-side RF gains: log-normal amplitudes with the
/// configured log-variances, phases uniform on `[-theta, theta]`.
pub fn draw_rf_gains<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let rx = (0..config.users)
        .map(|_| draw_rf_side(config.rf_var_rx, config.rf_phase_max, rng))
        .collect();
    let tx = (0..config.users)
        .map(|_| draw_rf_side(config.rf_var_tx, config.rf_phase_max, rng))
        .collect();
    (rx, tx)
}

/// One random draw of the downlink channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub distances: Vec<f64>,
    pub shadowing: Vec<f64>,
    pub beta: Vec<f64>,
    /// Estimated channels, one column per user.
    pub h_hat: DMatrix<Complex64>,
    pub u_rx: Vec<Complex64>,
    pub u_tx: Vec<Complex64>,
    pub est_err_var: f64,
    h_norm_sq: Vec<f64>,
}

impl ChannelRealization {
    /// Draws positions, shadowing, the estimated channel and RF gains, in
    /// that order, from `rng`.
    pub fn draw<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<Self, ModelError> {
        let distances = draw_user_positions(config, rng);
        let (beta, shadowing): (Vec<_>, Vec<_>) = distances
            .iter()
            .map(|&d| {
                let g = large_scale_fading(d, config, rng);
                (g.beta, g.shadowing)
            })
            .unzip();
        let h_hat = draw_estimated_channel(&distances, config, rng)?;
        let (u_rx, u_tx) = draw_rf_gains(config, rng);
        Ok(Self::from_parts(
            distances,
            shadowing,
            beta,
            h_hat,
            u_rx,
            u_tx,
            config.est_err_var,
        ))
    }

    pub fn from_parts(
        distances: Vec<f64>,
        shadowing: Vec<f64>,
        beta: Vec<f64>,
        h_hat: DMatrix<Complex64>,
        u_rx: Vec<Complex64>,
        u_tx: Vec<Complex64>,
        est_err_var: f64,
    ) -> Self {
        let h_norm_sq = h_hat
            .column_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        Self {
            distances,
            shadowing,
            beta,
            h_hat,
            u_rx,
            u_tx,
            est_err_var,
            h_norm_sq,
        }
    }

    pub fn users(&self) -> usize {
        self.beta.len()
    }

    /// Squared Euclidean norm of the estimated channel of user `k`.
    pub fn gain_norm_sq(&self, k: usize) -> f64 {
        self.h_norm_sq[k]
    }

    #[cfg(test)]
    pub(crate) fn with_gain_norm_sq(mut self, norm_sq: &[f64]) -> Self {
        self.h_norm_sq = norm_sq.to_vec();
        self
    }

    /// `|u_rx|^2 / |u_tx|^2` of user `k`.
    pub fn rf_power_ratio(&self, k: usize) -> f64 {
        self.u_rx[k].norm_sqr() / self.u_tx[k].norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Center,
    Edge,
}

/// Center/edge user groups, their power fractions and the fixed user
/// ordering used by the minimum-rate constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPartition {
    pub center_set: Vec<usize>,
    pub edge_set: Vec<usize>,
    pub kappa_c: f64,
    pub kappa_e: f64,
    /// Group of each user.
    pub membership: Vec<Group>,
    /// Users sorted by ascending large-scale gain (ties by index).
    pub order: Vec<usize>,
    /// Position of each user in `order`.
    pub rank: Vec<usize>,
}

impl UserPartition {
    pub fn group(&self, k: usize) -> Group {
        self.membership[k]
    }

    pub fn kappa(&self, g: Group) -> f64 {
        match g {
            Group::Center => self.kappa_c,
            Group::Edge => self.kappa_e,
        }
    }

    pub fn members(&self, g: Group) -> &[usize] {
        match g {
            Group::Center => &self.center_set,
            Group::Edge => &self.edge_set,
        }
    }

    /// Users that precede `k` in the constraint ordering.
    pub fn predecessors(&self, k: usize) -> &[usize] {
        &self.order[..self.rank[k]]
    }

    /// Users that follow `k` in the constraint ordering.
    pub fn successors(&self, k: usize) -> &[usize] {
        &self.order[self.rank[k] + 1..]
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splits users by `beta_k >= threshold`; `kappa_c` is the center share of
/// the summed large-scale gain and `kappa_e = 1 - kappa_c`.
pub fn partition_users(beta: &[f64], config: &SystemConfig) -> UserPartition {
    let threshold = config.group_threshold.unwrap_or_else(|| median(beta));
    let membership: Vec<Group> = beta
        .iter()
        .map(|&b| {
            if b >= threshold {
                Group::Center
            } else {
                Group::Edge
            }
        })
        .collect();
    let center_set: Vec<usize> = (0..beta.len())
        .filter(|&k| membership[k] == Group::Center)
        .collect();
    let edge_set: Vec<usize> = (0..beta.len())
        .filter(|&k| membership[k] == Group::Edge)
        .collect();
    let total: f64 = beta.iter().sum();
    let kappa_c = center_set.iter().map(|&k| beta[k]).sum::<f64>() / total;
    let kappa_e = 1.0 - kappa_c;

    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[a].total_cmp(&beta[b]).then(a.cmp(&b)));
    let mut rank = vec![0; beta.len()];
    for (pos, &k) in order.iter().enumerate() {
        rank[k] = pos;
    }
    UserPartition {
        center_set,
        edge_set,
        kappa_c,
        kappa_e,
        membership,
        order,
        rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_config_is_valid() {
        SystemConfig::default().validate().unwrap();
    }

    #[test]
    fn pilot_longer_than_coherence_is_rejected() {
        let cfg = SystemConfig {
            pilot_length: 5.0,
            coherence_interval: 5.0,
            ..Default::default()
        };
        match cfg.validate() {
            Err(ModelError::Validation { field, .. }) => assert_eq!(field, "pilot_length"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn positions_stay_in_the_cell() {
        let cfg = SystemConfig::default();
        let mut r = rng(1);
        for _ in 0..200 {
            for d in draw_user_positions(&cfg, &mut r) {
                assert!((cfg.min_distance..=cfg.cell_radius).contains(&d));
            }
        }
    }

    #[test]
    fn degenerate_annulus_pins_users_to_the_edge() {
        let cfg = SystemConfig {
            min_distance: 500.0 - 1e-9,
            ..Default::default()
        };
        for d in draw_user_positions(&cfg, &mut rng(3)) {
            assert!((d - 500.0).abs() < 1e-6);
        }
    }

    #[test]
    fn positions_are_seed_deterministic() {
        let cfg = SystemConfig::default();
        assert_eq!(
            draw_user_positions(&cfg, &mut rng(9)),
            draw_user_positions(&cfg, &mut rng(9))
        );
    }

    fn unit_fading_config(eps: f64) -> SystemConfig {
        SystemConfig {
            nu: 1.0,
            shadow_std_db: 0.0,
            pathloss_exp: eps,
            ref_distance: 1.0,
            min_distance: 0.5,
            est_err_var: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn large_scale_fading_by_hand() {
        let g = large_scale_fading(1.0, &unit_fading_config(2.0), &mut rng(0));
        assert_eq!(g.beta, 1.0);
        let g = large_scale_fading(10.0, &unit_fading_config(3.0), &mut rng(0));
        assert!((g.beta - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn beta_decreases_with_distance_without_shadowing() {
        let cfg = unit_fading_config(3.8);
        let mut r = rng(0);
        let gains: Vec<f64> = [1.0, 2.0, 5.0, 40.0, 400.0]
            .iter()
            .map(|&d| large_scale_fading(d, &cfg, &mut r).beta)
            .collect();
        assert!(gains.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn shadowing_log_mean_is_centered() {
        let cfg = SystemConfig::default();
        let mut r = rng(21);
        let n = 10_000;
        let mean_db = (0..n)
            .map(|_| 10.0 * large_scale_fading(100.0, &cfg, &mut r).shadowing.log10())
            .sum::<f64>()
            / n as f64;
        assert!(mean_db.abs() <= 0.3, "mean {mean_db} dB");
    }

    #[test]
    fn estimation_boundary_is_infeasible() {
        // d = 1 and ref = 1 give path gain 1.
        let cfg = SystemConfig {
            est_err_var: 1.0,
            ref_distance: 1.0,
            min_distance: 0.5,
            ..Default::default()
        };
        let err = draw_estimated_channel(&[1.0], &cfg, &mut rng(0)).unwrap_err();
        assert!(matches!(
            err,
            ModelError::InfeasibleEstimation { user: 0, .. }
        ));
    }

    #[test]
    fn estimated_channel_shape_and_power() {
        let cfg = SystemConfig {
            antennas: 16,
            users: 1,
            ..unit_fading_config(2.0)
        };
        let h = draw_estimated_channel(&[1.0, 1.0, 1.0], &cfg, &mut rng(4)).unwrap();
        assert_eq!((h.nrows(), h.ncols()), (16, 3));

        let mut r = rng(5);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let h = draw_estimated_channel(&[1.0], &cfg, &mut r).unwrap();
            acc += h.column(0).iter().map(|z| z.norm_sqr()).sum::<f64>() / 16.0;
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn rf_gains_degenerate_to_unity() {
        let cfg = SystemConfig {
            rf_var_rx: 0.0,
            rf_var_tx: 0.0,
            rf_phase_max: 0.0,
            ..Default::default()
        };
        let (rx, tx) = draw_rf_gains(&cfg, &mut rng(2));
        for u in rx.iter().chain(&tx) {
            assert_eq!(*u, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn rf_phases_within_bound_and_log_amplitude_centered() {
        let cfg = SystemConfig {
            users: 10,
            rf_var_rx: 0.3,
            rf_var_tx: 0.3,
            rf_phase_max: 0.4,
            ..Default::default()
        };
        let mut r = rng(8);
        let mut sum = 0.0;
        let mut n = 0;
        for _ in 0..1000 {
            let (rx, tx) = draw_rf_gains(&cfg, &mut r);
            for u in rx.iter().chain(&tx) {
                assert!(u.arg().abs() <= 0.4 + 1e-12);
            }
            for u in &rx {
                sum += u.norm().ln();
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(mean.abs() <= 0.05, "mean {mean}");
    }

    #[test]
    fn partition_by_hand() {
        let cfg = SystemConfig {
            group_threshold: Some(2.0),
            ..Default::default()
        };
        let p = partition_users(&[3.0, 1.0], &cfg);
        assert_eq!(p.center_set, vec![0]);
        assert_eq!(p.edge_set, vec![1]);
        assert_eq!(p.kappa_c, 0.75);
        assert_eq!(p.kappa_e, 0.25);
        assert_eq!(p.order, vec![1, 0]);

        let p = partition_users(&[3.0, 4.0, 5.0], &cfg);
        assert_eq!((p.kappa_c, p.kappa_e), (1.0, 0.0));
        assert!(p.edge_set.is_empty());

        let p = partition_users(&[1.0; 4], &cfg);
        assert_eq!(p.kappa_e, 1.0);
        assert!(p.center_set.is_empty());
    }

    #[test]
    fn median_threshold_splits_evenly() {
        let p = partition_users(&[4.0, 1.0, 3.0, 2.0], &SystemConfig::default());
        assert_eq!(p.center_set, vec![0, 2]);
        assert_eq!(p.edge_set, vec![1, 3]);
        assert_eq!(p.order, vec![1, 3, 2, 0]);
        assert_eq!(p.predecessors(2), &[1, 3]);
        assert_eq!(p.successors(2), &[0]);
    }

    #[test]
    fn realization_is_bit_identical_for_a_seed() {
        let cfg = SystemConfig::default();
        let a = ChannelRealization::draw(&cfg, &mut rng(77)).unwrap();
        let b = ChannelRealization::draw(&cfg, &mut rng(77)).unwrap();
        assert_eq!(a, b);
        for k in 0..cfg.users {
            let expect = cfg.nu * a.shadowing[k] * cfg.path_gain(a.distances[k]);
            assert_eq!(a.beta[k], expect);
        }
    }
}

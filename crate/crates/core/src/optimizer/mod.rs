//! Energy-efficient power allocation.
//!
//! The fractional objective `sum(r_lb) / (sum(p) + M P_c)` is handled by
//! bisection on the efficiency level `q`: for each level the parametric
//! problem `max sum(r_lb) - q (sum(p) + M P_c)` subject to the two group
//! budgets (C1, C2) and the per-user minimum-rate floors (C3) is solved by
//! dual iteration. Powers follow from the closed-form stationarity condition
//! of each user (swept Gauss-Seidel style because the interference terms
//! couple users) and the multipliers `omega_c`, `omega_e`, `lambda_k` follow
//! projected steps along the dual gradient (the constraint slacks).
//!
//! The multiplier steps are preconditioned by the local Newton matrix of the
//! active constraints, `A W A^T` with `W = ln2 diag(p^2)`, which is the
//! derivative of the slacks with respect to the multipliers through the
//! closed-form power update. The configured step sizes scale this direction.

mod interior;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{
    check_channel, interference_weight, lower_bound_denominator, rate_lower_bound,
    sum_rate_lower_bound, MetricsError, PowerAllocation,
};
use crate::sysmodel::{ChannelRealization, Group, SystemConfig, UserPartition};

const LN2: f64 = std::f64::consts::LN_2;
/// Relative constraint violation accepted by the dual loop.
const FEASIBILITY_TOL: f64 = 1e-10;
/// Bound on `multiplier * |slack|` accepted by the dual loop.
const SLACKNESS_TOL: f64 = 1e-9;
const MAX_BACKOFFS: usize = 20;
/// Largest user count the exhaustive grid oracle accepts.
pub const ORACLE_MAX_USERS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("user {user}: stationarity denominator {value} is not positive")]
    NonpositiveDenominator { user: usize, value: f64 },
    #[error("{stage} did not converge within {iters} iterations")]
    NoConvergence { stage: &'static str, iters: usize },
    #[error("{group:?} group needs {required} W for its rate floors but its budget is {budget} W")]
    Infeasible {
        group: Group,
        required: f64,
        budget: f64,
    },
    #[error("grid oracle supports at most {max} users, got {users}")]
    TooManyUsers { users: usize, max: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Dual variables of the group budgets and the minimum-rate floors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplierState {
    pub omega_c: f64,
    pub omega_e: f64,
    pub lambda: Vec<f64>,
}

impl MultiplierState {
    pub fn zeros(users: usize) -> Self {
        Self {
            omega_c: 0.0,
            omega_e: 0.0,
            lambda: vec![0.0; users],
        }
    }

    pub fn omega(&self, g: Group) -> f64 {
        match g {
            Group::Center => self.omega_c,
            Group::Edge => self.omega_e,
        }
    }
}

/// Auxiliary quantities of the closed-form power update of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktTerms {
    /// `e^{2 delta_t^2} tau_d sum_{k' != k} 1 / beta_k'`.
    pub omega: f64,
    /// Interference-plus-noise term of the user's rate lower bound.
    pub lambda: f64,
    /// Net floor-multiplier price on the user's power.
    pub chi: f64,
}

/// Slacks of the constraints at a power vector: budget minus group power
/// for C1/C2, power minus floor for each C3. Negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSlack {
    pub center: f64,
    pub edge: f64,
    pub floor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub powers: PowerAllocation,
    /// Converged efficiency level.
    pub q: f64,
    pub multipliers: MultiplierState,
    pub outer_iters: usize,
    /// Gauss-Seidel sweeps over all levels.
    pub inner_iters: usize,
    /// Multiplier updates over all levels.
    pub multiplier_iters: usize,
    pub converged: bool,
    /// Largest |stationarity residual| over users left untouched by the
    /// final feasibility projection.
    pub kkt_residual_max: f64,
    /// `|sum(r_lb) - q (sum(p) + M P_c)| / (sum(p) + M P_c)`.
    pub certificate_gap: f64,
    pub bisection_width: f64,
    /// Initial upper bound of the bisection.
    pub upper_bound: f64,
    /// Users moved by the final feasibility projection.
    pub clamped: Vec<bool>,
}

/// Budget `kappa_g P / (T - tau_d)` of a group.
pub fn group_budget(g: Group, partition: &UserPartition, config: &SystemConfig) -> f64 {
    partition.kappa(g) * config.power_budget()
}

/// Minimum power of user `k` implied by its rate floor:
/// `(2^R_min - 1) (sum of predecessor powers + (P tau_d sigma_eps^2 + sigma^2) / ||h_k||^2)`.
pub fn min_power_floor(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> f64 {
    let factor = config.rate_floor_factor();
    if factor == 0.0 {
        return 0.0;
    }
    let preceding: f64 = partition.predecessors(k).iter().map(|&j| p[j]).sum();
    factor * (preceding + config.effective_noise() / ch.gain_norm_sq(k))
}

/// Componentwise smallest power vector meeting every rate floor.
pub fn minimal_floor_powers(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Vec<f64> {
    let mut p = vec![0.0; ch.users()];
    for &k in &partition.order {
        p[k] = min_power_floor(k, &p, ch, partition, config);
    }
    p
}

pub fn constraint_slack(
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> ConstraintSlack {
    let group_sum = |g| partition.members(g).iter().map(|&k| p[k]).sum::<f64>();
    ConstraintSlack {
        center: group_budget(Group::Center, partition, config) - group_sum(Group::Center),
        edge: group_budget(Group::Edge, partition, config) - group_sum(Group::Edge),
        floor: (0..ch.users())
            .map(|k| p[k] - min_power_floor(k, p, ch, partition, config))
            .collect(),
    }
}

/// Largest relative violation of C1-C3 at `p` (zero when feasible).
pub fn max_relative_violation(
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> f64 {
    let slack = constraint_slack(p, ch, partition, config);
    let mut worst: f64 = 0.0;
    for (g, s) in [(Group::Center, slack.center), (Group::Edge, slack.edge)] {
        let budget = group_budget(g, partition, config);
        if s < 0.0 {
            worst = worst.max(-s / budget.max(f64::MIN_POSITIVE));
        }
    }
    for (k, &s) in slack.floor.iter().enumerate() {
        if s < 0.0 {
            let floor = p[k] - s;
            worst = worst.max(-s / floor);
        }
    }
    worst
}

/// Projected multiplier step along `direction` (slack convention: a
/// negative entry raises the multiplier):
/// `mu <- max(0, mu - scale * step * direction)`.
pub fn project_step(
    state: &MultiplierState,
    direction: &ConstraintSlack,
    config: &SystemConfig,
    scale: f64,
) -> MultiplierState {
    MultiplierState {
        omega_c: (state.omega_c - scale * config.step_omega_c * direction.center).max(0.0),
        omega_e: (state.omega_e - scale * config.step_omega_e * direction.edge).max(0.0),
        lambda: state
            .lambda
            .iter()
            .zip(&direction.floor)
            .map(|(l, d)| (l - scale * config.step_lambda * d).max(0.0))
            .collect(),
    }
}

/// Plain projected subgradient update with the configured step sizes.
pub fn update_multipliers(
    state: &MultiplierState,
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> MultiplierState {
    project_step(
        state,
        &constraint_slack(p, ch, partition, config),
        config,
        1.0,
    )
}

/// Net price of the floor multipliers on user `k`: `-lambda_k` from its own
/// floor plus `(2^R_min - 1) lambda_i` from every successor `i` whose floor
/// grows with `p_k`.
fn floor_price(k: usize, partition: &UserPartition, config: &SystemConfig, lambda: &[f64]) -> f64 {
    let after: f64 = partition.successors(k).iter().map(|&i| lambda[i]).sum();
    config.rate_floor_factor() * after - lambda[k]
}

pub fn kkt_terms(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
) -> KktTerms {
    let inv_beta: f64 = (0..ch.users())
        .filter(|&j| j != k)
        .map(|j| 1.0 / ch.beta[j])
        .sum();
    KktTerms {
        omega: interference_weight(config) * inv_beta,
        lambda: lower_bound_denominator(k, p, ch, config),
        chi: floor_price(k, partition, config, &multipliers.lambda),
    }
}

/// Derivative of the other users' interference penalties with respect to
/// `p_k`: `(e^{2 delta_t^2} tau_d / beta_k) sum_{j != k} 1 / (Lambda_j ln 2)`.
pub fn cross_term(k: usize, p: &[f64], ch: &ChannelRealization, config: &SystemConfig) -> f64 {
    let sum: f64 = (0..ch.users())
        .filter(|&j| j != k)
        .map(|j| 1.0 / (lower_bound_denominator(j, p, ch, config) * LN2))
        .sum();
    interference_weight(config) / ch.beta[k] * sum
}

fn stationarity_denominator(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> f64 {
    cross_term(k, p, ch, config)
        + q
        + multipliers.omega(partition.group(k))
        + floor_price(k, partition, config, &multipliers.lambda)
}

/// Power of user `k` that zeroes its stationarity condition with the other
/// users held fixed: `1 / (ln2 (cross_k + q + omega_group + chi_k))`.
pub fn kkt_power_update(
    k: usize,
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> Result<f64, SolveError> {
    let den = stationarity_denominator(k, p, ch, partition, config, multipliers, q);
    if den > 0.0 && den.is_finite() {
        Ok(1.0 / (LN2 * den))
    } else {
        Err(SolveError::NonpositiveDenominator {
            user: k,
            value: den,
        })
    }
}

/// Derivative of the Lagrangian with respect to each power:
/// `cross_k - 1 / (p_k ln2) + q + omega_group + chi_k`.
pub fn kkt_residual(
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> Vec<f64> {
    (0..ch.users())
        .map(|k| {
            stationarity_denominator(k, p, ch, partition, config, multipliers, q)
                - 1.0 / (p[k] * LN2)
        })
        .collect()
}

/// Lagrangian of the parametric problem in minimization form:
/// `-sum(r_lb) + q (sum(p) + M P_c) + omega_c (sum_c p - B_c)
///  + omega_e (sum_e p - B_e) + sum_k lambda_k (floor_k - p_k)`.
pub fn lagrangian(
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> Result<f64, SolveError> {
    let slack = constraint_slack(p, ch, partition, config);
    let objective = sum_rate_lower_bound(p, ch, config)?;
    let floors: f64 = multipliers
        .lambda
        .iter()
        .zip(&slack.floor)
        .map(|(l, s)| -l * s)
        .sum();
    Ok(
        -objective + q * (p.iter().sum::<f64>() + config.circuit_power())
            - multipliers.omega_c * slack.center
            - multipliers.omega_e * slack.edge
            + floors,
    )
}

fn default_start(partition: &UserPartition, config: &SystemConfig, users: usize) -> Vec<f64> {
    (0..users)
        .map(|k| {
            let g = partition.group(k);
            let budget = group_budget(g, partition, config);
            let share = budget / partition.members(g).len() as f64;
            if share > 0.0 {
                share
            } else {
                config.power_budget() / users as f64
            }
        })
        .collect()
}

/// Gauss-Seidel sweeps before switching to Newton steps.
const SWEEPS_BEFORE_NEWTON: usize = 50;
const MAX_NEWTON_STEPS: usize = 100;

/// Scaled stationarity residuals `p_k ln2 den_k - 1`, which equal the
/// relative change a Gauss-Seidel update would make, and the denominators.
fn scaled_residuals(
    p: &[f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> (Vec<f64>, Vec<f64>) {
    let den: Vec<f64> = (0..ch.users())
        .map(|k| stationarity_denominator(k, p, ch, partition, config, multipliers, q))
        .collect();
    let res = p
        .iter()
        .zip(&den)
        .map(|(pk, d)| pk * LN2 * d - 1.0)
        .collect();
    (res, den)
}

/// Newton iteration on the scaled residuals in log-power coordinates, with
/// backtracking on the residual norm.
fn newton_power_solve(
    p: &mut [f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
) -> Result<usize, SolveError> {
    let users = ch.users();
    let weight = interference_weight(config);
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut res, mut den) = scaled_residuals(p, ch, partition, config, multipliers, q);
    let limit = config.max_inner_iters.min(MAX_NEWTON_STEPS);
    for iter in 1..=limit {
        if norm(&res) < config.inner_tol {
            return Ok(iter - 1);
        }
        let inv_sq: Vec<f64> = (0..users)
            .map(|j| lower_bound_denominator(j, p, ch, config).powi(-2))
            .collect();
        let total_inv_sq: f64 = inv_sq.iter().sum();
        // d den_k / d p_m = -(w^2 / (beta_k beta_m ln2)) sum_{j != k, m} Lambda_j^-2
        let jac = DMatrix::from_fn(users, users, |k, m| {
            let skip = if k == m {
                inv_sq[k]
            } else {
                inv_sq[k] + inv_sq[m]
            };
            let d_den = -weight * weight / (ch.beta[k] * ch.beta[m] * LN2) * (total_inv_sq - skip);
            let diag = if k == m { p[k] * LN2 * den[k] } else { 0.0 };
            p[k] * LN2 * d_den * p[m] + diag
        });
        let rhs = -DVector::from_column_slice(&res);
        let step = match jac.lu().solve(&rhs) {
            Some(s) => s,
            None => break,
        };
        let current = norm(&res);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..users)
                .map(|k| p[k] * (t * step[k]).clamp(-20.0, 20.0).exp())
                .collect();
            let (r, d) = scaled_residuals(&trial, ch, partition, config, multipliers, q);
            if norm(&r) < current {
                p.copy_from_slice(&trial);
                res = r;
                den = d;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(SolveError::NoConvergence {
        stage: "Newton power solve",
        iters: limit,
    })
}

/// Solves the per-user stationarity conditions at fixed multipliers:
/// Gauss-Seidel sweeps of [`kkt_power_update`], then Newton steps when the
/// sweeps converge slowly. Stops when the largest relative power change
/// falls below `inner_tol`. Returns the powers and the iteration count.
pub fn inner_power_solve(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    multipliers: &MultiplierState,
    q: f64,
    start: Option<&[f64]>,
) -> Result<(PowerAllocation, usize), SolveError> {
    let users = ch.users();
    let mut p = match start {
        Some(s) => s.to_vec(),
        None => default_start(partition, config, users),
    };
    let weight = interference_weight(config);
    let noise = config.effective_noise();
    let mut scaled: f64 = (0..users).map(|j| p[j] / ch.beta[j]).sum();
    let sweeps = config.max_inner_iters.min(SWEEPS_BEFORE_NEWTON);
    for sweep in 1..=sweeps {
        let mut change: f64 = 0.0;
        for k in 0..users {
            let cross: f64 = (0..users)
                .filter(|&j| j != k)
                .map(|j| 1.0 / ((weight * (scaled - p[j] / ch.beta[j]) + noise) * LN2))
                .sum::<f64>()
                * weight
                / ch.beta[k];
            let den = cross
                + q
                + multipliers.omega(partition.group(k))
                + floor_price(k, partition, config, &multipliers.lambda);
            if !(den > 0.0 && den.is_finite()) {
                return Err(SolveError::NonpositiveDenominator {
                    user: k,
                    value: den,
                });
            }
            let next = 1.0 / (LN2 * den);
            change = change.max(((next - p[k]) / next).abs());
            scaled += (next - p[k]) / ch.beta[k];
            p[k] = next;
        }
        if change < config.inner_tol {
            return Ok((PowerAllocation::new(p)?, sweep));
        }
    }
    let steps = newton_power_solve(&mut p, ch, partition, config, multipliers, q)?;
    Ok((PowerAllocation::new(p)?, sweeps + steps))
}

/// Constraint rows `a_i p <= b_i` in the order C1, C2, C3_0..C3_{K-1}.
struct ConstraintSystem {
    rows: DMatrix<f64>,
    bounds: DVector<f64>,
}

impl ConstraintSystem {
    fn new(ch: &ChannelRealization, partition: &UserPartition, config: &SystemConfig) -> Self {
        let users = ch.users();
        let factor = config.rate_floor_factor();
        let noise = config.effective_noise();
        let mut rows = DMatrix::zeros(users + 2, users);
        let mut bounds = DVector::zeros(users + 2);
        for (r, g) in [Group::Center, Group::Edge].into_iter().enumerate() {
            for &k in partition.members(g) {
                rows[(r, k)] = 1.0;
            }
            bounds[r] = group_budget(g, partition, config);
        }
        for k in 0..users {
            let r = k + 2;
            rows[(r, k)] = -1.0;
            for &j in partition.predecessors(k) {
                rows[(r, j)] = factor;
            }
            bounds[r] = -factor * noise / ch.gain_norm_sq(k);
        }
        Self { rows, bounds }
    }

    fn multipliers(state: &MultiplierState) -> DVector<f64> {
        let mut mu = DVector::zeros(state.lambda.len() + 2);
        mu[0] = state.omega_c;
        mu[1] = state.omega_e;
        for (k, l) in state.lambda.iter().enumerate() {
            mu[k + 2] = *l;
        }
        mu
    }
}

/// Inner-solve failures caused by multipliers that admit no positive
/// stationary power vector.
fn unsolvable_at(e: &SolveError) -> bool {
    matches!(
        e,
        SolveError::NonpositiveDenominator { .. } | SolveError::NoConvergence { .. }
    )
}

fn scale_multipliers(state: &MultiplierState, factor: f64) -> MultiplierState {
    MultiplierState {
        omega_c: state.omega_c * factor,
        omega_e: state.omega_e * factor,
        lambda: state.lambda.iter().map(|l| l * factor).collect(),
    }
}

struct LevelOutcome {
    converged: bool,
    sweeps: usize,
    steps: usize,
}

/// Dual iteration at a fixed efficiency level. Updates `p` and `state` in
/// place.
fn dual_level(
    q: f64,
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    system: &ConstraintSystem,
    state: &mut MultiplierState,
    p: &mut Vec<f64>,
) -> Result<LevelOutcome, SolveError> {
    let users = ch.users();
    // Multipliers carried over from another level can price a power below
    // zero; shrink them toward zero, where the update is always defined.
    let mut sweeps = 0;
    let mut shrink = 1.0;
    loop {
        let warm = scale_multipliers(state, shrink);
        match inner_power_solve(ch, partition, config, &warm, q, Some(p)) {
            Ok((first, s)) => {
                sweeps += s;
                *state = warm;
                *p = first.into_inner();
                break;
            }
            Err(e) if shrink > 0.0 && unsolvable_at(&e) => {
                shrink = if shrink < 1e-6 { 0.0 } else { shrink * 0.5 };
            }
            Err(e) => return Err(e),
        }
    }
    for step in 0..=config.max_multiplier_iters {
        let pv = DVector::from_column_slice(p);
        let g = &system.rows * &pv - &system.bounds;
        let scale = system.bounds.abs() + system.rows.abs() * &pv;
        let mu = ConstraintSystem::multipliers(state);
        let mut violation: f64 = 0.0;
        let mut slackness: f64 = 0.0;
        let mut active = Vec::new();
        for i in 0..g.len() {
            let nonzero_row = system.rows.row(i).iter().any(|&a| a != 0.0);
            if !nonzero_row {
                continue;
            }
            if g[i] > 0.0 {
                violation = violation.max(g[i] / scale[i].max(f64::MIN_POSITIVE));
            }
            slackness = slackness.max(mu[i] * g[i].abs());
            if mu[i] > 0.0 || g[i] > 0.0 {
                active.push(i);
            }
        }
        if violation <= FEASIBILITY_TOL && slackness <= SLACKNESS_TOL {
            return Ok(LevelOutcome {
                converged: true,
                sweeps,
                steps: step,
            });
        }
        if step == config.max_multiplier_iters {
            break;
        }

        // Newton direction on the active constraints.
        let n = active.len();
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for (a, &i) in active.iter().enumerate() {
            for (b, &j) in active.iter().enumerate() {
                jac[(a, b)] = (0..users)
                    .map(|k| system.rows[(i, k)] * LN2 * p[k] * p[k] * system.rows[(j, k)])
                    .sum::<f64>();
            }
        }
        let reg = 1e-12 * jac.trace().max(f64::MIN_POSITIVE) / n as f64;
        for a in 0..n {
            jac[(a, a)] += reg;
        }
        let rhs = DVector::from_iterator(n, active.iter().map(|&i| g[i]));
        let delta = match jac.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => jac
                .lu()
                .solve(&rhs)
                .unwrap_or_else(|| DVector::from_element(n, 0.0)),
        };
        let mut direction = ConstraintSlack {
            center: 0.0,
            edge: 0.0,
            floor: vec![0.0; users],
        };
        for (a, &i) in active.iter().enumerate() {
            match i {
                0 => direction.center = -delta[a],
                1 => direction.edge = -delta[a],
                _ => direction.floor[i - 2] = -delta[a],
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKOFFS {
            let candidate = project_step(state, &direction, config, t);
            match inner_power_solve(ch, partition, config, &candidate, q, Some(p)) {
                Ok((next, s)) => {
                    sweeps += s;
                    accepted = Some((candidate, next));
                    break;
                }
                Err(e) if unsolvable_at(&e) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some((candidate, next)) => {
                *state = candidate;
                *p = next.into_inner();
            }
            None => break,
        }
    }
    Ok(LevelOutcome {
        converged: false,
        sweeps,
        steps: config.max_multiplier_iters,
    })
}

/// Largest relative violation and largest `multiplier * |slack|` over the
/// constraint rows.
fn complementarity(
    p: &[f64],
    state: &MultiplierState,
    system: &ConstraintSystem,
) -> (f64, f64, Vec<usize>) {
    let pv = DVector::from_column_slice(p);
    let g = &system.rows * &pv - &system.bounds;
    let scale = system.bounds.abs() + system.rows.abs() * &pv;
    let mu = ConstraintSystem::multipliers(state);
    let mut violation: f64 = 0.0;
    let mut slackness: f64 = 0.0;
    let mut tight = Vec::new();
    for i in 0..g.len() {
        if system.rows.row(i).iter().all(|&a| a == 0.0) {
            continue;
        }
        let rel = g[i] / scale[i].max(f64::MIN_POSITIVE);
        violation = violation.max(rel);
        slackness = slackness.max(mu[i] * g[i].abs());
        if rel > -1e-7 {
            tight.push(i);
        }
    }
    (violation.max(0.0), slackness, tight)
}

/// Solves one efficiency level: dual iteration first, then the interior
/// point fallback with a KKT polish when the dual iteration stalls.
fn solve_level(
    q: f64,
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    system: &ConstraintSystem,
    state: &mut MultiplierState,
    p: &mut Vec<f64>,
    dual_stalled: &mut bool,
) -> Result<LevelOutcome, SolveError> {
    let mut outcome = LevelOutcome {
        converged: false,
        sweeps: 0,
        steps: 0,
    };
    // The dual power update needs a positive efficiency price.
    if !*dual_stalled && q >= 0.0 {
        match dual_level(q, ch, partition, config, system, state, p) {
            Ok(o) if o.converged => return Ok(o),
            Ok(o) => outcome = o,
            Err(e) if unsolvable_at(&e) => {}
            Err(e) => return Err(e),
        }
        *dual_stalled = true;
    }
    let Some((bp, bstate)) = interior::solve_level_interior(q, ch, partition, config) else {
        return Ok(outcome);
    };
    let (_, _, tight) = complementarity(&bp, &bstate, system);
    let (np, nstate) = interior::polish(
        q,
        &bp,
        &bstate,
        &system.rows,
        &system.bounds,
        &tight,
        ch,
        partition,
        config,
    )
    .unwrap_or((bp, bstate));
    let (violation, slackness, _) = complementarity(&np, &nstate, system);
    *p = np;
    *state = nstate;
    outcome.converged = violation <= FEASIBILITY_TOL && slackness <= SLACKNESS_TOL;
    Ok(outcome)
}

/// Moves `p` into the feasible set: raises powers to their floors in
/// constraint order, then shrinks over-budget groups toward their floors.
/// Returns which users moved.
fn project_feasible(
    p: &mut [f64],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Vec<bool> {
    let original = p.to_vec();
    if max_relative_violation(p, ch, partition, config) <= FEASIBILITY_TOL {
        return vec![false; p.len()];
    }
    for _ in 0..8 {
        for &k in &partition.order {
            let floor = min_power_floor(k, p, ch, partition, config);
            if p[k] < floor {
                p[k] = floor;
            }
        }
        let floors: Vec<f64> = (0..p.len())
            .map(|k| min_power_floor(k, p, ch, partition, config))
            .collect();
        for g in [Group::Center, Group::Edge] {
            let members = partition.members(g);
            let budget = group_budget(g, partition, config);
            let total: f64 = members.iter().map(|&k| p[k]).sum();
            if total > budget {
                let base: f64 = members.iter().map(|&k| floors[k]).sum();
                let excess = total - base;
                let alpha = if excess > 0.0 {
                    ((budget - base) / excess).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                for &k in members {
                    p[k] = floors[k] + alpha * (p[k] - floors[k]);
                }
            }
        }
        if max_relative_violation(p, ch, partition, config) <= FEASIBILITY_TOL {
            break;
        }
    }
    if max_relative_violation(p, ch, partition, config) > FEASIBILITY_TOL {
        p.copy_from_slice(&minimal_floor_powers(ch, partition, config));
    }
    p.iter().zip(&original).map(|(a, b)| a != b).collect()
}

/// Rejects realizations whose rate floors cannot fit the group budgets.
pub fn check_feasible(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Result<(), SolveError> {
    let p_min = minimal_floor_powers(ch, partition, config);
    for g in [Group::Center, Group::Edge] {
        let required: f64 = partition.members(g).iter().map(|&k| p_min[k]).sum();
        let budget = group_budget(g, partition, config);
        if required > budget * (1.0 + 1e-12) {
            return Err(SolveError::Infeasible {
                group: g,
                required,
                budget,
            });
        }
    }
    Ok(())
}

/// Lower-bound energy efficiency `sum(r_lb) / (sum(p) + M P_c)`.
pub fn lower_bound_ee(
    p: &[f64],
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> Result<f64, SolveError> {
    let total = p.iter().sum::<f64>() + config.circuit_power();
    Ok(sum_rate_lower_bound(p, ch, config)? / total)
}

/// Initial upper bound of the efficiency bisection,
/// `zeta_PA / (sigma^2 ln2) min_k beta_k ||h_k||^2`.
pub fn initial_upper_bound(ch: &ChannelRealization, config: &SystemConfig) -> f64 {
    let best = (0..ch.users())
        .map(|k| ch.beta[k] * ch.gain_norm_sq(k))
        .fold(f64::INFINITY, f64::min);
    config.pa_efficiency / (config.noise_var() * LN2) * best
}

/// Bisection on the efficiency level with the dual power solver inside.
/// The bracket starts at `[0, initial_upper_bound]` and moves below zero
/// only when no allocation has a nonnegative sum of rate lower bounds.
pub fn solve(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Result<SolveResult, SolveError> {
    check_channel(ch)?;
    check_feasible(ch, partition, config)?;
    let users = ch.users();
    let system = ConstraintSystem::new(ch, partition, config);
    let circuit = config.circuit_power();

    let upper_bound = initial_upper_bound(ch, config);
    let (mut lo, mut hi) = (0.0, upper_bound);
    let mut state = MultiplierState::zeros(users);
    let mut p = default_start(partition, config, users);
    let mut inner_iters = 0;
    let mut multiplier_iters = 0;
    let mut outer_iters = 0;
    // Once the dual iteration stalls, later levels go straight to the
    // interior-point solver.
    let mut dual_stalled = false;

    let mut sign_checked = false;
    loop {
        while hi - lo >= config.bisect_tol {
            if outer_iters == config.max_outer_iters {
                return Err(SolveError::NoConvergence {
                    stage: "efficiency bisection",
                    iters: outer_iters,
                });
            }
            outer_iters += 1;
            let level = 0.5 * (lo + hi);
            let outcome = solve_level(
                level,
                ch,
                partition,
                config,
                &system,
                &mut state,
                &mut p,
                &mut dual_stalled,
            )?;
            inner_iters += outcome.sweeps;
            multiplier_iters += outcome.steps;
            let mut trial = p.clone();
            project_feasible(&mut trial, ch, partition, config);
            let achieved = lower_bound_ee(&trial, ch, config)?;
            if achieved >= level {
                lo = level;
            } else {
                hi = level;
            }
        }
        if lo > 0.0 || sign_checked {
            break;
        }
        // No positive level was reached. When even the largest sum of rate
        // lower bounds is negative, the optimum lies in
        // [N0 / D(p0), N0 / D_max] with p0 the maximizer of that sum.
        sign_checked = true;
        outer_iters += 1;
        let (mut p0, mut state0) = (p.clone(), state.clone());
        let outcome = solve_level(
            0.0,
            ch,
            partition,
            config,
            &system,
            &mut state0,
            &mut p0,
            &mut dual_stalled,
        )?;
        inner_iters += outcome.sweeps;
        multiplier_iters += outcome.steps;
        project_feasible(&mut p0, ch, partition, config);
        let best = sum_rate_lower_bound(&p0, ch, config)?;
        if best >= 0.0 {
            break;
        }
        lo = best / (p0.iter().sum::<f64>() + circuit);
        hi = best / (config.power_budget() + circuit);
        (p, state) = (p0, state0);
    }

    let q = 0.5 * (lo + hi);
    let outcome = solve_level(
        q,
        ch,
        partition,
        config,
        &system,
        &mut state,
        &mut p,
        &mut dual_stalled,
    )?;
    inner_iters += outcome.sweeps;
    multiplier_iters += outcome.steps;
    let clamped = project_feasible(&mut p, ch, partition, config);

    let residual = kkt_residual(&p, ch, partition, config, &state, q);
    let kkt_residual_max = residual
        .iter()
        .zip(&clamped)
        .filter(|(_, &c)| !c)
        .map(|(r, _)| r.abs())
        .fold(0.0, f64::max);
    let denominator = p.iter().sum::<f64>() + circuit;
    let certificate_gap =
        (sum_rate_lower_bound(&p, ch, config)? - q * denominator).abs() / denominator;
    let converged = outcome.converged && certificate_gap <= config.bisect_tol;

    Ok(SolveResult {
        powers: PowerAllocation::new(p)?,
        q,
        multipliers: state,
        outer_iters,
        inner_iters,
        multiplier_iters,
        converged,
        kkt_residual_max,
        certificate_gap,
        bisection_width: hi - lo,
        upper_bound,
        clamped,
    })
}

/// Equal split of the total per-symbol budget, `P / (K (T - tau_d))`.
pub fn equal_power_baseline(config: &SystemConfig) -> PowerAllocation {
    let p = config.power_budget() / config.users as f64;
    PowerAllocation::new(vec![p; config.users]).expect("positive equal power")
}

/// Exhaustive search over a geometric grid of `grid_points` values per user,
/// spanning each user's minimal floor power to its group budget. Returns the
/// feasible grid point with the largest lower-bound efficiency.
pub fn grid_oracle(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
    grid_points: usize,
) -> Result<(PowerAllocation, f64), SolveError> {
    let users = ch.users();
    if users > ORACLE_MAX_USERS {
        return Err(SolveError::TooManyUsers {
            users,
            max: ORACLE_MAX_USERS,
        });
    }
    check_channel(ch)?;
    let n = grid_points.max(2);
    let p_min = minimal_floor_powers(ch, partition, config);
    let axes: Vec<Vec<f64>> = (0..users)
        .map(|k| {
            let hi = group_budget(partition.group(k), partition, config);
            let lo = if p_min[k] > 0.0 { p_min[k] } else { hi * 1e-9 };
            if hi <= lo {
                return vec![lo];
            }
            let ratio = hi / lo;
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi
                    } else {
                        lo * ratio.powf(i as f64 / (n - 1) as f64)
                    }
                })
                .collect()
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut index = vec![0usize; users];
    let mut p = vec![0.0; users];
    loop {
        for k in 0..users {
            p[k] = axes[k][index[k]];
        }
        if max_relative_violation(&p, ch, partition, config) <= 1e-12 {
            let ee = lower_bound_ee(&p, ch, config)?;
            if best.as_ref().is_none_or(|(_, b)| ee > *b) {
                best = Some((p.clone(), ee));
            }
        }
        // Odometer increment over the grid.
        let mut k = 0;
        loop {
            if k == users {
                return match best {
                    Some((p, ee)) => Ok((PowerAllocation::new(p)?, ee)),
                    None => Err(infeasible_error(ch, partition, config)),
                };
            }
            index[k] += 1;
            if index[k] < axes[k].len() {
                break;
            }
            index[k] = 0;
            k += 1;
        }
    }
}

fn infeasible_error(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> SolveError {
    match check_feasible(ch, partition, config) {
        Err(e) => e,
        Ok(()) => SolveError::Infeasible {
            group: Group::Center,
            required: f64::NAN,
            budget: group_budget(Group::Center, partition, config),
        },
    }
}

/// Rate lower bound of user `k`, for callers that already hold a solve.
pub fn user_rate_lower_bound(
    k: usize,
    p: &PowerAllocation,
    ch: &ChannelRealization,
    config: &SystemConfig,
) -> Result<f64, SolveError> {
    Ok(rate_lower_bound(k, p.as_slice(), ch, config)?)
}

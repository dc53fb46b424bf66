//! Primal-dual interior-point solver for one efficiency level, in log-power
//! coordinates `x = ln p`, where the level problem is convex:
//!
//! - objective `-sum(r_lb) + q sum(e^x)` is linear minus log-sum-exp terms
//!   plus a convex sum of exponentials,
//! - group budgets become `lse(x_g) - ln B_g <= 0`,
//! - rate floors become `ln(factor) + lse(x_pred, ln(n0 / ||h_k||^2)) - x_k <= 0`.
//!
//! A negative level makes the power term concave. Such levels are solved by
//! the convex-concave procedure: the power term is linearized at the current
//! point and the convex remainder is solved again until the point settles.
//!
//! The interior point is then polished by Newton steps on the exact KKT
//! system of the active constraints in power coordinates.

use nalgebra::{DMatrix, DVector};

use super::{group_budget, kkt_residual, MultiplierState};
use crate::metrics::{interference_weight, lower_bound_denominator};
use crate::sysmodel::{ChannelRealization, Group, SystemConfig, UserPartition};

const LN2: f64 = std::f64::consts::LN_2;

/// `ln sum_i exp(x[var_i] + offset_i)`, where a term without a variable is
/// the constant `exp(offset_i)`.
struct LogSumExp {
    terms: Vec<(Option<usize>, f64)>,
}

impl LogSumExp {
    /// Value, gradient and Hessian at `x`.
    fn eval(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let args: Vec<f64> = self
            .terms
            .iter()
            .map(|&(v, o)| v.map_or(o, |i| x[i] + o))
            .collect();
        let peak = args.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = args.iter().map(|a| (a - peak).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut grad = DVector::zeros(n);
        for (&(v, _), w) in self.terms.iter().zip(&weights) {
            if let Some(i) = v {
                grad[i] += w / total;
            }
        }
        let mut hess = DMatrix::from_diagonal(&grad);
        hess -= &grad * grad.transpose();
        (peak + total.ln(), grad, hess)
    }
}

/// A convex constraint `lse(x) + shift - x[minus] <= 0`.
struct Constraint {
    lse: LogSumExp,
    shift: f64,
    minus: Option<usize>,
}

impl Constraint {
    fn eval(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (v, mut g, h) = self.lse.eval(x);
        let mut value = v + self.shift;
        if let Some(k) = self.minus {
            value -= x[k];
            g[k] -= 1.0;
        }
        (value, g, h)
    }
}

struct Level<'a> {
    users: usize,
    q: f64,
    /// Coefficients of an extra linear term `sum(linear_k x_k)`.
    linear: Vec<f64>,
    rate_terms: Vec<LogSumExp>,
    constraints: Vec<Constraint>,
    /// Index into `constraints` of C1, C2 and each C3, when present.
    center: Option<usize>,
    edge: Option<usize>,
    floors: Vec<Option<usize>>,
    partition: &'a UserPartition,
}

impl<'a> Level<'a> {
    fn new(
        q: f64,
        ch: &ChannelRealization,
        partition: &'a UserPartition,
        config: &SystemConfig,
    ) -> Self {
        let users = ch.users();
        let weight = interference_weight(config);
        let noise = config.effective_noise();
        let rate_terms = (0..users)
            .map(|k| {
                let mut terms: Vec<(Option<usize>, f64)> = (0..users)
                    .filter(|&i| i != k)
                    .map(|i| (Some(i), (weight / ch.beta[i]).ln()))
                    .collect();
                terms.push((None, noise.ln()));
                LogSumExp { terms }
            })
            .collect();

        let mut constraints = Vec::new();
        let group_row = |g: Group, constraints: &mut Vec<Constraint>| {
            let members = partition.members(g);
            if members.is_empty() {
                return None;
            }
            constraints.push(Constraint {
                lse: LogSumExp {
                    terms: members.iter().map(|&k| (Some(k), 0.0)).collect(),
                },
                shift: -group_budget(g, partition, config).ln(),
                minus: None,
            });
            Some(constraints.len() - 1)
        };
        let center = group_row(Group::Center, &mut constraints);
        let edge = group_row(Group::Edge, &mut constraints);
        let factor = config.rate_floor_factor();
        let floors = (0..users)
            .map(|k| {
                if factor == 0.0 {
                    return None;
                }
                let mut terms: Vec<(Option<usize>, f64)> = partition
                    .predecessors(k)
                    .iter()
                    .map(|&j| (Some(j), 0.0))
                    .collect();
                terms.push((None, (noise / ch.gain_norm_sq(k)).ln()));
                constraints.push(Constraint {
                    lse: LogSumExp { terms },
                    shift: factor.ln(),
                    minus: Some(k),
                });
                Some(constraints.len() - 1)
            })
            .collect();
        Self {
            users,
            q,
            linear: vec![0.0; users],
            rate_terms,
            constraints,
            center,
            edge,
            floors,
            partition,
        }
    }

    /// Objective `-ln2 * sum(r_lb) + ln2 * q sum(e^x)` up to a constant,
    /// scaled by ln2 so the rate terms are natural logarithms.
    fn objective(&self, x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let n = self.users;
        let mut value = 0.0;
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (k, lse) in self.rate_terms.iter().enumerate() {
            let (v, g, h) = lse.eval(x);
            value += v - x[k];
            grad += g;
            grad[k] -= 1.0;
            hess += h;
        }
        for k in 0..n {
            let e = LN2 * self.q * x[k].exp();
            value += e + self.linear[k] * x[k];
            grad[k] += e + self.linear[k];
            hess[(k, k)] += e;
        }
        (value, grad, hess)
    }
}

/// Strictly feasible powers: each floor inflated by `1 + s`, with `s`
/// halved until the group budgets hold strictly.
fn interior_start(
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Option<Vec<f64>> {
    let factor = config.rate_floor_factor();
    let users = ch.users();
    let budgets_hold = |p: &[f64]| {
        [Group::Center, Group::Edge].iter().all(|&g| {
            let m = partition.members(g);
            m.is_empty()
                || m.iter().map(|&k| p[k]).sum::<f64>() < group_budget(g, partition, config)
        })
    };
    if factor == 0.0 {
        let p: Vec<f64> = (0..users)
            .map(|k| {
                let g = partition.group(k);
                0.5 * group_budget(g, partition, config) / partition.members(g).len() as f64
            })
            .collect();
        return Some(p);
    }
    let noise = config.effective_noise();
    let mut s = 0.5;
    for _ in 0..60 {
        let mut p = vec![0.0; users];
        for &k in &partition.order {
            let pred: f64 = partition.predecessors(k).iter().map(|&j| p[j]).sum();
            p[k] = (1.0 + s) * factor * (pred + noise / ch.gain_norm_sq(k));
        }
        if budgets_hold(&p) {
            return Some(p);
        }
        s *= 0.5;
    }
    None
}

struct Residual {
    dual: DVector<f64>,
    cent: DVector<f64>,
}

impl Residual {
    fn norm(&self) -> f64 {
        (self.dual.norm_squared() + self.cent.norm_squared()).sqrt()
    }
}

/// Dual and centrality residuals at `(x, lam)` for weight `t`; `None`
/// outside the strict interior.
fn residual(level: &Level, x: &[f64], lam: &DVector<f64>, t: f64) -> Option<Residual> {
    let (_, mut dual, _) = level.objective(x);
    let mut cent = DVector::zeros(lam.len());
    for (i, c) in level.constraints.iter().enumerate() {
        let (h, g, _) = c.eval(x);
        if !(h < 0.0) {
            return None;
        }
        dual += g * lam[i];
        cent[i] = -lam[i] * h - 1.0 / t;
    }
    Some(Residual { dual, cent })
}

/// Primal-dual interior-point iterations from a strictly feasible `x`.
/// Returns the log-form multipliers.
fn primal_dual(level: &Level, x: &mut Vec<f64>) -> Option<DVector<f64>> {
    const MU: f64 = 10.0;
    let n = x.len();
    let m = level.constraints.len();
    let mut lam = DVector::from_iterator(m, level.constraints.iter().map(|c| 1.0 / (-c.eval(x).0)));
    for _ in 0..200 {
        let (_, gf, hf) = level.objective(x);
        let evals: Vec<_> = level.constraints.iter().map(|c| c.eval(x)).collect();
        let gap: f64 = evals.iter().zip(lam.iter()).map(|(e, l)| -e.0 * l).sum();
        let mut dual = gf.clone();
        for (e, l) in evals.iter().zip(lam.iter()) {
            dual += &e.1 * *l;
        }
        if gap < 1e-13 && dual.amax() < 1e-10 {
            return Some(lam);
        }
        let t = if m > 0 {
            MU * m as f64 / gap.max(f64::MIN_POSITIVE)
        } else {
            1.0
        };
        let mut lhs = hf;
        let mut rhs = -dual;
        let mut cent = DVector::zeros(m);
        for (i, (h, g, hh)) in evals.iter().enumerate() {
            cent[i] = -lam[i] * h - 1.0 / t;
            lhs += hh * lam[i] + g * g.transpose() * (lam[i] / -h);
            rhs += g * (cent[i] / -h);
        }
        let dx = match lhs.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => lhs.lu().solve(&rhs)?,
        };
        let dlam = DVector::from_fn(m, |i, _| {
            let (h, g, _) = &evals[i];
            (lam[i] * g.dot(&dx) - cent[i]) / -h
        });

        let current = residual(level, x, &lam, t)?.norm();
        let mut s: f64 = 1.0;
        for i in 0..m {
            if dlam[i] < 0.0 {
                s = s.min(-lam[i] / dlam[i]);
            }
        }
        s *= 0.99;
        let mut moved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = (0..n).map(|k| x[k] + s * dx[k]).collect();
            let trial_lam = &lam + &dlam * s;
            if let Some(r) = residual(level, &trial, &trial_lam, t) {
                if r.norm() <= (1.0 - 0.01 * s) * current {
                    *x = trial;
                    lam = trial_lam;
                    moved = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !moved {
            // Residual at rounding level: accept the current point.
            return (gap < 1e-9).then_some(lam);
        }
    }
    None
}

/// Linear-form multipliers from log-form ones: a group budget multiplier is
/// divided by the group power, a floor multiplier by the floor value, and
/// both by ln2 (the objective carries that factor).
fn linear_multipliers(
    level: &Level,
    p: &[f64],
    lam: &DVector<f64>,
    floors: &[f64],
) -> MultiplierState {
    let group_sum = |g: Group| {
        level
            .partition
            .members(g)
            .iter()
            .map(|&k| p[k])
            .sum::<f64>()
    };
    MultiplierState {
        omega_c: level
            .center
            .map_or(0.0, |i| lam[i] / (LN2 * group_sum(Group::Center))),
        omega_e: level
            .edge
            .map_or(0.0, |i| lam[i] / (LN2 * group_sum(Group::Edge))),
        lambda: level
            .floors
            .iter()
            .enumerate()
            .map(|(k, f)| f.map_or(0.0, |i| lam[i] / (LN2 * floors[k])))
            .collect(),
    }
}

/// Interior-point solution of one level. Returns powers and linear-form
/// multipliers, or `None` when no strictly feasible point exists or the
/// iteration breaks down.
pub(super) fn solve_level_interior(
    q: f64,
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Option<(Vec<f64>, MultiplierState)> {
    let start: Vec<f64> = interior_start(ch, partition, config)?
        .iter()
        .map(|p| p.ln())
        .collect();
    let (x, lam, level) = if q >= 0.0 {
        let level = Level::new(q, ch, partition, config);
        let mut x = start;
        let lam = primal_dual(&level, &mut x)?;
        (x, lam, level)
    } else {
        convex_concave(q, start, ch, partition, config)?
    };
    let p: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let factor = config.rate_floor_factor();
    let noise = config.effective_noise();
    let floors: Vec<f64> = (0..p.len())
        .map(|k| {
            let pred: f64 = partition.predecessors(k).iter().map(|&j| p[j]).sum();
            factor * (pred + noise / ch.gain_norm_sq(k))
        })
        .collect();
    let state = linear_multipliers(&level, &p, &lam, &floors);
    Some((p, state))
}

/// Local solution of a negative level: the concave term `ln2 q sum(e^x)` is
/// replaced by its tangent at the previous iterate until the iterates agree.
fn convex_concave<'a>(
    q: f64,
    start: Vec<f64>,
    ch: &ChannelRealization,
    partition: &'a UserPartition,
    config: &SystemConfig,
) -> Option<(Vec<f64>, DVector<f64>, Level<'a>)> {
    const MAX_ROUNDS: usize = 200;
    let mut level = Level::new(0.0, ch, partition, config);
    let mut anchor = start.clone();
    for _ in 0..MAX_ROUNDS {
        level.linear = anchor.iter().map(|a| LN2 * q * a.exp()).collect();
        let mut x = start.clone();
        let lam = primal_dual(&level, &mut x)?;
        let moved = x
            .iter()
            .zip(&anchor)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        anchor = x;
        if moved < 1e-11 {
            return Some((anchor, lam, level));
        }
    }
    None
}

/// Hessian of `-sum(r_lb)` (natural-log units times 1/ln2) in power
/// coordinates.
fn rate_hessian(p: &[f64], ch: &ChannelRealization, config: &SystemConfig) -> DMatrix<f64> {
    let users = p.len();
    let weight = interference_weight(config);
    let inv_sq: Vec<f64> = (0..users)
        .map(|j| lower_bound_denominator(j, p, ch, config).powi(-2))
        .collect();
    let total: f64 = inv_sq.iter().sum();
    DMatrix::from_fn(users, users, |k, m| {
        let skip = if k == m {
            inv_sq[k]
        } else {
            inv_sq[k] + inv_sq[m]
        };
        let cross = -weight * weight / (ch.beta[k] * ch.beta[m] * LN2) * (total - skip);
        let own = if k == m {
            1.0 / (LN2 * p[k] * p[k])
        } else {
            0.0
        };
        cross + own
    })
}

/// Newton steps on the KKT system of the active constraints
/// (`grad L = 0`, `a_i p = b_i`). Accepts the result only when it keeps
/// positive powers, nonnegative multipliers and feasibility of the inactive
/// constraints.
pub(super) fn polish(
    q: f64,
    p: &[f64],
    state: &MultiplierState,
    rows: &DMatrix<f64>,
    bounds: &DVector<f64>,
    active: &[usize],
    ch: &ChannelRealization,
    partition: &UserPartition,
    config: &SystemConfig,
) -> Option<(Vec<f64>, MultiplierState)> {
    let users = p.len();
    let n = users + active.len();
    let mut p = p.to_vec();
    let mut mu = DVector::from_fn(rows.nrows(), |i, _| match i {
        0 => state.omega_c,
        1 => state.omega_e,
        _ => state.lambda[i - 2],
    });
    for i in 0..mu.len() {
        if !active.contains(&i) {
            mu[i] = 0.0;
        }
    }
    let to_state = |mu: &DVector<f64>| MultiplierState {
        omega_c: mu[0],
        omega_e: mu[1],
        lambda: (0..users).map(|k| mu[k + 2]).collect(),
    };
    for _ in 0..30 {
        let s = to_state(&mu);
        let grad = kkt_residual(&p, ch, partition, config, &s, q);
        let pv = DVector::from_column_slice(&p);
        let g = rows * &pv - bounds;
        let mut rhs = DVector::zeros(n);
        for k in 0..users {
            rhs[k] = -grad[k];
        }
        for (a, &i) in active.iter().enumerate() {
            rhs[users + a] = -g[i];
        }
        let scale = p.iter().map(|v| 1.0 / (LN2 * v)).fold(0.0, f64::max);
        let err = rhs.iter().take(users).fold(0.0f64, |m, v| m.max(v.abs())) / scale;
        if err < 1e-15 {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (users, users))
            .copy_from(&rate_hessian(&p, ch, config));
        for (a, &i) in active.iter().enumerate() {
            for k in 0..users {
                jac[(k, users + a)] = rows[(i, k)];
                jac[(users + a, k)] = rows[(i, k)];
            }
        }
        let step = jac.lu().solve(&rhs)?;
        for k in 0..users {
            p[k] += step[k];
        }
        for (a, &i) in active.iter().enumerate() {
            mu[i] += step[users + a];
        }
        if p.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
    }
    if active.iter().any(|&i| mu[i] < 0.0) {
        return None;
    }
    let pv = DVector::from_column_slice(&p);
    let g = rows * &pv - bounds;
    let scale = bounds.abs() + rows.abs() * &pv;
    if (0..g.len()).any(|i| !active.contains(&i) && g[i] > 1e-12 * scale[i]) {
        return None;
    }
    Some((p, to_state(&mu)))
}

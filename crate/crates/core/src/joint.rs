//! Joint source covariance, relay matrix and TS ratio by alternating
//! optimization over per-stream variables.
//!
//! With `F = V2 diag(sqrt f) U1^H`, `Q = V1 diag(q) V1^H` and
//! `d_k = f_k (alpha_k q_k + sigma1^2)` the problem separates into two convex
//! blocks:
//!
//! * `(d, eps)` for fixed `q`: harvest constraint `eps eta E >= (1-eps)/2 sum d`,
//!   water-filling in `d` with multiplier reciprocal `mu1`, `mu1` from the
//!   TS-ratio stationarity equation;
//! * `q` for fixed `(d, eps)`: power constraint `sum q <= P`, water-filling in
//!   `q` with multiplier reciprocal `mu2` chosen so the budget is spent.
//!
//! Each block is solved exactly, so the objective never decreases.

use std::f64::consts::LN_2;

use crate::error::{invalid, Result};
use crate::model::{
    rate_scalar_form, stream_bits, structured_design, EigenProfile, RelayDesign, Scheme,
    SolveReport, SystemParams,
};
use crate::oracle::{joint_kkt_residual, kkt_residual, SolverKind};
use crate::roots;

/// Harvest budget in `d` units, `eta (g1 P0 + sigma1^2 D)`.
pub fn energy_budget(profile: &EigenProfile, params: &SystemParams) -> f64 {
    params.eta * params.harvest_power(profile.g1)
}

/// `mu1` above which stream `k` carries relay power.
fn d_threshold(profile: &EigenProfile, params: &SystemParams, k: usize, qk: f64) -> Option<f64> {
    let a = profile.alpha[k] * qk / params.sigma1_sq;
    let b = profile.beta[k];
    (a > 0.0 && b > 0.0).then(|| params.sigma2_sq * LN_2 * (1.0 + a) / (b * a))
}

pub fn d_of_mu1(mu1: f64, q: &[f64], profile: &EigenProfile, params: &SystemParams) -> Vec<f64> {
    (0..profile.streams())
        .map(|k| {
            let a = profile.alpha[k] * q[k] / params.sigma1_sq;
            let b = profile.beta[k];
            if a <= 0.0 || b <= 0.0 {
                return 0.0;
            }
            let root = (a * a + 4.0 * a * b * mu1 / (params.sigma2_sq * LN_2)).sqrt();
            (params.sigma2_sq / (2.0 * b) * (root - a - 2.0)).max(0.0)
        })
        .collect()
}

/// TS-ratio stationarity function of the `(d, eps)` block.
pub fn l_tilde(mu1: f64, q: &[f64], profile: &EigenProfile, params: &SystemParams) -> f64 {
    let d = d_of_mu1(mu1, q, profile, params);
    let sum_d: f64 = d.iter().sum();
    -0.5 * stream_bits(profile, &d, q, params)
        + (energy_budget(profile, params) + 0.5 * sum_d) / mu1
}

#[derive(Debug, Clone, PartialEq)]
pub struct DStep {
    pub d: Vec<f64>,
    pub epsilon: f64,
    pub mu1: f64,
}

/// Optimal `(d, eps)` for a fixed source allocation `q`.
pub fn solve_subproblem_d(
    q: &[f64],
    profile: &EigenProfile,
    params: &SystemParams,
) -> Result<DStep> {
    check_allocation(q, profile, "q")?;
    let k = profile.streams();
    let energy = energy_budget(profile, params);
    let lo = (0..k)
        .filter_map(|i| d_threshold(profile, params, i, q[i]))
        .min_by(f64::total_cmp);
    let lo = match lo {
        Some(lo) if energy > 0.0 => lo,
        other => {
            return Ok(DStep {
                d: vec![0.0; k],
                epsilon: 0.0,
                mu1: other.unwrap_or(1.0),
            })
        }
    };
    let l = |mu1: f64| l_tilde(mu1, q, profile, params);
    let mu1 = match roots::double_until(lo, |mu1| l(mu1) < 0.0) {
        Some(hi) => roots::bisect(l, lo, hi).0,
        None => lo,
    };
    let d = d_of_mu1(mu1, q, profile, params);
    let sum_d: f64 = d.iter().sum();
    let epsilon = if sum_d > 0.0 {
        sum_d / (2.0 * energy + sum_d)
    } else {
        0.0
    };
    Ok(DStep { d, epsilon, mu1 })
}

/// `mu2` above which stream `k` receives source power.
fn q_threshold(
    profile: &EigenProfile,
    params: &SystemParams,
    k: usize,
    dk: f64,
    epsilon: f64,
) -> Option<f64> {
    let a = profile.alpha[k];
    let b = profile.beta[k] * dk / params.sigma2_sq;
    (a > 0.0 && b > 0.0 && epsilon < 1.0)
        .then(|| 2.0 * params.sigma1_sq * LN_2 * (1.0 + b) / ((1.0 - epsilon) * a * b))
}

pub fn q_of_mu2(
    mu2: f64,
    d: &[f64],
    epsilon: f64,
    profile: &EigenProfile,
    params: &SystemParams,
) -> Vec<f64> {
    (0..profile.streams())
        .map(|k| {
            let a = profile.alpha[k];
            let b = profile.beta[k] * d[k] / params.sigma2_sq;
            if a <= 0.0 || b <= 0.0 {
                return 0.0;
            }
            let root = (b * b
                + 2.0 * (1.0 - epsilon) * profile.beta[k] * d[k] * a * mu2
                    / (params.sigma1_sq * params.sigma2_sq * LN_2))
                .sqrt();
            (params.sigma1_sq / (2.0 * a) * (root - b - 2.0)).max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QStep {
    pub q: Vec<f64>,
    /// Infinite when no stream benefits from source power (constraint slack).
    pub mu2: f64,
}

/// Optimal source allocation for fixed `(d, eps)`. The whole budget `P` is
/// spent whenever some stream forwards power; otherwise the objective is flat
/// in `q` and the uniform allocation is returned.
pub fn solve_subproblem_q(
    d: &[f64],
    epsilon: f64,
    profile: &EigenProfile,
    params: &SystemParams,
) -> Result<QStep> {
    check_allocation(d, profile, "d")?;
    if !(0.0..1.0).contains(&epsilon) {
        return invalid(format!("TS ratio must lie in [0, 1), got {epsilon}"));
    }
    let k = profile.streams();
    let lo = (0..k)
        .filter_map(|i| q_threshold(profile, params, i, d[i], epsilon))
        .min_by(f64::total_cmp);
    let Some(lo) = lo else {
        return Ok(QStep {
            q: vec![params.p / k as f64; k],
            mu2: f64::INFINITY,
        });
    };
    let excess = |mu2: f64| params.p - q_of_mu2(mu2, d, epsilon, profile, params).iter().sum::<f64>();
    let mu2 = match roots::double_until(lo, |mu2| excess(mu2) < 0.0) {
        Some(hi) => roots::bisect(excess, lo, hi).0,
        None => lo,
    };
    Ok(QStep {
        q: q_of_mu2(mu2, d, epsilon, profile, params),
        mu2,
    })
}

/// Structured relay design for per-stream `(d, q, eps)`.
pub fn assemble_design(
    profile: &EigenProfile,
    d: &[f64],
    q: &[f64],
    epsilon: f64,
    params: &SystemParams,
) -> RelayDesign {
    structured_design(profile, d, q, epsilon, params, Scheme::Joint)
}

#[derive(Debug, Clone)]
pub struct JointOptions {
    /// Starting source allocation; uniform `P/D` when `None`.
    pub init_q: Option<Vec<f64>>,
    /// Stop when the relative objective change of one sweep drops below this.
    pub rel_tol: f64,
    /// ...and the KKT residual of the current iterate is at most this.
    pub kkt_tol: f64,
    pub max_iter: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions {
            init_q: None,
            rel_tol: 1e-8,
            kkt_tol: 1e-9,
            max_iter: 500,
        }
    }
}

fn check_allocation(v: &[f64], profile: &EigenProfile, name: &str) -> Result<()> {
    if v.len() != profile.streams() {
        return invalid(format!("{name} must have {} entries", profile.streams()));
    }
    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return invalid(format!("{name} entries must be finite and nonnegative"));
    }
    Ok(())
}

/// Alternates the `(d, eps)` and `q` blocks until the objective settles.
///
/// `objective_trace` records the objective after every block update, so it
/// has two entries per sweep (one for a degenerate first sweep).
pub fn solve_joint(
    profile: &EigenProfile,
    params: &SystemParams,
    opts: &JointOptions,
) -> Result<(RelayDesign, SolveReport)> {
    params.validate()?;
    let k = profile.streams();
    let mut q = opts
        .init_q
        .clone()
        .unwrap_or_else(|| vec![params.p / k as f64; k]);
    check_allocation(&q, profile, "init_q")?;
    if q.iter().sum::<f64>() > params.p * (1.0 + params.tol) {
        return invalid("init_q exceeds the source power budget");
    }
    if opts.max_iter == 0 {
        return invalid("max_iter must be positive");
    }

    let mut trace = Vec::with_capacity(2 * opts.max_iter);
    let mut step = solve_subproblem_d(&q, profile, params)?;
    let mut mu2 = None;
    let mut objective = rate_scalar_form(profile, &step.d, &q, step.epsilon, params)?;
    trace.push(objective);
    let mut iterations = 1;
    let mut converged = step.d.iter().all(|&v| v == 0.0);
    // Objective at the end of the previous sweep.
    let mut previous = objective;

    while !converged {
        let qs = solve_subproblem_q(&step.d, step.epsilon, profile, params)?;
        q = qs.q;
        mu2 = Some(qs.mu2);
        let after_q = rate_scalar_form(profile, &step.d, &q, step.epsilon, params)?;
        trace.push(after_q);
        objective = after_q;

        let change = (after_q - previous).abs() / after_q.abs().max(f64::MIN_POSITIVE);
        previous = after_q;
        // Objective error is quadratic in the distance to the fixed point, so
        // a small objective change alone can leave first-order residuals large.
        if change < opts.rel_tol
            && joint_kkt_residual(&step.d, &q, step.epsilon, step.mu1, mu2, profile, params)
                <= opts.kkt_tol
        {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        iterations += 1;
        step = solve_subproblem_d(&q, profile, params)?;
        let after_d = rate_scalar_form(profile, &step.d, &q, step.epsilon, params)?;
        trace.push(after_d);
        objective = after_d;
    }

    let design = assemble_design(profile, &step.d, &q, step.epsilon, params);
    let harvest = step.epsilon * energy_budget(profile, params);
    let spent = (1.0 - step.epsilon) / 2.0 * step.d.iter().sum::<f64>();
    let mut report = SolveReport {
        rate: objective,
        epsilon: step.epsilon,
        x_or_d: step.d,
        q_alloc: q,
        mu: step.mu1,
        mu2,
        iterations,
        objective_trace: trace,
        kkt_residual: 0.0,
        constraint_slack: harvest - spent,
        converged,
    };
    report.kkt_residual = kkt_residual(&report, profile, params, SolverKind::Joint);
    Ok((design, report))
}

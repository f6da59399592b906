//! Brute-force grid oracles, KKT residuals and design feasibility checks.
//!
//! The grid searches evaluate the per-stream objectives from their literal
//! product form and never call into the solvers, so they stay an independent
//! check on both closed forms.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::linalg::{self, CMatrix};
use crate::model::{
    eigen_profile, harvest_terms, rate_matrix_form, rate_scalar_form, ChannelRealization,
    EigenProfile, RelayDesign, SolveReport, SystemParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Fixed,
    Joint,
}

/// Largest TS ratio the grid oracles search.
pub const GRID_EPS_MAX: f64 = 0.99;

/// Axis layout for the grid oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Upper bound for each `x_k` (fixed) or `d_k` (joint). `None` derives it
    /// from the harvest constraint at `eps = GRID_EPS_MAX`.
    pub var_max: Option<f64>,
    /// Upper bound for each `q_k`. `None` means `P`.
    pub q_max: Option<f64>,
    /// Points per power axis, endpoints included.
    pub steps: usize,
    /// Points on the TS-ratio axis over `[0, GRID_EPS_MAX]`.
    pub eps_steps: usize,
}

impl GridSpec {
    pub fn uniform(steps: usize) -> Self {
        GridSpec {
            var_max: None,
            q_max: None,
            steps,
            eps_steps: steps,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 2 || self.eps_steps < 2 {
            return invalid("grid needs at least two points per axis");
        }
        for bound in [self.var_max, self.q_max].into_iter().flatten() {
            if !(bound > 0.0 && bound.is_finite()) {
                return invalid("grid bounds must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    /// Best `x` (fixed) or `d` (joint).
    pub vars: Vec<f64>,
    /// Best `q`; empty for the fixed-source grid.
    pub q: Vec<f64>,
    pub epsilon: f64,
    pub rate: f64,
    /// How far the continuous optimum may sit above the best grid point:
    /// per-axis spacing times an estimated slope bound on the box.
    pub resolution: f64,
}

fn axis(max: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| max * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Max-reduce with the lowest flat index winning ties.
fn best_of(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.partial_cmp(&b.0) {
        Some(std::cmp::Ordering::Greater) => a,
        Some(std::cmp::Ordering::Less) => b,
        _ => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// Objective of the uniform-source problem in `x` variables.
fn fixed_objective(profile: &EigenProfile, x: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for (k, &xk) in x.iter().enumerate() {
        let ra = profile.rho1 * profile.alpha[k];
        let bx = profile.beta[k] * xk;
        total += ((1.0 + ra) * (1.0 + bx) / (1.0 + ra + bx)).log2();
    }
    (1.0 - eps) / 2.0 * total
}

/// Objective of the joint problem in `(d, q)` variables.
fn joint_objective(profile: &EigenProfile, params: &SystemParams, d: &[f64], q: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..d.len() {
        let a = profile.alpha[k] * q[k] / params.sigma1_sq;
        let b = profile.beta[k] * d[k] / params.sigma2_sq;
        total += ((1.0 + a) * (1.0 + b) / (1.0 + a + b)).log2();
    }
    (1.0 - eps) / 2.0 * total
}

/// Largest absolute partial derivative along each coordinate, estimated by
/// forward differences on a coarse lattice of the box (corners included).
fn slope_bounds(lower: &[f64], upper: &[f64], f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
    const SAMPLES: usize = 17;
    let dims = lower.len();
    let total = SAMPLES.pow(dims as u32);
    (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let point: Vec<f64> = (0..dims)
                .map(|j| {
                    let i = idx % SAMPLES;
                    idx /= SAMPLES;
                    lower[j] + (upper[j] - lower[j]) * i as f64 / (SAMPLES - 1) as f64
                })
                .collect();
            let base = f(&point);
            (0..dims)
                .map(|j| {
                    let h = 1e-7 * (upper[j] - lower[j]);
                    let mut p = point.clone();
                    // Step inward at the upper face.
                    let dir = if p[j] + h > upper[j] { -1.0 } else { 1.0 };
                    p[j] += dir * h;
                    ((f(&p) - base) / h).abs()
                })
                .collect::<Vec<f64>>()
        })
        .reduce(
            || vec![0.0; dims],
            |a, b| a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        )
}

/// Exhaustive search of the uniform-source problem over `(x, eps)`.
pub fn grid_search_fixed(
    profile: &EigenProfile,
    params: &SystemParams,
    grid: &GridSpec,
) -> Result<GridOptimum> {
    grid.validate()?;
    let dims = profile.streams();
    if dims > 2 {
        return invalid("fixed-source grid search is limited to D <= 2");
    }
    let energy = params.eta * params.harvest_power(profile.g1) / params.sigma2_sq;
    let x_max = grid
        .var_max
        .unwrap_or(2.0 * GRID_EPS_MAX * energy / (1.0 - GRID_EPS_MAX))
        .max(f64::MIN_POSITIVE);
    let xs = axis(x_max, grid.steps);
    let eps_axis = axis(GRID_EPS_MAX, grid.eps_steps);

    let per_eps = grid.steps.pow(dims as u32);
    let total = per_eps * grid.eps_steps;
    let decode = |flat: usize| -> (Vec<f64>, f64) {
        let mut idx = flat % per_eps;
        let x = (0..dims)
            .map(|_| {
                let v = xs[idx % grid.steps];
                idx /= grid.steps;
                v
            })
            .collect();
        (x, eps_axis[flat / per_eps])
    };
    let (rate, best) = (0..total)
        .into_par_iter()
        .map(|flat| {
            let (x, eps) = decode(flat);
            let spent = (1.0 - eps) / 2.0 * x.iter().sum::<f64>();
            if eps * energy - spent >= 0.0 {
                (fixed_objective(profile, &x, eps), flat)
            } else {
                (f64::NEG_INFINITY, flat)
            }
        })
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), best_of);
    let (x, epsilon) = decode(best);

    let mut lower = vec![0.0; dims + 1];
    let mut upper = vec![x_max; dims + 1];
    lower[dims] = 0.0;
    upper[dims] = GRID_EPS_MAX;
    let slopes = slope_bounds(&lower, &upper, &|p: &[f64]| {
        fixed_objective(profile, &p[..dims], p[dims])
    });
    let hx = x_max / (grid.steps - 1) as f64;
    let he = GRID_EPS_MAX / (grid.eps_steps - 1) as f64;
    let resolution = slopes[..dims].iter().sum::<f64>() * hx + slopes[dims] * he;

    Ok(GridOptimum {
        vars: x,
        q: Vec::new(),
        epsilon,
        rate,
        resolution,
    })
}

/// Exhaustive search of the single-stream joint problem over `(d, q, eps)`.
pub fn grid_search_joint(
    profile: &EigenProfile,
    params: &SystemParams,
    grid: &GridSpec,
) -> Result<GridOptimum> {
    grid.validate()?;
    if profile.streams() != 1 {
        return invalid("joint grid search is limited to D = 1");
    }
    let energy = params.eta * params.harvest_power(profile.g1);
    let d_max = grid
        .var_max
        .unwrap_or(2.0 * GRID_EPS_MAX * energy / (1.0 - GRID_EPS_MAX))
        .max(f64::MIN_POSITIVE);
    let q_max = grid.q_max.unwrap_or(params.p).min(params.p);
    let ds = axis(d_max, grid.steps);
    let qs = axis(q_max, grid.steps);
    let eps_axis = axis(GRID_EPS_MAX, grid.eps_steps);

    let n = grid.steps;
    let total = n * n * grid.eps_steps;
    let decode = |flat: usize| (ds[flat % n], qs[(flat / n) % n], eps_axis[flat / (n * n)]);
    let (rate, best) = (0..total)
        .into_par_iter()
        .map(|flat| {
            let (d, q, eps) = decode(flat);
            if eps * energy - (1.0 - eps) / 2.0 * d >= 0.0 && q <= params.p {
                (joint_objective(profile, params, &[d], &[q], eps), flat)
            } else {
                (f64::NEG_INFINITY, flat)
            }
        })
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), best_of);
    let (d, q, epsilon) = decode(best);

    let slopes = slope_bounds(&[0.0, 0.0, 0.0], &[d_max, q_max, GRID_EPS_MAX], &|p: &[f64]| {
        joint_objective(profile, params, &p[..1], &p[1..2], p[2])
    });
    let resolution = slopes[0] * d_max / (n - 1) as f64
        + slopes[1] * q_max / (n - 1) as f64
        + slopes[2] * GRID_EPS_MAX / (grid.eps_steps - 1) as f64;

    Ok(GridOptimum {
        vars: vec![d],
        q: vec![q],
        epsilon,
        rate,
        resolution,
    })
}

fn relative(value: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        value.abs() / scale
    } else {
        value.abs()
    }
}

/// Stationarity violation of a water-filling variable: `|nu - grad| / nu` when
/// the variable is active, `(grad - nu)^+ / nu` when it sits at zero.
fn stationarity(value: f64, grad: f64, nu: f64) -> f64 {
    if nu <= 0.0 {
        // A slack constraint: every active gradient must vanish.
        return grad.abs();
    }
    if value > 0.0 {
        relative(nu - grad, nu)
    } else {
        (grad - nu).max(0.0) / nu
    }
}

/// Stationarity in the TS ratio; at `eps = 0` only an increasing Lagrangian
/// counts as a violation.
fn ts_stationarity(eps: f64, grad: f64, scale: f64) -> f64 {
    if eps > 0.0 {
        relative(grad, scale)
    } else {
        grad.max(0.0) / scale.max(f64::MIN_POSITIVE)
    }
}

/// Largest normalized violation of the KKT system the solver claims to have
/// solved: per-stream stationarity, TS-ratio stationarity, complementary
/// slackness of the harvest constraint and, for the joint solver, of the
/// source power constraint.
pub fn kkt_residual(
    report: &SolveReport,
    profile: &EigenProfile,
    params: &SystemParams,
    which: SolverKind,
) -> f64 {
    match which {
        SolverKind::Fixed => kkt_fixed(report, profile, params),
        SolverKind::Joint => kkt_joint(report, profile, params),
    }
}

fn kkt_fixed(report: &SolveReport, profile: &EigenProfile, params: &SystemParams) -> f64 {
    let x = &report.x_or_d;
    let eps = report.epsilon;
    let nu = 1.0 / report.mu;
    let energy = params.eta * params.harvest_power(profile.g1) / params.sigma2_sq;
    let mut worst: f64 = 0.0;
    let mut bits = 0.0;
    for (k, &xk) in x.iter().enumerate() {
        let ra = profile.rho1 * profile.alpha[k];
        let b = profile.beta[k];
        let grad = if ra > 0.0 && b > 0.0 {
            (ra / b) / ((xk + 1.0 / b) * (xk + (ra + 1.0) / b)) / LN_2
        } else {
            0.0
        };
        worst = worst.max(stationarity(xk, grad, nu));
        bits += ((1.0 + ra) * (1.0 + b * xk) / (1.0 + ra + b * xk)).log2();
    }
    let sum_x: f64 = x.iter().sum();
    let harvested = eps * energy;
    let spent = (1.0 - eps) / 2.0 * sum_x;
    worst = worst.max(relative(harvested - spent, harvested + spent));
    let ts_grad = -0.5 * bits + nu * (energy + 0.5 * sum_x);
    worst.max(ts_stationarity(eps, ts_grad, 0.5 * bits + nu * (energy + 0.5 * sum_x)))
}

fn kkt_joint(report: &SolveReport, profile: &EigenProfile, params: &SystemParams) -> f64 {
    joint_kkt_residual(
        &report.x_or_d,
        &report.q_alloc,
        report.epsilon,
        report.mu,
        report.mu2,
        profile,
        params,
    )
}

/// KKT residual of a joint iterate `(d, q, eps)` with multiplier reciprocals
/// `mu1` (harvest) and `mu2` (source power; `None` or infinite when slack).
pub fn joint_kkt_residual(
    d: &[f64],
    q: &[f64],
    eps: f64,
    mu1: f64,
    mu2: Option<f64>,
    profile: &EigenProfile,
    params: &SystemParams,
) -> f64 {
    if q.len() != d.len() || d.len() != profile.streams() {
        return f64::INFINITY;
    }
    let nu1 = 1.0 / mu1;
    let nu2 = mu2.map_or(0.0, |m| 1.0 / m);
    let energy = params.eta * params.harvest_power(profile.g1);
    let (s1, s2) = (params.sigma1_sq, params.sigma2_sq);

    let mut worst: f64 = 0.0;
    let mut bits = 0.0;
    for k in 0..d.len() {
        let (alpha, beta) = (profile.alpha[k], profile.beta[k]);
        let a = alpha * q[k] / s1;
        let b = beta * d[k] / s2;
        let grad_d = beta / s2 * a / ((1.0 + b) * (1.0 + a + b)) / LN_2;
        let grad_q = (1.0 - eps) / 2.0 * alpha / s1 * b / ((1.0 + a) * (1.0 + a + b)) / LN_2;
        worst = worst.max(stationarity(d[k], grad_d, nu1));
        worst = worst.max(stationarity(q[k], grad_q, nu2));
        bits += ((1.0 + a) * (1.0 + b) / (1.0 + a + b)).log2();
    }
    let sum_d: f64 = d.iter().sum();
    let harvested = eps * energy;
    let spent = (1.0 - eps) / 2.0 * sum_d;
    worst = worst.max(relative(harvested - spent, harvested + spent));
    let ts_grad = -0.5 * bits + nu1 * (energy + 0.5 * sum_d);
    worst = worst.max(ts_stationarity(eps, ts_grad, 0.5 * bits + nu1 * (energy + 0.5 * sum_d)));

    let sum_q: f64 = q.iter().sum();
    worst = worst.max((sum_q - params.p).max(0.0) / params.p);
    if nu2 > 0.0 {
        worst = worst.max(relative(sum_q - params.p, params.p));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    /// The measured quantity the check compared against its threshold.
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DesignReport {
    pub checks: Vec<Check>,
}

impl DesignReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, ok: bool, value: f64) {
        let status = if ok { CheckStatus::Pass } else { CheckStatus::Fail };
        self.checks.push(Check { name, status, value });
    }
}

/// Relative tolerance for the structure test and the scalar/matrix rate match.
const STRUCTURE_TOL: f64 = 1e-9;
const RATE_MATCH_TOL: f64 = 1e-8;

/// Per-stream `(d, q)` if the design has the SVD-aligned structure on this
/// channel, `None` otherwise.
fn structured_variables(
    design: &RelayDesign,
    profile: &EigenProfile,
    params: &SystemParams,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let k = profile.streams();
    let v2 = profile.v2.columns(0, k);
    let u1 = profile.u1.columns(0, k);
    let v1 = profile.v1_data.columns(0, k);

    let core_f = v2.adjoint() * &design.f_mat * u1;
    let core_q = v1.adjoint() * &design.q_mat * v1;
    let diag_f: Vec<_> = (0..k).map(|i| core_f[(i, i)]).collect();
    let diag_q: Vec<_> = (0..k).map(|i| core_q[(i, i)]).collect();

    let f_struct = v2 * CMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag_f.clone())) * u1.adjoint();
    let q_struct = v1 * CMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag_q.clone())) * v1.adjoint();
    let close = |a: &CMatrix, b: &CMatrix| {
        linalg::frobenius(&(a - b)) <= STRUCTURE_TOL * linalg::frobenius(a).max(f64::MIN_POSITIVE)
    };
    if !close(&design.f_mat, &f_struct) || !close(&design.q_mat, &q_struct) {
        return None;
    }
    let real_nonneg = |z: &num_complex::Complex64, scale: f64| {
        let slack = STRUCTURE_TOL * scale.max(f64::MIN_POSITIVE);
        z.im.abs() <= slack && z.re >= -slack
    };
    let f_scale = linalg::frobenius(&design.f_mat);
    let q_scale = linalg::frobenius(&design.q_mat);
    if !diag_f.iter().all(|z| real_nonneg(z, f_scale)) || !diag_q.iter().all(|z| real_nonneg(z, q_scale)) {
        return None;
    }
    let q: Vec<f64> = diag_q.iter().map(|z| z.re.max(0.0)).collect();
    let d = (0..k)
        .map(|i| diag_f[i].norm_sqr() * (profile.alpha[i] * q[i] + params.sigma1_sq))
        .collect();
    Some((d, q))
}

/// Feasibility and consistency checks on any design. Never fails; a check
/// that cannot be evaluated is reported as failed or skipped.
pub fn verify_design(
    ch: &ChannelRealization,
    design: &RelayDesign,
    params: &SystemParams,
) -> DesignReport {
    let tol = params.tol;
    let mut report = DesignReport::default();

    let psd = |m: &CMatrix| linalg::is_psd(m, tol * linalg::frobenius(m).max(1.0)).unwrap_or(false);
    report.push("q_psd", psd(&design.q_mat), 0.0);
    report.push("q_tilde_psd", psd(&design.q_tilde), 0.0);

    let tr_q = linalg::trace_re(&design.q_mat);
    report.push("q_trace", tr_q <= params.p + tol * params.p.max(1.0), tr_q - params.p);
    let tr_qt = linalg::trace_re(&design.q_tilde);
    report.push("q_tilde_trace", tr_qt <= params.p0 + tol * params.p0.max(1.0), tr_qt - params.p0);

    let eps = design.epsilon;
    report.push("epsilon_range", (0.0..1.0).contains(&eps), eps);

    let dims_ok = ch.check_dims(params).is_ok()
        && design.f_mat.shape() == (params.l, params.l)
        && design.q_mat.shape() == (params.m, params.m)
        && design.q_tilde.shape() == (params.m, params.m);
    if !dims_ok {
        report.push("dimensions", false, 0.0);
        return report;
    }

    let (harvested, spent) = harvest_terms(ch, design, params);
    let slack = harvested - spent;
    report.push("harvest_slack", slack >= -tol * (harvested + spent).max(1.0), slack);

    let matrix_rate = rate_matrix_form(ch, design, params);
    report.push(
        "rate_finite",
        matches!(matrix_rate, Ok(r) if r.is_finite() && r >= 0.0),
        matrix_rate.as_ref().copied().unwrap_or(f64::NAN),
    );

    let structured = eigen_profile(ch, params)
        .ok()
        .and_then(|prof| structured_variables(design, &prof, params).map(|v| (prof, v)));
    match (structured, matrix_rate) {
        (Some((prof, (d, q))), Ok(matrix)) => {
            let gap = rate_scalar_form(&prof, &d, &q, eps.min(1.0), params)
                .map(|scalar| (scalar - matrix).abs())
                .unwrap_or(f64::INFINITY);
            report.push("rate_agreement", gap <= RATE_MATCH_TOL * matrix.max(1e-300), gap);
        }
        _ => report.checks.push(Check {
            name: "rate_agreement",
            status: CheckStatus::Skipped,
            value: 0.0,
        }),
    }
    report
}

//! Relay matrix and TS ratio in closed form when the source transmits a
//! uniform covariance `Q = (P/D) I`.
//!
//! In whitened per-stream variables `x_k` the relay problem becomes
//!
//! ```text
//! max  (1-eps)/2 * sum_k log2[(1 + rho1 a_k)(1 + b_k x_k) / (1 + rho1 a_k + b_k x_k)]
//! s.t. eps * eta * E / sigma2^2 >= (1-eps)/2 * sum_k x_k
//! ```
//!
//! with `E = g1 P0 + sigma1^2 D`. For a multiplier reciprocal `mu` every
//! `x_k` has a water-filling form; `mu` itself is the unique root of the
//! TS-ratio stationarity equation `l(mu) = 0`, found by bisection.

use std::f64::consts::LN_2;

use crate::error::Result;
use crate::model::{
    rate_scalar_form, structured_design, EigenProfile, RelayDesign, Scheme, SolveReport,
    SystemParams,
};
use crate::oracle::{kkt_residual, SolverKind};
use crate::roots;

/// `mu` below which stream `k` stays off: `ln2 (1 + rho1 a) / (rho1 a b)`.
/// `None` for streams with a zero gain.
pub fn activation_threshold(profile: &EigenProfile, k: usize) -> Option<f64> {
    let ra = profile.rho1 * profile.alpha[k];
    let b = profile.beta[k];
    (ra > 0.0 && b > 0.0).then(|| LN_2 * (1.0 + ra) / (ra * b))
}

pub fn min_activation_threshold(profile: &EigenProfile) -> Option<f64> {
    (0..profile.streams())
        .filter_map(|k| activation_threshold(profile, k))
        .min_by(f64::total_cmp)
}

pub fn x_of_mu(mu: f64, profile: &EigenProfile) -> Vec<f64> {
    (0..profile.streams())
        .map(|k| {
            let ra = profile.rho1 * profile.alpha[k];
            let b = profile.beta[k];
            if ra <= 0.0 || b <= 0.0 {
                return 0.0;
            }
            let root = (ra * ra + 4.0 / LN_2 * ra * b * mu).sqrt();
            ((root - ra - 2.0) / (2.0 * b)).max(0.0)
        })
        .collect()
}

/// Harvest budget in `x` units, `eta (g1 P0 + sigma1^2 D) / sigma2^2`.
pub fn energy_budget(profile: &EigenProfile, params: &SystemParams) -> f64 {
    params.eta * params.harvest_power(profile.g1) / params.sigma2_sq
}

/// `sum_k log2[(1 + rho1 a_k)(1 + b_k x_k) / (1 + rho1 a_k + b_k x_k)]`.
pub fn rate_bits_x(profile: &EigenProfile, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(k, &xk)| {
            let ra = profile.rho1 * profile.alpha[k];
            let bx = profile.beta[k] * xk;
            (ra * bx / (1.0 + ra + bx)).ln_1p()
        })
        .sum::<f64>()
        / LN_2
}

/// TS-ratio stationarity function; strictly decreasing past the smallest
/// activation threshold.
pub fn l_of_mu(mu: f64, profile: &EigenProfile, params: &SystemParams) -> f64 {
    let x = x_of_mu(mu, profile);
    let sum_x: f64 = x.iter().sum();
    -0.5 * rate_bits_x(profile, &x) + (energy_budget(profile, params) + 0.5 * sum_x) / mu
}

/// TS ratio that makes the harvest constraint tight for the given `x`.
pub fn ts_ratio(sum_x: f64, energy: f64) -> f64 {
    if sum_x <= 0.0 {
        0.0
    } else {
        sum_x / (2.0 * energy + sum_x)
    }
}

pub fn solve_fixed_source(
    profile: &EigenProfile,
    params: &SystemParams,
) -> Result<(RelayDesign, SolveReport)> {
    params.validate()?;
    let k = profile.streams();
    let energy = energy_budget(profile, params);
    let lo = min_activation_threshold(profile);

    let (mu, steps) = match lo {
        Some(lo) if energy > 0.0 => {
            let l = |mu: f64| l_of_mu(mu, profile, params);
            match roots::double_until(lo, |mu| l(mu) < 0.0) {
                Some(hi) => roots::bisect(l, lo, hi),
                None => (lo, 0),
            }
        }
        // No usable stream or nothing harvested: the relay stays silent and
        // any mu at or below the smallest threshold satisfies the KKT system.
        Some(lo) => (lo, 0),
        None => (1.0, 0),
    };
    let x = if energy > 0.0 && lo.is_some() {
        x_of_mu(mu, profile)
    } else {
        vec![0.0; k]
    };
    let sum_x: f64 = x.iter().sum();
    let epsilon = ts_ratio(sum_x, energy);

    let d: Vec<f64> = x.iter().map(|v| v * params.sigma2_sq).collect();
    let q = vec![params.p / k as f64; k];
    let rate = rate_scalar_form(profile, &d, &q, epsilon, params)?;
    let design = structured_design(profile, &d, &q, epsilon, params, Scheme::FixedSource);

    let harvest = epsilon * params.eta * params.harvest_power(profile.g1);
    let spent = (1.0 - epsilon) / 2.0 * d.iter().sum::<f64>();
    let mut report = SolveReport {
        rate,
        epsilon,
        x_or_d: x,
        q_alloc: Vec::new(),
        mu,
        mu2: None,
        iterations: steps,
        objective_trace: vec![rate],
        kkt_residual: 0.0,
        constraint_slack: harvest - spent,
        converged: true,
    };
    report.kkt_residual = kkt_residual(&report, profile, params, SolverKind::Fixed);
    Ok((design, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use crate::model::{
        eigen_profile, generate_channel, harvest_constraint_slack, rate_matrix_form,
        FadingModel,
    };
    use crate::linalg::CVector;

    /// Hand-made profile with given spectra; unitary factors are identities.
    pub(crate) fn synthetic_profile(alpha: &[f64], beta: &[f64], g1: f64, rho1: f64) -> EigenProfile {
        let d = alpha.len();
        let mut v1 = CVector::zeros(d);
        v1[0] = 1.0.into();
        EigenProfile {
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            g1,
            v1,
            rho1,
            u1: CMatrix::identity(d, d),
            v1_data: CMatrix::identity(d, d),
            u2: CMatrix::identity(d, d),
            v2: CMatrix::identity(d, d),
        }
    }

    /// Parameters whose rho1 equals 10 for D = 1 and whose harvest power
    /// `g1 P0 + sigma1^2 D` is 2 when g1 = 1.9.
    fn unit_params(eta: f64) -> SystemParams {
        let mut p = SystemParams::with_dims(1, 1, 1, 1);
        p.p = 1.0;
        p.sigma1_sq = 0.1;
        p.sigma2_sq = 1.0;
        p.p0 = 1.0;
        p.eta = eta;
        p
    }

    fn h_k(profile: &EigenProfile, k: usize, x: f64) -> f64 {
        let ra = profile.rho1 * profile.alpha[k];
        let b = profile.beta[k];
        (ra / b) / ((x + 1.0 / b) * (x + (ra + 1.0) / b)) / LN_2
    }

    #[test]
    fn x_is_zero_at_activation_boundary() {
        let prof = synthetic_profile(&[1.0], &[1.0], 1.9, 10.0);
        let x = x_of_mu(11.0 * LN_2 / 10.0, &prof);
        assert!(x[0].abs() < 1e-12);
        assert!((activation_threshold(&prof, 0).unwrap() - 1.1 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn x_solves_stationarity_above_threshold() {
        let prof = synthetic_profile(&[1.0], &[1.0], 1.9, 10.0);
        let mu = 3.9 * LN_2;
        let x = x_of_mu(mu, &prof);
        assert!((x[0] - 2.0).abs() < 1e-12);
        // nu = 1/mu must equal h(x).
        assert!((1.0 / mu - h_k(&prof, 0, x[0])).abs() < 1e-14);
    }

    #[test]
    fn x_vanishes_for_small_mu() {
        let prof = synthetic_profile(&[1.0, 0.5], &[2.0, 0.3], 1.0, 5.0);
        assert!(x_of_mu(1e-12, &prof).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn x_is_nondecreasing_in_mu() {
        let prof = synthetic_profile(&[2.0, 0.7, 0.1], &[1.5, 0.9, 0.2], 1.0, 3.0);
        let mut prev = x_of_mu(1e-3, &prof);
        for i in 1..400 {
            let cur = x_of_mu(1e-3 * 1.05f64.powi(i), &prof);
            assert!(cur.iter().zip(&prev).all(|(c, p)| c >= p));
            prev = cur;
        }
    }

    #[test]
    fn l_at_smallest_threshold_matches_closed_form() {
        let prof = synthetic_profile(&[2.0, 0.7], &[1.5, 0.9], 1.9, 10.0);
        let mut p = unit_params(0.5);
        p.d = 2;
        p.m = 2;
        p.l = 2;
        p.n = 2;
        let lo = min_activation_threshold(&prof).unwrap();
        let max_h0 = (0..2).map(|k| h_k(&prof, k, 0.0)).fold(0.0, f64::max);
        let want = max_h0 * energy_budget(&prof, &p);
        assert!((l_of_mu(lo, &prof, &p) - want).abs() <= 1e-12 * want);
        assert!(want > 0.0);
    }

    #[test]
    fn l_approaches_limit_for_large_mu() {
        let prof = synthetic_profile(&[2.0, 0.7], &[1.5, 0.9], 1.9, 10.0);
        let mut p = unit_params(0.5);
        p.d = 2;
        let limit: f64 = -0.5 * prof.alpha.iter().map(|a| (1.0 + 10.0 * a).log2()).sum::<f64>();
        assert!((l_of_mu(1e9, &prof, &p) - limit).abs() < 1e-3);
        assert!(l_of_mu(1e9, &prof, &p) < 0.0);
    }

    #[test]
    fn zero_efficiency_gives_silent_relay() {
        let prof = synthetic_profile(&[1.0], &[1.0], 1.9, 10.0);
        let (design, report) = solve_fixed_source(&prof, &unit_params(0.0)).unwrap();
        assert_eq!(report.x_or_d, vec![0.0]);
        assert_eq!(report.epsilon, 0.0);
        assert_eq!(report.rate, 0.0);
        assert!(design.f_mat.iter().all(|z| z.norm() == 0.0));
        assert!(report.kkt_residual <= 1e-10);
    }

    #[test]
    fn zero_gain_profile_gives_zero_design() {
        let prof = synthetic_profile(&[0.0, 1.0], &[1.0, 0.0], 1.0, 10.0);
        let mut p = unit_params(0.5);
        p.d = 2;
        p.m = 2;
        p.l = 2;
        p.n = 2;
        let (_, report) = solve_fixed_source(&prof, &p).unwrap();
        assert_eq!(report.rate, 0.0);
        assert_eq!(report.epsilon, 0.0);
    }

    #[test]
    fn symmetric_streams_get_equal_allocations() {
        let prof = synthetic_profile(&[0.8; 3], &[1.3; 3], 2.0, 4.0);
        let mut p = SystemParams::square(3);
        p.eta = 0.6;
        let (_, report) = solve_fixed_source(&prof, &p).unwrap();
        let x = &report.x_or_d;
        assert!(x[0] > 0.0);
        assert!((x[0] - x[1]).abs() <= 1e-12 * x[0]);
        assert!((x[0] - x[2]).abs() <= 1e-12 * x[0]);
    }

    #[test]
    fn bisection_meets_residual_and_tightness() {
        let p = SystemParams::square(4);
        for seed in 0..20 {
            let ch = generate_channel(&p, &FadingModel::default(), seed).unwrap();
            let prof = eigen_profile(&ch, &p).unwrap();
            let (design, report) = solve_fixed_source(&prof, &p).unwrap();
            let energy = energy_budget(&prof, &p);
            assert!(l_of_mu(report.mu, &prof, &p).abs() <= 1e-9 * energy);
            let slack = harvest_constraint_slack(&ch, &design, &p);
            assert!(slack.abs() <= 1e-8, "slack {slack}");
            let matrix = rate_matrix_form(&ch, &design, &p).unwrap();
            assert!((matrix - report.rate).abs() <= 1e-8 * report.rate);
            assert!(report.kkt_residual <= 1e-7);
        }
    }

    #[test]
    fn rate_grows_with_energy_threshold() {
        let mut p = SystemParams::square(3);
        let ch = generate_channel(&p, &FadingModel::default(), 77).unwrap();
        let mut prev = 0.0;
        for dbm in (0..=50).step_by(5) {
            p.p0 = 10f64.powf(dbm as f64 / 10.0);
            let prof = eigen_profile(&ch, &p).unwrap();
            let (_, report) = solve_fixed_source(&prof, &p).unwrap();
            assert!(report.rate >= prev - 1e-12);
            prev = report.rate;
        }
    }
}

//! Physical parameters, Rician channel draws, eigen-profiles and the rate and
//! power expressions shared by every scheme.
//!
//! The relay works in time switching: a fraction `epsilon` of each block is
//! spent harvesting energy through the energy-phase channel `H1_tilde`, the
//! remaining `1 - epsilon` is split evenly between the source→relay hop (`H1`)
//! and the relay→destination hop (`H2`). Rates are evaluated analytically from
//! the channel matrices; no symbols are simulated.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector};

/// Which identity dimension multiplies `sigma1_sq` in the harvested-energy
/// budget fed to the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseDim {
    /// `sigma1_sq * D`, the closed-form constant.
    #[default]
    Streams,
    /// `sigma1_sq * L`, one noise term per relay antenna.
    RelayAntennas,
}

impl FromStr for NoiseDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D" | "d" => Ok(NoiseDim::Streams),
            "L" | "l" => Ok(NoiseDim::RelayAntennas),
            other => invalid(format!("harvest_noise_dim must be D or L, got {other:?}")),
        }
    }
}

impl fmt::Display for NoiseDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseDim::Streams => "D",
            NoiseDim::RelayAntennas => "L",
        })
    }
}

/// Scalar constants of one relay link. Powers are linear.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Source power budget in the data phase.
    pub p: f64,
    /// Source power in the energy phase.
    pub p0: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Energy conversion efficiency.
    pub eta: f64,
    /// Number of data streams.
    pub d: usize,
    pub m: usize,
    pub l: usize,
    pub n: usize,
    /// Tolerance for feasibility checks (PSD, traces, harvest slack).
    pub tol: f64,
    pub harvest_noise_dim: NoiseDim,
}

impl SystemParams {
    /// Square `n x n x n` link with `n` streams and the simulation defaults.
    pub fn square(n: usize) -> Self {
        Self::with_dims(n, n, n, n)
    }

    pub fn with_dims(m: usize, l: usize, n: usize, d: usize) -> Self {
        SystemParams {
            p: 1.0,
            p0: 1.0,
            sigma1_sq: 0.1,
            sigma2_sq: 0.1,
            eta: 0.8,
            d,
            m,
            l,
            n,
            tol: 1e-9,
            harvest_noise_dim: NoiseDim::Streams,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("P", self.p),
            ("P0", self.p0),
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return invalid(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if self.m == 0 || self.l == 0 || self.n == 0 {
            return invalid("antenna counts must be positive");
        }
        if self.d == 0 || self.d > self.m.min(self.l).min(self.n) {
            return invalid(format!(
                "stream count D = {} must satisfy 1 <= D <= min(M, L, N) = {}",
                self.d,
                self.m.min(self.l).min(self.n)
            ));
        }
        Ok(())
    }

    /// Relay SNR `P / (D sigma1^2)`.
    pub fn rho1(&self) -> f64 {
        self.p / (self.d as f64 * self.sigma1_sq)
    }

    fn noise_terms(&self) -> f64 {
        match self.harvest_noise_dim {
            NoiseDim::Streams => self.d as f64,
            NoiseDim::RelayAntennas => self.l as f64,
        }
    }

    /// Harvested power available per unit of energy-phase time,
    /// `g1 P0 + sigma1^2 * (D or L)`.
    pub fn harvest_power(&self, g1: f64) -> f64 {
        g1 * self.p0 + self.sigma1_sq * self.noise_terms()
    }
}

/// Rician fading model: all-ones line of sight plus circular Gaussian scatter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingModel {
    pub rician_k: f64,
    /// Variance of each scatter entry before K-factor weighting.
    pub scatter_var: f64,
    /// Use the data-phase `H1` as the energy-phase channel.
    pub reuse_energy_channel: bool,
}

impl Default for FadingModel {
    fn default() -> Self {
        FadingModel {
            rician_k: 1.0,
            scatter_var: 0.1,
            reuse_energy_channel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// Energy-phase source→relay channel, `L x M`.
    pub h1_tilde: CMatrix,
    /// Data-phase source→relay channel, `L x M`.
    pub h1: CMatrix,
    /// Relay→destination channel, `N x L`.
    pub h2: CMatrix,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn check_dims(&self, params: &SystemParams) -> Result<()> {
        let (m, l, n) = (params.m, params.l, params.n);
        if self.h1_tilde.shape() != (l, m) || self.h1.shape() != (l, m) {
            return invalid(format!("source→relay channels must be {l}x{m}"));
        }
        if self.h2.shape() != (n, l) {
            return invalid(format!("relay→destination channel must be {n}x{l}"));
        }
        if ![&self.h1_tilde, &self.h1, &self.h2]
            .iter()
            .all(|h| linalg::is_finite(h))
        {
            return invalid("channel has non-finite entries");
        }
        Ok(())
    }
}

fn rician_matrix(
    rows: usize,
    cols: usize,
    fading: &FadingModel,
    rng: &mut ChaCha8Rng,
) -> CMatrix {
    let k = fading.rician_k;
    let los = (k / (k + 1.0)).sqrt();
    let nlos = (1.0 / (k + 1.0)).sqrt();
    // Real and imaginary parts each carry half the variance.
    let normal = Normal::new(0.0, (fading.scatter_var / 2.0).sqrt()).expect("finite std dev");
    CMatrix::from_fn(rows, cols, |_, _| {
        let w = Complex64::new(normal.sample(rng), normal.sample(rng));
        Complex64::new(los, 0.0) + w * nlos
    })
}

/// Draws one channel triple. Deterministic in `seed`; `H1` and `H2` are drawn
/// first so toggling `reuse_energy_channel` does not change them.
pub fn generate_channel(
    params: &SystemParams,
    fading: &FadingModel,
    seed: u64,
) -> Result<ChannelRealization> {
    params.validate()?;
    if !(fading.rician_k >= 0.0 && fading.rician_k.is_finite()) {
        return invalid(format!("rician_k must be >= 0, got {}", fading.rician_k));
    }
    if !(fading.scatter_var > 0.0 && fading.scatter_var.is_finite()) {
        return invalid(format!("scatter_var must be > 0, got {}", fading.scatter_var));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h1 = rician_matrix(params.l, params.m, fading, &mut rng);
    let h2 = rician_matrix(params.n, params.l, fading, &mut rng);
    let h1_tilde = if fading.reuse_energy_channel {
        h1.clone()
    } else {
        rician_matrix(params.l, params.m, fading, &mut rng)
    };
    Ok(ChannelRealization {
        h1_tilde,
        h1,
        h2,
        seed,
    })
}

/// Spectral data of a channel consumed by the scalarized solvers.
#[derive(Debug, Clone)]
pub struct EigenProfile {
    /// Top-`D` eigenvalues of `H1 H1^H`, descending.
    pub alpha: Vec<f64>,
    /// Top-`D` eigenvalues of `H2^H H2`, descending.
    pub beta: Vec<f64>,
    /// Top eigenvalue of `H1_tilde H1_tilde^H`.
    pub g1: f64,
    /// Top right-singular vector of `H1_tilde` (energy beam direction).
    pub v1: CVector,
    pub rho1: f64,
    /// Left singular vectors of `H1` (thin).
    pub u1: CMatrix,
    /// Right singular vectors of `H1` (thin).
    pub v1_data: CMatrix,
    pub u2: CMatrix,
    /// Right singular vectors of `H2` (thin).
    pub v2: CMatrix,
}

impl EigenProfile {
    pub fn streams(&self) -> usize {
        self.alpha.len()
    }
}

pub fn eigen_profile(ch: &ChannelRealization, params: &SystemParams) -> Result<EigenProfile> {
    params.validate()?;
    ch.check_dims(params)?;
    let d = params.d;
    let s1 = linalg::svd_descending(&ch.h1)?;
    let s2 = linalg::svd_descending(&ch.h2)?;
    let se = linalg::svd_descending(&ch.h1_tilde)?;
    if s1.sigma.len() < d || s2.sigma.len() < d {
        return invalid(format!("D = {d} exceeds the available singular values"));
    }
    Ok(EigenProfile {
        alpha: s1.sigma[..d].iter().map(|s| s * s).collect(),
        beta: s2.sigma[..d].iter().map(|s| s * s).collect(),
        g1: se.sigma[0] * se.sigma[0],
        v1: se.v.column(0).into_owned(),
        rho1: params.rho1(),
        u1: s1.u,
        v1_data: s1.v,
        u2: s2.u,
        v2: s2.v,
    })
}

/// Energy-phase covariance maximizing the harvested power under
/// `tr(Q_tilde) <= P0`: all power on the strongest right-singular direction.
///
/// Returns `(g1 P0 + sigma1^2 D, P0 v1 v1^H)`.
pub fn harvested_power_max(h1_tilde: &CMatrix, params: &SystemParams) -> Result<(f64, CMatrix)> {
    let svd = linalg::svd_descending(h1_tilde)?;
    let g1 = svd.sigma[0] * svd.sigma[0];
    let v1 = svd.v.column(0).into_owned();
    let q_tilde = (&v1 * v1.adjoint()).scale(params.p0);
    Ok((g1 * params.p0 + params.sigma1_sq * params.d as f64, q_tilde))
}

pub fn energy_covariance(profile: &EigenProfile, params: &SystemParams) -> CMatrix {
    (&profile.v1 * profile.v1.adjoint()).scale(params.p0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    FixedSource,
    Joint,
    Naf,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::FixedSource, Scheme::Joint, Scheme::Naf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::FixedSource => "fixed-source",
            Scheme::Joint => "joint",
            Scheme::Naf => "naf",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fixed-source" | "fixed" => Ok(Scheme::FixedSource),
            "joint" => Ok(Scheme::Joint),
            "naf" => Ok(Scheme::Naf),
            other => invalid(format!("unknown scheme {other:?}")),
        }
    }
}

/// A complete operating point of the relay link.
#[derive(Debug, Clone)]
pub struct RelayDesign {
    /// Relay beamformer, `L x L`.
    pub f_mat: CMatrix,
    /// Data-phase source covariance, `M x M`.
    pub q_mat: CMatrix,
    /// Energy-phase source covariance, `M x M`.
    pub q_tilde: CMatrix,
    pub epsilon: f64,
    pub scheme: Scheme,
}

/// Diagnostics returned next to a design.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub rate: f64,
    pub epsilon: f64,
    /// `x_k` for the fixed-source solver, `d_k` for the joint solver.
    pub x_or_d: Vec<f64>,
    /// `q_k`; empty for the fixed-source solver.
    pub q_alloc: Vec<f64>,
    /// Reciprocal multiplier of the harvest constraint (`mu` or `mu1`).
    pub mu: f64,
    /// Reciprocal multiplier of the source power constraint (joint only).
    pub mu2: Option<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub kkt_residual: f64,
    /// Scalarized harvest slack at the returned point.
    pub constraint_slack: f64,
    pub converged: bool,
}

fn check_design_dims(design: &RelayDesign, params: &SystemParams) -> Result<()> {
    let (m, l) = (params.m, params.l);
    if design.f_mat.shape() != (l, l) {
        return invalid(format!("relay matrix must be {l}x{l}"));
    }
    if design.q_mat.shape() != (m, m) || design.q_tilde.shape() != (m, m) {
        return invalid(format!("source covariances must be {m}x{m}"));
    }
    if !(0.0..=1.0).contains(&design.epsilon) {
        return invalid(format!("TS ratio must lie in [0, 1], got {}", design.epsilon));
    }
    Ok(())
}

struct RateTerms {
    /// `H2 F H1 Q^{1/2}`, `N x M`.
    signal_factor: CMatrix,
    /// `sigma2^2 I + sigma1^2 H2 F F^H H2^H`, `N x N`.
    noise: CMatrix,
}

fn rate_terms(ch: &ChannelRealization, design: &RelayDesign, params: &SystemParams) -> Result<RateTerms> {
    ch.check_dims(params)?;
    check_design_dims(design, params)?;
    let q_half = linalg::psd_sqrt(&design.q_mat)?;
    let h2f = &ch.h2 * &design.f_mat;
    let signal_factor = &h2f * &ch.h1 * q_half;
    let noise = linalg::identity(params.n).scale(params.sigma2_sq)
        + (&h2f * h2f.adjoint()).scale(params.sigma1_sq);
    Ok(RateTerms {
        signal_factor,
        noise,
    })
}

/// End-to-end rate in bits per channel use, destination-side determinant:
/// `(1-eps)/2 log2 det(I_N + S N^{-1})`, evaluated as
/// `log2 det(N + S) - log2 det(N)`.
pub fn rate_matrix_form(
    ch: &ChannelRealization,
    design: &RelayDesign,
    params: &SystemParams,
) -> Result<f64> {
    let t = rate_terms(ch, design, params)?;
    let signal = &t.signal_factor * t.signal_factor.adjoint();
    let bits = linalg::log2_det_hpd(&(&t.noise + signal))? - linalg::log2_det_hpd(&t.noise)?;
    Ok((1.0 - design.epsilon) / 2.0 * bits.max(0.0))
}

/// Same rate through the source-side determinant
/// `log2 det(I_M + A^H N^{-1} A)` with `A = H2 F H1 Q^{1/2}`.
pub fn rate_matrix_form_source_side(
    ch: &ChannelRealization,
    design: &RelayDesign,
    params: &SystemParams,
) -> Result<f64> {
    let t = rate_terms(ch, design, params)?;
    let chol = t
        .noise
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("noise covariance not positive definite".into()))?;
    // W = L^{-1} A, so A^H N^{-1} A = W^H W.
    let w = chol
        .l()
        .solve_lower_triangular(&t.signal_factor)
        .ok_or_else(|| Error::InvalidInput("singular noise factor".into()))?;
    let inner = linalg::identity(params.m) + w.adjoint() * w;
    let bits = linalg::log2_det_hpd(&inner)?;
    Ok((1.0 - design.epsilon) / 2.0 * bits.max(0.0))
}

/// Rate of a structured design written in per-stream variables
/// `d_k = f_k (alpha_k q_k + sigma1^2)` and `q_k`.
pub fn rate_scalar_form(
    profile: &EigenProfile,
    d: &[f64],
    q: &[f64],
    epsilon: f64,
    params: &SystemParams,
) -> Result<f64> {
    let k = profile.streams();
    if d.len() != k || q.len() != k {
        return invalid(format!("expected {k} per-stream values"));
    }
    if d.iter().chain(q).any(|v| *v < 0.0 || !v.is_finite()) {
        return invalid("per-stream values must be finite and nonnegative");
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return invalid(format!("TS ratio must lie in [0, 1], got {epsilon}"));
    }
    Ok((1.0 - epsilon) / 2.0 * stream_bits(profile, d, q, params))
}

/// `sum_k log2[(1+a)(1+b)/(1+a+b)]` with `a = alpha q / s1`, `b = beta d / s2`.
pub(crate) fn stream_bits(profile: &EigenProfile, d: &[f64], q: &[f64], params: &SystemParams) -> f64 {
    (0..profile.streams())
        .map(|k| {
            let a = profile.alpha[k] * q[k] / params.sigma1_sq;
            let b = profile.beta[k] * d[k] / params.sigma2_sq;
            // ln(1+a) + ln(1+b) - ln(1+a+b) = ln(1 + ab/(1+a+b))
            (a * b / (1.0 + a + b)).ln_1p()
        })
        .sum::<f64>()
        / std::f64::consts::LN_2
}

/// Harvest-constraint sides `(harvested, spent)`:
/// `eps eta (tr(H1t Qt H1t^H) + sigma1^2 n)` and
/// `(1-eps)/2 tr(sigma1^2 F F^H + F H1 Q H1^H F^H)`.
pub fn harvest_terms(
    ch: &ChannelRealization,
    design: &RelayDesign,
    params: &SystemParams,
) -> (f64, f64) {
    let eps = design.epsilon;
    let rx = &ch.h1_tilde * &design.q_tilde * ch.h1_tilde.adjoint();
    let harvest = linalg::trace_re(&rx) + params.harvest_power(0.0);
    let f = &design.f_mat;
    let fh1 = f * &ch.h1;
    let spent = params.sigma1_sq * linalg::trace_re(&(f * f.adjoint()))
        + linalg::trace_re(&(&fh1 * &design.q_mat * fh1.adjoint()));
    (eps * params.eta * harvest, (1.0 - eps) / 2.0 * spent)
}

/// `>= 0` when the relay spends no more than it harvested.
pub fn harvest_constraint_slack(
    ch: &ChannelRealization,
    design: &RelayDesign,
    params: &SystemParams,
) -> f64 {
    let (harvested, spent) = harvest_terms(ch, design, params);
    harvested - spent
}

/// Naive AF: uniform source covariance, scaled-identity relay that spends
/// exactly the harvested energy at the given TS ratio.
pub fn naf_design(
    ch: &ChannelRealization,
    params: &SystemParams,
    epsilon: f64,
) -> Result<RelayDesign> {
    params.validate()?;
    ch.check_dims(params)?;
    if !(0.0..1.0).contains(&epsilon) {
        return invalid(format!("NAF needs a TS ratio in [0, 1), got {epsilon}"));
    }
    let (_, q_tilde) = harvested_power_max(&ch.h1_tilde, params)?;
    let g1 = linalg::trace_re(&(&ch.h1_tilde * &q_tilde * ch.h1_tilde.adjoint())) / params.p0;
    let q_mat = linalg::identity(params.m).scale(params.p / params.m as f64);
    let forwarded = params.sigma1_sq * params.l as f64
        + linalg::trace_re(&(&ch.h1 * &q_mat * ch.h1.adjoint()));
    let chi = 2.0 * epsilon * params.eta * params.harvest_power(g1) / ((1.0 - epsilon) * forwarded);
    let f_mat = linalg::identity(params.l).scale(chi.sqrt());
    Ok(RelayDesign {
        f_mat,
        q_mat,
        q_tilde,
        epsilon,
        scheme: Scheme::Naf,
    })
}

/// Assembles `F = V2 diag(sqrt f) U1^H` and `Q = V1 diag(q) V1^H` from
/// per-stream values, with `f_k = d_k / (alpha_k q_k + sigma1^2)`.
pub fn structured_design(
    profile: &EigenProfile,
    d: &[f64],
    q: &[f64],
    epsilon: f64,
    params: &SystemParams,
    scheme: Scheme,
) -> RelayDesign {
    let k = profile.streams();
    let f_root: Vec<f64> = (0..k)
        .map(|i| {
            if d[i] > 0.0 {
                (d[i] / (profile.alpha[i] * q[i] + params.sigma1_sq)).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let v2 = profile.v2.columns(0, k);
    let u1 = profile.u1.columns(0, k);
    let v1 = profile.v1_data.columns(0, k);
    let f_mat = v2 * linalg::real_diag(&f_root) * u1.adjoint();
    let q_mat = v1 * linalg::real_diag(q) * v1.adjoint();
    RelayDesign {
        f_mat,
        q_mat,
        q_tilde: energy_covariance(profile, params),
        epsilon,
        scheme,
    }
}

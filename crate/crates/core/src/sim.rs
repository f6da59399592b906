//! Monte Carlo sweeps over the energy-phase power and antenna count, plus a
//! randomized property suite used by the `verify` subcommand.
//!
//! Every trial draws its channel from a seed derived from
//! `(config seed, N, trial)`, so one trial can be replayed on its own and the
//! same channel is reused at every `P0` point of a sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fixed::solve_fixed_source;
use crate::joint::{solve_joint, JointOptions};
use crate::linalg::{self, CMatrix};
use crate::model::{
    eigen_profile, generate_channel, harvest_constraint_slack, harvest_terms, harvested_power_max,
    naf_design, rate_matrix_form, rate_matrix_form_source_side, rate_scalar_form, ChannelRealization,
    FadingModel, NoiseDim, Scheme, SystemParams,
};
use crate::oracle::{self, GridSpec, SolverKind};

pub const CSV_HEADER: &str =
    "scheme,trial,seed,p0_dbm,n_antennas,rate_bits,epsilon,iterations,converged,slack";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub p0_dbm: Vec<f64>,
    /// Antenna counts; each entry sets `M = L = N`.
    pub antennas: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub fading: FadingModel,
    pub p: f64,
    pub eta: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Stream count; `None` uses all `N` streams.
    pub streams: Option<usize>,
    pub harvest_noise_dim: NoiseDim,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            p0_dbm: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            antennas: vec![4, 6],
            trials: 200,
            seed: 0,
            schemes: Scheme::ALL.to_vec(),
            fading: FadingModel::default(),
            p: 1.0,
            eta: 0.8,
            sigma1_sq: 0.1,
            sigma2_sq: 0.1,
            streams: None,
            harvest_noise_dim: NoiseDim::Streams,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad value {s:?} for {key}"),
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value {value:?} for {key}"),
    })
}

impl SweepConfig {
    /// Parses `key = value` lines on top of the defaults. Lists are comma
    /// separated; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `key = value`, found {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "p0_dbm" => cfg.p0_dbm = parse_list(key, value, line)?,
                "antennas" => cfg.antennas = parse_list(key, value, line)?,
                "trials" => cfg.trials = parse_one(key, value, line)?,
                "seed" => cfg.seed = parse_one(key, value, line)?,
                "schemes" => {
                    cfg.schemes = value
                        .split(',')
                        .map(|s| s.parse::<Scheme>())
                        .collect::<Result<_>>()
                        .map_err(|e| Error::Parse {
                            line,
                            msg: e.to_string(),
                        })?
                }
                "rician_k" => cfg.fading.rician_k = parse_one(key, value, line)?,
                "scatter_var" => cfg.fading.scatter_var = parse_one(key, value, line)?,
                "P" => cfg.p = parse_one(key, value, line)?,
                "eta" => cfg.eta = parse_one(key, value, line)?,
                "sigma1_sq" => cfg.sigma1_sq = parse_one(key, value, line)?,
                "sigma2_sq" => cfg.sigma2_sq = parse_one(key, value, line)?,
                "D" => {
                    cfg.streams = match value {
                        "auto" | "N" => None,
                        v => Some(parse_one(key, v, line)?),
                    }
                }
                "harvest_noise_dim" => {
                    cfg.harvest_noise_dim = value.parse().map_err(|e: Error| Error::Parse {
                        line,
                        msg: e.to_string(),
                    })?
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if self.p0_dbm.is_empty() || self.antennas.is_empty() || self.schemes.is_empty() {
            return invalid("p0_dbm, antennas and schemes must be non-empty");
        }
        if self.p0_dbm.iter().any(|v| !v.is_finite()) {
            return invalid("p0_dbm values must be finite");
        }
        for &n in &self.antennas {
            self.params(n, self.p0_dbm[0])?;
        }
        Ok(())
    }

    /// Link parameters for antenna count `n` at energy-phase power `p0_dbm`.
    pub fn params(&self, n: usize, p0_dbm: f64) -> Result<SystemParams> {
        let mut p = SystemParams::square(n);
        p.p = self.p;
        p.p0 = dbm_to_linear(p0_dbm);
        p.eta = self.eta;
        p.sigma1_sq = self.sigma1_sq;
        p.sigma2_sq = self.sigma2_sq;
        p.d = self.streams.unwrap_or(n);
        p.harvest_noise_dim = self.harvest_noise_dim;
        p.validate()?;
        Ok(p)
    }
}

/// `P = 1` is the 0 dBm reference.
pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Channel seed of one trial: splitmix64 folded over `(seed, n, trial)`.
pub fn trial_seed(seed: u64, n: usize, trial: usize) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ n as u64);
    splitmix64(h ^ trial as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub trial: usize,
    pub seed: u64,
    pub p0_dbm: f64,
    pub n_antennas: usize,
    pub rate_bits: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub slack: f64,
}

impl SweepRow {
    fn failed(scheme: Scheme, trial: usize, seed: u64, p0_dbm: f64, n: usize) -> Self {
        SweepRow {
            scheme,
            trial,
            seed,
            p0_dbm,
            n_antennas: n,
            rate_bits: f64::NAN,
            epsilon: f64::NAN,
            iterations: 0,
            converged: false,
            slack: f64::NAN,
        }
    }
}

/// Rows in `(P0, N, trial, scheme)` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub scheme: Scheme,
    pub p0_dbm: f64,
    pub n_antennas: usize,
    pub mean_rate: f64,
    pub mean_epsilon: f64,
    /// Trials that produced a finite rate.
    pub trials: usize,
}

/// Solves every requested scheme on one channel at one `P0`.
fn solve_point(
    cfg: &SweepConfig,
    ch: &ChannelRealization,
    n: usize,
    trial: usize,
    p0_dbm: f64,
) -> Vec<SweepRow> {
    let seed = ch.seed;
    let failed = |s: Scheme| SweepRow::failed(s, trial, seed, p0_dbm, n);
    let Ok(params) = cfg.params(n, p0_dbm) else {
        return cfg.schemes.iter().map(|&s| failed(s)).collect();
    };
    let Ok(profile) = eigen_profile(ch, &params) else {
        return cfg.schemes.iter().map(|&s| failed(s)).collect();
    };
    let fixed = solve_fixed_source(&profile, &params).ok();

    let mut schemes = cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();
    schemes
        .into_iter()
        .map(|scheme| {
            let solved = match scheme {
                Scheme::FixedSource => fixed.clone().map(|(d, r)| (d, r.iterations, r.converged)),
                Scheme::Joint => solve_joint(&profile, &params, &JointOptions::default())
                    .ok()
                    .map(|(d, r)| (d, r.iterations, r.converged)),
                Scheme::Naf => fixed
                    .as_ref()
                    .and_then(|(_, r)| naf_design(ch, &params, r.epsilon).ok())
                    .map(|d| (d, 0, true)),
            };
            match solved {
                Some((design, iterations, converged)) => match rate_matrix_form(ch, &design, &params) {
                    Ok(rate) => SweepRow {
                        scheme,
                        trial,
                        seed,
                        p0_dbm,
                        n_antennas: n,
                        rate_bits: rate,
                        epsilon: design.epsilon,
                        iterations,
                        converged,
                        slack: harvest_constraint_slack(ch, &design, &params),
                    },
                    Err(_) => failed(scheme),
                },
                None => failed(scheme),
            }
        })
        .collect()
}

/// Runs the sweep. Trials execute on the current rayon pool; the result
/// order does not depend on scheduling.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .antennas
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    // One channel per (N, trial), solved at every P0.
    let per_job: Vec<Vec<Vec<SweepRow>>> = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let seed = trial_seed(cfg.seed, n, trial);
            let channel = cfg
                .params(n, cfg.p0_dbm[0])
                .and_then(|p| generate_channel(&p, &cfg.fading, seed));
            cfg.p0_dbm
                .iter()
                .map(|&p0| match &channel {
                    Ok(ch) => solve_point(cfg, ch, n, trial, p0),
                    Err(_) => cfg
                        .schemes
                        .iter()
                        .map(|&s| SweepRow::failed(s, trial, seed, p0, n))
                        .collect(),
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len() * cfg.p0_dbm.len() * cfg.schemes.len());
    for pi in 0..cfg.p0_dbm.len() {
        for points in &per_job {
            rows.extend(points[pi].iter().cloned());
        }
    }
    Ok(SweepTable { rows })
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(96 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.scheme,
                r.trial,
                r.seed,
                num(r.p0_dbm),
                r.n_antennas,
                num(r.rate_bits),
                num(r.epsilon),
                r.iterations,
                r.converged,
                num(r.slack)
            );
        }
        out
    }

    /// Per `(scheme, P0, N)` means over trials with a finite rate, ordered by
    /// scheme, then `N`, then `P0` as it appears in the table.
    pub fn means(&self) -> Vec<MeanRow> {
        let mut p0_order: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !p0_order.contains(&r.p0_dbm) {
                p0_order.push(r.p0_dbm);
            }
        }
        let mut acc: BTreeMap<(Scheme, usize, usize), (f64, f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let pi = p0_order.iter().position(|&p| p == r.p0_dbm).unwrap_or(0);
            let e = acc.entry((r.scheme, r.n_antennas, pi)).or_insert((0.0, 0.0, 0));
            if r.rate_bits.is_finite() {
                e.0 += r.rate_bits;
                e.1 += r.epsilon;
                e.2 += 1;
            }
        }
        acc.into_iter()
            .map(|((scheme, n, pi), (rate, eps, count))| {
                let c = count.max(1) as f64;
                MeanRow {
                    scheme,
                    p0_dbm: p0_order[pi],
                    n_antennas: n,
                    mean_rate: rate / c,
                    mean_epsilon: eps / c,
                    trials: count,
                }
            })
            .collect()
    }

    pub fn means_csv(&self) -> String {
        let mut out = String::from("scheme,p0_dbm,n_antennas,mean_rate_bits,mean_epsilon,trials\n");
        for m in self.means() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                m.scheme,
                num(m.p0_dbm),
                m.n_antennas,
                num(m.mean_rate),
                num(m.mean_epsilon),
                m.trials
            );
        }
        out
    }
}

/// Outcome of one property in the randomized verification suite.
#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub limit: f64,
}

struct Tally {
    results: Vec<PropertyResult>,
}

impl Tally {
    fn record(&mut self, name: &'static str, value: f64, limit: f64) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        if let Some(r) = self.results.iter_mut().find(|r| r.name == name) {
            r.worst = r.worst.max(value);
            r.passed = r.worst <= r.limit;
        } else {
            self.results.push(PropertyResult {
                name,
                passed: value <= limit,
                worst: value,
                limit,
            });
        }
    }
}

/// Random PSD matrix with trace `power` and random rank.
pub fn random_covariance(rng: &mut ChaCha8Rng, m: usize, power: f64) -> CMatrix {
    let rank = rng.random_range(1..=m);
    let a = CMatrix::from_fn(m, rank, |_, _| {
        num_complex::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let q = &a * a.adjoint();
    let tr = linalg::trace_re(&q);
    q.scale(power / tr)
}

/// Randomized property suite over `trials` instances. Properties are reported
/// as worst-case values against fixed limits.
pub fn verify_suite(trials: usize, seed: u64) -> Result<Vec<PropertyResult>> {
    if trials == 0 {
        return invalid("verification needs at least one trial");
    }
    let mut tally = Tally {
        results: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let d = [1, 2, 4][trial % 3];
        let mut params = SystemParams::square(d);
        params.p0 = dbm_to_linear(rng.random_range(0.0..30.0));
        params.eta = rng.random_range(0.3..1.0);
        let ch = generate_channel(&params, &FadingModel::default(), trial_seed(seed, d, trial))?;
        let profile = eigen_profile(&ch, &params)?;

        let (fixed_design, fixed) = solve_fixed_source(&profile, &params)?;
        let (joint_design, joint) = solve_joint(&profile, &params, &JointOptions::default())?;
        let naf = naf_design(&ch, &params, fixed.epsilon)?;

        // Scalar and matrix rates on both structured designs, both determinant orderings.
        for (design, report) in [(&fixed_design, &fixed), (&joint_design, &joint)] {
            let dst = rate_matrix_form(&ch, design, &params)?;
            let src = rate_matrix_form_source_side(&ch, design, &params)?;
            let scale = report.rate.max(f64::MIN_POSITIVE);
            tally.record("rate_scalar_vs_matrix", (dst - report.rate).abs() / scale, 1e-8);
            tally.record("rate_determinant_orderings", (dst - src).abs() / scale, 1e-8);
        }
        let d_joint = &joint.x_or_d;
        let scalar = rate_scalar_form(&profile, d_joint, &joint.q_alloc, joint.epsilon, &params)?;
        tally.record("joint_rate_recomputed", (scalar - joint.rate).abs(), 1e-12);

        tally.record("kkt_fixed", oracle::kkt_residual(&fixed, &profile, &params, SolverKind::Fixed), 1e-7);
        tally.record("kkt_joint", oracle::kkt_residual(&joint, &profile, &params, SolverKind::Joint), 1e-7);

        for design in [&fixed_design, &joint_design, &naf] {
            let (h, s) = harvest_terms(&ch, design, &params);
            tally.record("harvest_tight", (h - s).abs() / (h + s).max(1.0), 1e-8);
        }
        if joint.x_or_d.iter().any(|&v| v > 0.0) {
            let sum_q: f64 = joint.q_alloc.iter().sum();
            tally.record("source_power_tight", (sum_q - params.p).abs() / params.p, 1e-9);
        }

        let descent = joint
            .objective_trace
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max);
        tally.record("monotone_trace", descent, 1e-12);
        tally.record("joint_converged", if joint.converged { 0.0 } else { 1.0 }, 0.0);

        let naf_rate = rate_matrix_form(&ch, &naf, &params)?;
        tally.record("joint_ge_fixed", fixed.rate - joint.rate, 1e-9);
        tally.record("fixed_ge_naf", naf_rate - fixed.rate, 1e-9);

        let (best, _) = harvested_power_max(&ch.h1_tilde, &params)?;
        let noise = params.sigma1_sq * params.d as f64;
        let mut worst_gain = f64::NEG_INFINITY;
        for _ in 0..100 {
            let q = random_covariance(&mut rng, params.m, params.p0);
            let got = linalg::trace_re(&(&ch.h1_tilde * &q * ch.h1_tilde.adjoint())) + noise;
            worst_gain = worst_gain.max(got - best);
        }
        tally.record("lemma_energy_beam", worst_gain, 1e-10);

        for design in [&fixed_design, &joint_design, &naf] {
            let ok = oracle::verify_design(&ch, design, &params).passed();
            tally.record("verify_design", if ok { 0.0 } else { 1.0 }, 0.0);
        }

        if d == 1 {
            let grid = oracle::grid_search_fixed(&profile, &params, &GridSpec::uniform(401))?;
            tally.record("grid_fixed_excess", grid.rate - fixed.rate, 1e-12);
            tally.record("grid_fixed_gap", (fixed.rate - grid.rate) - grid.resolution, 0.0);
            let grid = oracle::grid_search_joint(&profile, &params, &GridSpec::uniform(61))?;
            tally.record("grid_joint_excess", grid.rate - joint.rate, 1e-12);
            tally.record("grid_joint_gap", (joint.rate - grid.rate) - grid.resolution, 0.0);
        }
    }
    Ok(tally.results)
}

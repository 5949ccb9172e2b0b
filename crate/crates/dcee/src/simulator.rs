//! Generative models for testing and benchmarking, and a brute-force Monte
//! Carlo oracle for the true projection coefficients.
//!
//! The reference model produces trials with feedback in both directions: a
//! continuous state X and a binary state Z each depend on the previous
//! treatment, eligibility is random, the randomization probability depends
//! on time and the current state, and the end-of-study outcome accumulates
//! nonlinear state contributions plus treatment effects that vary with time
//! and state. The true effect of a single-point excursion therefore has no
//! tractable closed form — which is the point: the oracle estimates it by
//! simulating the two excursion policies directly and projecting the
//! resulting effect curve exactly the way the estimator's population target
//! is defined.
//!
//! Two small auxiliary models with *known* closed-form effects complement
//! it: a two-point model where treatment changes later eligibility, and a
//! fully exogenous model with independent covariates and carryover. These
//! triangulate the sign conventions (carryover discounts, eligibility
//! discounts) against hand-derived formulas.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DecisionRow, MrtDataset, Trajectory};
use crate::error::{Error, Result};
use crate::features::{build_weights, EstimandSpec, FeatureBuilder};
use crate::linalg::{invert_gated, solve_gated};
use crate::parallel::{chunked_fold, ordered_map, PERSON_CHUNK};
use crate::rng::{domain, unit_rng, StreamKey};

/// Covariate columns produced by [`simulate_dataset`].
const SIM_COVARIATES: [&str; 2] = ["X", "Z"];

/// Most distinct moderator-value combinations the oracle will track per
/// decision point. The oracle conditions on moderator *levels*, so it only
/// supports moderators with small discrete support.
const ORACLE_MAX_LEVELS: usize = 256;

/// Numerically stable logistic function.
fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The Beta(2,2) density, extended by zero outside [0, 1] (the state can
/// wander outside the support; the zero extension is the only
/// self-consistent choice).
pub fn beta22_density(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        6.0 * u * (1.0 - u)
    } else {
        0.0
    }
}

/// Parameters of the reference generative model.
///
/// Per person, with X_0 = Z_0 = 0 and A_0 = 0:
///
/// ```text
/// X_t = theta0 + theta1 A_{t-1} + theta2 X_{t-1} + eta_t,   eta_t ~ N(0,1)
/// Z_t ~ Bernoulli( expit(zeta0 + zeta1 A_{t-1} + zeta2 Z_{t-1}) )
/// I_t ~ Bernoulli(elig_prob)
/// P(A_t = 1 | eligible) = expit( (t - T/2)/T + Z_t - 0.5 + X_t/6 )
/// Y   = sum_t xi_t { beta22(X_t/12 + 0.5) + Z_t }
///     + sum_t A_t ( alpha_t + nu_t X_t + gamma_t Z_t + lambda_t A_{t-1} )
///     + eps,   eps ~ N(0,1)
/// ```
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    /// Number of decision points T.
    pub horizon: u32,
    /// (theta0, theta1, theta2) for the X recursion.
    pub theta: [f64; 3],
    /// (zeta0, zeta1, zeta2) for the Z recursion.
    pub zeta: [f64; 3],
    /// Eligibility rate.
    pub elig_prob: f64,
    /// Per-t main treatment effect on Y.
    pub alpha: Vec<f64>,
    /// Per-t moderation of the treatment effect by X.
    pub nu: Vec<f64>,
    /// Per-t moderation by Z.
    pub gamma: Vec<f64>,
    /// Per-t interaction with the previous treatment.
    pub lambda: Vec<f64>,
    /// Per-t weight of the treatment-free state contribution.
    pub xi: Vec<f64>,
}

impl SimParams {
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Spec("horizon must be at least 1".into()));
        }
        if !(self.elig_prob > 0.0 && self.elig_prob <= 1.0) {
            return Err(Error::Spec(format!(
                "elig_prob must be in (0, 1], got {}",
                self.elig_prob
            )));
        }
        let t_len = self.horizon as usize;
        for (name, v) in [
            ("alpha", &self.alpha),
            ("nu", &self.nu),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("xi", &self.xi),
        ] {
            if v.len() != t_len {
                return Err(Error::Spec(format!(
                    "{name} has length {}, horizon is {t_len}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Spec(format!("{name} contains a non-finite value")));
            }
        }
        if self.theta.iter().chain(&self.zeta).any(|x| !x.is_finite()) {
            return Err(Error::Spec("theta/zeta contain a non-finite value".into()));
        }
        Ok(())
    }
}

/// The reference parameterization: T = 30, linearly time-varying effect
/// sizes, 80% eligibility.
pub fn default_sim_params() -> SimParams {
    let horizon = 30u32;
    let frac = |t: u32| (t - 1) as f64 / (horizon - 1) as f64;
    SimParams {
        horizon,
        theta: [-0.5, 0.5, 0.5],
        zeta: [-1.0, 1.0, 1.0],
        elig_prob: 0.8,
        alpha: (1..=horizon).map(|t| 1.0 + 2.0 * frac(t)).collect(),
        nu: (1..=horizon).map(|t| 1.0 + frac(t)).collect(),
        gamma: (1..=horizon).map(|t| 1.0 + 0.5 * frac(t)).collect(),
        lambda: (1..=horizon).map(|t| -1.0 - frac(t)).collect(),
        xi: (1..=horizon).map(|t| 1.0 + frac(t)).collect(),
    }
}

/// The reference model with every treatment pathway cut: the direct effects
/// (alpha, nu, gamma, lambda) *and* the feedback of treatment into the
/// states (theta1, zeta1) are zeroed, so the excursion effect is exactly
/// zero at every decision point.
pub fn null_effect_params() -> SimParams {
    let mut p = default_sim_params();
    let t_len = p.horizon as usize;
    p.alpha = vec![0.0; t_len];
    p.nu = vec![0.0; t_len];
    p.gamma = vec![0.0; t_len];
    p.lambda = vec![0.0; t_len];
    p.theta[1] = 0.0;
    p.zeta[1] = 0.0;
    p
}

/// A parameter set given either by name or in full.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ParamsChoice {
    /// `"default"` or `"null"`.
    Named(String),
    Custom(SimParams),
}

impl ParamsChoice {
    pub fn resolve(&self) -> Result<SimParams> {
        let params = match self {
            ParamsChoice::Named(name) => match name.as_str() {
                "default" => default_sim_params(),
                "null" => null_effect_params(),
                other => {
                    return Err(Error::Spec(format!(
                        "unknown parameter set '{other}' (expected \"default\", \"null\", \
                         or a full parameter object)"
                    )));
                }
            },
            ParamsChoice::Custom(p) => p.clone(),
        };
        params.check()?;
        Ok(params)
    }
}

impl Default for ParamsChoice {
    fn default() -> Self {
        ParamsChoice::Named("default".into())
    }
}

/// Which treatment policy generates the data.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    /// The trial's own randomization.
    Mrt,
    /// Deviate at decision point `t0` only: `a = 1` treats if eligible,
    /// `a = 0` withholds; every other point follows the trial
    /// randomization.
    Excursion { t0: u32, a: u8 },
}

impl PolicySpec {
    fn check(&self, horizon: u32) -> Result<()> {
        if let PolicySpec::Excursion { t0, a } = self {
            if *t0 < 1 || *t0 > horizon {
                return Err(Error::Spec(format!(
                    "excursion point t0={t0} outside 1..={horizon}"
                )));
            }
            if *a > 1 {
                return Err(Error::Spec(format!("excursion arm must be 0 or 1, got {a}")));
            }
        }
        Ok(())
    }
}

/// One simulated person in flat per-t arrays, reusable across persons so the
/// oracle can stream millions of simulations without per-row allocation.
struct PersonBuf {
    x: Vec<f64>,
    z: Vec<f64>,
    elig: Vec<bool>,
    treat: Vec<bool>,
    prob: Vec<f64>,
    y: f64,
}

impl PersonBuf {
    fn new(horizon: u32) -> Self {
        let t_len = horizon as usize;
        Self {
            x: vec![0.0; t_len],
            z: vec![0.0; t_len],
            elig: vec![false; t_len],
            treat: vec![false; t_len],
            prob: vec![f64::NAN; t_len],
            y: 0.0,
        }
    }

    /// Covariate value by column index in [`SIM_COVARIATES`] order.
    fn covariate(&self, col: usize, t: u32) -> f64 {
        match col {
            0 => self.x[t as usize - 1],
            _ => self.z[t as usize - 1],
        }
    }
}

/// Simulate one person. The draw sequence per decision point is fixed
/// (state noise, Z draw, eligibility draw, treatment draw — always consumed
/// even when a value goes unused) so that two policies sharing a stream see
/// identical randomness, which is what makes common-random-number pairing
/// and scheduling-independent parallelism work.
fn simulate_person(params: &SimParams, policy: PolicySpec, rng: &mut ChaCha8Rng, buf: &mut PersonBuf) {
    let t_len = params.horizon as usize;
    let t_f = params.horizon as f64;
    let mut x_prev = 0.0f64;
    let mut z_prev = 0.0f64;
    let mut a_prev = 0.0f64;
    let mut y = 0.0f64;
    for ti in 0..t_len {
        let t = (ti + 1) as u32;
        let eta: f64 = rng.sample(StandardNormal);
        let u_z: f64 = rng.random();
        let u_elig: f64 = rng.random();
        let u_treat: f64 = rng.random();

        let x = params.theta[0] + params.theta[1] * a_prev + params.theta[2] * x_prev + eta;
        let z = f64::from(u_z < expit(params.zeta[0] + params.zeta[1] * a_prev + params.zeta[2] * z_prev));
        let elig = u_elig < params.elig_prob;
        let p = expit((t as f64 - t_f / 2.0) / t_f + z - 0.5 + x / 6.0);

        let (treat, prob) = if !elig {
            (false, f64::NAN)
        } else {
            match policy {
                PolicySpec::Mrt => (u_treat < p, p),
                PolicySpec::Excursion { t0, a } if t == t0 => (a == 1, f64::NAN),
                PolicySpec::Excursion { .. } => (u_treat < p, p),
            }
        };

        let a = f64::from(treat);
        y += params.xi[ti] * (beta22_density(x / 12.0 + 0.5) + z)
            + a * (params.alpha[ti] + params.nu[ti] * x + params.gamma[ti] * z + params.lambda[ti] * a_prev);

        buf.x[ti] = x;
        buf.z[ti] = z;
        buf.elig[ti] = elig;
        buf.treat[ti] = treat;
        buf.prob[ti] = prob;
        x_prev = x;
        z_prev = z;
        a_prev = a;
    }
    let eps: f64 = rng.sample(StandardNormal);
    buf.y = y + eps;
}

fn trajectory_from_buf(id: String, buf: &PersonBuf) -> Trajectory {
    let rows = (0..buf.x.len())
        .map(|ti| DecisionRow {
            t: (ti + 1) as u32,
            elig: buf.elig[ti],
            treat: buf.treat[ti],
            prob: buf.prob[ti],
            covariates: vec![buf.x[ti], buf.z[ti]],
        })
        .collect();
    Trajectory {
        id,
        rows,
        outcome: buf.y,
    }
}

pub(crate) fn simulate_dataset_keyed(
    params: &SimParams,
    n: usize,
    key: StreamKey,
    policy: PolicySpec,
) -> Result<MrtDataset> {
    params.check()?;
    policy.check(params.horizon)?;
    if n == 0 {
        return Err(Error::Spec("cannot simulate a dataset with 0 persons".into()));
    }
    let trajectories = ordered_map(n, |j| {
        let mut rng = unit_rng(key, j as u64);
        let mut buf = PersonBuf::new(params.horizon);
        simulate_person(params, policy, &mut rng, &mut buf);
        trajectory_from_buf((j + 1).to_string(), &buf)
    });
    MrtDataset::new(SIM_COVARIATES.iter().map(|s| s.to_string()).collect(), trajectories)
}

/// Simulate `n` persons from the reference model under `policy`.
///
/// Deterministic in `(params, n, seed, policy)`, independent of thread
/// count; persons are independent streams, so the same seed yields the
/// same people under different policies (common random numbers).
pub fn simulate_dataset(
    params: &SimParams,
    n: usize,
    seed: u64,
    policy: PolicySpec,
) -> Result<MrtDataset> {
    simulate_dataset_keyed(params, n, StreamKey::new(seed, domain::SIMULATE, 0, 0), policy)
}

/// One Monte-Carlo excursion-effect estimate at a decision point, possibly
/// conditional on a moderator level.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TauEstimate {
    pub t: u32,
    /// Moderator values this estimate conditions on (in the estimand's
    /// moderator order); `None` for the marginal effect.
    pub level: Option<Vec<f64>>,
    pub tau: f64,
    pub mc_se: f64,
}

/// The oracle's output: true projection coefficients with Monte-Carlo
/// uncertainty, plus the per-point effect curve they project.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OracleResult {
    /// Moderators of the estimand, for reading `per_t_tau` levels.
    pub moderators: Vec<String>,
    pub beta_star: Vec<f64>,
    /// Monte-Carlo standard error of each `beta_star` entry.
    pub mc_se: Vec<f64>,
    pub per_t_tau: Vec<TauEstimate>,
    pub mc_size: usize,
    pub seed: u64,
}

/// Streaming sum of Y and Y^2 within one moderator level.
#[derive(Clone, Copy, Default)]
struct YStats {
    n: u64,
    sum: f64,
    sumsq: f64,
}

impl YStats {
    fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    fn merge(&mut self, other: &YStats) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Squared standard error of the mean.
    fn se2(&self) -> f64 {
        let n = self.n as f64;
        let var = (self.sumsq - self.sum * self.sum / n) / (n - 1.0);
        var.max(0.0) / n
    }
}

type LevelKey = Vec<u64>;

fn level_bits(buf: &PersonBuf, cols: &[usize], t: u32, out: &mut LevelKey) {
    out.clear();
    out.extend(cols.iter().map(|&c| buf.covariate(c, t).to_bits()));
}

fn bump_level<'m, V: Default>(map: &'m mut BTreeMap<LevelKey, V>, key: &LevelKey) -> Result<&'m mut V> {
    if !map.contains_key(key.as_slice()) {
        if map.len() >= ORACLE_MAX_LEVELS {
            return Err(Error::Spec(format!(
                "oracle moderators take more than {ORACLE_MAX_LEVELS} distinct value \
                 combinations; the oracle conditions on discrete moderator levels"
            )));
        }
        map.insert(key.clone(), V::default());
    }
    Ok(map.get_mut(key.as_slice()).unwrap())
}

fn merge_level_maps<V, F: Fn(&mut V, &V)>(into: &mut BTreeMap<LevelKey, V>, from: BTreeMap<LevelKey, V>, merge: F)
where
    V: Default + Clone,
{
    for (k, v) in from {
        merge(into.entry(k).or_default(), &v);
    }
}

/// True projection coefficients for one estimand. See
/// [`compute_oracle_betas`] for sharing the simulation cost across several
/// estimands.
pub fn compute_oracle_beta(
    params: &SimParams,
    spec: &EstimandSpec,
    mc_size: usize,
    seed: u64,
) -> Result<OracleResult> {
    Ok(compute_oracle_betas(params, std::slice::from_ref(spec), mc_size, seed, false)?
        .pop()
        .expect("one result per spec"))
}

/// Brute-force the true projection coefficients of each estimand under the
/// reference model.
///
/// For every decision point t, `mc_size` persons are simulated under each of
/// the two excursion policies at t; the per-level difference of mean
/// outcomes estimates the effect curve tau(t, s). A third run under the
/// trial policy estimates the moderator-level frequencies that define the
/// projection, and the coefficients solve the corresponding weighted normal
/// equations. All estimands share the same simulated persons.
///
/// With `common_random_numbers` the two excursion arms at each t share
/// random streams, so their trajectories agree up to t and the difference of
/// means loses most of its variance; the reported `mc_se` keeps the
/// independent-sampling formula and is then conservative.
pub fn compute_oracle_betas(
    params: &SimParams,
    specs: &[EstimandSpec],
    mc_size: usize,
    seed: u64,
    common_random_numbers: bool,
) -> Result<Vec<OracleResult>> {
    params.check()?;
    if mc_size < 10_000 {
        return Err(Error::Spec(format!(
            "oracle mc_size must be at least 10000, got {mc_size}"
        )));
    }
    if specs.is_empty() {
        return Err(Error::Spec("no estimands given to the oracle".into()));
    }
    let cov_names: Vec<String> = SIM_COVARIATES.iter().map(|s| s.to_string()).collect();
    let horizon = params.horizon;
    let t_len = horizon as usize;
    let n_specs = specs.len();

    let mut builders = Vec::with_capacity(n_specs);
    let mut mod_cols: Vec<Vec<usize>> = Vec::with_capacity(n_specs);
    let mut t_weights: Vec<Vec<f64>> = Vec::with_capacity(n_specs);
    for spec in specs {
        spec.check_against(&cov_names)?;
        builders.push(FeatureBuilder::new(spec, horizon)?);
        mod_cols.push(
            spec.moderators
                .iter()
                .map(|m| cov_names.iter().position(|n| n == m).unwrap())
                .collect(),
        );
        t_weights.push(build_weights(&spec.weight, horizon)?);
    }

    // Stage 1: per (t, arm) excursion runs -> Y statistics by moderator
    // level, per spec.
    let mut arm_stats: Vec<[Vec<BTreeMap<LevelKey, YStats>>; 2]> =
        (0..t_len).map(|_| [vec![], vec![]]).collect();
    for t0 in 1..=horizon {
        for arm in [0u8, 1u8] {
            let key = StreamKey::new(
                seed,
                domain::ORACLE,
                t0 as u64,
                if common_random_numbers { 0 } else { 1 + arm as u64 },
            );
            let policy = PolicySpec::Excursion { t0, a: arm };
            let stats = chunked_fold(
                mc_size,
                PERSON_CHUNK,
                |range| {
                    let mut acc: Vec<BTreeMap<LevelKey, YStats>> =
                        vec![BTreeMap::new(); n_specs];
                    let mut buf = PersonBuf::new(horizon);
                    let mut bits = LevelKey::new();
                    let mut failed = None;
                    for j in range {
                        let mut rng = unit_rng(key, j as u64);
                        simulate_person(params, policy, &mut rng, &mut buf);
                        for (s, cols) in mod_cols.iter().enumerate() {
                            level_bits(&buf, cols, t0, &mut bits);
                            match bump_level(&mut acc[s], &bits) {
                                Ok(stats) => stats.push(buf.y),
                                Err(e) => {
                                    failed.get_or_insert(e);
                                }
                            }
                        }
                    }
                    (acc, failed)
                },
                (vec![BTreeMap::new(); n_specs], None),
                |(mut into, mut err), (from, ferr)| {
                    for (a, b) in into.iter_mut().zip(from) {
                        merge_level_maps(a, b, |x: &mut YStats, y| x.merge(y));
                    }
                    if err.is_none() {
                        err = ferr;
                    }
                    (into, err)
                },
            );
            let (stats, failed) = stats;
            if let Some(e) = failed {
                return Err(e);
            }
            arm_stats[t0 as usize - 1][arm as usize] = stats;
        }
    }

    // Stage 2: trial-policy run -> moderator-level frequencies per (spec, t).
    let mrt_key = StreamKey::new(seed, domain::ORACLE, 0, 2);
    let (level_counts, failed) = chunked_fold(
        mc_size,
        PERSON_CHUNK,
        |range| {
            let mut acc: Vec<Vec<BTreeMap<LevelKey, u64>>> =
                vec![vec![BTreeMap::new(); t_len]; n_specs];
            let mut buf = PersonBuf::new(horizon);
            let mut bits = LevelKey::new();
            let mut failed = None;
            for j in range {
                let mut rng = unit_rng(mrt_key, j as u64);
                simulate_person(params, PolicySpec::Mrt, &mut rng, &mut buf);
                for (s, cols) in mod_cols.iter().enumerate() {
                    for t in 1..=horizon {
                        level_bits(&buf, cols, t, &mut bits);
                        match bump_level(&mut acc[s][t as usize - 1], &bits) {
                            Ok(c) => *c += 1,
                            Err(e) => {
                                failed.get_or_insert(e);
                            }
                        }
                    }
                }
            }
            (acc, failed)
        },
        (vec![vec![BTreeMap::new(); t_len]; n_specs], None),
        |(mut into, mut err), (from, ferr)| {
            for (a, b) in into.iter_mut().zip(from) {
                for (am, bm) in a.iter_mut().zip(b) {
                    merge_level_maps(am, bm, |x: &mut u64, y| *x += *y);
                }
            }
            if err.is_none() {
                err = ferr;
            }
            (into, err)
        },
    );
    if let Some(e) = failed {
        return Err(e);
    }

    // Stage 3: assemble each estimand's projection.
    let m = mc_size as f64;
    let mut results = Vec::with_capacity(n_specs);
    for (s, spec) in specs.iter().enumerate() {
        let builder = &builders[s];
        let p = builder.dim();
        let mut g = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut h = nalgebra::DVector::<f64>::zeros(p);
        let mut var_h = nalgebra::DMatrix::<f64>::zeros(p, p);
        let mut per_t_tau = Vec::new();
        let mut f_val = nalgebra::DVector::<f64>::zeros(p);
        let mut scratch = Vec::with_capacity(p);

        for t in 1..=horizon {
            let w = t_weights[s][t as usize - 1];
            let stats1 = &arm_stats[t as usize - 1][1][s];
            let stats0 = &arm_stats[t as usize - 1][0][s];
            for (bits, count) in &level_counts[s][t as usize - 1] {
                let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
                scratch.clear();
                builder.eval_into(t, &values, &mut scratch)?;
                f_val.copy_from_slice(&scratch);

                let share = *count as f64 / m;
                g.ger(w * share, &f_val, &f_val, 1.0);

                let (y1, y0) = match (stats1.get(bits.as_slice()), stats0.get(bits.as_slice())) {
                    (Some(a), Some(b)) if a.n >= 2 && b.n >= 2 => (a, b),
                    _ => {
                        return Err(Error::Numerical(format!(
                            "moderator level {values:?} at t={t} observed under the trial \
                             policy but too rare in the excursion runs; increase mc_size"
                        )));
                    }
                };
                let tau = y1.mean() - y0.mean();
                let se2 = y1.se2() + y0.se2();
                h.axpy(w * share * tau, &f_val, 1.0);
                // q = d h / d tau(t, level); the independent excursion runs
                // make the tau estimates independent across (t, level).
                var_h.ger(se2 * (w * share) * (w * share), &f_val, &f_val, 1.0);

                per_t_tau.push(TauEstimate {
                    t,
                    level: if spec.moderators.is_empty() {
                        None
                    } else {
                        Some(values)
                    },
                    tau,
                    mc_se: se2.sqrt(),
                });
            }
        }

        let (beta, _) = solve_gated(&g, &h, "oracle projection matrix")?;
        let (g_inv, _) = invert_gated(&g, "oracle projection matrix")?;
        // Delta method through beta = G^-1 h, treating the level frequencies
        // (estimated on 10^6 trial-policy persons) as exact relative to the
        // tau noise.
        let cov = &g_inv * &var_h * g_inv.transpose();
        let mc_se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

        results.push(OracleResult {
            moderators: spec.moderators.clone(),
            beta_star: beta.iter().copied().collect(),
            mc_se,
            per_t_tau,
            mc_size,
            seed,
        });
    }
    Ok(results)
}

/// Parameters of the two-point eligibility-feedback model:
///
/// ```text
/// I_1 = 1;  A_1 ~ Bernoulli(p)
/// I_2 | A_1 ~ Bernoulli(rho0 - rho1 A_1);  A_2 | I_2 = 1 ~ Bernoulli(p)
/// Y = beta0 + beta1 A_1 + beta2 A_2 - alpha A_1 A_2 + eps
/// ```
///
/// Treatment at the first point *reduces* later eligibility (for rho1 > 0),
/// so the excursion effect at t = 1 differs from beta1 by eligibility and
/// interaction discounts with a closed form — see
/// [`closed_form_tau1_example4`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Example4Params {
    pub p: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
}

impl Example4Params {
    pub fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Spec(format!("p must be in (0, 1), got {}", self.p)));
        }
        if !(self.rho0 > 0.0 && self.rho0 <= 1.0) {
            return Err(Error::Spec(format!(
                "rho0 must be in (0, 1], got {}",
                self.rho0
            )));
        }
        let treated = self.rho0 - self.rho1;
        if !(treated > 0.0 && treated < 1.0) {
            return Err(Error::Spec(format!(
                "rho0 - rho1 must be in (0, 1), got {treated}"
            )));
        }
        for (name, v) in [
            ("beta0", self.beta0),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("alpha", self.alpha),
        ] {
            if !v.is_finite() {
                return Err(Error::Spec(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Simulate the two-point eligibility-feedback model under the trial policy.
pub fn simulate_example4(params: &Example4Params, n: usize, seed: u64) -> Result<MrtDataset> {
    params.check()?;
    if n == 0 {
        return Err(Error::Spec("cannot simulate a dataset with 0 persons".into()));
    }
    let key = StreamKey::new(seed, domain::EXAMPLE_TWO_POINT, 0, 0);
    let trajectories = ordered_map(n, |j| {
        let mut rng = unit_rng(key, j as u64);
        let u_a1: f64 = rng.random();
        let u_i2: f64 = rng.random();
        let u_a2: f64 = rng.random();
        let eps: f64 = rng.sample(StandardNormal);

        let a1 = u_a1 < params.p;
        let i2 = u_i2 < params.rho0 - params.rho1 * f64::from(a1);
        let a2 = i2 && u_a2 < params.p;
        let y = params.beta0
            + params.beta1 * f64::from(a1)
            + params.beta2 * f64::from(a2)
            - params.alpha * f64::from(a1) * f64::from(a2)
            + eps;
        Trajectory {
            id: (j + 1).to_string(),
            rows: vec![
                DecisionRow {
                    t: 1,
                    elig: true,
                    treat: a1,
                    prob: params.p,
                    covariates: vec![],
                },
                DecisionRow {
                    t: 2,
                    elig: i2,
                    treat: a2,
                    prob: if i2 { params.p } else { f64::NAN },
                    covariates: vec![],
                },
            ],
            outcome: y,
        }
    });
    MrtDataset::new(vec![], trajectories)
}

/// The exact excursion effect at t = 1 in the two-point
/// eligibility-feedback model:
/// `beta1 - p rho0 alpha + p rho1 alpha - p rho1 beta2`.
pub fn closed_form_tau1_example4(params: &Example4Params) -> f64 {
    params.beta1 - params.p * params.rho0 * params.alpha + params.p * params.rho1 * params.alpha
        - params.p * params.rho1 * params.beta2
}

/// Parameters of the exogenous-covariate model: X_t i.i.d. normal, everyone
/// always eligible, A_t i.i.d. Bernoulli(treat_prob), and
///
/// ```text
/// Y = sum_t c_t X_t + sum_t A_t (a_t + b_t X_t)
///   - sum_{t<T} d_t A_t A_{t+1} + eps
/// ```
///
/// No feedback anywhere, so the excursion effect has the closed form
/// returned by [`ExogenousParams::tau`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExogenousParams {
    pub horizon: u32,
    pub x_mean: f64,
    pub x_sd: f64,
    pub treat_prob: f64,
    /// Per-t main treatment effect.
    pub a: Vec<f64>,
    /// Per-t moderation by X.
    pub b: Vec<f64>,
    /// Carryover penalties, length T - 1; d[t-1] couples A_t and A_{t+1}.
    pub d: Vec<f64>,
    /// Per-t covariate main effect.
    pub c: Vec<f64>,
}

impl ExogenousParams {
    pub fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Spec("horizon must be at least 1".into()));
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::Spec(format!(
                "treat_prob must be in (0, 1), got {}",
                self.treat_prob
            )));
        }
        if !self.x_mean.is_finite() || !self.x_sd.is_finite() || self.x_sd < 0.0 {
            return Err(Error::Spec("x_mean/x_sd must be finite, x_sd >= 0".into()));
        }
        let t_len = self.horizon as usize;
        for (name, v, want) in [
            ("a", &self.a, t_len),
            ("b", &self.b, t_len),
            ("c", &self.c, t_len),
            ("d", &self.d, t_len - 1),
        ] {
            if v.len() != want {
                return Err(Error::Spec(format!(
                    "{name} has length {}, expected {want}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Spec(format!("{name} contains a non-finite value")));
            }
        }
        Ok(())
    }

    /// The exact excursion effect at decision point `t`: the direct effect
    /// `a_t + b_t x_mean` minus the carryover discounts
    /// `treat_prob * (d_t + d_{t-1})` from the neighboring points'
    /// independent randomizations.
    pub fn tau(&self, t: u32) -> f64 {
        assert!(t >= 1 && t <= self.horizon, "t={t} outside 1..={}", self.horizon);
        let ti = t as usize - 1;
        let mut tau = self.a[ti] + self.b[ti] * self.x_mean;
        if t < self.horizon {
            tau -= self.treat_prob * self.d[ti];
        }
        if t > 1 {
            tau -= self.treat_prob * self.d[ti - 1];
        }
        tau
    }
}

/// Simulate the exogenous-covariate model under `policy`.
pub fn simulate_exogenous(
    params: &ExogenousParams,
    n: usize,
    seed: u64,
    policy: PolicySpec,
) -> Result<MrtDataset> {
    params.check()?;
    policy.check(params.horizon)?;
    if n == 0 {
        return Err(Error::Spec("cannot simulate a dataset with 0 persons".into()));
    }
    let key = StreamKey::new(seed, domain::EXOGENOUS, 0, 0);
    let t_len = params.horizon as usize;
    let trajectories = ordered_map(n, |j| {
        let mut rng = unit_rng(key, j as u64);
        let mut rows = Vec::with_capacity(t_len);
        let mut y = 0.0f64;
        let mut treats = Vec::with_capacity(t_len);
        for ti in 0..t_len {
            let t = (ti + 1) as u32;
            let eta: f64 = rng.sample(StandardNormal);
            let u_treat: f64 = rng.random();
            let x = params.x_mean + params.x_sd * eta;
            let (treat, prob) = match policy {
                PolicySpec::Excursion { t0, a } if t == t0 => (a == 1, f64::NAN),
                _ => (u_treat < params.treat_prob, params.treat_prob),
            };
            let a = f64::from(treat);
            y += params.c[ti] * x + a * (params.a[ti] + params.b[ti] * x);
            treats.push(treat);
            rows.push(DecisionRow {
                t,
                elig: true,
                treat,
                prob,
                covariates: vec![x],
            });
        }
        for ti in 0..t_len.saturating_sub(1) {
            y -= params.d[ti] * f64::from(treats[ti]) * f64::from(treats[ti + 1]);
        }
        let eps: f64 = rng.sample(StandardNormal);
        Trajectory {
            id: (j + 1).to_string(),
            rows,
            outcome: y + eps,
        }
    });
    MrtDataset::new(vec!["X".to_string()], trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameters_match_documented_values() {
        let p = default_sim_params();
        assert_eq!(p.horizon, 30);
        assert_eq!(p.theta, [-0.5, 0.5, 0.5]);
        assert_eq!(p.zeta, [-1.0, 1.0, 1.0]);
        assert_eq!(p.elig_prob, 0.8);
        assert_eq!(p.alpha[0], 1.0);
        assert_eq!(p.alpha[29], 3.0);
        assert_eq!(p.nu[0], 1.0);
        assert_eq!(p.nu[29], 2.0);
        assert_eq!(p.gamma[0], 1.0);
        assert_eq!(p.gamma[29], 1.5);
        assert_eq!(p.lambda[0], -1.0);
        assert_eq!(p.lambda[29], -2.0);
        assert_eq!(p.xi[0], 1.0);
        assert_eq!(p.xi[29], 2.0);
        p.check().unwrap();
    }

    #[test]
    fn null_parameters_cut_every_treatment_pathway() {
        let p = null_effect_params();
        assert!(p.alpha.iter().all(|&v| v == 0.0));
        assert!(p.nu.iter().all(|&v| v == 0.0));
        assert!(p.gamma.iter().all(|&v| v == 0.0));
        assert!(p.lambda.iter().all(|&v| v == 0.0));
        assert_eq!(p.theta[1], 0.0);
        assert_eq!(p.zeta[1], 0.0);
        // The treatment-free pathways stay intact.
        assert_eq!(p.theta[0], -0.5);
        assert!(p.xi.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn beta22_density_values() {
        assert_eq!(beta22_density(0.5), 1.5);
        assert_eq!(beta22_density(0.25), 1.125);
        assert_eq!(beta22_density(0.0), 0.0);
        assert_eq!(beta22_density(1.0), 0.0);
        assert_eq!(beta22_density(1.2), 0.0);
        assert_eq!(beta22_density(-0.1), 0.0);
    }

    #[test]
    fn expit_is_stable_at_extremes() {
        assert_eq!(expit(0.0), 0.5);
        assert_eq!(expit(800.0), 1.0);
        assert_eq!(expit(-800.0), 0.0);
        assert!((expit(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() <= 1e-15);
    }

    #[test]
    fn params_choice_resolves_names_and_objects() {
        let def: ParamsChoice = serde_json::from_str("\"default\"").unwrap();
        assert_eq!(def.resolve().unwrap(), default_sim_params());
        let null: ParamsChoice = serde_json::from_str("\"null\"").unwrap();
        assert_eq!(null.resolve().unwrap(), null_effect_params());
        let json = serde_json::to_string(&default_sim_params()).unwrap();
        let custom: ParamsChoice = serde_json::from_str(&json).unwrap();
        assert_eq!(custom.resolve().unwrap(), default_sim_params());
        let bogus: ParamsChoice = serde_json::from_str("\"bogus\"").unwrap();
        assert!(bogus.resolve().is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_structurally_sound() {
        let params = default_sim_params();
        let a = simulate_dataset(&params, 50, 7, PolicySpec::Mrt).unwrap();
        let b = simulate_dataset(&params, 50, 7, PolicySpec::Mrt).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&params, 50, 8, PolicySpec::Mrt).unwrap();
        assert_ne!(a, c);

        assert_eq!(a.horizon(), 30);
        assert_eq!(a.covariate_names(), ["X", "Z"]);
        for traj in a.trajectories() {
            for row in &traj.rows {
                // Never treated while ineligible; prob recorded exactly when
                // eligible.
                assert!(row.elig || !row.treat);
                assert_eq!(row.prob.is_nan(), !row.elig);
                if row.elig {
                    assert!(row.prob > 0.0 && row.prob < 1.0);
                }
                // Z is binary.
                assert!(row.covariates[1] == 0.0 || row.covariates[1] == 1.0);
            }
            assert!(traj.outcome.is_finite());
        }
    }

    #[test]
    fn eligibility_rate_matches_parameter() {
        let params = default_sim_params();
        let ds = simulate_dataset(&params, 3000, 11, PolicySpec::Mrt).unwrap();
        let (mut elig, mut total) = (0u64, 0u64);
        for traj in ds.trajectories() {
            for row in &traj.rows {
                elig += row.elig as u64;
                total += 1;
            }
        }
        let rate = elig as f64 / total as f64;
        assert!((rate - 0.8).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn excursion_policies_force_exactly_one_point() {
        let params = default_sim_params();
        for a in [0u8, 1u8] {
            let policy = PolicySpec::Excursion { t0: 7, a };
            let ds = simulate_dataset(&params, 200, 3, policy).unwrap();
            for traj in ds.trajectories() {
                let row = &traj.rows[6];
                if a == 1 {
                    assert_eq!(row.treat, row.elig);
                } else {
                    assert!(!row.treat);
                }
                // The forced point's probability column is not populated.
                assert!(row.prob.is_nan());
                // Other points carry the trial probability when eligible.
                for other in traj.rows.iter().filter(|r| r.t != 7) {
                    assert_eq!(other.prob.is_nan(), !other.elig);
                }
            }
        }
        // t0 outside the horizon is refused.
        assert!(simulate_dataset(&params, 5, 3, PolicySpec::Excursion { t0: 31, a: 1 }).is_err());
        assert!(simulate_dataset(&params, 5, 3, PolicySpec::Excursion { t0: 7, a: 2 }).is_err());
    }

    #[test]
    fn policies_share_randomness_until_the_excursion() {
        // Same seed, same persons: trajectories agree strictly before t0 and
        // the excursion only changes the treatment at t0.
        let params = default_sim_params();
        let t0 = 15u32;
        let mrt = simulate_dataset(&params, 40, 9, PolicySpec::Mrt).unwrap();
        let exc = simulate_dataset(&params, 40, 9, PolicySpec::Excursion { t0, a: 0 }).unwrap();
        for (a, b) in mrt.trajectories().iter().zip(exc.trajectories()) {
            for (ra, rb) in a.rows.iter().zip(&b.rows).take(t0 as usize - 1) {
                assert_eq!(ra, rb);
            }
            let (ra, rb) = (&a.rows[t0 as usize - 1], &b.rows[t0 as usize - 1]);
            assert_eq!(ra.covariates, rb.covariates);
            assert_eq!(ra.elig, rb.elig);
            assert!(!rb.treat);
        }
    }

    fn tiny_params(horizon: u32) -> SimParams {
        let t_len = horizon as usize;
        SimParams {
            horizon,
            theta: [-0.5, 0.5, 0.5],
            zeta: [-1.0, 1.0, 1.0],
            elig_prob: 0.8,
            alpha: vec![1.0; t_len],
            nu: vec![0.5; t_len],
            gamma: vec![0.5; t_len],
            lambda: vec![-0.5; t_len],
            xi: vec![1.0; t_len],
        }
    }

    #[test]
    fn oracle_runs_are_deterministic_and_share_simulations() {
        let params = tiny_params(3);
        let specs = vec![EstimandSpec::marginal(), EstimandSpec::moderated_by("Z")];
        let both = compute_oracle_betas(&params, &specs, 10_000, 5, false).unwrap();
        let again = compute_oracle_betas(&params, &specs, 10_000, 5, false).unwrap();
        assert_eq!(both, again);
        // The single-spec entry point reproduces the shared run's answer.
        let single = compute_oracle_beta(&params, &specs[0], 10_000, 5).unwrap();
        assert_eq!(single.beta_star, both[0].beta_star);

        let marginal = &both[0];
        assert_eq!(marginal.beta_star.len(), 1);
        assert_eq!(marginal.per_t_tau.len(), 3);
        assert!(marginal.per_t_tau.iter().all(|t| t.level.is_none()));
        assert!(marginal.mc_se.iter().all(|&s| s > 0.0 && s < 0.2));

        let moderated = &both[1];
        assert_eq!(moderated.beta_star.len(), 2);
        // Two Z levels at each of three decision points.
        assert_eq!(moderated.per_t_tau.len(), 6);
        assert!(moderated
            .per_t_tau
            .iter()
            .all(|t| matches!(&t.level, Some(l) if l == &vec![0.0] || l == &vec![1.0])));
    }

    #[test]
    fn oracle_is_near_zero_under_null_parameters() {
        let mut params = null_effect_params();
        params.horizon = 3;
        for v in [&mut params.alpha, &mut params.nu, &mut params.gamma, &mut params.lambda, &mut params.xi] {
            v.truncate(3);
        }
        let oracle = compute_oracle_beta(&params, &EstimandSpec::marginal(), 20_000, 13).unwrap();
        assert!(
            oracle.beta_star[0].abs() <= 3.0 * oracle.mc_se[0],
            "beta {} vs mc_se {}",
            oracle.beta_star[0],
            oracle.mc_se[0]
        );
    }

    #[test]
    fn common_random_numbers_pair_the_excursion_arms() {
        let params = tiny_params(2);
        let crn = compute_oracle_betas(&params, &[EstimandSpec::marginal()], 10_000, 5, true)
            .unwrap()
            .remove(0);
        let indep = compute_oracle_betas(&params, &[EstimandSpec::marginal()], 10_000, 5, false)
            .unwrap()
            .remove(0);
        assert!(crn.beta_star[0].is_finite());
        // Paired arms agree far more tightly than independent ones; the
        // estimates still target the same quantity.
        assert!((crn.beta_star[0] - indep.beta_star[0]).abs()
            <= 3.0 * (crn.mc_se[0] + indep.mc_se[0]));
    }

    #[test]
    fn oracle_rejects_small_mc_and_bad_specs() {
        let params = tiny_params(2);
        assert!(compute_oracle_beta(&params, &EstimandSpec::marginal(), 9_999, 1).is_err());
        assert!(compute_oracle_beta(&params, &EstimandSpec::moderated_by("W"), 10_000, 1).is_err());
        // A continuous moderator explodes the level count.
        match compute_oracle_beta(&params, &EstimandSpec::moderated_by("X"), 10_000, 1) {
            Err(Error::Spec(msg)) => assert!(msg.contains("discrete"), "{msg}"),
            other => panic!("expected a discrete-moderator error, got {other:?}"),
        }
    }

    fn example4_params() -> Example4Params {
        Example4Params {
            p: 0.5,
            rho0: 0.9,
            rho1: 0.4,
            beta0: 0.5,
            beta1: 1.0,
            beta2: 1.0,
            alpha: 0.0,
        }
    }

    #[test]
    fn two_point_model_matches_its_construction() {
        let params = example4_params();
        let ds = simulate_example4(&params, 20_000, 21).unwrap();
        assert_eq!(ds, simulate_example4(&params, 20_000, 21).unwrap());
        assert_eq!(ds.horizon(), 2);
        let (mut n1, mut i2_given_a1) = (0u64, 0u64);
        for traj in ds.trajectories() {
            assert!(traj.rows[0].elig);
            assert!(traj.rows[1].elig || !traj.rows[1].treat);
            if traj.rows[0].treat {
                n1 += 1;
                i2_given_a1 += traj.rows[1].elig as u64;
            }
        }
        // P(I2 = 1 | A1 = 1) = rho0 - rho1 = 0.5; about 10^4 treated persons
        // puts the standard error near 0.005.
        let rate = i2_given_a1 as f64 / n1 as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn two_point_closed_form_special_cases() {
        // No interaction: beta1 - p rho1 beta2.
        let p = example4_params();
        assert!((closed_form_tau1_example4(&p) - 0.8).abs() <= 1e-15);
        // No eligibility feedback and no interaction: plain beta1.
        let p2 = Example4Params { rho1: 0.0, ..p };
        assert_eq!(closed_form_tau1_example4(&p2), p2.beta1);
        // Parameter validation.
        assert!(Example4Params { p: 1.0, ..p }.check().is_err());
        assert!(Example4Params { rho1: 0.9, ..p }.check().is_err());
    }

    fn exogenous_params() -> ExogenousParams {
        ExogenousParams {
            horizon: 3,
            x_mean: 2.0,
            x_sd: 1.0,
            treat_prob: 0.4,
            a: vec![1.0, 0.5, -0.25],
            b: vec![0.5, 0.0, 1.0],
            d: vec![0.3, 0.6],
            c: vec![0.1, 0.1, 0.1],
        }
    }

    #[test]
    fn exogenous_effect_formula_handles_boundaries() {
        let p = exogenous_params();
        // Interior point discounts both neighbors; endpoints only one.
        assert!((p.tau(1) - (1.0 + 0.5 * 2.0 - 0.4 * 0.3)).abs() <= 1e-15);
        assert!((p.tau(2) - (0.5 + 0.0 - 0.4 * (0.6 + 0.3))).abs() <= 1e-15);
        assert!((p.tau(3) - (-0.25 + 1.0 * 2.0 - 0.4 * 0.6)).abs() <= 1e-15);
    }

    #[test]
    fn exogenous_simulation_shape_and_policies() {
        let p = exogenous_params();
        let ds = simulate_exogenous(&p, 100, 3, PolicySpec::Mrt).unwrap();
        assert_eq!(ds, simulate_exogenous(&p, 100, 3, PolicySpec::Mrt).unwrap());
        assert_eq!(ds.covariate_names(), ["X"]);
        for traj in ds.trajectories() {
            for row in &traj.rows {
                assert!(row.elig);
                assert_eq!(row.prob, 0.4);
            }
        }
        let exc = simulate_exogenous(&p, 100, 3, PolicySpec::Excursion { t0: 2, a: 1 }).unwrap();
        for traj in exc.trajectories() {
            assert!(traj.rows[1].treat);
            assert!(traj.rows[1].prob.is_nan());
        }
    }
}

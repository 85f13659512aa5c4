//! Exact evaluation of returns, policy shift, model error and the return-gap
//! bounds on tabular instances, plus the distribution inequalities the bound
//! rests on.
//!
//! Infinite discounted sums are truncated at a horizon `T`; the neglected
//! tail of any return is at most `gamma^T * R_max / (1 - gamma)` and is
//! reported next to every quantity that depends on it.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::envs::JointObsDynamics;
use crate::local_models::LocalModelSet;
use crate::policy::JointPolicy;
use crate::types::SpaceSpec;

const SUM_TOL: f64 = 1e-9;
const CHUNK: usize = 16;
/// KL values below this are rounding noise from summing near-cancelling
/// logarithms and are treated as zero before taking square roots.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("theory_lab: invalid distribution: {0}")]
    Distribution(String),
    #[error("theory_lab: support mismatch at (o={o}, a={a}, o'={next}): model mass where the true probability is 0")]
    SupportMismatch { o: usize, a: usize, next: usize },
    #[error("theory_lab: {0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTable {
    pub probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(probs: Vec<f64>) -> Result<Self, TheoryError> {
        if probs.is_empty() {
            return Err(TheoryError::Distribution("empty support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(TheoryError::Distribution("negative or non-finite entry".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(TheoryError::Distribution(format!("entries sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point(n: usize, i: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[i] = 1.0;
        Self { probs }
    }
}

/// Total variation distance `0.5 * sum |p - q|`.
pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `KL(p || q)`; infinite when `p` puts mass where `q` has none.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            total += a * (a / b).ln();
        }
    }
    total.max(0.0)
}

/// Dense next-observation rows and rewards indexed by [`SpaceSpec::cell`].
struct Operator {
    n_obs: usize,
    n_ja: usize,
    rows: Vec<Vec<f64>>,
    reward: Vec<f64>,
}

impl Operator {
    fn truth(d: &JointObsDynamics) -> Self {
        Self {
            n_obs: d.spaces.n_joint_obs(),
            n_ja: d.spaces.n_joint_actions(),
            rows: d.transition.clone(),
            reward: d.reward.clone(),
        }
    }

    fn model(ms: &LocalModelSet, reward: RewardSource<'_>) -> Self {
        let sp = &ms.spaces;
        let preds: Vec<(Vec<f64>, f64)> = (0..sp.n_cells())
            .into_par_iter()
            .map(|c| {
                let (o, a) = (c / sp.n_joint_actions(), c % sp.n_joint_actions());
                let p = ms.predict_joint_idx(o, a);
                let r = p.mean_reward();
                (p.table, r)
            })
            .collect();
        let (rows, learned): (Vec<Vec<f64>>, Vec<f64>) = preds.into_iter().unzip();
        let reward = match reward {
            RewardSource::Known(d) => d.reward.clone(),
            RewardSource::Learned => learned,
        };
        Self { n_obs: sp.n_joint_obs(), n_ja: sp.n_joint_actions(), rows, reward }
    }

    fn step(&self, pol: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
        let n = self.n_obs;
        let partials: Vec<Vec<f64>> = d
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, ch)| {
                let mut acc = vec![0.0; n];
                for (k, &w0) in ch.iter().enumerate() {
                    if w0 == 0.0 {
                        continue;
                    }
                    let o = ci * CHUNK + k;
                    for (a, &pa) in pol[o].iter().enumerate() {
                        let w = w0 * pa;
                        if w == 0.0 {
                            continue;
                        }
                        for (x, r) in acc.iter_mut().zip(&self.rows[o * self.n_ja + a]) {
                            *x += w * r;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; n];
        for p in partials {
            for (x, v) in out.iter_mut().zip(p) {
                *x += v;
            }
        }
        out
    }

    fn expected_reward(&self, pol: &[Vec<f64>], d: &[f64]) -> f64 {
        let mut total = 0.0;
        for (o, &w) in d.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, &pa) in pol[o].iter().enumerate() {
                total += w * pa * self.reward[o * self.n_ja + a];
            }
        }
        total
    }

    /// Discounted return over `t = 0..T` and the distributions `d_0..d_{T-1}`.
    fn run(&self, pol: &[Vec<f64>], init: &[f64], gamma: f64, horizon: usize) -> (f64, Vec<Vec<f64>>) {
        let mut d = init.to_vec();
        let mut value = 0.0;
        let mut dists = Vec::with_capacity(horizon);
        for t in 0..horizon {
            value += gamma.powi(t as i32) * self.expected_reward(pol, &d);
            let next = if t + 1 < horizon { Some(self.step(pol, &d)) } else { None };
            dists.push(std::mem::take(&mut d));
            if let Some(n) = next {
                d = n;
            }
        }
        (value, dists)
    }

    fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// Joint action distribution of `policy` at every joint observation.
pub fn policy_table(policy: &JointPolicy) -> Vec<Vec<f64>> {
    policy.joint_action_table()
}

/// Smallest `T` with `gamma^T * r_max / (1 - gamma) < tol`.
pub fn default_truncation(gamma: f64, r_max: f64, tol: f64) -> usize {
    if r_max == 0.0 || gamma == 0.0 {
        return 1;
    }
    let t = ((tol * (1.0 - gamma) / r_max).ln() / gamma.ln()).ceil();
    (t.max(1.0)) as usize
}

pub fn tail_bound(gamma: f64, r_max: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32) * r_max / (1.0 - gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnValue {
    pub value: f64,
    pub horizon: usize,
    pub tail_bound: f64,
}

/// Discounted return of `policy` in the true dynamics from its initial
/// distribution, truncated after `horizon` steps.
pub fn exact_return(dyn_: &JointObsDynamics, policy: &JointPolicy, gamma: f64, horizon: usize) -> ReturnValue {
    let op = Operator::truth(dyn_);
    let (value, _) = op.run(&policy_table(policy), &dyn_.init, gamma, horizon.max(1));
    ReturnValue { value, horizon: horizon.max(1), tail_bound: tail_bound(gamma, op.r_max(), horizon.max(1)) }
}

/// Reward table used when evaluating in the model.
#[derive(Clone, Copy, Debug)]
pub enum RewardSource<'a> {
    /// The true reward of the given dynamics.
    Known(&'a JointObsDynamics),
    /// The mean of the local models' reward heads.
    Learned,
}

/// Discounted return of `policy` when the factored model generates the
/// observations.
pub fn model_return(
    ms: &LocalModelSet,
    policy: &JointPolicy,
    init: &DistributionTable,
    gamma: f64,
    horizon: usize,
    reward: RewardSource<'_>,
) -> ReturnValue {
    let op = Operator::model(ms, reward);
    let (value, _) = op.run(&policy_table(policy), &init.probs, gamma, horizon.max(1));
    ReturnValue { value, horizon: horizon.max(1), tail_bound: tail_bound(gamma, op.r_max(), horizon.max(1)) }
}

/// `max_o TV(pi_d(.|o) || pi(.|o))` over joint action distributions.
pub fn epsilon_pi(pi_d: &JointPolicy, pi: &JointPolicy) -> f64 {
    pi_d.joint_action_table().iter().zip(pi.joint_action_table()).map(|(p, q)| tv(p, &q)).fold(0.0, f64::max)
}

/// Model error quantities at one `(o, a)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellError {
    /// `sum_i E_{o' ~ P_hat}[log P_hat^i(o^i') - log P(o') / N]`.
    pub formula_inner: f64,
    /// `KL(prod_i P_hat^i || P)` by direct summation.
    pub kl_direct: f64,
    pub tv: f64,
}

fn cell_error(ms: &LocalModelSet, dyn_: &JointObsDynamics, o: usize, a: usize) -> Result<CellError, TheoryError> {
    let sp = &ms.spaces;
    let n = ms.n_agents() as f64;
    let (dists, _) = ms.agent_outputs(o, a);
    let p = dyn_.row(o, a);
    let q = ms.predict_joint_idx(o, a).table;
    let mut inner = 0.0;
    let mut direct = 0.0;
    for (next, &qn) in q.iter().enumerate() {
        if qn <= 0.0 {
            continue;
        }
        if p[next] <= 0.0 {
            return Err(TheoryError::SupportMismatch { o, a, next });
        }
        let ids = sp.decode_obs(next);
        let log_p = p[next].ln();
        let per_agent: f64 = dists.iter().enumerate().map(|(i, d)| d[ids.agent(i)].ln() - log_p / n).sum();
        inner += qn * per_agent;
        direct += qn * (qn / p[next]).ln();
    }
    Ok(CellError { formula_inner: inner, kl_direct: direct, tv: tv(&q, p) })
}

/// Per-cell errors for every `(o, a)`, row-major by joint observation.
pub fn cell_errors(ms: &LocalModelSet, dyn_: &JointObsDynamics) -> Result<Vec<Vec<CellError>>, TheoryError> {
    let sp = &ms.spaces;
    if sp != &dyn_.spaces {
        return Err(TheoryError::Shape("model and dynamics spaces differ".into()));
    }
    (0..sp.n_joint_obs())
        .into_par_iter()
        .map(|o| (0..sp.n_joint_actions()).map(|a| cell_error(ms, dyn_, o, a)).collect())
        .collect()
}

/// `max_a sqrt(2 * inner)` per joint observation, from the formula or from
/// direct KL summation.
fn g_values(cells: &[Vec<CellError>], use_formula: bool) -> Vec<f64> {
    cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    let v = if use_formula { c.formula_inner } else { c.kl_direct };
                    if v < KL_FLOOR {
                        0.0
                    } else {
                        (2.0 * v).sqrt()
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonSeries {
    /// `eps_m_t` for `t = 1..=T` (index 0 holds `t = 1`).
    pub eps: Vec<f64>,
    /// The same series with the inner term computed as a direct KL sum.
    pub eps_kl: Vec<f64>,
    /// `max_a E_{o ~ P_hat_{t-1}} TV(P_hat(.|o,a) || P(.|o,a))` per `t`.
    pub expected_tv: Vec<f64>,
    /// Model-induced observation distributions `P_hat_0..P_hat_{T-1}`.
    pub dists: Vec<Vec<f64>>,
}

/// Model error series propagated through the factored model under `policy`
/// from `init`.
pub fn epsilon_m_series(
    ms: &LocalModelSet,
    dyn_: &JointObsDynamics,
    policy: &JointPolicy,
    init: &DistributionTable,
    horizon: usize,
) -> Result<EpsilonSeries, TheoryError> {
    let cells = cell_errors(ms, dyn_)?;
    let op = Operator::model(ms, RewardSource::Known(dyn_));
    let (_, dists) = op.run(&policy_table(policy), &init.probs, 1.0, horizon.max(1));
    Ok(series_from(&cells, dists))
}

fn series_from(cells: &[Vec<CellError>], dists: Vec<Vec<f64>>) -> EpsilonSeries {
    let g = g_values(cells, true);
    let g_kl = g_values(cells, false);
    let n_ja = cells.first().map_or(0, |r| r.len());
    let dot = |d: &[f64], v: &[f64]| d.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let eps = dists.iter().map(|d| dot(d, &g)).collect();
    let eps_kl = dists.iter().map(|d| dot(d, &g_kl)).collect();
    let expected_tv = dists
        .iter()
        .map(|d| {
            (0..n_ja)
                .map(|a| d.iter().zip(cells).map(|(w, row)| w * row[a].tv).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .collect();
    EpsilonSeries { eps, eps_kl, expected_tv, dists }
}

/// `eps_m_t` for a single `t >= 1`.
pub fn epsilon_m_t(
    ms: &LocalModelSet,
    dyn_: &JointObsDynamics,
    policy: &JointPolicy,
    init: &DistributionTable,
    t: usize,
) -> Result<f64, TheoryError> {
    if t == 0 {
        return Err(TheoryError::Shape("model error is defined for t >= 1".into()));
    }
    Ok(epsilon_m_series(ms, dyn_, policy, init, t)?.eps[t - 1])
}

pub struct BoundInputs<'a> {
    pub dyn_: &'a JointObsDynamics,
    pub ms: &'a LocalModelSet,
    pub policy: &'a JointPolicy,
    /// The data-collecting policy.
    pub pi_d: &'a JointPolicy,
    /// Initial observation distribution; the dynamics' own when `None`.
    pub init: Option<DistributionTable>,
    pub gamma: f64,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub j_true: f64,
    /// Model return with the true reward table.
    pub j_model: f64,
    /// Model return with the learned reward heads.
    pub j_model_learned: f64,
    pub gap: f64,
    pub eps_pi: f64,
    pub eps_m: Vec<f64>,
    pub r_max: f64,
    pub gamma: f64,
    pub rhs_stepwise: f64,
    /// Bound with every per-step model error replaced by their maximum.
    pub rhs_scaled: f64,
    pub delta: f64,
    /// Comparison bound with the largest expected conditional TV as `delta`.
    pub rhs_scaled_tv: f64,
    pub delta_tv: f64,
    /// Largest `|sqrt(2 inner) - sqrt(2 KL)|` over the series.
    pub identity_gap: f64,
    pub truncation_t: usize,
    pub tail_bound: f64,
}

impl BoundReport {
    /// The inequalities every report must satisfy, with the truncation
    /// allowance.
    pub fn check(&self) -> Result<(), String> {
        let allow = 2.0 * self.tail_bound + 1e-9;
        let finite = [self.j_true, self.j_model, self.gap, self.eps_pi, self.rhs_stepwise, self.rhs_scaled, self.r_max];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry in bound report".into());
        }
        if self.eps_pi < 0.0 || self.rhs_stepwise < 0.0 || self.eps_m.iter().any(|e| *e < 0.0) {
            return Err("negative bound ingredient".into());
        }
        if self.gap > self.rhs_stepwise + allow {
            return Err(format!("gap {} exceeds bound {} (+{allow})", self.gap, self.rhs_stepwise));
        }
        if self.rhs_stepwise > self.rhs_scaled + allow {
            return Err(format!("bound {} exceeds max-scaled bound {} (+{allow})", self.rhs_stepwise, self.rhs_scaled));
        }
        Ok(())
    }

    /// `key value` lines, one per field.
    pub fn to_record(&self) -> String {
        let eps: Vec<String> = self.eps_m.iter().map(|e| format!("{e:.12e}")).collect();
        [
            format!("j_true {:.12e}", self.j_true),
            format!("j_model {:.12e}", self.j_model),
            format!("j_model_learned {:.12e}", self.j_model_learned),
            format!("gap {:.12e}", self.gap),
            format!("eps_pi {:.12e}", self.eps_pi),
            format!("eps_m {}", eps.join(",")),
            format!("r_max {:.12e}", self.r_max),
            format!("gamma {}", self.gamma),
            format!("rhs_stepwise {:.12e}", self.rhs_stepwise),
            format!("rhs_scaled {:.12e}", self.rhs_scaled),
            format!("delta {:.12e}", self.delta),
            format!("rhs_scaled_tv {:.12e}", self.rhs_scaled_tv),
            format!("delta_tv {:.12e}", self.delta_tv),
            format!("identity_gap {:.3e}", self.identity_gap),
            format!("truncation_t {}", self.truncation_t),
            format!("tail_bound {:.12e}", self.tail_bound),
        ]
        .join("\n")
            + "\n"
    }
}

/// `R_max / (1 - gamma)^2 * (2 eps_pi + (1 - gamma) sum_{t>=1} gamma^t eps_m_t)`.
pub fn rhs_stepwise(r_max: f64, gamma: f64, eps_pi: f64, eps_m: &[f64]) -> f64 {
    let model_term: f64 = eps_m.iter().enumerate().map(|(k, e)| gamma.powi(k as i32 + 1) * e).sum();
    r_max / (1.0 - gamma).powi(2) * (2.0 * eps_pi + (1.0 - gamma) * model_term)
}

/// `R_max / (1 - gamma)^2 * (2 eps_pi + gamma * delta)`.
pub fn rhs_scaled(r_max: f64, gamma: f64, eps_pi: f64, delta: f64) -> f64 {
    r_max / (1.0 - gamma).powi(2) * (2.0 * eps_pi + gamma * delta)
}

/// Assemble every bound ingredient at a common truncation.
pub fn bound_report(inp: &BoundInputs<'_>) -> Result<BoundReport, TheoryError> {
    let init = match &inp.init {
        Some(t) => t.clone(),
        None => DistributionTable::new(inp.dyn_.init.clone())?,
    };
    let t = inp.horizon.max(1);
    let pol = policy_table(inp.policy);
    let truth = Operator::truth(inp.dyn_);
    let (j_true, _) = truth.run(&pol, &init.probs, inp.gamma, t);
    let model = Operator::model(inp.ms, RewardSource::Known(inp.dyn_));
    let (j_model, dists) = model.run(&pol, &init.probs, inp.gamma, t);
    let learned = Operator::model(inp.ms, RewardSource::Learned);
    let (j_model_learned, _) = learned.run(&pol, &init.probs, inp.gamma, t);
    let cells = cell_errors(inp.ms, inp.dyn_)?;
    let series = series_from(&cells, dists);
    let r_max = inp.dyn_.r_max();
    let eps_pi = epsilon_pi(inp.pi_d, inp.policy);
    let rhs = rhs_stepwise(r_max, inp.gamma, eps_pi, &series.eps);
    let delta = series.eps.iter().cloned().fold(0.0, f64::max);
    let delta_tv = series.expected_tv.iter().cloned().fold(0.0, f64::max);
    let identity_gap = series.eps.iter().zip(&series.eps_kl).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(BoundReport {
        j_true,
        j_model,
        j_model_learned,
        gap: (j_true - j_model).abs(),
        eps_pi,
        eps_m: series.eps,
        r_max,
        gamma: inp.gamma,
        rhs_stepwise: rhs,
        rhs_scaled: rhs_scaled(r_max, inp.gamma, eps_pi, delta),
        delta,
        rhs_scaled_tv: rhs_scaled(r_max, inp.gamma, eps_pi, delta_tv),
        delta_tv,
        identity_gap,
        truncation_t: t,
        tail_bound: tail_bound(inp.gamma, r_max, t),
    })
}

/// The max-scaled comparison bound of a report.
pub fn bound_scaled_max(report: &BoundReport) -> f64 {
    rhs_scaled(report.r_max, report.gamma, report.eps_pi, report.delta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicReport {
    pub j_true: f64,
    pub j_model: f64,
    pub c: f64,
    /// `J_hat - C`.
    pub objective: f64,
    /// `J_hat - 2C`.
    pub objective_2c: f64,
    pub tail_bound: f64,
}

impl MonotonicReport {
    pub fn holds(&self) -> bool {
        let allow = 2.0 * self.tail_bound + 1e-9;
        self.objective <= self.j_true + allow && self.objective_2c <= self.j_true + allow
    }
}

/// Surrogate objective `J_hat(pi) - C(P_hat, pi)` with `C` the bound above.
pub fn monotonic_objective(inp: &BoundInputs<'_>) -> Result<MonotonicReport, TheoryError> {
    let r = bound_report(inp)?;
    Ok(MonotonicReport {
        j_true: r.j_true,
        j_model: r.j_model,
        c: r.rhs_stepwise,
        objective: r.j_model - r.rhs_stepwise,
        objective_2c: r.j_model - 2.0 * r.rhs_stepwise,
        tail_bound: r.tail_bound,
    })
}

/// Joint table over `x in 0..nx`, `y in 0..ny`, x-major.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub nx: usize,
    pub ny: usize,
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn new(nx: usize, ny: usize, probs: Vec<f64>) -> Result<Self, TheoryError> {
        if probs.len() != nx * ny {
            return Err(TheoryError::Shape(format!("expected {} entries, got {}", nx * ny, probs.len())));
        }
        DistributionTable::new(probs.clone())?;
        Ok(Self { nx, ny, probs })
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.probs.chunks(self.ny).map(|r| r.iter().sum()).collect()
    }

    /// `p(y | x)`, or `None` where `p(x) = 0`.
    pub fn conditional(&self, x: usize) -> Option<Vec<f64>> {
        let row = &self.probs[x * self.ny..(x + 1) * self.ny];
        let px: f64 = row.iter().sum();
        (px > 0.0).then(|| row.iter().map(|v| v / px).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaCheck {
    pub joint_tv: f64,
    pub marginal_tv: f64,
    pub max_conditional_tv: f64,
    pub expected_conditional_tv: f64,
}

impl LemmaCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.joint_tv <= self.marginal_tv + self.max_conditional_tv + tol
            && self.joint_tv <= self.marginal_tv + self.expected_conditional_tv + tol
    }
}

/// Both chain-rule inequalities for joint TV. Values of `x` where either
/// conditional is undefined are left out of the max and the expectation.
pub fn lemma_tv_chain_check(p1: &JointTable, p2: &JointTable) -> Result<LemmaCheck, TheoryError> {
    if p1.nx != p2.nx || p1.ny != p2.ny {
        return Err(TheoryError::Shape("joint tables have different supports".into()));
    }
    let (m1, m2) = (p1.marginal_x(), p2.marginal_x());
    let mut max_c: f64 = 0.0;
    let mut exp_c = 0.0;
    for x in 0..p1.nx {
        if let (Some(c1), Some(c2)) = (p1.conditional(x), p2.conditional(x)) {
            let d = tv(&c1, &c2);
            max_c = max_c.max(d);
            exp_c += m1[x] * d;
        }
    }
    Ok(LemmaCheck {
        joint_tv: tv(&p1.probs, &p2.probs),
        marginal_tv: tv(&m1, &m2),
        max_conditional_tv: max_c,
        expected_conditional_tv: exp_c,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinskerCheck {
    pub tv: f64,
    pub bound: f64,
    /// `KL(p || q)` is infinite, so the inequality holds vacuously.
    pub infinite_kl: bool,
}

impl PinskerCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.infinite_kl || self.tv <= self.bound + tol
    }
}

/// `TV(p || q) <= sqrt(KL(p || q) / 2)`.
pub fn pinsker_check(p: &DistributionTable, q: &DistributionTable) -> PinskerCheck {
    let k = kl(&p.probs, &q.probs);
    PinskerCheck { tv: tv(&p.probs, &q.probs), bound: (k / 2.0).sqrt(), infinite_kl: k.is_infinite() }
}

/// Random distribution; larger `sharpness` concentrates mass on fewer
/// entries.
pub fn random_distribution<R: Rng + ?Sized>(n: usize, sharpness: f64, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| (-rng.gen_range(f64::EPSILON..1.0f64).ln()).powf(sharpness)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Tabular policy with random per-agent action distributions.
pub fn random_policy<R: Rng + ?Sized>(spaces: &SpaceSpec, rng: &mut R) -> JointPolicy {
    let tables: Vec<Vec<Vec<f64>>> = spaces
        .obs_sizes
        .iter()
        .map(|&size| (0..size).map(|_| random_distribution(spaces.n_actions, 2.0, rng)).collect())
        .collect();
    JointPolicy::from_tables(spaces.clone(), &tables).expect("random tables have the right shape")
}

/// Per-agent tables of `policy` mixed towards random distributions.
pub fn perturb_policy<R: Rng + ?Sized>(policy: &JointPolicy, amount: f64, rng: &mut R) -> JointPolicy {
    let sp = &policy.spaces;
    let tables: Vec<Vec<Vec<f64>>> = (0..sp.n_agents())
        .map(|i| {
            (0..sp.obs_sizes[i])
                .map(|o| {
                    let base = policy.agent_probs(i, o);
                    let r = random_distribution(sp.n_actions, 2.0, rng);
                    base.iter().zip(r).map(|(b, x)| (1.0 - amount) * b + amount * x).collect()
                })
                .collect()
        })
        .collect();
    JointPolicy::from_tables(sp.clone(), &tables).expect("same shape")
}

/// Local models equal to the true per-agent marginals mixed with random
/// distributions at rate `noise`, with reward heads perturbed by up to
/// `noise`.
pub fn random_model_near<R: Rng + ?Sized>(dyn_: &JointObsDynamics, noise: f64, rng: &mut R) -> LocalModelSet {
    let sp = &dyn_.spaces;
    let nja = sp.n_joint_actions();
    let probs: Vec<Vec<Vec<f64>>> = (0..sp.n_agents())
        .map(|i| {
            (0..sp.n_cells())
                .map(|c| {
                    let m = dyn_.agent_marginal(c / nja, c % nja, i);
                    let r = random_distribution(m.len(), 2.0, rng);
                    m.iter().zip(r).map(|(a, b)| (1.0 - noise) * a + noise * b).collect()
                })
                .collect()
        })
        .collect();
    let rewards: Vec<Vec<f64>> = (0..sp.n_agents())
        .map(|_| dyn_.reward.iter().map(|r| r + noise * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    LocalModelSet::from_tables(sp.clone(), probs, rewards).expect("mixtures of distributions are distributions")
}

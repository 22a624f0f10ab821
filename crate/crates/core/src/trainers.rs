//! Outer-loop optimisation: SPO, ARPO and BARPO with exact or sampled gradients.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversary::{self, InnerSolverConfig};
use crate::error::{Error, Result};
use crate::mdp::{self, PolicyMatrix, TabularIsaMdp};
use crate::policy::{self, Input, ObsPerturbation, Perturbation, PolicySpec, LOG_FLOOR};
use crate::rng;
use crate::rollout;
use crate::textio::fmt_g;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Spo,
    Arpo,
    Barpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// `eta_k = step_size / sqrt(K)`.
    OneOverSqrtK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    Exact,
    MonteCarlo { n_traj: usize, horizon: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub paradigm: Paradigm,
    pub outer_steps: usize,
    pub step_size: f64,
    pub schedule: Schedule,
    pub gradient_mode: GradientMode,
    pub inner: InnerSolverConfig,
    /// Weight of the robust term.
    pub kappa: f64,
    /// Keep the standard (unperturbed) clipped term; BARPO only.
    pub guidance: bool,
    pub clip_eta: f64,
    pub entropy_coeff: f64,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            outer_steps: 100,
            step_size: 0.01,
            schedule: Schedule::Constant,
            gradient_mode: GradientMode::Exact,
            inner: InnerSolverConfig::defaults(0.1),
            kappa: 1.0,
            guidance: true,
            clip_eta: 0.2,
            entropy_coeff: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_steps == 0 {
            return Err(Error::Config("outer_steps must be >= 1".into()));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size = {} must be >= 0", self.step_size)));
        }
        if !(self.clip_eta > 0.0 && self.clip_eta < 1.0) {
            return Err(Error::Config(format!("clip_eta = {} outside (0, 1)", self.clip_eta)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa = {} must be >= 0", self.kappa)));
        }
        if !(self.entropy_coeff >= 0.0) {
            return Err(Error::Config(format!(
                "entropy_coeff = {} must be >= 0",
                self.entropy_coeff
            )));
        }
        if let GradientMode::MonteCarlo { n_traj, .. } = self.gradient_mode {
            if n_traj == 0 {
                return Err(Error::Config("n_traj must be >= 1".into()));
            }
        }
        self.inner.validate()
    }

    fn step_at(&self) -> f64 {
        match self.schedule {
            Schedule::Constant => self.step_size,
            Schedule::OneOverSqrtK => self.step_size / (self.outer_steps as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub params: Vec<f64>,
    pub v_nat: f64,
    pub v_adv: f64,
    /// Strongest discrete adversary value; tabular variants only.
    pub v_adv_exact: Option<f64>,
    /// Projected-gradient norm for the direct form, Euclidean norm otherwise.
    pub grad_norm: f64,
    /// ARPO: max FOSC gap (continuous) or number of remapped states
    /// (discrete); BARPO: mean KL over visited states; SPO: 0.
    pub inner_metric: f64,
    /// Box multipliers `(lower_alpha, lower_beta, upper_alpha, upper_beta)`
    /// of the direct form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt_multipliers: Option<[f64; 4]>,
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub paradigm: Paradigm,
    pub records: Vec<TrainRecord>,
}

pub const TRACE_CSV_HEADER: &str = "iter,v_nat,v_adv,v_adv_exact,grad_norm,inner_metric";

impl TrainTrace {
    pub fn last(&self) -> &TrainRecord {
        self.records.last().expect("trace has K + 1 records")
    }

    /// Summary CSV; a missing exact value is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter,
                fmt_g(r.v_nat),
                fmt_g(r.v_adv),
                r.v_adv_exact.map(fmt_g).unwrap_or_default(),
                fmt_g(r.grad_norm),
                fmt_g(r.inner_metric)
            ));
        }
        out
    }

    /// One JSON object per record, wall-clock excluded so reruns are identical.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    /// Mean of squared outer-gradient norms over the update iterations.
    pub fn mean_sq_grad_norm(&self) -> f64 {
        let k = self.records.len() - 1;
        let total: f64 = self.records[..k].iter().map(|r| r.grad_norm.powi(2)).sum();
        total / k.max(1) as f64
    }
}

/// `g(x, y) = min(x y, clip(x, 1 - eta, 1 + eta) y)`.
pub fn clip_objective(ratio: f64, advantage: f64, eta: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eta, 1.0 + eta);
    (ratio * advantage).min(clipped * advantage)
}

/// `dg/dx` at `(ratio, advantage)`: the advantage when the unclipped branch
/// is active, zero otherwise.
fn clip_objective_slope(ratio: f64, advantage: f64, eta: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eta, 1.0 + eta);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

enum OwnedInput {
    State(usize),
    Obs(Vec<f64>),
}

impl OwnedInput {
    fn as_input(&self) -> Input<'_> {
        match self {
            Self::State(s) => Input::State(*s),
            Self::Obs(x) => Input::Obs(x),
        }
    }
}

/// Where the policy is evaluated for true state `s` under `pert`.
fn effective_input(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: Perturbation<'_>,
    s: usize,
) -> Result<OwnedInput> {
    let target = match pert {
        Perturbation::Discrete(adv) => adv.target(mdp, s),
        _ => s,
    };
    if policy.is_embedded() {
        let emb = mdp.embeddings().ok_or(Error::MissingEmbeddings)?;
        match pert {
            Perturbation::Obs(p) => Ok(OwnedInput::Obs(PolicySpec::perturbed_obs(mdp, p, s)?)),
            _ => Ok(OwnedInput::Obs(emb[target].clone())),
        }
    } else {
        if let Perturbation::Obs(_) = pert {
            return Err(Error::UnsupportedPolicy(
                "tabular policies accept only discrete adversaries",
            ));
        }
        Ok(OwnedInput::State(target))
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `(1/(1-gamma)) sum_{s,a} d(s) Q(s,a) grad_theta pi(a | x_s)` for `pi o nu`.
///
/// Written with `grad pi` rather than `pi grad log pi`; the two agree in the
/// interior and the former stays exact on the boundary of the direct form.
pub fn exact_policy_gradient(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: Perturbation<'_>,
    start: &[f64],
) -> Result<Vec<f64>> {
    let pm = policy.policy_matrix_under_perturbation(mdp, pert)?;
    let sol = mdp::solve_value(mdp, &pm)?;
    let vis = mdp::visitation(mdp, &pm, start)?;
    let scale = 1.0 / (1.0 - mdp.gamma());
    let mut g = vec![0.0; policy.n_params()];
    for s in 0..mdp.n_states() {
        if vis.state[s] == 0.0 {
            continue;
        }
        let input = effective_input(mdp, policy, pert, s)?;
        for a in 0..mdp.n_actions() {
            let dp = policy.prob_grad_theta(input.as_input(), a)?;
            axpy(&mut g, scale * vis.state[s] * sol.q(s, a), &dp);
        }
    }
    Ok(g)
}

/// Reward-to-go score-function estimate of the gradient of `V^{pi o nu}(start)`.
pub fn mc_policy_gradient(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: Perturbation<'_>,
    start: &[f64],
    n_traj: usize,
    horizon: usize,
    seed: u64,
    ids: &[u64],
) -> Result<rollout::McMean> {
    rollout::check_horizon(mdp.gamma(), horizon)?;
    let pm = policy.policy_matrix_under_perturbation(mdp, pert)?;
    let scores = score_table(mdp, policy, pert)?;
    let gamma = mdp.gamma();
    Ok(rollout::chunked_mean(n_traj, policy.n_params(), seed, ids, |rng, out| {
        out.fill(0.0);
        let mut buf = Vec::with_capacity(horizon);
        let mut q = Vec::with_capacity(horizon);
        rollout::sample_trajectory(mdp, &pm, start, horizon, rng, &mut buf);
        rollout::rewards_to_go(&buf, gamma, &mut q);
        let mut disc = 1.0;
        for (st, qt) in buf.iter().zip(&q) {
            axpy(out, disc * qt, &scores[st.state][st.action]);
            disc *= gamma;
        }
    }))
}

/// `grad_theta log pi(a | x_s)` for every `(s, a)` under `pert`.
fn score_table(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: Perturbation<'_>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..mdp.n_states())
        .map(|s| {
            let input = effective_input(mdp, policy, pert, s)?;
            (0..mdp.n_actions())
                .map(|a| policy.log_prob_grad_theta(input.as_input(), a))
                .collect()
        })
        .collect()
}

/// `grad_theta H(pi(.|x)) = -sum_a grad pi(a|x) log pi(a|x)`.
fn entropy_grad(policy: &PolicySpec, input: Input<'_>) -> Result<Vec<f64>> {
    let probs = policy.action_probs(input)?;
    let mut g = vec![0.0; policy.n_params()];
    for (a, pa) in probs.iter().enumerate() {
        let dp = policy.prob_grad_theta(input, a)?;
        axpy(&mut g, -pa.max(LOG_FLOOR).ln(), &dp);
    }
    Ok(g)
}

/// Visitation-weighted entropy gradient at clean inputs.
fn weighted_entropy_grad(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    vis: &mdp::Visitation,
) -> Result<Vec<f64>> {
    let scale = 1.0 / (1.0 - mdp.gamma());
    let mut g = vec![0.0; policy.n_params()];
    for s in 0..mdp.n_states() {
        if vis.state[s] == 0.0 {
            continue;
        }
        let input = effective_input(mdp, policy, Perturbation::None, s)?;
        axpy(&mut g, scale * vis.state[s], &entropy_grad(policy, input.as_input())?);
    }
    Ok(g)
}

fn value_at(mdp: &TabularIsaMdp, pm: &PolicyMatrix) -> Result<f64> {
    Ok(mdp::solve_value(mdp, pm)?.value_at(mdp.mu0()))
}

fn exact_strongest_value(mdp: &TabularIsaMdp, policy: &PolicySpec) -> Result<Option<f64>> {
    if policy.is_embedded() {
        return Ok(None);
    }
    let pm = policy.policy_matrix(mdp)?;
    let (_, sol) = mdp::strongest_adversary_exact(mdp, &pm)?;
    Ok(Some(sol.value_at(mdp.mu0())))
}

/// Gradient of the objective, the adversarial value and the inner metric at `policy`.
struct OuterStep {
    grad: Vec<f64>,
    v_adv: f64,
    inner_metric: f64,
}

fn horizon_for(mdp: &TabularIsaMdp, h: Option<usize>) -> usize {
    h.unwrap_or_else(|| rollout::min_horizon(mdp.gamma()))
}

/// Value gradient of `pi o nu` in the configured mode, plus the entropy term.
fn value_gradient(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: Perturbation<'_>,
    config: &TrainerConfig,
    iter: usize,
) -> Result<Vec<f64>> {
    let mut g = match config.gradient_mode {
        GradientMode::Exact => exact_policy_gradient(mdp, policy, pert, mdp.mu0())?,
        GradientMode::MonteCarlo { n_traj, horizon } => {
            mc_policy_gradient(
                mdp,
                policy,
                pert,
                mdp.mu0(),
                n_traj,
                horizon_for(mdp, horizon),
                config.seed,
                &[0x70, iter as u64],
            )?
            .mean
        }
    };
    if config.entropy_coeff > 0.0 {
        let vis = mdp::visitation(mdp, &policy.policy_matrix(mdp)?, mdp.mu0())?;
        axpy(&mut g, config.entropy_coeff, &weighted_entropy_grad(mdp, policy, &vis)?);
    }
    Ok(g)
}

fn spo_step(mdp: &TabularIsaMdp, policy: &PolicySpec, config: &TrainerConfig, iter: usize) -> Result<OuterStep> {
    let grad = value_gradient(mdp, policy, Perturbation::None, config, iter)?;
    let v_adv = value_at(mdp, &policy.policy_matrix(mdp)?)?;
    Ok(OuterStep {
        grad,
        v_adv,
        inner_metric: 0.0,
    })
}

fn arpo_step(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    config: &TrainerConfig,
    iter: usize,
    v_nat: f64,
) -> Result<OuterStep> {
    if policy.is_embedded() {
        let inner = config.inner.with_seed(rng::mix(config.seed, &[0xa1, iter as u64]));
        let (mut pert, report) = adversary::pgd_inner(mdp, policy, &inner, mdp.mu0())?;
        let mut v_adv = adversary::perturbed_value(mdp, policy, &pert, mdp.mu0())?;
        if v_adv > v_nat {
            // Sign steps can overshoot; the unperturbed policy is always admissible.
            pert = ObsPerturbation::zeros(mdp.n_states(), policy.obs_dim().unwrap_or(0), inner.eps);
            v_adv = v_nat;
        }
        let grad = value_gradient(mdp, policy, Perturbation::Obs(&pert), config, iter)?;
        Ok(OuterStep {
            grad,
            v_adv,
            inner_metric: report.max_gap(),
        })
    } else {
        let pm = policy.policy_matrix(mdp)?;
        let (adv, sol) = mdp::strongest_adversary_exact(mdp, &pm)?;
        let grad = value_gradient(mdp, policy, Perturbation::Discrete(&adv), config, iter)?;
        let moved = (0..mdp.n_states())
            .filter(|&s| adv.target(mdp, s) != s)
            .count();
        Ok(OuterStep {
            grad,
            v_adv: sol.value_at(mdp.mu0()),
            inner_metric: moved as f64,
        })
    }
}

/// Per-state KL-maximising perturbations of the clean embeddings.
fn kl_perturbation(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    config: &TrainerConfig,
    iter: usize,
    visited: &[bool],
) -> Result<(ObsPerturbation, f64)> {
    let emb = mdp.embeddings().ok_or(Error::MissingEmbeddings)?;
    let d = emb[0].len();
    let mut theta = vec![vec![0.0; d]; mdp.n_states()];
    let mut kl_sum = 0.0;
    let mut count = 0usize;
    for s in 0..mdp.n_states() {
        if !visited[s] {
            continue;
        }
        let inner = config
            .inner
            .with_seed(rng::mix(config.seed, &[0xb1, iter as u64, s as u64]));
        let r = adversary::kl_inner(policy, &emb[s], &inner)?;
        kl_sum += r.kl;
        count += 1;
        theta[s] = r.theta;
    }
    let pert = ObsPerturbation::new(theta, config.inner.eps)?;
    Ok((pert, if count > 0 { kl_sum / count as f64 } else { 0.0 }))
}

fn barpo_step(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    config: &TrainerConfig,
    iter: usize,
) -> Result<OuterStep> {
    if !policy.is_embedded() {
        return Err(Error::UnsupportedPolicy("BARPO needs embedded softmax"));
    }
    let pm = policy.policy_matrix(mdp)?;
    let vis = mdp::visitation(mdp, &pm, mdp.mu0())?;
    let visited: Vec<bool> = match config.gradient_mode {
        GradientMode::Exact => vis.state.iter().map(|&x| x > 0.0).collect(),
        GradientMode::MonteCarlo { .. } => vec![true; mdp.n_states()],
    };
    let (pert, mean_kl) = kl_perturbation(mdp, policy, config, iter, &visited)?;
    let v_adv = adversary::perturbed_value(mdp, policy, &pert, mdp.mu0())?;
    let eta = config.clip_eta;
    let n_params = policy.n_params();
    let clean: Vec<OwnedInput> = (0..mdp.n_states())
        .map(|s| effective_input(mdp, policy, Perturbation::None, s))
        .collect::<Result<_>>()?;
    let perturbed: Vec<OwnedInput> = (0..mdp.n_states())
        .map(|s| effective_input(mdp, policy, Perturbation::Obs(&pert), s))
        .collect::<Result<_>>()?;
    let mut grad = match config.gradient_mode {
        GradientMode::Exact => {
            let sol = mdp::solve_value(mdp, &pm)?;
            let scale = 1.0 / (1.0 - mdp.gamma());
            let mut g = vec![0.0; n_params];
            for s in 0..mdp.n_states() {
                if vis.state[s] == 0.0 {
                    continue;
                }
                let w = scale * vis.state[s];
                let p_clean = pm.row(s);
                let p_pert = policy.action_probs(perturbed[s].as_input())?;
                for a in 0..mdp.n_actions() {
                    let adv = sol.q(s, a) - sol.v[s];
                    if config.guidance {
                        let dp = policy.prob_grad_theta(clean[s].as_input(), a)?;
                        axpy(&mut g, w * adv, &dp);
                    }
                    if config.kappa > 0.0 {
                        let ratio = p_pert[a] / p_clean[a];
                        let slope = clip_objective_slope(ratio, adv, eta);
                        if slope != 0.0 {
                            let dp = policy.prob_grad_theta(perturbed[s].as_input(), a)?;
                            axpy(&mut g, config.kappa * w * slope, &dp);
                        }
                    }
                }
            }
            g
        }
        GradientMode::MonteCarlo { n_traj, horizon } => {
            let horizon = horizon_for(mdp, horizon);
            rollout::check_horizon(mdp.gamma(), horizon)?;
            let clean_scores = score_table(mdp, policy, Perturbation::None)?;
            let pert_scores = score_table(mdp, policy, Perturbation::Obs(&pert))?;
            let pert_probs: Vec<Vec<f64>> = perturbed
                .iter()
                .map(|x| policy.action_probs(x.as_input()))
                .collect::<Result<_>>()?;
            let gamma = mdp.gamma();
            let (guidance, kappa) = (config.guidance, config.kappa);
            rollout::chunked_mean(n_traj, n_params, config.seed, &[0x70, iter as u64], |rng, out| {
                out.fill(0.0);
                let mut buf = Vec::with_capacity(horizon);
                let mut q = Vec::with_capacity(horizon);
                rollout::sample_trajectory(mdp, &pm, mdp.mu0(), horizon, rng, &mut buf);
                rollout::rewards_to_go(&buf, gamma, &mut q);
                let mut disc = 1.0;
                for (st, qt) in buf.iter().zip(&q) {
                    let (s, a) = (st.state, st.action);
                    if guidance {
                        axpy(out, disc * qt, &clean_scores[s][a]);
                    }
                    if kappa > 0.0 {
                        let ratio = pert_probs[s][a] / pm.row(s)[a];
                        let slope = clip_objective_slope(ratio, *qt, eta);
                        if slope != 0.0 {
                            axpy(out, kappa * disc * slope * ratio, &pert_scores[s][a]);
                        }
                    }
                    disc *= gamma;
                }
            })
            .mean
        }
    };
    if config.entropy_coeff > 0.0 && config.kappa > 0.0 {
        let eg = weighted_entropy_grad(mdp, policy, &vis)?;
        axpy(&mut grad, config.kappa * config.entropy_coeff, &eg);
    }
    Ok(OuterStep {
        grad,
        v_adv,
        inner_metric: mean_kl,
    })
}

/// Projected-gradient norm and box multipliers for the direct form.
fn direct2_diagnostics(theta: &[f64], g: &[f64]) -> (f64, [f64; 4]) {
    let mut pg = [0.0; 2];
    let mut mult = [0.0; 4];
    for i in 0..2 {
        pg[i] = g[i];
        if theta[i] <= 0.0 && g[i] < 0.0 {
            mult[i] = -g[i];
            pg[i] = 0.0;
        }
        if theta[i] >= 1.0 && g[i] > 0.0 {
            mult[2 + i] = g[i];
            pg[i] = 0.0;
        }
    }
    (pg[0].hypot(pg[1]), mult)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn run(
    mdp: &TabularIsaMdp,
    policy0: &PolicySpec,
    config: &TrainerConfig,
    expected: Paradigm,
) -> Result<TrainTrace> {
    config.validate()?;
    policy0.validate()?;
    if config.paradigm != expected {
        return Err(Error::Config(format!(
            "trainer for {expected:?} received a {:?} configuration",
            config.paradigm
        )));
    }
    let clock = Instant::now();
    let is_direct = matches!(policy0, PolicySpec::Direct2 { .. });
    let eta = config.step_at();
    let mut policy = policy0.clone();
    let mut records = Vec::with_capacity(config.outer_steps + 1);
    for k in 0..=config.outer_steps {
        let pm = policy.policy_matrix(mdp)?;
        let v_nat = value_at(mdp, &pm)?;
        let step = match config.paradigm {
            Paradigm::Spo => spo_step(mdp, &policy, config, k)?,
            Paradigm::Arpo => arpo_step(mdp, &policy, config, k, v_nat)?,
            Paradigm::Barpo => barpo_step(mdp, &policy, config, k)?,
        };
        let theta = policy.params();
        let (grad_norm, kkt) = if is_direct {
            let (n, m) = direct2_diagnostics(&theta, &step.grad);
            (n, Some(m))
        } else {
            (norm2(&step.grad), None)
        };
        records.push(TrainRecord {
            iter: k,
            params: theta.clone(),
            v_nat,
            v_adv: step.v_adv,
            v_adv_exact: exact_strongest_value(mdp, &policy)?,
            grad_norm,
            inner_metric: step.inner_metric,
            kkt_multipliers: kkt,
            wall_clock: clock.elapsed().as_secs_f64(),
        });
        if k == config.outer_steps || eta == 0.0 {
            if k < config.outer_steps {
                continue;
            }
            break;
        }
        let mut next: Vec<f64> = theta
            .iter()
            .zip(&step.grad)
            .map(|(t, g)| t + eta * g)
            .collect();
        if is_direct {
            next.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        }
        policy = policy.with_params(&next)?;
    }
    Ok(TrainTrace {
        paradigm: config.paradigm,
        records,
    })
}

/// Gradient ascent on `V^{pi_theta}(mu0)`.
pub fn train_spo(mdp: &TabularIsaMdp, policy0: &PolicySpec, config: &TrainerConfig) -> Result<TrainTrace> {
    run(mdp, policy0, config, Paradigm::Spo)
}

/// Ascent on `V^{pi_theta o nu}(mu0)` with `nu` re-solved every iteration:
/// exact strongest remap for tabular policies, sign-PGD for embedded ones.
pub fn train_arpo(mdp: &TabularIsaMdp, policy0: &PolicySpec, config: &TrainerConfig) -> Result<TrainTrace> {
    run(mdp, policy0, config, Paradigm::Arpo)
}

/// Clipped standard term (when `guidance`) plus `kappa` times the clipped
/// term at KL-maximising perturbed observations, inner solution held fixed.
pub fn train_barpo(mdp: &TabularIsaMdp, policy0: &PolicySpec, config: &TrainerConfig) -> Result<TrainTrace> {
    run(mdp, policy0, config, Paradigm::Barpo)
}

/// Dispatches on `config.paradigm`.
pub fn train(mdp: &TabularIsaMdp, policy0: &PolicySpec, config: &TrainerConfig) -> Result<TrainTrace> {
    run(mdp, policy0, config, config.paradigm)
}

/// Entropy of the clean action distribution at every state.
pub fn state_entropies(mdp: &TabularIsaMdp, policy: &PolicySpec) -> Result<Vec<f64>> {
    let pm = policy.policy_matrix(mdp)?;
    Ok((0..mdp.n_states()).map(|s| policy::entropy(pm.row(s))).collect())
}

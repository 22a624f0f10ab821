//! Inner-problem solvers: adversary policy gradients, sign-PGD with a FOSC
//! stopping rule, and KL-maximising perturbations.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{self, PolicyMatrix, TabularIsaMdp};
use crate::policy::{self, Input, ObsPerturbation, Perturbation, PolicySpec};
use crate::rng;
use crate::rollout;

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolverConfig {
    /// l-infinity budget.
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    /// FOSC threshold.
    pub delta: f64,
    /// SGLD temperature; 0 disables noise.
    pub temperature: f64,
    pub seed: u64,
    /// Use the exact adversary gradient instead of Monte Carlo estimates.
    pub exact_gradient: bool,
    pub n_traj: usize,
    /// Rollout horizon; `None` picks the smallest admissible one.
    pub horizon: Option<usize>,
}

impl InnerSolverConfig {
    /// Ten steps of size `eps / 10` with temperature `1e-5`.
    pub fn defaults(eps: f64) -> Self {
        Self {
            eps,
            steps: 10,
            step_size: if eps > 0.0 { eps / 10.0 } else { 1e-3 },
            delta: 0.0,
            temperature: 1e-5,
            seed: 0,
            exact_gradient: true,
            n_traj: 1000,
            horizon: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("inner eps = {} must be >= 0", self.eps)));
        }
        if self.steps == 0 {
            return Err(Error::Config("inner steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config(format!(
                "inner step_size = {} must be > 0",
                self.step_size
            )));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!("inner delta = {} must be >= 0", self.delta)));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "inner temperature = {} must be >= 0",
                self.temperature
            )));
        }
        if !self.exact_gradient && self.n_traj == 0 {
            return Err(Error::Config("inner n_traj must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn horizon_for(&self, gamma: f64) -> usize {
        self.horizon.unwrap_or_else(|| rollout::min_horizon(gamma))
    }
}

/// Per-state Monte Carlo estimate of `d V / d theta_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvGradEstimate {
    pub grads: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub visited: Vec<bool>,
    pub n_trajectories: usize,
}

/// One record of the inner-solver diagnostic log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerLogRecord {
    pub state: usize,
    pub step: usize,
    pub objective: f64,
    pub gap: f64,
    pub clamped: bool,
}

/// Line-delimited JSON rendering of a diagnostic log.
pub fn log_to_jsonl(log: &[InnerLogRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
        .collect()
}

fn require_embedded(policy: &PolicySpec, mdp: &TabularIsaMdp) -> Result<usize> {
    let d = policy
        .obs_dim()
        .ok_or(Error::UnsupportedPolicy("adversary gradients need embedded softmax"))?;
    let md = mdp.embedding_dim().ok_or(Error::MissingEmbeddings)?;
    if md != d {
        return Err(Error::DimensionMismatch {
            what: "embedding dimension",
            expected: d,
            found: md,
        });
    }
    Ok(d)
}

/// Observation score vectors `d/dx log pi(a | phi(s) + theta_s)` for every `(s, a)`.
fn obs_scores(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: &ObsPerturbation,
) -> Result<Vec<Vec<Vec<f64>>>> {
    (0..mdp.n_states())
        .map(|s| {
            let x = PolicySpec::perturbed_obs(mdp, pert, s)?;
            (0..mdp.n_actions())
                .map(|a| policy.log_prob_grad_obs(&x, a))
                .collect()
        })
        .collect()
}

/// Value of `pi o nu_theta` at `start`.
pub fn perturbed_value(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: &ObsPerturbation,
    start: &[f64],
) -> Result<f64> {
    let pm = policy.policy_matrix_under_perturbation(mdp, Perturbation::Obs(pert))?;
    Ok(mdp::solve_value(mdp, &pm)?.value_at(start))
}

/// Monte Carlo estimate of `d V^{pi o nu}(start) / d theta_s` for every state,
/// `E[sum_t gamma^t Q_hat_t grad_x log pi(a_t | x_{s_t}) 1(s_t = s)]`.
pub fn adv_value_gradient_mc(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: &ObsPerturbation,
    start: &[f64],
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<AdvGradEstimate> {
    let d = require_embedded(policy, mdp)?;
    rollout::check_horizon(mdp.gamma(), horizon)?;
    if n_traj == 0 {
        return Err(Error::Config("n_traj must be >= 1".into()));
    }
    let n = mdp.n_states();
    let pm = policy.policy_matrix_under_perturbation(mdp, Perturbation::Obs(pert))?;
    let scores = obs_scores(mdp, policy, pert)?;
    let gamma = mdp.gamma();
    // Last n entries count visits so the flag comes out of the same reduction.
    let est = rollout::chunked_mean(n_traj, n * d + n, seed, &[0xad, 1], |rng, out| {
        out.fill(0.0);
        let mut buf = Vec::with_capacity(horizon);
        let mut q = Vec::with_capacity(horizon);
        rollout::sample_trajectory(mdp, &pm, start, horizon, rng, &mut buf);
        rollout::rewards_to_go(&buf, gamma, &mut q);
        let mut disc = 1.0;
        for (st, qt) in buf.iter().zip(&q) {
            let g = &scores[st.state][st.action];
            let block = &mut out[st.state * d..(st.state + 1) * d];
            for (o, gj) in block.iter_mut().zip(g) {
                *o += disc * qt * gj;
            }
            out[n * d + st.state] = 1.0;
            disc *= gamma;
        }
    });
    let visited: Vec<bool> = (0..n).map(|s| est.mean[n * d + s] > 0.0).collect();
    let grads = (0..n)
        .map(|s| est.mean[s * d..(s + 1) * d].to_vec())
        .collect();
    let stderr = (0..n)
        .map(|s| est.stderr[s * d..(s + 1) * d].to_vec())
        .collect();
    Ok(AdvGradEstimate {
        grads,
        stderr,
        visited,
        n_trajectories: n_traj,
    })
}

/// Exact `d V^{pi o nu}(start) / d theta_s = d(s)/(1-gamma) sum_a Q(s,a) grad_x pi(a|x_s)`,
/// assembled from linear solves.
pub fn adv_value_gradient_exact(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: &ObsPerturbation,
    start: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let d = require_embedded(policy, mdp)?;
    let pm = policy.policy_matrix_under_perturbation(mdp, Perturbation::Obs(pert))?;
    let sol = mdp::solve_value(mdp, &pm)?;
    let vis = mdp::visitation(mdp, &pm, start)?;
    let scores = obs_scores(mdp, policy, pert)?;
    let scale = 1.0 / (1.0 - mdp.gamma());
    Ok((0..mdp.n_states())
        .map(|s| {
            let mut g = vec![0.0; d];
            for a in 0..mdp.n_actions() {
                let w = scale * vis.state[s] * sol.q(s, a) * pm.row(s)[a];
                for (gj, sj) in g.iter_mut().zip(&scores[s][a]) {
                    *gj += w * sj;
                }
            }
            g
        })
        .collect())
}

/// First-order optimality gap of `theta_s` for minimising a linear model
/// with gradient `g` over the box: `<theta_s, g> + eps * |g|_1`.
pub fn fosc_gap(g: &[f64], theta_s: &[f64], eps: f64) -> Result<f64> {
    if g.len() != theta_s.len() {
        return Err(Error::DimensionMismatch {
            what: "fosc gradient",
            expected: theta_s.len(),
            found: g.len(),
        });
    }
    let norm = policy::linf(theta_s);
    if !(norm <= eps) {
        return Err(Error::BudgetViolated { norm, eps });
    }
    let inner: f64 = theta_s.iter().zip(g).map(|(t, x)| t * x).sum();
    let l1: f64 = g.iter().map(|x| x.abs()).sum();
    Ok((inner + eps * l1).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoscReport {
    /// Gap per state at the returned perturbation.
    pub gaps: Vec<f64>,
    /// States whose gap was still above `delta` when the loop ended.
    pub unconverged: Vec<bool>,
    pub sweeps: usize,
    pub log: Vec<InnerLogRecord>,
}

impl FoscReport {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }
}

fn gradient_for(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    pert: &ObsPerturbation,
    start: &[f64],
    config: &InnerSolverConfig,
    sweep: usize,
) -> Result<Vec<Vec<f64>>> {
    if config.exact_gradient {
        adv_value_gradient_exact(mdp, policy, pert, start)
    } else {
        let seed = rng::mix(config.seed, &[0x96d, sweep as u64]);
        let est = adv_value_gradient_mc(
            mdp,
            policy,
            pert,
            start,
            config.n_traj,
            config.horizon_for(mdp.gamma()),
            seed,
        )?;
        Ok(est.grads)
    }
}

/// Sign-PGD on the adversarial value over the states in `mask`.
fn pgd_core(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    config: &InnerSolverConfig,
    start: &[f64],
    mask: &[bool],
) -> Result<(ObsPerturbation, FoscReport)> {
    config.validate()?;
    let d = require_embedded(policy, mdp)?;
    let n = mdp.n_states();
    let mut pert = ObsPerturbation::zeros(n, d, config.eps);
    let mut log = Vec::new();
    if config.eps == 0.0 {
        return Ok((
            pert,
            FoscReport {
                gaps: vec![0.0; n],
                unconverged: vec![false; n],
                sweeps: 0,
                log,
            },
        ));
    }
    let mut active: Vec<bool> = mask.to_vec();
    let mut sweeps = 0;
    for step in 0..config.steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        // One gradient sample per sweep, shared by every state's update.
        let g = gradient_for(mdp, policy, &pert, start, config, step)?;
        sweeps += 1;
        let mut records = Vec::new();
        for s in 0..n {
            if !active[s] {
                continue;
            }
            let gap = fosc_gap(&g[s], pert.theta(s), config.eps)?;
            if gap <= config.delta {
                active[s] = false;
                records.push((s, gap, false));
                continue;
            }
            let proposal: Vec<f64> = pert
                .theta(s)
                .iter()
                .zip(&g[s])
                .map(|(t, gj)| t - config.step_size * sign(*gj))
                .collect();
            let clamped = policy::linf(&proposal) > config.eps;
            pert.set_clamped(s, &proposal);
            records.push((s, gap, clamped));
        }
        let objective = perturbed_value(mdp, policy, &pert, start)?;
        log.extend(records.into_iter().map(|(state, gap, clamped)| InnerLogRecord {
            state,
            step,
            objective,
            gap,
            clamped,
        }));
    }
    let g = gradient_for(mdp, policy, &pert, start, config, config.steps)?;
    let gaps = (0..n)
        .map(|s| {
            if mask[s] {
                fosc_gap(&g[s], pert.theta(s), config.eps)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let unconverged = gaps
        .iter()
        .zip(mask)
        .map(|(g, m)| *m && *g > config.delta)
        .collect();
    Ok((
        pert,
        FoscReport {
            gaps,
            unconverged,
            sweeps,
            log,
        },
    ))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sign-gradient descent on `V^{pi o nu_theta}(start)` inside the budget,
/// freezing each state once its FOSC gap drops to `delta`.
pub fn pgd_inner(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    config: &InnerSolverConfig,
    start: &[f64],
) -> Result<(ObsPerturbation, FoscReport)> {
    let mask = vec![true; mdp.n_states()];
    pgd_core(mdp, policy, config, start, &mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlInnerResult {
    pub theta: Vec<f64>,
    pub kl: f64,
    pub log: Vec<InnerLogRecord>,
}

fn kl_at(policy: &PolicySpec, p_clean: &[f64], obs: &[f64], theta: &[f64]) -> Result<f64> {
    let x: Vec<f64> = obs.iter().zip(theta).map(|(o, t)| o + t).collect();
    policy::kl(p_clean, &policy.action_probs(Input::Obs(&x))?)
}

/// `d/dtheta KL(pi(.|x) || pi(.|x + theta)) = W^T (pi(.|x + theta) - pi(.|x))`.
fn kl_grad(policy: &PolicySpec, p_clean: &[f64], obs: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    let PolicySpec::EmbeddedSoftmax { weights, .. } = policy else {
        unreachable!("checked by kl_inner");
    };
    let x: Vec<f64> = obs.iter().zip(theta).map(|(o, t)| o + t).collect();
    let q = policy.action_probs(Input::Obs(&x))?;
    let mut g = vec![0.0; obs.len()];
    for (w, (qa, pa)) in weights.iter().zip(q.iter().zip(p_clean)) {
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj += (qa - pa) * wj;
        }
    }
    Ok(g)
}

fn kl_ascent(
    policy: &PolicySpec,
    p_clean: &[f64],
    obs: &[f64],
    config: &InnerSolverConfig,
    init: Vec<f64>,
    rng: &mut rng::StreamRng,
    state_tag: usize,
    log: &mut Vec<InnerLogRecord>,
) -> Result<(Vec<f64>, f64)> {
    let eps = config.eps;
    let mut theta = init;
    let mut value = kl_at(policy, p_clean, obs, &theta)?;
    let mut step_size = config.step_size;
    let noise_scale = (2.0 * config.step_size * config.temperature).sqrt();
    for step in 0..config.steps {
        let g = kl_grad(policy, p_clean, obs, &theta)?;
        let mut clamped = false;
        let proposal: Vec<f64> = theta
            .iter()
            .zip(&g)
            .map(|(t, gj)| {
                let mut v = t + step_size * gj.signum();
                if config.temperature > 0.0 {
                    v += noise_scale * rng.sample::<f64, _>(StandardNormal);
                }
                if v.abs() > eps {
                    clamped = true;
                }
                v.clamp(-eps, eps)
            })
            .collect();
        let candidate = kl_at(policy, p_clean, obs, &proposal)?;
        if config.temperature == 0.0 && candidate < value {
            step_size *= 0.5;
        } else {
            theta = proposal;
            value = candidate;
        }
        log.push(InnerLogRecord {
            state: state_tag,
            step,
            objective: value,
            gap: policy::linf(&g),
            clamped,
        });
    }
    Ok((theta, value))
}

/// Maximises `KL(pi(.|obs) || pi(.|obs + theta))` over `|theta|_inf <= eps`.
///
/// The objective is flat at `theta = 0`, so ascent starts from a seeded
/// point of the ball and from its reflection; the better end point wins.
pub fn kl_inner(
    policy: &PolicySpec,
    obs: &[f64],
    config: &InnerSolverConfig,
) -> Result<KlInnerResult> {
    config.validate()?;
    if !policy.is_embedded() {
        return Err(Error::UnsupportedPolicy("KL perturbations need embedded softmax"));
    }
    let p_clean = policy.action_probs(Input::Obs(obs))?;
    let d = obs.len();
    let mut log = Vec::new();
    if config.eps == 0.0 {
        return Ok(KlInnerResult {
            theta: vec![0.0; d],
            kl: 0.0,
            log,
        });
    }
    let mut rng = rng::stream(config.seed, &[0x41]);
    let init: Vec<f64> = (0..d)
        .map(|_| config.eps * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let reflected: Vec<f64> = init.iter().map(|x| -x).collect();
    let (t1, v1) = kl_ascent(policy, &p_clean, obs, config, init, &mut rng, 0, &mut log)?;
    let (t2, v2) = kl_ascent(policy, &p_clean, obs, config, reflected, &mut rng, 1, &mut log)?;
    let (theta, kl) = if v2 > v1 { (t2, v2) } else { (t1, v1) };
    Ok(KlInnerResult { theta, kl, log })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateReport {
    /// `V^pi(s) - V^{pi o nu}(s)` at the observed state.
    pub value_drop: f64,
    pub kl: f64,
    pub fisher_lambda_max: f64,
    /// Leading coefficient `2 delta / (lambda_max K)`.
    pub coefficient: f64,
    pub bound_holds: bool,
    /// KL or Fisher vanish, so the comparison carries no information.
    pub degenerate: bool,
    pub theta: Vec<f64>,
}

/// Small-perturbation KL guard for [`surrogate_bound_check`].
pub const SURROGATE_KL_GUARD: f64 = 0.01;

/// Perturbs only `obs_state`, descends `V(obs_state)` with sign-PGD and
/// compares the exact value drop with the KL-based lower bound.
///
/// `delta` and `steps` of the configuration play the roles of the step-size
/// margin and iteration count in the coefficient; `slack` scales the drop.
pub fn surrogate_bound_check(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    obs_state: usize,
    pgd_config: &InnerSolverConfig,
    slack: f64,
) -> Result<SurrogateReport> {
    if obs_state >= mdp.n_states() {
        return Err(Error::InvalidMdp(format!("state {obs_state} out of range")));
    }
    let mut start = vec![0.0; mdp.n_states()];
    start[obs_state] = 1.0;
    let mut mask = vec![false; mdp.n_states()];
    mask[obs_state] = true;
    let (pert, _) = pgd_core(mdp, policy, pgd_config, &start, &mask)?;
    let clean = policy.policy_matrix(mdp)?;
    let v_clean = mdp::solve_value(mdp, &clean)?.v[obs_state];
    let v_pert = perturbed_value(mdp, policy, &pert, &start)?;
    let obs = &mdp.embeddings().ok_or(Error::MissingEmbeddings)?[obs_state];
    let theta = pert.theta(obs_state).to_vec();
    let p_clean = policy.action_probs(Input::Obs(obs))?;
    let kl = kl_at(policy, &p_clean, obs, &theta)?;
    if kl > SURROGATE_KL_GUARD {
        return Err(Error::KlGuard {
            kl,
            guard: SURROGATE_KL_GUARD,
        });
    }
    let lambda = policy.fisher_at_obs(obs)?.lambda_max();
    let degenerate = kl <= 1e-300 || lambda <= 1e-300;
    let coefficient = if degenerate {
        0.0
    } else {
        2.0 * pgd_config.delta / (lambda * pgd_config.steps as f64)
    };
    let value_drop = v_clean - v_pert;
    Ok(SurrogateReport {
        value_drop,
        kl,
        fisher_lambda_max: lambda,
        coefficient,
        bound_holds: slack * value_drop >= coefficient * kl,
        degenerate,
        theta,
    })
}

/// Exact value of `pi o nu` for a discrete adversary on any policy variant.
pub fn discrete_value(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    adv: &mdp::DiscreteAdversary,
) -> Result<mdp::ValueSolveResult> {
    let pm: PolicyMatrix =
        policy.policy_matrix_under_perturbation(mdp, Perturbation::Discrete(adv))?;
    mdp::solve_value(mdp, &pm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpParts;
    use proptest::prelude::*;

    fn toy_policy() -> PolicySpec {
        PolicySpec::embedded(vec![vec![1.2, -0.8], vec![-0.3, 0.9]], vec![0.1, -0.2]).unwrap()
    }

    fn fd_adv_gradient(
        mdp: &TabularIsaMdp,
        policy: &PolicySpec,
        pert: &ObsPerturbation,
        start: &[f64],
        h: f64,
    ) -> Vec<Vec<f64>> {
        let n = mdp.n_states();
        let d = policy.obs_dim().unwrap();
        let big = pert.eps() + 10.0 * h;
        (0..n)
            .map(|s| {
                (0..d)
                    .map(|j| {
                        let shifted = |dx: f64| {
                            let mut th = pert.all().to_vec();
                            th[s][j] += dx;
                            let p = ObsPerturbation::new(th, big).unwrap();
                            perturbed_value(mdp, policy, &p, start).unwrap()
                        };
                        (shifted(h) - shifted(-h)) / (2.0 * h)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let mdp = TabularIsaMdp::toy();
        let p = toy_policy();
        let pert = ObsPerturbation::new(vec![vec![0.2, -0.1], vec![0.05, 0.3]], 0.5).unwrap();
        let exact = adv_value_gradient_exact(&mdp, &p, &pert, mdp.mu0()).unwrap();
        let fd = fd_adv_gradient(&mdp, &p, &pert, mdp.mu0(), 1e-6);
        for (a, b) in exact.iter().flatten().zip(fd.iter().flatten()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn mc_gradient_zero_policy_is_null() {
        let mdp = TabularIsaMdp::toy();
        let p = PolicySpec::embedded_zero(2, 2);
        let pert = ObsPerturbation::zeros(2, 2, 0.0);
        let est = adv_value_gradient_mc(&mdp, &p, &pert, mdp.mu0(), 2000, 200, 4).unwrap();
        assert!(est.grads.iter().flatten().all(|&g| g == 0.0));
        assert!(est.visited.iter().all(|&v| v));
    }

    #[test]
    fn mc_gradient_single_state_closed_form() {
        // One state, two actions with rewards (1, 0): V(x) = sigmoid(w x + c) / (1 - gamma).
        let gamma = 0.5;
        let mdp = TabularIsaMdp::new(MdpParts {
            reward: vec![vec![1.0, 0.0]],
            transition: vec![vec![vec![1.0], vec![1.0]]],
            gamma,
            mu0: vec![1.0],
            perturb_sets: vec![vec![0]],
            embeddings: Some(vec![vec![0.5]]),
        })
        .unwrap();
        let p = PolicySpec::embedded(vec![vec![1.5], vec![0.0]], vec![-0.25, 0.0]).unwrap();
        let pert = ObsPerturbation::zeros(1, 1, 0.0);
        let z: f64 = 1.5 * 0.5 - 0.25;
        let sig = 1.0 / (1.0 + (-z).exp());
        let analytic = 1.5 * sig * (1.0 - sig) / (1.0 - gamma);
        let h = rollout::min_horizon(gamma);
        let est = adv_value_gradient_mc(&mdp, &p, &pert, &[1.0], 50_000, h, 8).unwrap();
        assert!((est.grads[0][0] - analytic).abs() <= 3.0 * est.stderr[0][0]);
    }

    #[test]
    fn stderr_shrinks_with_more_trajectories() {
        let mdp = TabularIsaMdp::toy();
        let p = toy_policy();
        let pert = ObsPerturbation::zeros(2, 2, 0.0);
        let h = rollout::min_horizon(mdp.gamma());
        let a = adv_value_gradient_mc(&mdp, &p, &pert, mdp.mu0(), 10_000, h, 1).unwrap();
        let b = adv_value_gradient_mc(&mdp, &p, &pert, mdp.mu0(), 30_000, h, 2).unwrap();
        for (x, y) in a.stderr.iter().flatten().zip(b.stderr.iter().flatten()) {
            let ratio = x / y;
            assert!((1.5..=2.0).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn bad_horizon_and_variant_are_rejected() {
        let mdp = TabularIsaMdp::toy();
        let pert = ObsPerturbation::zeros(2, 2, 0.0);
        assert!(matches!(
            adv_value_gradient_mc(&mdp, &toy_policy(), &pert, mdp.mu0(), 10, 20, 0),
            Err(Error::InvalidHorizon { .. })
        ));
        let direct = PolicySpec::direct2(0.5, 0.5).unwrap();
        assert!(matches!(
            adv_value_gradient_mc(&mdp, &direct, &pert, mdp.mu0(), 10, 200, 0),
            Err(Error::UnsupportedPolicy(_))
        ));
    }

    #[test]
    fn fosc_gap_cases() {
        assert_eq!(fosc_gap(&[0.0, 0.0], &[0.1, -0.2], 0.3).unwrap(), 0.0);
        let g = [0.5, -2.0, 1.0];
        let corner: Vec<f64> = g.iter().map(|x| -0.4 * sign(*x)).collect();
        assert!(fosc_gap(&g, &corner, 0.4).unwrap().abs() < 1e-15);
        assert!(matches!(
            fosc_gap(&g, &[0.5, 0.0, 0.0], 0.4),
            Err(Error::BudgetViolated { .. })
        ));
    }

    proptest! {
        #[test]
        fn fosc_gap_equals_corner_enumeration(
            g in proptest::collection::vec(-3.0f64..3.0, 1..8),
            frac in proptest::collection::vec(-1.0f64..1.0, 8),
            eps in 0.0f64..2.0,
        ) {
            let d = g.len();
            let theta: Vec<f64> = frac[..d].iter().map(|f| f * eps).collect();
            let gap = fosc_gap(&g, &theta, eps).unwrap();
            let mut best = f64::NEG_INFINITY;
            for mask in 0..(1u32 << d) {
                let val: f64 = (0..d)
                    .map(|j| {
                        let u = if mask >> j & 1 == 1 { eps } else { -eps };
                        (theta[j] - u) * g[j]
                    })
                    .sum();
                best = best.max(val);
            }
            prop_assert!((gap - best.max(0.0)).abs() <= 1e-12);
            prop_assert!(gap >= 0.0);
        }
    }

    #[test]
    fn pgd_with_zero_budget_is_a_no_op() {
        let mdp = TabularIsaMdp::toy();
        let p = toy_policy();
        let cfg = InnerSolverConfig::defaults(0.0);
        let (pert, report) = pgd_inner(&mdp, &p, &cfg, mdp.mu0()).unwrap();
        assert!(pert.all().iter().flatten().all(|&x| x == 0.0));
        let nat = mdp::solve_value(&mdp, &p.policy_matrix(&mdp).unwrap()).unwrap();
        assert_eq!(
            perturbed_value(&mdp, &p, &pert, mdp.mu0()).unwrap(),
            nat.value_at(mdp.mu0())
        );
        assert_eq!(report.max_gap(), 0.0);
    }

    #[test]
    fn pgd_lowers_value_within_budget() {
        let mdp = TabularIsaMdp::toy();
        let p = toy_policy();
        let mut cfg = InnerSolverConfig::defaults(0.5);
        cfg.steps = 30;
        let (pert, report) = pgd_inner(&mdp, &p, &cfg, mdp.mu0()).unwrap();
        assert!(pert.all().iter().flatten().all(|x| x.abs() <= 0.5));
        let nat = mdp::solve_value(&mdp, &p.policy_matrix(&mdp).unwrap())
            .unwrap()
            .value_at(mdp.mu0());
        assert!(perturbed_value(&mdp, &p, &pert, mdp.mu0()).unwrap() <= nat);
        assert!(!report.log.is_empty());
        assert!(log_to_jsonl(&report.log).lines().count() == report.log.len());
    }

    #[test]
    fn huge_delta_stops_immediately() {
        let mdp = TabularIsaMdp::toy();
        let mut cfg = InnerSolverConfig::defaults(0.5);
        cfg.delta = 1e3;
        let (pert, report) = pgd_inner(&mdp, &toy_policy(), &cfg, mdp.mu0()).unwrap();
        assert_eq!(report.sweeps, 1);
        assert!(pert.all().iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn kl_inner_zero_policy_and_zero_budget() {
        let cfg = InnerSolverConfig::defaults(0.3);
        let r = kl_inner(&PolicySpec::embedded_zero(2, 2), &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(r.kl, 0.0);
        let r = kl_inner(&toy_policy(), &[1.0, 0.0], &InnerSolverConfig::defaults(0.0)).unwrap();
        assert_eq!(r.theta, vec![0.0, 0.0]);
    }

    #[test]
    fn kl_inner_is_monotone_without_noise() {
        let mut cfg = InnerSolverConfig::defaults(0.4);
        cfg.temperature = 0.0;
        cfg.steps = 40;
        cfg.step_size = 2.0;
        let r = kl_inner(&toy_policy(), &[1.0, 0.0], &cfg).unwrap();
        for run in r.log.chunks(40) {
            for w in run.windows(2) {
                assert!(w[1].objective >= w[0].objective);
            }
        }
        assert!(policy::linf(&r.theta) <= 0.4);
    }

    #[test]
    fn surrogate_zero_budget_and_zero_policy() {
        let mdp = TabularIsaMdp::toy();
        let r = surrogate_bound_check(&mdp, &toy_policy(), 0, &InnerSolverConfig::defaults(0.0), 1.0)
            .unwrap();
        assert_eq!((r.value_drop, r.kl), (0.0, 0.0));
        let z = surrogate_bound_check(
            &mdp,
            &PolicySpec::embedded_zero(2, 2),
            1,
            &InnerSolverConfig::defaults(1e-3),
            1.0,
        )
        .unwrap();
        assert!(z.degenerate);
        assert_eq!(z.kl, 0.0);
        assert_eq!(z.value_drop, 0.0);
    }

    #[test]
    fn surrogate_drop_is_first_order_and_kl_second_order() {
        // drop ~ c1 eps and KL ~ c2 eps^2, so (drop / KL) * eps settles.
        let mdp = TabularIsaMdp::toy();
        let p = toy_policy();
        let scaled: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eps| {
                let r = surrogate_bound_check(&mdp, &p, 0, &InnerSolverConfig::defaults(eps), 1.0)
                    .unwrap();
                assert!(r.value_drop > 0.0 && r.kl > 0.0);
                r.value_drop / r.kl * eps
            })
            .collect();
        assert!(scaled.iter().all(|&x| x > 0.0));
        let rel = (scaled[1] - scaled[2]).abs() / scaled[2];
        let rel_coarse = (scaled[0] - scaled[2]).abs() / scaled[2];
        assert!(rel < 0.01 && rel < rel_coarse, "{scaled:?}");
    }

    #[test]
    fn surrogate_guard_trips_on_large_kl() {
        let mdp = TabularIsaMdp::toy();
        let strong = PolicySpec::embedded(vec![vec![2.0, -2.0], vec![-2.0, 2.0]], vec![0.0, 0.0])
            .unwrap();
        let r = surrogate_bound_check(&mdp, &strong, 0, &InnerSolverConfig::defaults(1.0), 1.0);
        assert!(matches!(r, Err(Error::KlGuard { .. })), "{r:?}");
        assert!(matches!(
            surrogate_bound_check(&mdp, &strong, 1, &InnerSolverConfig::defaults(1.0), 1.0),
            Err(Error::KlGuard { .. })
        ));
    }
}

//! Tabular intrinsic state-adversarial MDPs and their exact evaluation.
//!
//! Everything here is a pure function of immutable inputs. Linear systems
//! `(I - gamma P^pi) v = r^pi` are solved by dense LU; the adversary's
//! control problem is solved by value iteration followed by an exact
//! policy-iteration polish.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const POLICY_ROW_TOL: f64 = 1e-10;

/// Stopping threshold for the adversary's value iteration.
pub const ADVERSARY_VI_TOL: f64 = 1e-12;

/// Largest number of deterministic adversaries `brute_force_strongest` will enumerate.
pub const BRUTE_FORCE_BUDGET: u128 = 1_000_000;

/// A finite MDP together with per-state admissible perturbation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularIsaMdp {
    n_states: usize,
    n_actions: usize,
    /// `reward[s * n_actions + a]`
    reward: Vec<f64>,
    /// `transition[(s * n_actions + a) * n_states + s']`
    transition: Vec<f64>,
    gamma: f64,
    mu0: Vec<f64>,
    perturb_sets: Vec<Vec<usize>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

/// Builder-style input for [`TabularIsaMdp::new`]; rows are indexed by state.
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub reward: Vec<Vec<f64>>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub mu0: Vec<f64>,
    pub perturb_sets: Vec<Vec<usize>>,
    pub embeddings: Option<Vec<Vec<f64>>>,
}

impl TabularIsaMdp {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let n_states = parts.reward.len();
        if n_states == 0 {
            return Err(Error::InvalidMdp("need at least one state".into()));
        }
        let n_actions = parts.reward[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one action".into()));
        }
        let mut reward = Vec::with_capacity(n_states * n_actions);
        for (s, row) in parts.reward.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "reward row {s} has {} entries, expected {n_actions}",
                    row.len()
                )));
            }
            reward.extend_from_slice(row);
        }
        if parts.transition.len() != n_states {
            return Err(Error::DimensionMismatch {
                what: "transition states",
                expected: n_states,
                found: parts.transition.len(),
            });
        }
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in parts.transition.iter().enumerate() {
            if per_action.len() != n_actions {
                return Err(Error::InvalidMdp(format!(
                    "transition slice {s} has {} actions, expected {n_actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                check_distribution(row, n_states, ROW_SUM_TOL)
                    .map_err(|m| Error::InvalidMdp(format!("P(.|s{s},a{a}): {m}")))?;
                transition.extend_from_slice(row);
            }
        }
        if !(0.0..1.0).contains(&parts.gamma) {
            return Err(Error::InvalidMdp(format!(
                "gamma = {} is outside [0, 1)",
                parts.gamma
            )));
        }
        check_distribution(&parts.mu0, n_states, ROW_SUM_TOL)
            .map_err(|m| Error::InvalidMdp(format!("mu0: {m}")))?;
        validate_perturb_sets(&parts.perturb_sets, n_states)?;
        if let Some(emb) = &parts.embeddings {
            if emb.len() != n_states {
                return Err(Error::DimensionMismatch {
                    what: "embeddings",
                    expected: n_states,
                    found: emb.len(),
                });
            }
            let d = emb[0].len();
            if d == 0 {
                return Err(Error::InvalidMdp("embedding dimension is zero".into()));
            }
            for (s, e) in emb.iter().enumerate() {
                if e.len() != d {
                    return Err(Error::InvalidMdp(format!(
                        "embedding {s} has dimension {}, expected {d}",
                        e.len()
                    )));
                }
                if e.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidMdp(format!("embedding {s} is not finite")));
                }
            }
        }
        if reward.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMdp("reward entries must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            reward,
            transition,
            gamma: parts.gamma,
            mu0: parts.mu0,
            perturb_sets: parts.perturb_sets,
            embeddings: parts.embeddings,
        })
    }

    /// The two-state, two-action ISA-MDP with gamma = 0.9, uniform mu0,
    /// B(s) = {s1, s2} for both states and one-hot embeddings.
    pub fn toy() -> Self {
        Self::toy_with_gamma(0.9).expect("toy MDP is valid")
    }

    pub fn toy_with_gamma(gamma: f64) -> Result<Self> {
        Self::new(MdpParts {
            reward: vec![vec![-0.45, -0.1], vec![0.5, 0.5]],
            transition: vec![
                vec![vec![0.7, 0.3], vec![0.99, 0.01]],
                vec![vec![0.2, 0.8], vec![0.99, 0.01]],
            ],
            gamma,
            mu0: vec![0.5, 0.5],
            perturb_sets: vec![vec![0, 1], vec![1, 0]],
            embeddings: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Next-state distribution `P(. | s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn perturb_sets(&self) -> &[Vec<usize>] {
        &self.perturb_sets
    }

    pub fn perturb_set(&self, s: usize) -> &[usize] {
        &self.perturb_sets[s]
    }

    pub fn embeddings(&self) -> Option<&[Vec<f64>]> {
        self.embeddings.as_deref()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embeddings.as_ref().map(|e| e[0].len())
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma = {gamma} is outside [0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn with_mu0(mut self, mu0: Vec<f64>) -> Result<Self> {
        check_distribution(&mu0, self.n_states, ROW_SUM_TOL)
            .map_err(|m| Error::InvalidMdp(format!("mu0: {m}")))?;
        self.mu0 = mu0;
        Ok(self)
    }

    pub fn with_perturb_sets(mut self, sets: Vec<Vec<usize>>) -> Result<Self> {
        validate_perturb_sets(&sets, self.n_states)?;
        self.perturb_sets = sets;
        Ok(self)
    }

    /// Same MDP with B(s) = {s}: the adversary is powerless.
    pub fn with_singleton_perturb_sets(self) -> Self {
        let sets = (0..self.n_states).map(|s| vec![s]).collect();
        self.with_perturb_sets(sets).expect("singletons are valid")
    }

    pub fn with_embeddings(mut self, embeddings: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let parts = MdpParts {
            reward: self.reward_rows(),
            transition: self.transition_slices(),
            gamma: self.gamma,
            mu0: std::mem::take(&mut self.mu0),
            perturb_sets: std::mem::take(&mut self.perturb_sets),
            embeddings,
        };
        Self::new(parts)
    }

    pub fn reward_rows(&self) -> Vec<Vec<f64>> {
        self.reward
            .chunks(self.n_actions)
            .map(|c| c.to_vec())
            .collect()
    }

    pub fn transition_slices(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.transition_row(s, a).to_vec())
                    .collect()
            })
            .collect()
    }

    /// Expected value of `v` under `start`.
    pub fn expectation(&self, start: &[f64], v: &[f64]) -> f64 {
        start.iter().zip(v).map(|(p, x)| p * x).sum()
    }

    fn check_policy(&self, pi: &PolicyMatrix) -> Result<()> {
        if pi.n_states != self.n_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: self.n_states,
                found: pi.n_states,
            });
        }
        if pi.n_actions != self.n_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: self.n_actions,
                found: pi.n_actions,
            });
        }
        Ok(())
    }

    /// `r^pi(s) = sum_a pi(a|s) r(s,a)` and `P^pi(s'|s)`, row-major.
    fn induced_chain(&self, pi: &PolicyMatrix) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_states;
        let mut r_pi = vec![0.0; n];
        let mut p_pi = vec![0.0; n * n];
        for s in 0..n {
            for (a, &p) in pi.row(s).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                r_pi[s] += p * self.reward(s, a);
                for (dst, &pt) in p_pi[s * n..(s + 1) * n]
                    .iter_mut()
                    .zip(self.transition_row(s, a))
                {
                    *dst += p * pt;
                }
            }
        }
        (r_pi, p_pi)
    }
}

fn check_distribution(row: &[f64], n: usize, tol: f64) -> std::result::Result<(), String> {
    if row.len() != n {
        return Err(format!("has {} entries, expected {n}", row.len()));
    }
    if let Some(i) = row.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(format!("entry {i} = {} is negative or not finite", row[i]));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

fn validate_perturb_sets(sets: &[Vec<usize>], n_states: usize) -> Result<()> {
    if sets.len() != n_states {
        return Err(Error::DimensionMismatch {
            what: "perturbation sets",
            expected: n_states,
            found: sets.len(),
        });
    }
    for (s, set) in sets.iter().enumerate() {
        if !set.contains(&s) {
            return Err(Error::InvalidMdp(format!("B(s{s}) must contain s{s}")));
        }
        for (i, &t) in set.iter().enumerate() {
            if t >= n_states {
                return Err(Error::InvalidMdp(format!("B(s{s}) references state {t}")));
            }
            if set[..i].contains(&t) {
                return Err(Error::InvalidMdp(format!("B(s{s}) lists state {t} twice")));
            }
        }
    }
    Ok(())
}

/// Row-stochastic action probabilities, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrix {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl PolicyMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, |r| r.len());
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy matrix".into()));
        }
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.iter().enumerate() {
            check_distribution(row, n_actions, POLICY_ROW_TOL)
                .map_err(|m| Error::InvalidPolicy(format!("row {s}: {m}")))?;
            probs.extend_from_slice(row);
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    /// Uniform random policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.n_actions).map(|c| c.to_vec()).collect()
    }
}

/// Deterministic perturbation map: state `s` is observed as
/// `perturb_sets[s][remap[s]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscreteAdversary {
    pub remap: Vec<usize>,
}

impl DiscreteAdversary {
    /// The adversary that picks each state itself.
    pub fn identity(mdp: &TabularIsaMdp) -> Self {
        let remap = (0..mdp.n_states)
            .map(|s| {
                mdp.perturb_sets[s]
                    .iter()
                    .position(|&t| t == s)
                    .expect("validated: s in B(s)")
            })
            .collect();
        Self { remap }
    }

    /// Builds the adversary that observes `s` as `targets[s]`.
    pub fn from_targets(mdp: &TabularIsaMdp, targets: &[usize]) -> Result<Self> {
        if targets.len() != mdp.n_states {
            return Err(Error::DimensionMismatch {
                what: "adversary targets",
                expected: mdp.n_states,
                found: targets.len(),
            });
        }
        let remap = targets
            .iter()
            .enumerate()
            .map(|(s, t)| {
                mdp.perturb_sets[s]
                    .iter()
                    .position(|x| x == t)
                    .ok_or_else(|| Error::InvalidMdp(format!("state {t} is not in B(s{s})")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { remap })
    }

    pub fn validate(&self, mdp: &TabularIsaMdp) -> Result<()> {
        if self.remap.len() != mdp.n_states {
            return Err(Error::DimensionMismatch {
                what: "adversary remap",
                expected: mdp.n_states,
                found: self.remap.len(),
            });
        }
        for (s, &i) in self.remap.iter().enumerate() {
            let len = mdp.perturb_sets[s].len();
            if i >= len {
                return Err(Error::InvalidRemap { state: s, index: i, len });
            }
        }
        Ok(())
    }

    /// Observed state for true state `s`.
    pub fn target(&self, mdp: &TabularIsaMdp, s: usize) -> usize {
        mdp.perturb_sets[s][self.remap[s]]
    }

    pub fn targets(&self, mdp: &TabularIsaMdp) -> Vec<usize> {
        (0..mdp.n_states).map(|s| self.target(mdp, s)).collect()
    }

    pub fn is_identity(&self, mdp: &TabularIsaMdp) -> bool {
        (0..mdp.n_states).all(|s| self.target(mdp, s) == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolveResult {
    pub v: Vec<f64>,
    /// `q[s * n_actions + a]`
    pub q: Vec<f64>,
    pub n_actions: usize,
    pub bellman_residual: f64,
}

impl ValueSolveResult {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// `V(start) = sum_s start(s) v(s)`.
    pub fn value_at(&self, start: &[f64]) -> f64 {
        start.iter().zip(&self.v).map(|(p, x)| p * x).sum()
    }
}

/// Exact policy evaluation.
pub fn solve_value(mdp: &TabularIsaMdp, pi: &PolicyMatrix) -> Result<ValueSolveResult> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let (r_pi, p_pi) = mdp.induced_chain(pi);
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for t in 0..n {
            a[(s, t)] -= mdp.gamma * p_pi[s * n + t];
        }
    }
    let v = a
        .lu()
        .solve(&DVector::from_column_slice(&r_pi))
        .ok_or(Error::SingularSystem)?;
    let v: Vec<f64> = v.iter().copied().collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let bellman_residual = (0..n)
        .map(|s| {
            let backup: f64 =
                r_pi[s] + mdp.gamma * (0..n).map(|t| p_pi[s * n + t] * v[t]).sum::<f64>();
            (v[s] - backup).abs()
        })
        .fold(0.0, f64::max);
    let q = q_from_v(mdp, &v);
    Ok(ValueSolveResult {
        v,
        q,
        n_actions: mdp.n_actions,
        bellman_residual,
    })
}

/// `q(s,a) = r(s,a) + gamma * sum_s' P(s'|s,a) v(s')`.
pub fn q_from_v(mdp: &TabularIsaMdp, v: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let ev: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x)
                .sum();
            q.push(mdp.reward(s, a) + mdp.gamma * ev);
        }
    }
    q
}

/// Normalised discounted state-action occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct Visitation {
    pub state: Vec<f64>,
    /// `state_action[s * n_actions + a] = state[s] * pi(a|s)`
    pub state_action: Vec<f64>,
    pub n_actions: usize,
}

impl Visitation {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.state_action[s * self.n_actions + a]
    }

    pub fn total(&self) -> f64 {
        self.state_action.iter().sum()
    }
}

/// Discounted visitation `d^T = (1 - gamma) start^T (I - gamma P^pi)^{-1}`.
pub fn visitation(mdp: &TabularIsaMdp, pi: &PolicyMatrix, start: &[f64]) -> Result<Visitation> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            what: "start distribution",
            expected: n,
            found: start.len(),
        });
    }
    let (_, p_pi) = mdp.induced_chain(pi);
    // Transposed system: (I - gamma P^pi)^T d = (1 - gamma) start.
    let mut a = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for t in 0..n {
            a[(t, s)] -= mdp.gamma * p_pi[s * n + t];
        }
    }
    let rhs = DVector::from_iterator(n, start.iter().map(|x| (1.0 - mdp.gamma) * x));
    let d = a.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    // Clamp roundoff below zero; true occupancies are nonnegative.
    let state: Vec<f64> = d.iter().map(|x| x.max(0.0)).collect();
    let mut state_action = Vec::with_capacity(n * mdp.n_actions);
    for (s, ds) in state.iter().enumerate() {
        state_action.extend(pi.row(s).iter().map(|p| ds * p));
    }
    Ok(Visitation {
        state,
        state_action,
        n_actions: mdp.n_actions,
    })
}

/// `(pi o nu)(a|s) = pi(a | nu(s))`.
pub fn apply_adversary(
    pi: &PolicyMatrix,
    adv: &DiscreteAdversary,
    mdp: &TabularIsaMdp,
) -> Result<PolicyMatrix> {
    mdp.check_policy(pi)?;
    adv.validate(mdp)?;
    let mut probs = Vec::with_capacity(pi.probs.len());
    for s in 0..mdp.n_states {
        probs.extend_from_slice(pi.row(adv.target(mdp, s)));
    }
    Ok(PolicyMatrix {
        n_states: pi.n_states,
        n_actions: pi.n_actions,
        probs,
    })
}

/// Per-state candidate backups for the adversary's control problem:
/// `c[s][j] = sum_a pi(a|B(s)_j) (r(s,a) + gamma P(.|s,a) . v)`.
fn adversary_backups(mdp: &TabularIsaMdp, pi: &PolicyMatrix, v: &[f64]) -> Vec<Vec<f64>> {
    let q = q_from_v(mdp, v);
    (0..mdp.n_states)
        .map(|s| {
            let q_row = &q[s * mdp.n_actions..(s + 1) * mdp.n_actions];
            mdp.perturb_sets[s]
                .iter()
                .map(|&t| pi.row(t).iter().zip(q_row).map(|(p, qa)| p * qa).sum())
                .collect()
        })
        .collect()
}

/// Lowest index whose value is within `tol` of the minimum.
fn argmin_lowest_index(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    values
        .iter()
        .position(|&x| x <= best + tol)
        .expect("non-empty candidate set")
}

/// The adversary minimising `V^{pi o nu}(s)` at every state simultaneously.
pub fn strongest_adversary_exact(
    mdp: &TabularIsaMdp,
    pi: &PolicyMatrix,
) -> Result<(DiscreteAdversary, ValueSolveResult)> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let mut v = vec![0.0; n];
    let max_iters = 1_000_000;
    for _ in 0..max_iters {
        let next: Vec<f64> = adversary_backups(mdp, pi, &v)
            .into_iter()
            .map(|c| c.into_iter().fold(f64::INFINITY, f64::min))
            .collect();
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff < ADVERSARY_VI_TOL {
            break;
        }
    }
    let mut adv = DiscreteAdversary {
        remap: adversary_backups(mdp, pi, &v)
            .iter()
            .map(|c| argmin_lowest_index(c))
            .collect(),
    };
    // Policy-iteration polish on exact values so the returned remap is
    // optimal to solver precision rather than to the VI tolerance.
    let mut result = solve_value(mdp, &apply_adversary(pi, &adv, mdp)?)?;
    for _ in 0..100 {
        let remap: Vec<usize> = adversary_backups(mdp, pi, &result.v)
            .iter()
            .map(|c| argmin_lowest_index(c))
            .collect();
        if remap == adv.remap {
            break;
        }
        let candidate = DiscreteAdversary { remap };
        let candidate_result = solve_value(mdp, &apply_adversary(pi, &candidate, mdp)?)?;
        let improves = candidate_result
            .v
            .iter()
            .zip(&result.v)
            .all(|(a, b)| *a <= b + 1e-12 * (1.0 + b.abs()));
        if !improves {
            break;
        }
        adv = candidate;
        result = candidate_result;
    }
    Ok((adv, result))
}

/// Exhaustive search over deterministic adversaries, minimising `V(mu0)`.
///
/// Ties are broken in favour of the lexicographically smallest remap.
pub fn brute_force_strongest(
    mdp: &TabularIsaMdp,
    pi: &PolicyMatrix,
) -> Result<(DiscreteAdversary, ValueSolveResult)> {
    mdp.check_policy(pi)?;
    let size = mdp
        .perturb_sets
        .iter()
        .map(|s| s.len() as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX);
    if size > BRUTE_FORCE_BUDGET {
        return Err(Error::EnumerationBudget {
            size,
            budget: BRUTE_FORCE_BUDGET,
        });
    }
    let n = mdp.n_states;
    let mut remap = vec![0usize; n];
    let mut best: Option<(DiscreteAdversary, ValueSolveResult, f64)> = None;
    loop {
        let adv = DiscreteAdversary {
            remap: remap.clone(),
        };
        let res = solve_value(mdp, &apply_adversary(pi, &adv, mdp)?)?;
        let val = res.value_at(&mdp.mu0);
        let better = match &best {
            None => true,
            Some((_, _, b)) => val < b - 1e-12 * (1.0 + b.abs()),
        };
        if better {
            best = Some((adv, res, val));
        }
        // Odometer increment, last state fastest => lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                let (adv, res, _) = best.expect("at least one adversary");
                return Ok((adv, res));
            }
            i -= 1;
            remap[i] += 1;
            if remap[i] < mdp.perturb_sets[i].len() {
                break;
            }
            remap[i] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct2(a: f64, b: f64) -> PolicyMatrix {
        PolicyMatrix::from_rows(vec![vec![a, 1.0 - a], vec![b, 1.0 - b]]).unwrap()
    }

    /// Fixed-point iteration `v <- r^pi + gamma P^pi v`, used as an oracle.
    fn fixed_point_value(mdp: &TabularIsaMdp, pi: &PolicyMatrix) -> Vec<f64> {
        let n = mdp.n_states();
        let mut v = vec![0.0; n];
        loop {
            let mut next = vec![0.0; n];
            for s in 0..n {
                for a in 0..mdp.n_actions() {
                    let p = pi.row(s)[a];
                    let ev: f64 = mdp
                        .transition_row(s, a)
                        .iter()
                        .zip(&v)
                        .map(|(pt, x)| pt * x)
                        .sum();
                    next[s] += p * (mdp.reward(s, a) + mdp.gamma() * ev);
                }
            }
            let diff = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            if diff < 1e-13 {
                return v;
            }
        }
    }

    #[test]
    fn toy_values_match_published_vectors() {
        let mdp = TabularIsaMdp::toy();
        let cases = [
            ((1.0, 1.0), (0.16, 1.89)),
            ((0.0, 1.0), (-0.81, 1.26)),
            ((0.0, 0.0), (-0.95, -0.35)),
            ((1.0, 0.0), (-2.47, -1.71)),
        ];
        for ((a, b), (v1, v2)) in cases {
            let res = solve_value(&mdp, &direct2(a, b)).unwrap();
            assert!((res.v[0] - v1).abs() <= 0.01, "{a},{b}: {:?}", res.v);
            assert!((res.v[1] - v2).abs() <= 0.01, "{a},{b}: {:?}", res.v);
            assert!(res.bellman_residual <= 1e-10);
        }
    }

    #[test]
    fn value_matches_fixed_point_oracle() {
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(0.5, 0.5);
        let exact = solve_value(&mdp, &pi).unwrap();
        let oracle = fixed_point_value(&mdp, &pi);
        for (x, y) in exact.v.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_discount_value_is_immediate_reward() {
        let mdp = TabularIsaMdp::toy_with_gamma(0.0).unwrap();
        let pi = direct2(0.3, 0.8);
        let res = solve_value(&mdp, &pi).unwrap();
        assert_eq!(res.v[0], 0.3 * -0.45 + 0.7 * -0.1);
        assert_eq!(res.v[1], 0.8 * 0.5 + 0.2 * 0.5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mdp = TabularIsaMdp::toy();
        let pi = PolicyMatrix::uniform(3, 2);
        assert!(matches!(
            solve_value(&mdp, &pi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn visitation_single_state_is_policy_row() {
        let mdp = TabularIsaMdp::new(MdpParts {
            reward: vec![vec![1.0, 0.0, 2.0]],
            transition: vec![vec![vec![1.0], vec![1.0], vec![1.0]]],
            gamma: 0.7,
            mu0: vec![1.0],
            perturb_sets: vec![vec![0]],
            embeddings: None,
        })
        .unwrap();
        let pi = PolicyMatrix::from_rows(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let d = visitation(&mdp, &pi, &[1.0]).unwrap();
        for a in 0..3 {
            assert!((d.get(0, a) - pi.row(0)[a]).abs() < 1e-14);
        }
    }

    #[test]
    fn visitation_zero_discount_is_start_times_policy() {
        let mdp = TabularIsaMdp::toy_with_gamma(0.0).unwrap();
        let pi = direct2(0.25, 0.6);
        let start = [0.3, 0.7];
        let d = visitation(&mdp, &pi, &start).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((d.get(s, a) - start[s] * pi.row(s)[a]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_adversary_is_bitwise_identity() {
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(0.37, 0.91);
        let out = apply_adversary(&pi, &DiscreteAdversary::identity(&mdp), &mdp).unwrap();
        assert_eq!(out, pi);
    }

    #[test]
    fn collapsing_adversary_copies_target_row() {
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(0.0, 1.0);
        let adv = DiscreteAdversary::from_targets(&mdp, &[0, 0]).unwrap();
        let out = apply_adversary(&pi, &adv, &mdp).unwrap();
        assert_eq!(out.row(0), pi.row(0));
        assert_eq!(out.row(1), pi.row(0));
    }

    #[test]
    fn swap_adversary_equals_swapped_policy() {
        let mdp = TabularIsaMdp::toy();
        let adv = DiscreteAdversary::from_targets(&mdp, &[1, 0]).unwrap();
        let swapped = apply_adversary(&direct2(0.3, 0.9), &adv, &mdp).unwrap();
        let direct = solve_value(&mdp, &direct2(0.9, 0.3)).unwrap();
        let via_adv = solve_value(&mdp, &swapped).unwrap();
        assert_eq!(direct.v, via_adv.v);
    }

    #[test]
    fn invalid_remap_is_rejected() {
        let mdp = TabularIsaMdp::toy();
        let adv = DiscreteAdversary { remap: vec![0, 2] };
        assert!(matches!(
            apply_adversary(&direct2(0.5, 0.5), &adv, &mdp),
            Err(Error::InvalidRemap { state: 1, index: 2, len: 2 })
        ));
    }

    #[test]
    fn robust_corner_keeps_identity_adversary() {
        // beta <= min(alpha, 0.777): the identity is optimal.
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(0.9, 0.5);
        let (adv, res) = strongest_adversary_exact(&mdp, &pi).unwrap();
        assert!(adv.is_identity(&mdp));
        assert_eq!(res.v, solve_value(&mdp, &pi).unwrap().v);
    }

    #[test]
    fn vulnerable_policy_is_hurt_and_matches_brute_force() {
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(0.0, 1.0);
        let nat = solve_value(&mdp, &pi).unwrap();
        let (adv, res) = strongest_adversary_exact(&mdp, &pi).unwrap();
        let (bf_adv, bf_res) = brute_force_strongest(&mdp, &pi).unwrap();
        assert!(res.value_at(mdp.mu0()) < nat.value_at(mdp.mu0()) - 1e-3);
        assert_eq!(adv, bf_adv);
        for (a, b) in res.v.iter().zip(&bf_res.v) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn singleton_sets_give_identity() {
        let mdp = TabularIsaMdp::toy().with_singleton_perturb_sets();
        let pi = direct2(0.1, 0.95);
        let (adv, res) = strongest_adversary_exact(&mdp, &pi).unwrap();
        assert!(adv.is_identity(&mdp));
        assert_eq!(res.v, solve_value(&mdp, &pi).unwrap().v);
        let (bf, _) = brute_force_strongest(&mdp, &pi).unwrap();
        assert!(bf.is_identity(&mdp));
    }

    #[test]
    fn exact_and_brute_force_agree_on_grid() {
        let mdp = TabularIsaMdp::toy();
        for i in 0..=20 {
            for j in 0..=20 {
                let pi = direct2(i as f64 / 20.0, j as f64 / 20.0);
                let (_, ex) = strongest_adversary_exact(&mdp, &pi).unwrap();
                let (_, bf) = brute_force_strongest(&mdp, &pi).unwrap();
                for (a, b) in ex.v.iter().zip(&bf.v) {
                    assert!((a - b).abs() < 1e-9, "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn pi11_minimiser_is_the_worst_of_the_four_candidates() {
        // For pi_{1,1} every candidate row is (1, 0): the adversary cannot act.
        let mdp = TabularIsaMdp::toy();
        let pi = direct2(1.0, 1.0);
        let (adv, res) = brute_force_strongest(&mdp, &pi).unwrap();
        assert!(adv.is_identity(&mdp));
        assert!((res.v[0] - 0.1636).abs() < 1e-3);
    }

    #[test]
    fn budget_guard() {
        let n = 21;
        let mut transition = Vec::new();
        for _ in 0..n {
            transition.push(vec![vec![1.0 / n as f64; n]]);
        }
        let mdp = TabularIsaMdp::new(MdpParts {
            reward: vec![vec![0.0]; n],
            transition,
            gamma: 0.5,
            mu0: vec![1.0 / n as f64; n],
            perturb_sets: (0..n).map(|s| vec![s, (s + 1) % n]).collect(),
            embeddings: None,
        })
        .unwrap();
        let pi = PolicyMatrix::uniform(n, 1);
        assert!(matches!(
            brute_force_strongest(&mdp, &pi),
            Err(Error::EnumerationBudget { .. })
        ));
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let base = || MdpParts {
            reward: vec![vec![0.0, 0.0]],
            transition: vec![vec![vec![1.0], vec![1.0]]],
            gamma: 0.5,
            mu0: vec![1.0],
            perturb_sets: vec![vec![0]],
            embeddings: None,
        };
        let mut p = base();
        p.gamma = 1.0;
        assert!(TabularIsaMdp::new(p).is_err());
        let mut p = base();
        p.mu0 = vec![0.9];
        assert!(TabularIsaMdp::new(p).is_err());
        let mut p = base();
        p.perturb_sets = vec![vec![]];
        assert!(TabularIsaMdp::new(p).is_err());
        let mut p = base();
        p.transition = vec![vec![vec![1.0 + 1e-9], vec![1.0]]];
        assert!(TabularIsaMdp::new(p).is_err());
        assert!(TabularIsaMdp::new(base()).is_ok());
    }
}

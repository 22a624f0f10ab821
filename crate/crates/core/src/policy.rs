//! Policy parameterisations, their score functions, KL and Fisher information.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DiscreteAdversary, PolicyMatrix, TabularIsaMdp};
use crate::textio;

/// Floor applied to probabilities inside logarithms of the direct form.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// `pi(a1|s1) = alpha`, `pi(a1|s2) = beta` on a two-state, two-action MDP.
    Direct2 { alpha: f64, beta: f64 },
    /// One logit row per state.
    TabularSoftmax { logits: Vec<Vec<f64>> },
    /// `pi(.|x) = softmax(W x + b)` with `W` of shape `[n_actions][d]`.
    EmbeddedSoftmax { weights: Vec<Vec<f64>>, bias: Vec<f64> },
}

/// What a policy is evaluated at.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    State(usize),
    Obs(&'a [f64]),
}

/// Per-state observation perturbations inside an l-infinity ball.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsPerturbation {
    theta: Vec<Vec<f64>>,
    eps: f64,
}

/// Perturbation applied when building a policy matrix.
#[derive(Debug, Clone, Copy)]
pub enum Perturbation<'a> {
    None,
    Obs(&'a ObsPerturbation),
    Discrete(&'a DiscreteAdversary),
}

/// Fisher information of `log pi(.|x)` with respect to the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherAtObs {
    pub matrix: DMatrix<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sum_i p_i log(p_i / q_i)` with `0 log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            what: "kl arguments",
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::SupportViolation { index: i });
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

fn dim_err(what: &'static str, expected: usize, found: usize) -> Error {
    Error::DimensionMismatch {
        what,
        expected,
        found,
    }
}

impl PolicySpec {
    pub fn direct2(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self::Direct2 { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn tabular(logits: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self::TabularSoftmax { logits };
        p.validate()?;
        Ok(p)
    }

    pub fn embedded(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let p = Self::EmbeddedSoftmax { weights, bias };
        p.validate()?;
        Ok(p)
    }

    /// Embedded softmax with all parameters zero.
    pub fn embedded_zero(n_actions: usize, dim: usize) -> Self {
        Self::EmbeddedSoftmax {
            weights: vec![vec![0.0; dim]; n_actions],
            bias: vec![0.0; n_actions],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Direct2 { alpha, beta } => {
                for (name, x) in [("alpha", alpha), ("beta", beta)] {
                    if !(0.0..=1.0).contains(x) {
                        return Err(Error::InvalidPolicy(format!("{name} = {x} outside [0, 1]")));
                    }
                }
            }
            Self::TabularSoftmax { logits } => {
                let a = logits.first().map_or(0, |r| r.len());
                if logits.is_empty() || a == 0 {
                    return Err(Error::InvalidPolicy("empty logit table".into()));
                }
                if logits.iter().any(|r| r.len() != a) {
                    return Err(Error::InvalidPolicy("ragged logit table".into()));
                }
                if logits.iter().flatten().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidPolicy("non-finite logit".into()));
                }
            }
            Self::EmbeddedSoftmax { weights, bias } => {
                let d = weights.first().map_or(0, |r| r.len());
                if weights.is_empty() || d == 0 {
                    return Err(Error::InvalidPolicy("empty weight matrix".into()));
                }
                if weights.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidPolicy("ragged weight matrix".into()));
                }
                if bias.len() != weights.len() {
                    return Err(Error::InvalidPolicy(format!(
                        "bias has {} entries for {} actions",
                        bias.len(),
                        weights.len()
                    )));
                }
                if weights.iter().flatten().chain(bias).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidPolicy("non-finite parameter".into()));
                }
            }
        }
        Ok(())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Direct2 { .. } => "direct2",
            Self::TabularSoftmax { .. } => "tabular_softmax",
            Self::EmbeddedSoftmax { .. } => "embedded_softmax",
        }
    }

    pub fn is_embedded(&self) -> bool {
        matches!(self, Self::EmbeddedSoftmax { .. })
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Self::Direct2 { .. } => 2,
            Self::TabularSoftmax { logits } => logits[0].len(),
            Self::EmbeddedSoftmax { weights, .. } => weights.len(),
        }
    }

    /// Observation dimension of the embedded variant.
    pub fn obs_dim(&self) -> Option<usize> {
        match self {
            Self::EmbeddedSoftmax { weights, .. } => Some(weights[0].len()),
            _ => None,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::Direct2 { .. } => 2,
            Self::TabularSoftmax { logits } => logits.len() * logits[0].len(),
            Self::EmbeddedSoftmax { weights, bias } => weights.len() * weights[0].len() + bias.len(),
        }
    }

    /// Flattened parameters: `(alpha, beta)`, logits row-major, or weights
    /// row-major followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Direct2 { alpha, beta } => vec![*alpha, *beta],
            Self::TabularSoftmax { logits } => logits.iter().flatten().copied().collect(),
            Self::EmbeddedSoftmax { weights, bias } => {
                weights.iter().flatten().chain(bias).copied().collect()
            }
        }
    }

    /// Same variant and shape with new flattened parameters.
    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(dim_err("policy parameters", self.n_params(), theta.len()));
        }
        let out = match self {
            Self::Direct2 { .. } => Self::Direct2 {
                alpha: theta[0],
                beta: theta[1],
            },
            Self::TabularSoftmax { logits } => Self::TabularSoftmax {
                logits: theta.chunks(logits[0].len()).map(|c| c.to_vec()).collect(),
            },
            Self::EmbeddedSoftmax { weights, .. } => {
                let d = weights[0].len();
                let split = weights.len() * d;
                Self::EmbeddedSoftmax {
                    weights: theta[..split].chunks(d).map(|c| c.to_vec()).collect(),
                    bias: theta[split..].to_vec(),
                }
            }
        };
        out.validate()?;
        Ok(out)
    }

    fn check_state(&self, s: usize) -> Result<()> {
        let n = match self {
            Self::Direct2 { .. } => 2,
            Self::TabularSoftmax { logits } => logits.len(),
            Self::EmbeddedSoftmax { .. } => {
                return Err(Error::InvalidPolicy(
                    "embedded softmax is evaluated at observations, not state indices".into(),
                ))
            }
        };
        if s >= n {
            return Err(Error::InvalidPolicy(format!(
                "state index {s} out of range for {n} states"
            )));
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        match self.obs_dim() {
            Some(d) if d == obs.len() => Ok(()),
            Some(d) => Err(dim_err("observation", d, obs.len())),
            None => Err(Error::UnsupportedPolicy(
                "tabular policies are evaluated at state indices",
            )),
        }
    }

    fn logits_at_obs(&self, obs: &[f64]) -> Vec<f64> {
        match self {
            Self::EmbeddedSoftmax { weights, bias } => weights
                .iter()
                .zip(bias)
                .map(|(w, b)| b + w.iter().zip(obs).map(|(wi, xi)| wi * xi).sum::<f64>())
                .collect(),
            _ => unreachable!("checked by caller"),
        }
    }

    pub fn action_probs(&self, input: Input<'_>) -> Result<Vec<f64>> {
        match (self, input) {
            (Self::EmbeddedSoftmax { .. }, Input::Obs(x)) => {
                self.check_obs(x)?;
                Ok(softmax(&self.logits_at_obs(x)))
            }
            (_, Input::Obs(_)) => Err(Error::UnsupportedPolicy(
                "tabular policies are evaluated at state indices",
            )),
            (Self::Direct2 { alpha, beta }, Input::State(s)) => {
                self.check_state(s)?;
                let p = if s == 0 { *alpha } else { *beta };
                Ok(vec![p, 1.0 - p])
            }
            (Self::TabularSoftmax { logits }, Input::State(s)) => {
                self.check_state(s)?;
                Ok(softmax(&logits[s]))
            }
            (Self::EmbeddedSoftmax { .. }, Input::State(_)) => Err(Error::InvalidPolicy(
                "embedded softmax is evaluated at observations, not state indices".into(),
            )),
        }
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions() {
            return Err(Error::InvalidPolicy(format!(
                "action {a} out of range for {} actions",
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// `d/d theta log pi_theta(a | input)`, flattened like [`Self::params`].
    pub fn log_prob_grad_theta(&self, input: Input<'_>, a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        let probs = self.action_probs(input)?;
        let mut g = vec![0.0; self.n_params()];
        match (self, input) {
            (Self::Direct2 { .. }, Input::State(s)) => {
                let p = probs[0];
                g[s] = if a == 0 {
                    1.0 / p.max(LOG_FLOOR)
                } else {
                    -1.0 / (1.0 - p).max(LOG_FLOOR)
                };
            }
            (Self::TabularSoftmax { .. }, Input::State(s)) => {
                let n_a = probs.len();
                for (b, pb) in probs.iter().enumerate() {
                    g[s * n_a + b] = f64::from(u8::from(a == b)) - pb;
                }
            }
            (Self::EmbeddedSoftmax { .. }, Input::Obs(x)) => {
                let d = x.len();
                let bias_off = probs.len() * d;
                for (b, pb) in probs.iter().enumerate() {
                    let coef = f64::from(u8::from(a == b)) - pb;
                    for (j, xj) in x.iter().enumerate() {
                        g[b * d + j] = coef * xj;
                    }
                    g[bias_off + b] = coef;
                }
            }
            _ => unreachable!("action_probs rejected the input"),
        }
        Ok(g)
    }

    /// `d/d theta pi_theta(a | input)`. Equal to `pi * grad log pi` but
    /// finite at the boundary of the direct form.
    pub fn prob_grad_theta(&self, input: Input<'_>, a: usize) -> Result<Vec<f64>> {
        self.check_action(a)?;
        match (self, input) {
            (Self::Direct2 { .. }, Input::State(s)) => {
                self.check_state(s)?;
                let mut g = vec![0.0; 2];
                g[s] = if a == 0 { 1.0 } else { -1.0 };
                Ok(g)
            }
            _ => {
                let pa = self.action_probs(input)?[a];
                let mut g = self.log_prob_grad_theta(input, a)?;
                g.iter_mut().for_each(|x| *x *= pa);
                Ok(g)
            }
        }
    }

    /// `d/dx log pi(a|x) = W^T (e_a - pi(.|x))` for the embedded variant.
    pub fn log_prob_grad_obs(&self, obs: &[f64], a: usize) -> Result<Vec<f64>> {
        let Self::EmbeddedSoftmax { weights, .. } = self else {
            return Err(Error::UnsupportedPolicy("observation gradients need embedded softmax"));
        };
        self.check_action(a)?;
        let probs = self.action_probs(Input::Obs(obs))?;
        let mut g = vec![0.0; obs.len()];
        for (b, (w, pb)) in weights.iter().zip(&probs).enumerate() {
            let coef = f64::from(u8::from(a == b)) - pb;
            for (gj, wj) in g.iter_mut().zip(w) {
                *gj += coef * wj;
            }
        }
        Ok(g)
    }

    /// Exact `E_{a ~ pi(.|x)}[g_a g_a^T]` with `g_a = d/dx log pi(a|x)`.
    pub fn fisher_at_obs(&self, obs: &[f64]) -> Result<FisherAtObs> {
        let probs = self.action_probs(Input::Obs(obs))?;
        let d = obs.len();
        let mut m = DMatrix::<f64>::zeros(d, d);
        for (a, pa) in probs.iter().enumerate() {
            let g = self.log_prob_grad_obs(obs, a)?;
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += pa * g[i] * g[j];
                }
            }
        }
        Ok(FisherAtObs { matrix: m })
    }

    /// Observation at which state `s` is evaluated under `pert`.
    pub fn perturbed_obs(mdp: &TabularIsaMdp, pert: &ObsPerturbation, s: usize) -> Result<Vec<f64>> {
        let emb = mdp.embeddings().ok_or(Error::MissingEmbeddings)?;
        Ok(emb[s].iter().zip(pert.theta(s)).map(|(e, t)| e + t).collect())
    }

    /// Action distribution at state `s` of `mdp`, through embeddings when needed.
    pub fn probs_at_state(&self, mdp: &TabularIsaMdp, s: usize) -> Result<Vec<f64>> {
        if self.is_embedded() {
            let emb = mdp.embeddings().ok_or(Error::MissingEmbeddings)?;
            self.action_probs(Input::Obs(&emb[s]))
        } else {
            self.action_probs(Input::State(s))
        }
    }

    /// Row `s` is the action distribution at the (possibly perturbed) input of `s`.
    pub fn policy_matrix_under_perturbation(
        &self,
        mdp: &TabularIsaMdp,
        pert: Perturbation<'_>,
    ) -> Result<PolicyMatrix> {
        if self.n_actions() != mdp.n_actions() {
            return Err(dim_err("policy actions", mdp.n_actions(), self.n_actions()));
        }
        if let Some(d) = self.obs_dim() {
            let md = mdp.embedding_dim().ok_or(Error::MissingEmbeddings)?;
            if md != d {
                return Err(dim_err("embedding dimension", d, md));
            }
        }
        let rows = (0..mdp.n_states())
            .map(|s| match pert {
                Perturbation::None => self.probs_at_state(mdp, s),
                Perturbation::Discrete(adv) => {
                    adv.validate(mdp)?;
                    self.probs_at_state(mdp, adv.target(mdp, s))
                }
                Perturbation::Obs(p) => {
                    if !self.is_embedded() {
                        return Err(Error::UnsupportedPolicy(
                            "tabular policies accept only discrete adversaries",
                        ));
                    }
                    if p.n_states() != mdp.n_states() {
                        return Err(dim_err("perturbation states", mdp.n_states(), p.n_states()));
                    }
                    let x = Self::perturbed_obs(mdp, p, s)?;
                    self.action_probs(Input::Obs(&x))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PolicyMatrix::from_rows(rows)
    }

    pub fn policy_matrix(&self, mdp: &TabularIsaMdp) -> Result<PolicyMatrix> {
        self.policy_matrix_under_perturbation(mdp, Perturbation::None)
    }
}

impl ObsPerturbation {
    pub fn new(theta: Vec<Vec<f64>>, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidPolicy(format!("budget {eps} must be finite and >= 0")));
        }
        for t in &theta {
            let norm = linf(t);
            if !(norm <= eps) {
                return Err(Error::BudgetViolated { norm, eps });
            }
        }
        Ok(Self { theta, eps })
    }

    pub fn zeros(n_states: usize, dim: usize, eps: f64) -> Self {
        Self {
            theta: vec![vec![0.0; dim]; n_states],
            eps,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n_states(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self, s: usize) -> &[f64] {
        &self.theta[s]
    }

    pub fn all(&self) -> &[Vec<f64>] {
        &self.theta
    }

    /// Replaces `theta_s` after clamping it into the ball.
    pub fn set_clamped(&mut self, s: usize, v: &[f64]) {
        let eps = self.eps;
        for (t, x) in self.theta[s].iter_mut().zip(v) {
            *t = x.clamp(-eps, eps);
        }
    }
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl FisherAtObs {
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    /// `v^T F v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let d = v.len();
        let mut total = 0.0;
        for i in 0..d {
            for j in 0..d {
                total += v[i] * self.matrix[(i, j)] * v[j];
            }
        }
        total
    }
}

/// On-disk policy document.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum PolicyFile {
    Direct2 { alpha: f64, beta: f64 },
    TabularSoftmax { logits: Vec<Vec<f64>> },
    EmbeddedSoftmax { weights: Vec<Vec<f64>>, bias: Vec<f64> },
}

impl PolicySpec {
    /// Parses a policy document; errors carry the offending line.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: PolicyFile = toml::from_str(text).map_err(|e| textio::toml_error(text, e))?;
        let spec = match file {
            PolicyFile::Direct2 { alpha, beta } => Self::Direct2 { alpha, beta },
            PolicyFile::TabularSoftmax { logits } => Self::TabularSoftmax { logits },
            PolicyFile::EmbeddedSoftmax { weights, bias } => Self::EmbeddedSoftmax { weights, bias },
        };
        spec.validate().map_err(|e| {
            let key = match &spec {
                Self::Direct2 { .. } => "alpha",
                Self::TabularSoftmax { .. } => "logits",
                Self::EmbeddedSoftmax { .. } => "weights",
            };
            let line = text
                .lines()
                .position(|l| l.trim_start().starts_with(key))
                .map_or(1, |i| i + 1);
            Error::Parse {
                line,
                msg: e.to_string(),
            }
        })?;
        Ok(spec)
    }

    /// Serialises with shortest round-trip decimals.
    pub fn to_toml_string(&self) -> String {
        let rows = |m: &[Vec<f64>]| {
            let inner: Vec<String> = m.iter().map(|r| textio::fmt_exact_list(r)).collect();
            format!("[{}]", inner.join(", "))
        };
        let mut out = BTreeMap::new();
        match self {
            Self::Direct2 { alpha, beta } => {
                out.insert("alpha", textio::fmt_exact(*alpha));
                out.insert("beta", textio::fmt_exact(*beta));
            }
            Self::TabularSoftmax { logits } => {
                out.insert("logits", rows(logits));
            }
            Self::EmbeddedSoftmax { weights, bias } => {
                out.insert("weights", rows(weights));
                out.insert("bias", textio::fmt_exact_list(bias));
            }
        }
        let mut text = format!("variant = \"{}\"\n", self.variant_name());
        for (k, v) in out {
            text.push_str(&format!("{k} = {v}\n"));
        }
        text
    }
}

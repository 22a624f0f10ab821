//! Landscape sweeps, toy closed forms, stationarity checks, basins and attacks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, InnerSolverConfig};
use crate::error::{Error, Result};
use crate::mdp::{self, PolicyMatrix, TabularIsaMdp};
use crate::policy::{self, ObsPerturbation, Perturbation, PolicySpec};
use crate::rng;
use crate::textio::fmt_g;
use crate::trainers::{self, TrainerConfig};

pub const ROBUST_TOL: f64 = 1e-8;
pub const BOUNDARY_BAND: f64 = 0.01;
pub const FOSP_TOL_GRAD: f64 = 1e-7;
pub const KKT_MULTIPLIER_FLOOR: f64 = -1e-9;
pub const CLUSTER_RADIUS: f64 = 0.05;
pub const CUT_DISK_RADIUS: f64 = 0.02;
/// Below this `|V(mu0)|` the robustness ratio is reported as undefined.
pub const ROBUSTNESS_DENOM_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyClosedForm {
    pub v1: f64,
    pub v2: f64,
    pub dv1_dalpha: f64,
    pub dv1_dbeta: f64,
    pub dv2_dalpha: f64,
    pub dv2_dbeta: f64,
    pub p: f64,
    pub a: f64,
    pub b: f64,
}

/// Rational closed forms for the two-state toy at `gamma = 0.9`.
pub fn toy_closed_form(alpha: f64, beta: f64) -> ToyClosedForm {
    let p = (0.991 - 0.711 * beta) * (0.261 * alpha + 0.109)
        + (0.261 * alpha + 0.009) * (0.711 * beta - 0.891);
    let a = 0.1305 * alpha + (0.35 * alpha + 0.1) * (0.711 * beta - 0.991) + 0.0045;
    let b = 0.1305 * alpha + (0.35 * alpha + 0.1) * (0.711 * beta - 0.891) + 0.0545;
    let p2 = p * p;
    ToyClosedForm {
        v1: a / p,
        v2: b / p,
        dv1_dalpha: (0.24885 * beta - 0.21635) / p - 0.0261 * a / p2,
        dv1_dbeta: (0.24885 * alpha + 0.0711) / p + 0.0711 * a / p2,
        dv2_dalpha: (0.24885 * beta - 0.18135) / p - 0.0261 * b / p2,
        dv2_dbeta: (0.24885 * alpha + 0.0711) / p + 0.0711 * b / p2,
        p,
        a,
        b,
    }
}

fn direct_values(mdp: &TabularIsaMdp, alpha: f64, beta: f64) -> Result<Vec<f64>> {
    let pm = PolicySpec::direct2(alpha, beta)?.policy_matrix(mdp)?;
    Ok(mdp::solve_value(mdp, &pm)?.v)
}

fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let f_lo = f(lo)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of `f(beta, s) = V^{pi_{1,beta}}(s) - V^{pi_{0,beta}}(s)` for both
/// states of a two-state, two-action MDP; returns the `s1` root.
pub fn find_beta_tilde_on(mdp: &TabularIsaMdp) -> Result<f64> {
    if mdp.n_states() != 2 || mdp.n_actions() != 2 {
        return Err(Error::UnsupportedPolicy("the direct form needs two states and two actions"));
    }
    let f = |beta: f64, s: usize| -> Result<f64> {
        Ok(direct_values(mdp, 1.0, beta)?[s] - direct_values(mdp, 0.0, beta)?[s])
    };
    let mut roots = [0.0; 2];
    for (s, root) in roots.iter_mut().enumerate() {
        let (f0, f1) = (f(0.0, s)?, f(1.0, s)?);
        if !(f0 < 0.0 && f1 > 0.0) {
            return Err(Error::SignStructure(format!(
                "state {}: f(0) = {f0}, f(1) = {f1}; expected f(0) < 0 < f(1)",
                s + 1
            )));
        }
        *root = bisect(0.0, 1.0, 1e-12, |b| f(b, s))?;
    }
    if (roots[0] - roots[1]).abs() > 1e-6 {
        return Err(Error::SignStructure(format!(
            "state roots disagree: {} vs {}",
            roots[0], roots[1]
        )));
    }
    Ok(roots[0])
}

pub fn find_beta_tilde() -> Result<f64> {
    find_beta_tilde_on(&TabularIsaMdp::toy())
}

/// Natural and strongest-adversary values of `pi_{alpha,beta}` at `mu0`.
fn nat_and_rob(mdp: &TabularIsaMdp, alpha: f64, beta: f64) -> Result<(f64, f64, PolicyMatrix)> {
    let pm = PolicySpec::direct2(alpha, beta)?.policy_matrix(mdp)?;
    let v_nat = mdp::solve_value(mdp, &pm)?.value_at(mdp.mu0());
    let (_, sol) = mdp::strongest_adversary_exact(mdp, &pm)?;
    Ok((v_nat, sol.value_at(mdp.mu0()), pm))
}

/// True iff the strongest adversary leaves `V(mu0)` unchanged within `tol`.
pub fn classify_robust_on(mdp: &TabularIsaMdp, alpha: f64, beta: f64, tol: f64) -> Result<bool> {
    let (v_nat, v_rob, _) = nat_and_rob(mdp, alpha, beta)?;
    Ok(v_nat - v_rob <= tol)
}

pub fn classify_robust(alpha: f64, beta: f64, tol: f64) -> Result<bool> {
    classify_robust_on(&TabularIsaMdp::toy(), alpha, beta, tol)
}

/// Membership in `{alpha = beta} U {beta <= min(alpha, beta_tilde)}`.
pub fn in_robust_set(alpha: f64, beta: f64, beta_tilde: f64) -> bool {
    alpha == beta || beta <= alpha.min(beta_tilde)
}

/// Distance from `(alpha, beta)` to the boundary of the closed-form robust set:
/// the diagonal plus the segment `beta = beta_tilde, alpha in [beta_tilde, 1]`.
pub fn robust_boundary_distance(alpha: f64, beta: f64, beta_tilde: f64) -> f64 {
    let diag = (alpha - beta).abs() / std::f64::consts::SQRT_2;
    let ax = alpha.clamp(beta_tilde, 1.0);
    let seg = (alpha - ax).hypot(beta - beta_tilde);
    diag.min(seg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Spo,
    Arpo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FospReport {
    pub is_fosp: bool,
    pub gradient: [f64; 2],
    pub active_constraints: Vec<&'static str>,
    /// One multiplier per active constraint, same order.
    pub kkt_multipliers: Vec<f64>,
    /// Norm of the stationarity residual at the best multipliers.
    pub residual: f64,
}

/// Constraint `c(x) = n . x + offset >= 0`.
struct Constraint {
    name: &'static str,
    normal: [f64; 2],
    offset: f64,
}

impl Constraint {
    fn value(&self, x: [f64; 2]) -> f64 {
        self.normal[0] * x[0] + self.normal[1] * x[1] + self.offset
    }
}

fn box_constraints() -> Vec<Constraint> {
    vec![
        Constraint { name: "alpha >= 0", normal: [1.0, 0.0], offset: 0.0 },
        Constraint { name: "alpha <= 1", normal: [-1.0, 0.0], offset: 1.0 },
        Constraint { name: "beta >= 0", normal: [0.0, 1.0], offset: 0.0 },
        Constraint { name: "beta <= 1", normal: [0.0, -1.0], offset: 1.0 },
    ]
}

fn arpo_constraints(beta_tilde: f64) -> Vec<Constraint> {
    vec![
        Constraint { name: "alpha >= beta", normal: [1.0, -1.0], offset: 0.0 },
        Constraint { name: "beta >= 0", normal: [0.0, 1.0], offset: 0.0 },
        Constraint { name: "beta <= beta_tilde", normal: [0.0, -1.0], offset: beta_tilde },
        Constraint { name: "alpha <= 1", normal: [-1.0, 0.0], offset: 1.0 },
    ]
}

/// KKT check for `max f` subject to `c_i >= 0`: find `lambda >= 0` on the
/// active set with `g + sum lambda_i n_i = 0`, enumerating active subsets.
fn kkt_check(g: [f64; 2], x: [f64; 2], constraints: &[Constraint], tol_grad: f64) -> FospReport {
    let active_tol = 1e-9;
    if constraints.iter().any(|c| c.value(x) < -active_tol) {
        return FospReport {
            is_fosp: false,
            gradient: g,
            active_constraints: Vec::new(),
            kkt_multipliers: Vec::new(),
            residual: f64::INFINITY,
        };
    }
    let active: Vec<&Constraint> = constraints.iter().filter(|c| c.value(x).abs() <= active_tol).collect();
    let m = active.len();
    let gv = DVector::from_column_slice(&g);
    let mut best = (gv.norm(), vec![0.0; m]);
    for mask in 1u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let n = DMatrix::from_fn(2, idx.len(), |r, c| active[idx[c]].normal[r]);
        let Ok(lam) = n.clone().svd(true, true).solve(&(-&gv), 1e-14) else {
            continue;
        };
        if lam.iter().any(|&l| l < KKT_MULTIPLIER_FLOOR) {
            continue;
        }
        let residual = (&gv + &n * &lam).norm();
        if residual < best.0 {
            let mut full = vec![0.0; m];
            for (k, &i) in idx.iter().enumerate() {
                full[i] = lam[k];
            }
            best = (residual, full);
        }
    }
    FospReport {
        is_fosp: best.0 <= tol_grad,
        gradient: g,
        active_constraints: active.iter().map(|c| c.name).collect(),
        kkt_multipliers: best.1,
        residual: best.0,
    }
}

fn objective_gradient(mdp: &TabularIsaMdp, alpha: f64, beta: f64, objective: Objective) -> Result<[f64; 2]> {
    let policy = PolicySpec::direct2(alpha, beta)?;
    let g = match objective {
        Objective::Spo => trainers::exact_policy_gradient(mdp, &policy, Perturbation::None, mdp.mu0())?,
        Objective::Arpo => {
            let (adv, _) = mdp::strongest_adversary_exact(mdp, &policy.policy_matrix(mdp)?)?;
            trainers::exact_policy_gradient(mdp, &policy, Perturbation::Discrete(&adv), mdp.mu0())?
        }
    };
    Ok([g[0], g[1]])
}

/// First-order stationarity of `objective` at `(alpha, beta)`: the plain box
/// for SPO, the robust-region program for ARPO.
pub fn detect_fosp_on(
    mdp: &TabularIsaMdp,
    point: (f64, f64),
    objective: Objective,
    tol_grad: f64,
    beta_tilde: f64,
) -> Result<FospReport> {
    let (alpha, beta) = point;
    let g = objective_gradient(mdp, alpha, beta, objective)?;
    let constraints = match objective {
        Objective::Spo => box_constraints(),
        Objective::Arpo => arpo_constraints(beta_tilde),
    };
    Ok(kkt_check(g, [alpha, beta], &constraints, tol_grad))
}

pub fn detect_fosp(point: (f64, f64), objective: Objective, tol_grad: f64) -> Result<FospReport> {
    let mdp = TabularIsaMdp::toy();
    let bt = find_beta_tilde_on(&mdp)?;
    detect_fosp_on(&mdp, point, objective, tol_grad, bt)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeCell {
    pub alpha: f64,
    pub beta: f64,
    pub v_nat: f64,
    pub v_rob: f64,
    pub robust: bool,
    pub grad_nat: [f64; 2],
    pub grad_rob: [f64; 2],
    pub fosp_spo: Option<bool>,
    pub fosp_arpo: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeGrid {
    pub resolution: usize,
    pub beta_tilde: f64,
    /// Alpha-major: cell `i * resolution + j` has `alpha = i/(n-1)`, `beta = j/(n-1)`.
    pub cells: Vec<LandscapeCell>,
}

pub const LANDSCAPE_CSV_HEADER: &str = "alpha,beta,v_nat,v_rob,robust,fosp_spo,fosp_arpo";

fn fmt_flag(x: Option<bool>) -> String {
    x.map(|b| b.to_string()).unwrap_or_default()
}

impl LandscapeGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LANDSCAPE_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_g(c.alpha),
                fmt_g(c.beta),
                fmt_g(c.v_nat),
                fmt_g(c.v_rob),
                c.robust,
                fmt_flag(c.fosp_spo),
                fmt_flag(c.fosp_arpo)
            ));
        }
        out
    }

    /// Cells outside the boundary band whose robust flag disagrees with the closed form.
    pub fn closed_form_disagreements(&self, band: f64) -> (usize, usize) {
        let mut checked = 0;
        let mut wrong = 0;
        for c in &self.cells {
            if robust_boundary_distance(c.alpha, c.beta, self.beta_tilde) <= band {
                continue;
            }
            checked += 1;
            if c.robust != in_robust_set(c.alpha, c.beta, self.beta_tilde) {
                wrong += 1;
            }
        }
        (wrong, checked)
    }

    pub fn max_rob_minus_nat(&self) -> f64 {
        self.cells.iter().map(|c| c.v_rob - c.v_nat).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn sweep_landscape_on(mdp: &TabularIsaMdp, resolution: usize, objectives: &[Objective]) -> Result<LandscapeGrid> {
    if resolution < 2 {
        return Err(Error::Config(format!("resolution = {resolution} must be >= 2")));
    }
    let beta_tilde = find_beta_tilde_on(mdp)?;
    let step = 1.0 / (resolution - 1) as f64;
    let want_spo = objectives.contains(&Objective::Spo);
    let want_arpo = objectives.contains(&Objective::Arpo);
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let alpha = (idx / resolution) as f64 * step;
            let beta = (idx % resolution) as f64 * step;
            let (v_nat, v_rob, _) = nat_and_rob(mdp, alpha, beta)?;
            let grad_nat = objective_gradient(mdp, alpha, beta, Objective::Spo)?;
            let grad_rob = objective_gradient(mdp, alpha, beta, Objective::Arpo)?;
            let fosp_spo = want_spo.then(|| kkt_check(grad_nat, [alpha, beta], &box_constraints(), FOSP_TOL_GRAD).is_fosp);
            let fosp_arpo = want_arpo
                .then(|| kkt_check(grad_rob, [alpha, beta], &arpo_constraints(beta_tilde), FOSP_TOL_GRAD).is_fosp);
            Ok(LandscapeCell {
                alpha,
                beta,
                v_nat,
                v_rob,
                robust: v_nat - v_rob <= ROBUST_TOL,
                grad_nat,
                grad_rob,
                fosp_spo,
                fosp_arpo,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        resolution,
        beta_tilde,
        cells,
    })
}

pub fn sweep_landscape(resolution: usize, objectives: &[Objective]) -> Result<LandscapeGrid> {
    sweep_landscape_on(&TabularIsaMdp::toy(), resolution, objectives)
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitDistribution {
    /// Independent uniform `alpha, beta` on `[0, 1]`.
    UniformBox,
    Fixed(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub id: usize,
    pub alpha: f64,
    pub beta: f64,
    pub count: usize,
    pub fraction: f64,
    pub v_nat: f64,
    pub v_rob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinReport {
    pub inits: Vec<(f64, f64)>,
    pub terminals: Vec<(f64, f64)>,
    /// Sorted by decreasing count, then by first appearance.
    pub clusters: Vec<Cluster>,
}

pub const BASIN_CSV_HEADER: &str = "cluster_id,alpha,beta,fraction,v_nat,v_rob";

impl BasinReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(BASIN_CSV_HEADER);
        out.push('\n');
        for c in &self.clusters {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.id,
                fmt_g(c.alpha),
                fmt_g(c.beta),
                fmt_g(c.fraction),
                fmt_g(c.v_nat),
                fmt_g(c.v_rob)
            ));
        }
        out
    }

    /// Fraction of terminal points within `radius` of `point`.
    pub fn fraction_near(&self, point: (f64, f64), radius: f64) -> f64 {
        let n = self
            .terminals
            .iter()
            .filter(|t| (t.0 - point.0).hypot(t.1 - point.1) <= radius)
            .count();
        n as f64 / self.terminals.len() as f64
    }

    /// The cluster with the lowest natural value.
    pub fn lowest_value_cluster(&self) -> &Cluster {
        self.clusters
            .iter()
            .min_by(|a, b| a.v_nat.total_cmp(&b.v_nat))
            .expect("at least one cluster")
    }
}

fn sample_inits(dist: &InitDistribution, n: usize, seed: u64) -> Vec<(f64, f64)> {
    match dist {
        InitDistribution::UniformBox => (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, &[0xba5e, i as u64]);
                (r.random::<f64>(), r.random::<f64>())
            })
            .collect(),
        InitDistribution::Fixed(points) => points.iter().copied().cycle().take(n).collect(),
    }
}

/// Runs the trainer from `n_inits` direct-form initialisations and clusters
/// the terminal points greedily (in init order) by Euclidean `radius`.
pub fn basin_statistics(
    mdp: &TabularIsaMdp,
    config: &TrainerConfig,
    n_inits: usize,
    init: &InitDistribution,
    radius: f64,
    seed: u64,
) -> Result<BasinReport> {
    if n_inits == 0 {
        return Err(Error::Config("n_inits must be >= 1".into()));
    }
    let inits = sample_inits(init, n_inits, seed);
    let terminals = inits
        .par_iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut cfg = config.clone();
            cfg.seed = rng::mix(seed, &[i as u64]);
            let trace = trainers::train(mdp, &PolicySpec::direct2(a, b)?, &cfg)?;
            let p = &trace.last().params;
            Ok((p[0], p[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut reps: Vec<(f64, f64)> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, t) in terminals.iter().enumerate() {
        match reps.iter().position(|r| (r.0 - t.0).hypot(r.1 - t.1) <= radius) {
            Some(k) => members[k].push(i),
            None => {
                reps.push(*t);
                members.push(vec![i]);
            }
        }
    }
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(members[k].len()));
    let clusters = order
        .iter()
        .enumerate()
        .map(|(id, &k)| {
            let m = &members[k];
            let alpha = m.iter().map(|&i| terminals[i].0).sum::<f64>() / m.len() as f64;
            let beta = m.iter().map(|&i| terminals[i].1).sum::<f64>() / m.len() as f64;
            let (v_nat, v_rob, _) = nat_and_rob(mdp, alpha, beta)?;
            Ok(Cluster {
                id,
                alpha,
                beta,
                count: m.len(),
                fraction: m.len() as f64 / n_inits as f64,
                v_nat,
                v_rob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasinReport {
        inits,
        terminals,
        clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueGapReport {
    pub v_spo: f64,
    pub v_arpo: f64,
    pub v_worst: f64,
    pub gap_spo: f64,
    pub gap_arpo: f64,
    pub inequality_holds: bool,
}

/// Gaps of `pi_{1,1}` and `pi_{0,0}` above the worst policy `pi_{1,0}` at `mu0`.
pub fn value_gap_check_on(mdp: &TabularIsaMdp) -> Result<ValueGapReport> {
    let v = |a, b| -> Result<f64> { Ok(mdp.expectation(mdp.mu0(), &direct_values(mdp, a, b)?)) };
    let (v_spo, v_arpo, v_worst) = (v(1.0, 1.0)?, v(0.0, 0.0)?, v(1.0, 0.0)?);
    let gap_spo = v_spo - v_worst;
    let gap_arpo = v_arpo - v_worst;
    Ok(ValueGapReport {
        v_spo,
        v_arpo,
        v_worst,
        gap_spo,
        gap_arpo,
        inequality_holds: gap_arpo < 0.5 * gap_spo,
    })
}

pub fn value_gap_check() -> Result<ValueGapReport> {
    value_gap_check_on(&TabularIsaMdp::toy())
}

/// `V^{pi_{1,1}} > V^{pi_{0,1}} > V^{pi_{0,0}} > V^{pi_{1,0}}` at both states.
pub fn value_ordering_check_on(mdp: &TabularIsaMdp) -> Result<bool> {
    let chain = [(1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]
        .iter()
        .map(|&(a, b)| direct_values(mdp, a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(chain
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(hi, lo)| hi > lo)))
}

/// Whether the robust set splits into the upper diagonal and the lower region
/// on a `(n + 1) x (n + 1)` grid under 8-connectivity, optionally after
/// removing the disk of radius [`CUT_DISK_RADIUS`] around `(beta_tilde, beta_tilde)`.
pub fn cut_point_check_on(mdp: &TabularIsaMdp, path_resolution: usize, remove_disk: bool) -> Result<bool> {
    if path_resolution < 100 {
        return Err(Error::Config(format!("path_resolution = {path_resolution} must be >= 100")));
    }
    let bt = find_beta_tilde_on(mdp)?;
    let n = path_resolution + 1;
    let h = 1.0 / path_resolution as f64;
    let mut open = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            classify_robust_on(mdp, i as f64 * h, j as f64 * h, ROBUST_TOL)
        })
        .collect::<Result<Vec<bool>>>()?;
    if remove_disk {
        for idx in 0..n * n {
            let (a, b) = ((idx / n) as f64 * h, (idx % n) as f64 * h);
            if (a - bt).hypot(b - bt) <= CUT_DISK_RADIUS {
                open[idx] = false;
            }
        }
    }
    // Seeds: (1, 1) on the upper diagonal and (1, 0) in the lower region.
    let upper = (n - 1) * n + (n - 1);
    let lower = (n - 1) * n;
    if !open[upper] || !open[lower] {
        return Ok(false);
    }
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([upper]);
    seen[upper] = true;
    while let Some(idx) = queue.pop_front() {
        let (i, j) = ((idx / n) as isize, (idx % n) as isize);
        for di in -1..=1 {
            for dj in -1..=1 {
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni >= n as isize || nj >= n as isize {
                    continue;
                }
                let k = ni as usize * n + nj as usize;
                if open[k] && !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
    }
    Ok(!seen[lower])
}

pub fn cut_point_check(path_resolution: usize) -> Result<bool> {
    cut_point_check_on(&TabularIsaMdp::toy(), path_resolution, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Random,
    Critic,
    Mad,
    ExactStrongest,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [Self::Random, Self::Critic, Self::Mad, Self::ExactStrongest];

    pub fn name(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Critic => "critic",
            Self::Mad => "mad",
            Self::ExactStrongest => "exact_strongest",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownAttack(name.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackRecord {
    pub name: String,
    #[serde(rename = "return")]
    pub value: f64,
    /// `None` when `|V(mu0)|` is below [`ROBUSTNESS_DENOM_FLOOR`].
    pub robustness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub natural: f64,
    pub records: Vec<AttackRecord>,
}

pub const ATTACK_CSV_HEADER: &str = "attack,return,robustness";
pub const UNDEFINED: &str = "undefined";

impl AttackReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ATTACK_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.name,
                fmt_g(r.value),
                r.robustness.map(fmt_g).unwrap_or_else(|| UNDEFINED.into())
            ));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&AttackRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

pub fn robustness(v_attacked: f64, v_nat: f64) -> Option<f64> {
    // `+ 0.0` folds a negative zero into zero.
    (v_nat.abs() >= ROBUSTNESS_DENOM_FLOOR).then(|| (v_attacked - v_nat) / v_nat + 0.0)
}

/// Per-state candidate action distributions; index 0 is always the clean one.
type Candidates = Vec<Vec<Vec<f64>>>;

fn choice_matrix(cands: &Candidates, choice: &[usize]) -> Result<PolicyMatrix> {
    PolicyMatrix::from_rows(choice.iter().enumerate().map(|(s, &c)| cands[s][c].clone()).collect())
}

/// Exact minimum of `V(mu0)` over per-state choices among `cands`, by policy
/// iteration from the clean choice.
fn min_over_candidates(mdp: &TabularIsaMdp, cands: &Candidates) -> Result<(Vec<usize>, f64)> {
    let mut choice = vec![0usize; mdp.n_states()];
    let mut sol = mdp::solve_value(mdp, &choice_matrix(cands, &choice)?)?;
    for _ in 0..10_000 {
        let mut changed = false;
        for s in 0..mdp.n_states() {
            let score = |p: &[f64]| p.iter().enumerate().map(|(a, pa)| pa * sol.q(s, a)).sum::<f64>();
            let current = score(&cands[s][choice[s]]);
            let (best, val) = cands[s]
                .iter()
                .enumerate()
                .map(|(k, p)| (k, score(p)))
                .fold((choice[s], current), |acc, x| if x.1 < acc.1 { x } else { acc });
            if val < current - 1e-12 * (1.0 + current.abs()) {
                choice[s] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        sol = mdp::solve_value(mdp, &choice_matrix(cands, &choice)?)?;
    }
    Ok((choice, sol.value_at(mdp.mu0())))
}

fn box_corners(d: usize, eps: f64) -> Vec<Vec<f64>> {
    let d = d.min(12);
    (0..1usize << d)
        .map(|m| (0..d).map(|i| if m & (1 << i) != 0 { eps } else { -eps }).collect())
        .collect()
}

/// Evaluates each attack within `budget` (the ball radius for embedded
/// policies; any positive budget unlocks the perturbation sets for tabular
/// ones). An attack whose perturbation raises the value falls back to the
/// clean observation, which is always admissible.
pub fn attack_eval(
    mdp: &TabularIsaMdp,
    policy: &PolicySpec,
    attacks: &[AttackKind],
    budget: f64,
    seed: u64,
) -> Result<AttackReport> {
    if !(budget >= 0.0) {
        return Err(Error::Config(format!("attack budget = {budget} must be >= 0")));
    }
    let pm = policy.policy_matrix(mdp)?;
    let sol = mdp::solve_value(mdp, &pm)?;
    let natural = sol.value_at(mdp.mu0());
    let n = mdp.n_states();
    // Per-attack per-state action distributions.
    let mut chosen: Vec<(AttackKind, Vec<Vec<f64>>)> = Vec::new();
    let critic_score = |s: usize, p: &[f64]| p.iter().enumerate().map(|(a, pa)| pa * sol.q(s, a)).sum::<f64>();
    let mut base: Candidates = (0..n).map(|s| vec![pm.row(s).to_vec()]).collect();
    if policy.is_embedded() {
        let emb = mdp.embeddings().ok_or(Error::MissingEmbeddings)?;
        let d = emb[0].len();
        let probs_at = |s: usize, theta: &[f64]| -> Result<Vec<f64>> {
            let x: Vec<f64> = emb[s].iter().zip(theta).map(|(a, b)| a + b).collect();
            policy.action_probs(policy::Input::Obs(&x))
        };
        let corners = if budget > 0.0 { box_corners(d, budget) } else { Vec::new() };
        for &kind in attacks {
            let rows = match kind {
                AttackKind::Random => (0..n)
                    .map(|s| {
                        let mut r = rng::stream(seed, &[0xa7, s as u64]);
                        let theta: Vec<f64> = (0..d).map(|_| budget * (2.0 * r.random::<f64>() - 1.0)).collect();
                        probs_at(s, &theta)
                    })
                    .collect::<Result<Vec<_>>>()?,
                AttackKind::Critic => (0..n)
                    .map(|s| {
                        let mut best = pm.row(s).to_vec();
                        for c in &corners {
                            let p = probs_at(s, c)?;
                            if critic_score(s, &p) < critic_score(s, &best) {
                                best = p;
                            }
                        }
                        Ok(best)
                    })
                    .collect::<Result<Vec<_>>>()?,
                AttackKind::Mad => (0..n)
                    .map(|s| {
                        let cfg = InnerSolverConfig::defaults(budget).with_seed(rng::mix(seed, &[0x3ad, s as u64]));
                        let r = adversary::kl_inner(policy, &emb[s], &cfg)?;
                        probs_at(s, &r.theta)
                    })
                    .collect::<Result<Vec<_>>>()?,
                AttackKind::ExactStrongest => continue,
            };
            for (s, p) in rows.iter().enumerate() {
                base[s].push(p.clone());
            }
            chosen.push((kind, rows));
        }
        for s in 0..n {
            for c in &corners {
                base[s].push(probs_at(s, c)?);
            }
        }
    } else {
        let sets_on = budget > 0.0;
        for &kind in attacks {
            let targets: Vec<usize> = match kind {
                _ if !sets_on => (0..n).collect(),
                AttackKind::Random => (0..n)
                    .map(|s| {
                        let set = mdp.perturb_set(s);
                        set[rng::stream(seed, &[0xa7, s as u64]).random_range(0..set.len())]
                    })
                    .collect(),
                AttackKind::Critic => (0..n)
                    .map(|s| {
                        *mdp.perturb_set(s)
                            .iter()
                            .min_by(|&&x, &&y| critic_score(s, pm.row(x)).total_cmp(&critic_score(s, pm.row(y))))
                            .expect("non-empty perturbation set")
                    })
                    .collect(),
                AttackKind::Mad => (0..n)
                    .map(|s| {
                        let mut best = (s, 0.0);
                        for &t in mdp.perturb_set(s) {
                            let k = policy::kl(pm.row(s), pm.row(t)).unwrap_or(f64::INFINITY);
                            if k > best.1 {
                                best = (t, k);
                            }
                        }
                        best.0
                    })
                    .collect(),
                AttackKind::ExactStrongest => continue,
            };
            chosen.push((kind, targets.iter().map(|&t| pm.row(t).to_vec()).collect()));
        }
    }
    let mut records = Vec::with_capacity(attacks.len());
    for &kind in attacks {
        let value = if kind == AttackKind::ExactStrongest {
            if budget == 0.0 {
                natural
            } else if policy.is_embedded() {
                min_over_candidates(mdp, &base)?.1
            } else {
                mdp::strongest_adversary_exact(mdp, &pm)?.1.value_at(mdp.mu0())
            }
        } else {
            let rows = &chosen.iter().find(|(k, _)| *k == kind).expect("computed above").1;
            mdp::solve_value(mdp, &PolicyMatrix::from_rows(rows.clone())?)?.value_at(mdp.mu0())
        };
        let value = value.min(natural);
        records.push(AttackRecord {
            name: kind.name().into(),
            value,
            robustness: robustness(value, natural),
        });
    }
    Ok(AttackReport { natural, records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianReport {
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// Symmetrised central-difference Hessian of `f` at `point`. With `bounds`,
/// every coordinate must lie at least `2 * step` inside `[lo, hi]`.
pub fn hessian_fd(
    f: impl Fn(&[f64]) -> Result<f64>,
    point: &[f64],
    step: f64,
    bounds: Option<(f64, f64)>,
) -> Result<HessianReport> {
    if let Some((lo, hi)) = bounds {
        let min_distance = point
            .iter()
            .map(|x| (x - lo).min(hi - x))
            .fold(f64::INFINITY, f64::min);
        if min_distance < 2.0 * step {
            return Err(Error::BoundaryProximity {
                point: point.to_vec(),
                min_distance,
            });
        }
    }
    let n = point.len();
    let eval = |di: usize, si: f64, dj: usize, sj: f64| -> Result<f64> {
        let mut x = point.to_vec();
        x[di] += si * step;
        x[dj] += sj * step;
        f(&x)
    };
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = (eval(i, 1.0, j, 1.0)? - eval(i, 1.0, j, -1.0)? - eval(i, -1.0, j, 1.0)?
                + eval(i, -1.0, j, -1.0)?)
                / (4.0 * step * step);
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    Ok(HessianReport {
        matrix: (0..n).map(|i| (0..n).map(|j| sym[(i, j)]).collect()).collect(),
        eigenvalues,
    })
}

/// `V(mu0)` of the direct-form policy as an objective over `(alpha, beta)`.
pub fn spo_objective(mdp: &TabularIsaMdp) -> impl Fn(&[f64]) -> Result<f64> + '_ {
    move |x: &[f64]| {
        let pm = PolicySpec::direct2(x[0], x[1])?.policy_matrix(mdp)?;
        Ok(mdp::solve_value(mdp, &pm)?.value_at(mdp.mu0()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub init: usize,
    pub v_nat_a: f64,
    pub v_nat_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<PairedRow>,
    pub median_a: f64,
    pub median_b: f64,
    /// Inits where `b` finished strictly above `a`.
    pub b_wins: usize,
}

impl PairedReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("init,v_nat_{},v_nat_{}\n", self.label_a, self.label_b);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.init, fmt_g(r.v_nat_a), fmt_g(r.v_nat_b)));
        }
        out.push_str(&format!("median,{},{}\n", fmt_g(self.median_a), fmt_g(self.median_b)));
        out
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Embedded-softmax parameters drawn uniformly from `[-scale, scale]`.
pub fn random_embedded_policy(n_actions: usize, dim: usize, scale: f64, seed: u64, id: u64) -> PolicySpec {
    let mut r = rng::stream(seed, &[0x1a17, id]);
    let mut u = || scale * (2.0 * r.random::<f64>() - 1.0);
    let weights = (0..n_actions).map(|_| (0..dim).map(|_| u()).collect()).collect();
    let bias = (0..n_actions).map(|_| u()).collect();
    PolicySpec::EmbeddedSoftmax { weights, bias }
}

/// Trains `a` and `b` from the same random embedded init (and the same
/// per-init seed) and compares final natural values.
pub fn paired_comparison(
    mdp: &TabularIsaMdp,
    config_a: &TrainerConfig,
    config_b: &TrainerConfig,
    n_inits: usize,
    init_scale: f64,
    seed: u64,
) -> Result<PairedReport> {
    let dim = mdp.embedding_dim().ok_or(Error::MissingEmbeddings)?;
    let rows = (0..n_inits)
        .into_par_iter()
        .map(|i| {
            let p0 = random_embedded_policy(mdp.n_actions(), dim, init_scale, seed, i as u64);
            let s = rng::mix(seed, &[i as u64]);
            let (mut ca, mut cb) = (config_a.clone(), config_b.clone());
            ca.seed = s;
            cb.seed = s;
            Ok(PairedRow {
                init: i,
                v_nat_a: trainers::train(mdp, &p0, &ca)?.last().v_nat,
                v_nat_b: trainers::train(mdp, &p0, &cb)?.last().v_nat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let a: Vec<f64> = rows.iter().map(|r| r.v_nat_a).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.v_nat_b).collect();
    Ok(PairedReport {
        label_a: format!("{:?}", config_a.paradigm).to_lowercase(),
        label_b: format!("{:?}", config_b.paradigm).to_lowercase(),
        b_wins: rows.iter().filter(|r| r.v_nat_b > r.v_nat_a).count(),
        median_a: median(&a),
        median_b: median(&b),
        rows,
    })
}

/// Zero perturbation at every state, for callers that need a clean baseline.
pub fn zero_perturbation(mdp: &TabularIsaMdp, eps: f64) -> Result<ObsPerturbation> {
    let d = mdp.embedding_dim().ok_or(Error::MissingEmbeddings)?;
    Ok(ObsPerturbation::zeros(mdp.n_states(), d, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainers::Paradigm;
    use proptest::prelude::*;

    #[test]
    fn closed_form_matches_reference_points() {
        let c = toy_closed_form(1.0, 1.0);
        assert!((c.v1 - 0.16).abs() < 0.01 && (c.v2 - 1.89).abs() < 0.01, "{c:?}");
        let c = toy_closed_form(0.0, 0.0);
        assert!((c.v1 + 0.95).abs() < 0.01 && (c.v2 + 0.35).abs() < 0.01, "{c:?}");
    }

    proptest! {
        #[test]
        fn closed_form_agrees_with_solver(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let mdp = TabularIsaMdp::toy();
            let c = toy_closed_form(a, b);
            let v = direct_values(&mdp, a, b).unwrap();
            prop_assert!((c.v1 - v[0]).abs() < 1e-9 && (c.v2 - v[1]).abs() < 1e-9);
            let h = 1e-6;
            let (a0, a1) = ((a - h).max(0.0), (a + h).min(1.0));
            let (b0, b1) = ((b - h).max(0.0), (b + h).min(1.0));
            let da: Vec<f64> = (0..2).map(|s| (direct_values(&mdp, a1, b).unwrap()[s] - direct_values(&mdp, a0, b).unwrap()[s]) / (a1 - a0)).collect();
            let db: Vec<f64> = (0..2).map(|s| (direct_values(&mdp, a, b1).unwrap()[s] - direct_values(&mdp, a, b0).unwrap()[s]) / (b1 - b0)).collect();
            prop_assert!((c.dv1_dalpha - da[0]).abs() < 1e-6);
            prop_assert!((c.dv2_dalpha - da[1]).abs() < 1e-6);
            prop_assert!((c.dv1_dbeta - db[0]).abs() < 1e-6);
            prop_assert!((c.dv2_dbeta - db[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn beta_tilde_threshold() {
        let bt = find_beta_tilde().unwrap();
        assert!((0.776..=0.778).contains(&bt), "{bt}");
    }

    #[test]
    fn beta_tilde_rejects_other_discount() {
        let mdp = TabularIsaMdp::toy_with_gamma(0.5).unwrap();
        match find_beta_tilde_on(&mdp) {
            Ok(bt) => assert!(!(0.776..=0.778).contains(&bt)),
            Err(e) => assert!(matches!(e, Error::SignStructure(_))),
        }
    }

    #[test]
    fn robust_classification_examples() {
        assert!(classify_robust(0.5, 0.5, ROBUST_TOL).unwrap());
        assert!(classify_robust(0.9, 0.5, ROBUST_TOL).unwrap());
        assert!(!classify_robust(0.2, 0.9, ROBUST_TOL).unwrap());
        let mdp = TabularIsaMdp::toy();
        let pm = PolicySpec::direct2(0.2, 0.9).unwrap().policy_matrix(&mdp).unwrap();
        let nat = mdp::solve_value(&mdp, &pm).unwrap().value_at(mdp.mu0());
        let (_, bf) = mdp::brute_force_strongest(&mdp, &pm).unwrap();
        assert!(bf.value_at(mdp.mu0()) < nat - 1e-6);
    }

    #[test]
    fn kkt_facts() {
        assert!(detect_fosp((0.0, 0.0), Objective::Arpo, FOSP_TOL_GRAD).unwrap().is_fosp);
        assert!(!detect_fosp((0.0, 0.0), Objective::Spo, FOSP_TOL_GRAD).unwrap().is_fosp);
        let r = detect_fosp((1.0, 1.0), Objective::Spo, FOSP_TOL_GRAD).unwrap();
        assert!(r.is_fosp);
        assert_eq!(r.active_constraints, vec!["alpha <= 1", "beta <= 1"]);
        assert!(r.kkt_multipliers.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn small_sweep_invariants() {
        let g = sweep_landscape(21, &[Objective::Spo, Objective::Arpo]).unwrap();
        assert!(g.max_rob_minus_nat() <= 1e-9);
        assert_eq!(g.closed_form_disagreements(BOUNDARY_BAND).0, 0);
        let best = g.cells.iter().max_by(|a, b| a.v_nat.total_cmp(&b.v_nat)).unwrap();
        assert_eq!((best.alpha, best.beta), (1.0, 1.0));
        assert!(sweep_landscape(1, &[]).is_err());
    }

    #[test]
    fn boundary_distance_examples() {
        let bt = 0.777;
        assert_eq!(robust_boundary_distance(0.5, 0.5, bt), 0.0);
        assert!((robust_boundary_distance(0.6, 0.1, bt) - 0.5 / 2f64.sqrt()).abs() < 1e-12);
        assert!((robust_boundary_distance(0.95, 0.8, bt) - 0.023).abs() < 1e-9);
    }

    #[test]
    fn value_gaps() {
        let r = value_gap_check().unwrap();
        assert!((r.gap_spo - 3.12).abs() < 0.02, "{r:?}");
        assert!((r.gap_arpo - 1.44).abs() < 0.02, "{r:?}");
        assert!(r.inequality_holds);
        assert!(value_ordering_check_on(&TabularIsaMdp::toy()).unwrap());
    }

    #[test]
    fn cut_point() {
        let mdp = TabularIsaMdp::toy();
        assert!(cut_point_check(100).unwrap());
        assert!(!cut_point_check_on(&mdp, 100, false).unwrap());
        let single = mdp.with_singleton_perturb_sets();
        assert!(!cut_point_check_on(&single, 100, true).unwrap());
        assert!(cut_point_check(10).is_err());
    }

    #[test]
    fn basin_trivial_single_point() {
        let mdp = TabularIsaMdp::toy();
        let mut cfg = TrainerConfig::new(Paradigm::Spo);
        cfg.outer_steps = 1;
        cfg.step_size = 0.0;
        let r = basin_statistics(&mdp, &cfg, 1, &InitDistribution::Fixed(vec![(1.0, 1.0)]), CLUSTER_RADIUS, 0).unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!((r.clusters[0].alpha, r.clusters[0].beta, r.clusters[0].fraction), (1.0, 1.0, 1.0));
    }

    #[test]
    fn attacks_at_zero_budget_are_no_ops() {
        let mdp = TabularIsaMdp::toy();
        let policies = [
            PolicySpec::direct2(1.0, 1.0).unwrap(),
            PolicySpec::embedded(vec![vec![0.5, -0.5], vec![-0.2, 0.4]], vec![0.0, 0.0]).unwrap(),
        ];
        for p in &policies {
            let r = attack_eval(&mdp, p, &AttackKind::ALL, 0.0, 3).unwrap();
            for rec in &r.records {
                assert_eq!(rec.value, r.natural, "{}", rec.name);
                assert_eq!(rec.robustness, Some(0.0));
            }
        }
    }

    #[test]
    fn exact_strongest_is_the_minimum_attack() {
        let mdp = TabularIsaMdp::toy();
        let policies = [
            PolicySpec::direct2(1.0, 1.0).unwrap(),
            PolicySpec::direct2(0.3, 0.8).unwrap(),
            PolicySpec::embedded(vec![vec![0.5, -0.5], vec![-0.2, 0.4]], vec![0.0, 0.0]).unwrap(),
            PolicySpec::embedded(vec![vec![-1.0, 2.0], vec![0.7, 0.1]], vec![0.3, 0.0]).unwrap(),
        ];
        for p in &policies {
            let r = attack_eval(&mdp, p, &AttackKind::ALL, 0.5, 11).unwrap();
            let strongest = r.get("exact_strongest").unwrap().value;
            for rec in &r.records {
                assert!(strongest <= rec.value + 1e-12, "{p:?}: {r:?}");
                assert!(rec.value <= r.natural + 1e-9);
            }
        }
        let pm = policies[0].policy_matrix(&mdp).unwrap();
        let (_, bf) = mdp::brute_force_strongest(&mdp, &pm).unwrap();
        let r = attack_eval(&mdp, &policies[0], &[AttackKind::ExactStrongest], 1.0, 0).unwrap();
        let expected = robustness(bf.value_at(mdp.mu0()), r.natural).unwrap();
        assert!((r.records[0].robustness.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn robustness_sentinel_near_zero_value() {
        assert_eq!(robustness(-1.0, 1e-12), None);
        assert_eq!(robustness(0.5, 1.0), Some(-0.5));
        assert!(matches!(AttackKind::parse("fgsm"), Err(Error::UnknownAttack(_))));
        assert_eq!(AttackKind::parse("mad").unwrap(), AttackKind::Mad);
    }

    #[test]
    fn hessian_of_quadratic_and_constant() {
        let m = [[2.0, -0.5, 0.1], [-0.5, 1.0, 0.3], [0.1, 0.3, -4.0]];
        let q = |x: &[f64]| -> Result<f64> {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * m[i][j] * x[j];
                }
            }
            Ok(s)
        };
        let r = hessian_fd(q, &[0.3, -0.2, 0.5], 1e-3, None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.matrix[i][j] - m[i][j]).abs() < 1e-4);
            }
        }
        let c = hessian_fd(|_: &[f64]| Ok(7.0), &[0.5, 0.5], 1e-3, Some((0.0, 1.0))).unwrap();
        assert!(c.matrix.iter().flatten().all(|x| x.abs() < 1e-6));
        let mdp = TabularIsaMdp::toy();
        assert!(matches!(
            hessian_fd(spo_objective(&mdp), &[1.0, 1.0], 1e-3, Some((0.0, 1.0))),
            Err(Error::BoundaryProximity { .. })
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

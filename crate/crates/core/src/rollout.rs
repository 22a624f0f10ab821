//! Trajectory sampling and worker-count-independent Monte Carlo reduction.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{PolicyMatrix, TabularIsaMdp};
use crate::rng::{self, StreamRng};

/// Fixed number of work units per estimate; results never depend on threads.
pub const MC_CHUNKS: usize = 64;

/// Horizon truncation threshold on `gamma^horizon`.
pub const HORIZON_TAIL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// Smallest horizon with `gamma^horizon <= 1e-8`.
pub fn min_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    (HORIZON_TAIL.ln() / gamma.ln()).ceil().max(1.0) as usize
}

pub fn check_horizon(gamma: f64, horizon: usize) -> Result<()> {
    let tail = gamma.powi(horizon as i32);
    if horizon == 0 || tail > HORIZON_TAIL * (1.0 + 1e-9) {
        return Err(Error::InvalidHorizon { horizon, tail });
    }
    Ok(())
}

/// Samples one truncated trajectory of the behaviour matrix `pm` into `buf`.
pub fn sample_trajectory(
    mdp: &TabularIsaMdp,
    pm: &PolicyMatrix,
    start: &[f64],
    horizon: usize,
    rng: &mut StreamRng,
    buf: &mut Vec<Step>,
) {
    buf.clear();
    let mut s = rng::sample_index(start, rng.random());
    for _ in 0..horizon {
        let a = rng::sample_index(pm.row(s), rng.random());
        buf.push(Step {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
        });
        s = rng::sample_index(mdp.transition_row(s, a), rng.random());
    }
}

/// `Q_hat_t = sum_{t' >= t} gamma^{t'-t} r_{t'}` over the truncated trajectory.
pub fn rewards_to_go(steps: &[Step], gamma: f64, out: &mut Vec<f64>) {
    out.clear();
    out.resize(steps.len(), 0.0);
    let mut acc = 0.0;
    for (t, st) in steps.iter().enumerate().rev() {
        acc = st.reward + gamma * acc;
        out[t] = acc;
    }
}

/// Mean and standard error of a vector-valued per-trajectory statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct McMean {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
}

/// Evaluates `f` on `n` independent trajectories split into [`MC_CHUNKS`]
/// units with their own RNG streams, reducing in chunk order.
///
/// `f(rng, out)` must overwrite `out` (length `dim`) with one sample.
pub fn chunked_mean<F>(n: usize, dim: usize, seed: u64, ids: &[u64], f: F) -> McMean
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..MC_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = c * n / MC_CHUNKS;
            let hi = (c + 1) * n / MC_CHUNKS;
            let mut path = ids.to_vec();
            path.push(c as u64);
            let mut rng = rng::stream(seed, &path);
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            let mut x = vec![0.0; dim];
            for _ in lo..hi {
                f(&mut rng, &mut x);
                for i in 0..dim {
                    sum[i] += x[i];
                    sq[i] += x[i] * x[i];
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (ps, pq) in &partials {
        for i in 0..dim {
            sum[i] += ps[i];
            sq[i] += pq[i];
        }
    }
    let nf = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|x| x / nf).collect();
    let stderr = mean
        .iter()
        .zip(&sq)
        .map(|(m, q)| {
            if n < 2 {
                return 0.0;
            }
            let var = ((q / nf - m * m) * nf / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    McMean { mean, stderr, n }
}

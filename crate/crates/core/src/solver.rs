//! Software minimisers for [`QuboProblem`]s.
//!
//! Three backends share one [`AnnealConfig`]:
//!
//! * `Exhaustive` enumerates all `2^k` states in Gray-code order and returns
//!   the lexicographically smallest global minimiser (q_0 most significant).
//! * `SimulatedAnnealing` runs Metropolis single-bit-flip sweeps in fixed index
//!   order under a geometric inverse-temperature schedule, with independent
//!   restarts.
//! * `ParallelTempering` runs `replicas` Metropolis chains at geometrically
//!   spaced inverse temperatures and proposes adjacent exchanges after every
//!   sweep.
//!
//! Every call owns a `ChaCha8Rng` seeded from `AnnealConfig::seed`, so a
//! `(problem, config)` pair always produces the same [`SolveResult`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{check_bits, evaluate_unchecked, QuboProblem};

/// Largest `k` accepted by the exhaustive backend.
pub const MAX_EXHAUSTIVE_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exhaustive,
    SimulatedAnnealing,
    ParallelTempering,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Exhaustive => "exhaustive",
            Backend::SimulatedAnnealing => "sa",
            Backend::ParallelTempering => "pt",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Backend::Exhaustive),
            "sa" | "simulated_annealing" => Ok(Backend::SimulatedAnnealing),
            "pt" | "parallel_tempering" => Ok(Backend::ParallelTempering),
            other => Err(Error::InvalidParameter(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub backend: Backend,
    /// Full passes over all variables per run (per replica for tempering).
    pub sweeps: usize,
    pub restarts: usize,
    pub beta_initial: f64,
    pub beta_final: f64,
    pub replicas: usize,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            backend: Backend::SimulatedAnnealing,
            sweeps: 1000,
            restarts: 4,
            beta_initial: 0.1,
            beta_final: 50.0,
            replicas: 8,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn with_backend(backend: Backend) -> Self {
        AnnealConfig {
            backend,
            ..AnnealConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.backend == Backend::Exhaustive {
            return Ok(());
        }
        if self.sweeps == 0 {
            return bad("sweeps must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be positive");
        }
        if !(self.beta_initial > 0.0 && self.beta_initial.is_finite()) {
            return bad("beta_initial must be a positive finite number");
        }
        if !(self.beta_final > self.beta_initial && self.beta_final.is_finite()) {
            return bad("beta_final must be finite and greater than beta_initial");
        }
        if self.replicas == 0 {
            return bad("replicas must be positive");
        }
        if self.backend == Backend::ParallelTempering && self.replicas < 2 {
            return bad("parallel tempering needs at least 2 replicas");
        }
        Ok(())
    }

    /// Copy of this config with the seed replaced.
    pub fn reseeded(&self, seed: u64) -> Self {
        AnnealConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub q: Vec<u8>,
    /// `evaluate(problem, q)`, recomputed from scratch.
    pub energy: f64,
    /// Number of objective or single-flip delta evaluations.
    pub evaluations: u64,
}

/// Dispatches on `cfg.backend`.
pub fn solve(p: &QuboProblem, cfg: &AnnealConfig) -> Result<SolveResult> {
    match cfg.backend {
        Backend::Exhaustive => solve_exhaustive(p),
        Backend::SimulatedAnnealing => solve_sa(p, cfg),
        Backend::ParallelTempering => solve_pt(p, cfg),
    }
}

/// Energy change from flipping bit `i` of `q`, in O(k).
pub fn delta_energy(p: &QuboProblem, q: &[u8], i: usize) -> Result<f64> {
    check_bits(p.k(), q)?;
    if i >= p.k() {
        return Err(Error::Index {
            index: i,
            len: p.k(),
        });
    }
    let mut field = p.linear()[i];
    for (j, &qj) in q.iter().enumerate() {
        if j != i && qj == 1 {
            field += p.coupling(i, j);
        }
    }
    Ok(if q[i] == 0 { field } else { -field })
}

fn tie_tolerance(p: &QuboProblem) -> f64 {
    let scale: f64 = p
        .linear()
        .iter()
        .chain(p.quadratic())
        .map(|c| c.abs())
        .sum();
    1e-12 * (1.0 + scale)
}

/// Global minimiser by enumeration, ties resolved to the lexicographically
/// smallest state.
pub fn solve_exhaustive(p: &QuboProblem) -> Result<SolveResult> {
    let k = p.k();
    if k > MAX_EXHAUSTIVE_K {
        return Err(Error::InvalidParameter(format!(
            "exhaustive search limited to k <= {MAX_EXHAUSTIVE_K}, got {k}"
        )));
    }
    let couplings = p.dense_couplings();
    let tol = tie_tolerance(p);
    let mut q = vec![0u8; k];
    let mut field = p.linear().to_vec();
    let mut energy = 0.0;
    let mut best_q = q.clone();
    let mut best_energy = 0.0;
    let mut evaluations = 1u64;

    // Gray code: step t flips the bit at position trailing_zeros(t).
    for t in 1u64..(1u64 << k) {
        let i = t.trailing_zeros() as usize;
        energy += flip(&mut q, &mut field, &couplings, k, i);
        evaluations += 1;
        if energy < best_energy - tol {
            best_energy = energy;
            best_q.copy_from_slice(&q);
        } else if energy <= best_energy + tol && q < best_q {
            let exact = evaluate_unchecked(p, &q);
            let exact_best = evaluate_unchecked(p, &best_q);
            if exact <= exact_best + tol {
                best_energy = energy.min(best_energy);
                best_q.copy_from_slice(&q);
            }
        }
    }
    Ok(SolveResult {
        energy: evaluate_unchecked(p, &best_q),
        q: best_q,
        evaluations,
    })
}

/// Flips bit `i`, updates the local fields and returns the energy change.
#[inline]
fn flip(q: &mut [u8], field: &mut [f64], couplings: &[f64], k: usize, i: usize) -> f64 {
    let (delta, sign) = if q[i] == 0 {
        (field[i], 1.0)
    } else {
        (-field[i], -1.0)
    };
    q[i] ^= 1;
    let row = &couplings[i * k..(i + 1) * k];
    for (f, &b) in field.iter_mut().zip(row) {
        *f += sign * b;
    }
    delta
}

/// One Metropolis chain with cached local fields.
struct Chain {
    q: Vec<u8>,
    field: Vec<f64>,
    energy: f64,
}

impl Chain {
    fn random(p: &QuboProblem, couplings: &[f64], rng: &mut ChaCha8Rng) -> Self {
        let k = p.k();
        let q: Vec<u8> = (0..k).map(|_| rng.gen_range(0..2u8)).collect();
        let mut field = p.linear().to_vec();
        for (j, &qj) in q.iter().enumerate() {
            if qj == 1 {
                for (f, &b) in field.iter_mut().zip(&couplings[j * k..(j + 1) * k]) {
                    *f += b;
                }
            }
        }
        let energy = evaluate_unchecked(p, &q);
        Chain { q, field, energy }
    }

    /// One pass over the variables in index order. Calls `on_state` whenever
    /// the energy drops below `best`.
    fn sweep(
        &mut self,
        beta: f64,
        couplings: &[f64],
        rng: &mut ChaCha8Rng,
        evaluations: &mut u64,
        best: &mut Best,
    ) {
        let k = self.q.len();
        for i in 0..k {
            let delta = if self.q[i] == 0 {
                self.field[i]
            } else {
                -self.field[i]
            };
            *evaluations += 1;
            if delta <= 0.0 || rng.gen::<f64>() < (-beta * delta).exp() {
                self.energy += flip(&mut self.q, &mut self.field, couplings, k, i);
                best.offer(&self.q, self.energy);
            }
        }
    }
}

struct Best {
    q: Vec<u8>,
    energy: f64,
}

impl Best {
    fn new(chain: &Chain) -> Self {
        Best {
            q: chain.q.clone(),
            energy: chain.energy,
        }
    }

    #[inline]
    fn offer(&mut self, q: &[u8], energy: f64) {
        if energy < self.energy {
            self.energy = energy;
            self.q.copy_from_slice(q);
        }
    }
}

fn geometric_betas(beta0: f64, beta1: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![beta1];
    }
    let ratio = (beta1 / beta0).ln() / (count - 1) as f64;
    (0..count)
        .map(|t| {
            if t == count - 1 {
                beta1
            } else {
                beta0 * (ratio * t as f64).exp()
            }
        })
        .collect()
}

fn check_backend(cfg: &AnnealConfig, expected: Backend) -> Result<()> {
    if cfg.backend != expected {
        return Err(Error::InvalidParameter(format!(
            "config selects backend {} but {} was called",
            cfg.backend, expected
        )));
    }
    cfg.validate()
}

/// Simulated annealing; best state over all restarts.
pub fn solve_sa(p: &QuboProblem, cfg: &AnnealConfig) -> Result<SolveResult> {
    solve_sa_traced(p, cfg).map(|(r, _)| r)
}

/// Like [`solve_sa`], also returning the best-so-far energy after each sweep
/// (restarts concatenated, so the trace has `restarts * sweeps` entries).
pub fn solve_sa_traced(p: &QuboProblem, cfg: &AnnealConfig) -> Result<(SolveResult, Vec<f64>)> {
    check_backend(cfg, Backend::SimulatedAnnealing)?;
    let couplings = p.dense_couplings();
    let betas = geometric_betas(cfg.beta_initial, cfg.beta_final, cfg.sweeps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluations = 0u64;
    let mut overall: Option<Best> = None;
    let mut trace = Vec::with_capacity(cfg.sweeps * cfg.restarts);

    for _ in 0..cfg.restarts {
        let mut chain = Chain::random(p, &couplings, &mut rng);
        evaluations += 1;
        let mut best = Best::new(&chain);
        for &beta in &betas {
            chain.sweep(beta, &couplings, &mut rng, &mut evaluations, &mut best);
            let so_far = overall
                .as_ref()
                .map_or(best.energy, |o| o.energy.min(best.energy));
            trace.push(so_far);
        }
        match &overall {
            Some(o) if o.energy <= best.energy => {}
            _ => overall = Some(best),
        }
    }
    let best = overall.expect("at least one restart");
    Ok((
        SolveResult {
            energy: evaluate_unchecked(p, &best.q),
            q: best.q,
            evaluations,
        },
        trace,
    ))
}

/// Replica-exchange Monte Carlo; best state observed in any replica.
pub fn solve_pt(p: &QuboProblem, cfg: &AnnealConfig) -> Result<SolveResult> {
    check_backend(cfg, Backend::ParallelTempering)?;
    let couplings = p.dense_couplings();
    let betas = geometric_betas(cfg.beta_initial, cfg.beta_final, cfg.replicas);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut evaluations = 0u64;
    let mut overall: Option<Best> = None;

    for _ in 0..cfg.restarts {
        let mut chains: Vec<Chain> = (0..cfg.replicas)
            .map(|_| Chain::random(p, &couplings, &mut rng))
            .collect();
        evaluations += chains.len() as u64;
        let mut best = Best::new(&chains[0]);
        for c in &chains[1..] {
            best.offer(&c.q, c.energy);
        }
        for _ in 0..cfg.sweeps {
            for (chain, &beta) in chains.iter_mut().zip(&betas) {
                chain.sweep(beta, &couplings, &mut rng, &mut evaluations, &mut best);
            }
            for r in 0..chains.len() - 1 {
                let log_accept = (betas[r + 1] - betas[r]) * (chains[r + 1].energy - chains[r].energy);
                if log_accept >= 0.0 || rng.gen::<f64>() < log_accept.exp() {
                    chains.swap(r, r + 1);
                }
            }
        }
        match &overall {
            Some(o) if o.energy <= best.energy => {}
            _ => overall = Some(best),
        }
    }
    let best = overall.expect("at least one restart");
    Ok(SolveResult {
        energy: evaluate_unchecked(p, &best.q),
        q: best.q,
        evaluations,
    })
}

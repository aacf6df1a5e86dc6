//! Device selection by an annealed Metropolis-within-Gibbs sampler.
//!
//! This is a simplified stand-in for a full Gibbs-sampling scheduler: the
//! objective is the aggregation-noise variance of the subset under its MRC
//! receiver, minus a participation reward `ρ|S|`.

use rand::seq::index::sample;
use rand::Rng;

use crate::channel::{combined_sigma, CVector};
use crate::error::{check_dim, Error, Result};
use crate::linalg::median;
use crate::receiver::{mrc_baseline, variance_objective};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    Gibbs,
    /// `count` clients drawn uniformly without replacement (all when `None`).
    Uniform { count: Option<usize> },
}

#[derive(Debug, Clone, Copy)]
pub struct GibbsOptions {
    pub sweeps: usize,
    pub rho: f64,
    pub cooling: f64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            sweeps: 60,
            rho: 0.0,
            cooling: 0.95,
        }
    }
}

/// Per-round inputs shared by every subset evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleProblem<'a> {
    pub h_eff: &'a [CVector],
    pub sizes: &'a [f64],
    pub sigmas: &'a [f64],
    pub p0: f64,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct ScheduleState {
    pub current: Vec<bool>,
    pub objective: f64,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Selected client indices, ascending.
    pub selected: Vec<usize>,
    pub objective: f64,
}

impl ScheduleProblem<'_> {
    fn check(&self) -> Result<()> {
        if self.h_eff.is_empty() {
            return Err(Error::InvalidArgument("scheduler needs at least one client".into()));
        }
        check_dim(self.h_eff.len(), self.sizes.len())?;
        check_dim(self.h_eff.len(), self.sigmas.len())
    }

    /// `J(S) = σ_S²/(|D_S|² P0 d) · max_{k∈S} |D_k|²‖c‖²/|cᴴĥ_k|² − ρ|S|`.
    pub fn objective(&self, subset: &[usize], rho: f64) -> f64 {
        let h: Vec<CVector> = subset.iter().map(|&k| self.h_eff[k].clone()).collect();
        let sizes: Vec<f64> = subset.iter().map(|&k| self.sizes[k]).collect();
        let total: f64 = sizes.iter().sum();
        let sigma = combined_sigma(self.sigmas, subset);
        let c = mrc_baseline(&h);
        let spread = variance_objective(&c, &h, &sizes);
        let value = if sigma == 0.0 {
            0.0
        } else {
            sigma * sigma * spread / (total * total * self.p0 * self.dim as f64)
        };
        value - rho * subset.len() as f64
    }
}

fn members(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k).collect()
}

/// Annealed single-flip sampler started from the full set; returns the best
/// subset visited.
pub fn select_devices(problem: &ScheduleProblem, opts: GibbsOptions, seed: u64) -> Result<Schedule> {
    problem.check()?;
    let k = problem.h_eff.len();
    let eval = |mask: &[bool]| problem.objective(&members(mask), opts.rho);
    let mut rng = rng::stream(seed, &[rng::tag::SCHEDULE]);
    let mut state = ScheduleState {
        current: vec![true; k],
        objective: 0.0,
        temperature: 0.0,
        seed,
    };
    state.objective = eval(&state.current);
    if k == 1 {
        return Ok(Schedule {
            selected: vec![0],
            objective: state.objective,
        });
    }

    let mut probes = Vec::with_capacity(20);
    for _ in 0..20 {
        let flip = rng.random_range(0..k);
        let mut trial = state.current.clone();
        trial[flip] = !trial[flip];
        probes.push((eval(&trial) - state.objective).abs());
    }
    state.temperature = median(&mut probes).unwrap_or(0.0);

    let mut best = (state.objective, state.current.clone());
    for _ in 0..opts.sweeps {
        for flip in 0..k {
            let mut trial = state.current.clone();
            trial[flip] = !trial[flip];
            if !trial.iter().any(|&m| m) {
                continue;
            }
            let value = eval(&trial);
            let delta = value - state.objective;
            let u: f64 = rng.random();
            let accept = delta <= 0.0 || (state.temperature > 0.0 && u < (-delta / state.temperature).exp());
            if accept {
                state.current = trial;
                state.objective = value;
                if value < best.0 {
                    best = (value, state.current.clone());
                }
            }
        }
        state.temperature *= opts.cooling;
    }
    Ok(Schedule {
        selected: members(&best.1),
        objective: best.0,
    })
}

pub fn select_uniform(problem: &ScheduleProblem, count: Option<usize>, rho: f64, seed: u64) -> Result<Schedule> {
    problem.check()?;
    let k = problem.h_eff.len();
    let count = count.unwrap_or(k).clamp(1, k);
    let mut rng = rng::stream(seed, &[rng::tag::SCHEDULE]);
    let mut selected = sample(&mut rng, k, count).into_vec();
    selected.sort_unstable();
    let objective = problem.objective(&selected, rho);
    Ok(Schedule { selected, objective })
}

pub fn schedule(problem: &ScheduleProblem, kind: SchedulerKind, opts: GibbsOptions, seed: u64) -> Result<Schedule> {
    match kind {
        SchedulerKind::Gibbs => select_devices(problem, opts, seed),
        SchedulerKind::Uniform { count } => select_uniform(problem, count, opts.rho, seed),
    }
}

/// Exhaustive search over all non-empty subsets (K ≤ 20).
pub fn brute_force(problem: &ScheduleProblem, rho: f64) -> Result<Schedule> {
    problem.check()?;
    let k = problem.h_eff.len();
    if k > 20 {
        return Err(Error::InvalidArgument(format!("brute force over {k} clients")));
    }
    let mut best: Option<Schedule> = None;
    for bits in 1u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|i| bits >> i & 1 == 1).collect();
        let value = problem.objective(&subset, rho);
        if best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(Schedule {
                selected: subset,
                objective: value,
            });
        }
    }
    Ok(best.expect("k >= 1"))
}

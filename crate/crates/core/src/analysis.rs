//! Closed-form convergence bounds and their comparison with simulated runs.
//!
//! The distance bound has the form `μᵗ d₀ + C_t` with `μ = Lδ/λ` and
//! `C_t = (μᵗ−1)/(μ−1)·A_t`, where `A_t` adds a Newton-phase term and a
//! channel-noise term `(δ+1)/λ · σ‖c_t‖/(|D|√α_t)`. Two evaluations are
//! offered: the closed form with the round-`t` constants, and the
//! recursion `d_{s+1} ≤ μ d_s + A_s` accumulated with each round's own
//! constants.

use std::collections::BTreeMap;

use crate::engine::RoundRecord;
use crate::error::{Error, Result};
use crate::loss::SmoothnessConstants;

/// How `t₀` depends on `‖g₀‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum T0Form {
    /// `t₀ = max{0, ⌈2L‖g₀‖/λ²⌉ − 2}`, which keeps `γ ∈ [0, 1/2]`.
    #[default]
    Corrected,
    /// `t₀ = max{0, ⌈2L/(λ²‖g₀‖)⌉ − 2}`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    PreT0,
    PostT0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Superlinear,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub lambda: f64,
    pub big_l: f64,
    pub delta: f64,
    pub g0_norm: f64,
    /// `σ‖c_t‖/(|D|√α_t)` per round. Rounds past the end reuse the last
    /// entry; an empty list means a noiseless channel.
    pub noise: Vec<f64>,
    pub t0_form: T0Form,
}

/// `σ‖c‖/(|D|√α)`.
pub fn noise_term(sigma: f64, c_norm: f64, total: f64, alpha: f64) -> f64 {
    sigma * c_norm / (total * alpha.sqrt())
}

/// `(μᵗ − 1)/(μ − 1)`, continued by `t` at `μ = 1`.
pub fn geometric(mu: f64, t: usize) -> f64 {
    if (mu - 1.0).abs() < 1e-12 {
        t as f64
    } else {
        (mu.powi(t as i32) - 1.0) / (mu - 1.0)
    }
}

impl BoundInputs {
    pub fn new(constants: SmoothnessConstants, delta: f64, g0_norm: f64) -> Self {
        Self {
            lambda: constants.lambda,
            big_l: constants.big_l,
            delta,
            g0_norm,
            noise: Vec::new(),
            t0_form: T0Form::Corrected,
        }
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_t0_form(mut self, form: T0Form) -> Self {
        self.t0_form = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.big_l >= self.lambda
            && self.delta >= 0.0
            && self.g0_norm >= 0.0
            && self.noise.iter().all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bound inputs out of range: {self:?}")))
        }
    }

    pub fn mu(&self) -> f64 {
        self.big_l * self.delta / self.lambda
    }

    pub fn t0(&self) -> usize {
        let (l, lam, g) = (self.big_l, self.lambda, self.g0_norm);
        let x = match self.t0_form {
            T0Form::Corrected => 2.0 * l * g / (lam * lam),
            T0Form::Printed => 2.0 * l / (lam * lam * g),
        };
        if !x.is_finite() {
            return usize::MAX;
        }
        (x.ceil() - 2.0).max(0.0) as usize
    }

    pub fn gamma(&self) -> f64 {
        self.big_l * self.g0_norm / (2.0 * self.lambda * self.lambda) - self.t0() as f64 / 4.0
    }

    pub fn regime(&self, t: usize) -> Regime {
        if t <= self.t0() {
            Regime::PreT0
        } else {
            Regime::PostT0
        }
    }

    pub fn noise_at(&self, t: usize) -> f64 {
        match self.noise.get(t).or(self.noise.last()) {
            Some(v) => *v,
            None => 0.0,
        }
    }

    /// Newton-phase term of `A_t`. Infinite when `γ ∉ [0, 1)`.
    pub fn newton_term(&self, t: usize) -> f64 {
        let gamma = self.gamma();
        if !(0.0..1.0).contains(&gamma) {
            return f64::INFINITY;
        }
        let scale = self.lambda / self.big_l;
        let t0 = self.t0();
        if t <= t0 {
            scale * ((t0 - t) as f64 + 2.0 * gamma / (1.0 - gamma))
        } else {
            let exp = (t - t0).min(1023) as i32;
            let q = gamma.powf(2f64.powi(exp));
            2.0 * scale * q / (1.0 - q)
        }
    }

    fn noise_factor(&self) -> f64 {
        (self.delta + 1.0) / self.lambda
    }

    /// `C₀` or `C₁` at round `t`.
    pub fn a_term(&self, t: usize) -> f64 {
        self.newton_term(t) + self.noise_factor() * self.noise_at(t)
    }

    /// `C′₀` or `C′₁` at round `t`.
    pub fn a_term_sq(&self, t: usize) -> f64 {
        self.newton_term(t).powi(2) + (self.noise_factor() * self.noise_at(t)).powi(2)
    }
}

/// `E‖θ_t − θ*‖ ≤ μᵗ d₀ + (μᵗ−1)/(μ−1)·A_t`.
pub fn theorem1_bound(inputs: &BoundInputs, t: usize, init_dist: f64) -> f64 {
    let mu = inputs.mu();
    let geo = geometric(mu, t);
    let tail = if geo == 0.0 { 0.0 } else { geo * inputs.a_term(t) };
    mu.powi(t as i32) * init_dist + tail
}

/// `μᵗ d₀ + Σ_{s<t} μ^{t−1−s} A_s`.
pub fn theorem1_recursive(inputs: &BoundInputs, t: usize, init_dist: f64) -> f64 {
    let mu = inputs.mu();
    let mut d = init_dist;
    for s in 0..t {
        d = mu * d + inputs.a_term(s);
    }
    d
}

/// `E f(θ_t) − f* ≤ (L/2)(μ²ᵗ d₀² + (μ²ᵗ−1)/(μ²−1)·A′_t)`.
pub fn theorem2_bound(inputs: &BoundInputs, t: usize, init_dist_sq: f64) -> f64 {
    let mu2 = inputs.mu().powi(2);
    let geo = geometric(mu2, t);
    let tail = if geo == 0.0 { 0.0 } else { geo * inputs.a_term_sq(t) };
    0.5 * inputs.big_l * (mu2.powi(t as i32) * init_dist_sq + tail)
}

pub fn theorem2_recursive(inputs: &BoundInputs, t: usize, init_dist_sq: f64) -> f64 {
    let mu2 = inputs.mu().powi(2);
    let mut d = init_dist_sq;
    for s in 0..t {
        d = mu2 * d + inputs.a_term_sq(s);
    }
    0.5 * inputs.big_l * d
}

/// Rounds until the corollary bound for `regime` drops to `eps`, by
/// forward scan. The superlinear scan starts after `t₀`.
pub fn rounds_to_epsilon(inputs: &BoundInputs, eps: f64, regime: Convergence, init_dist: f64) -> Result<usize> {
    const LIMIT: usize = 100_000;
    let mu = inputs.mu();
    if mu >= 1.0 {
        return Err(Error::NoConvergence(mu));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    match regime {
        Convergence::Linear => {
            let mut bound = 2.0 * init_dist;
            for t in 0..LIMIT {
                if bound <= eps {
                    return Ok(t);
                }
                bound *= mu;
            }
        }
        Convergence::Superlinear => {
            let start = inputs.t0().saturating_add(1).max(1);
            for t in start..start.saturating_add(LIMIT) {
                if 2.0 * geometric(mu, t) * inputs.a_term(t) <= eps {
                    return Ok(t);
                }
            }
        }
    }
    Err(Error::Unreachable(LIMIT))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub round: usize,
    pub mu: f64,
    pub t0: usize,
    pub gamma: f64,
    pub regime: Regime,
    /// `C₀` or `C₁` for this round.
    pub a_term: f64,
    pub c_t: f64,
    pub theorem1: f64,
    pub theorem1_recursive: f64,
    pub theorem2: f64,
    pub theorem2_recursive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTrace {
    pub inputs: BoundInputs,
    pub init_dist: f64,
    pub init_dist_sq: f64,
    pub rows: Vec<BoundRow>,
}

/// Bounds for rounds `0..=rounds`.
pub fn bound_trace(inputs: &BoundInputs, init_dist: f64, init_dist_sq: f64, rounds: usize) -> Result<BoundTrace> {
    inputs.validate()?;
    let mu = inputs.mu();
    let (t0, gamma) = (inputs.t0(), inputs.gamma());
    let mut rec1 = init_dist;
    let mut rec2 = init_dist_sq;
    let mut rows = Vec::with_capacity(rounds + 1);
    for t in 0..=rounds {
        let geo = geometric(mu, t);
        let a = inputs.a_term(t);
        rows.push(BoundRow {
            round: t,
            mu,
            t0,
            gamma,
            regime: inputs.regime(t),
            a_term: a,
            c_t: if geo == 0.0 { 0.0 } else { geo * a },
            theorem1: theorem1_bound(inputs, t, init_dist),
            theorem1_recursive: rec1,
            theorem2: theorem2_bound(inputs, t, init_dist_sq),
            theorem2_recursive: 0.5 * inputs.big_l * rec2,
        });
        rec1 = mu * rec1 + a;
        rec2 = mu * mu * rec2 + inputs.a_term_sq(t);
    }
    Ok(BoundTrace {
        inputs: inputs.clone(),
        init_dist,
        init_dist_sq,
        rows,
    })
}

/// Per-round averages over seeds of one method's records.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAverages {
    pub dist: Vec<f64>,
    pub dist_sq: Vec<f64>,
    pub noise: Vec<f64>,
    /// Largest finite δ̂ seen, if any.
    pub max_delta: Option<f64>,
}

/// Averages `records` per round. Fails when a distance is missing.
pub fn round_averages(records: &[RoundRecord]) -> Result<RoundAverages> {
    let mut by_round: BTreeMap<usize, Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        by_round.entry(r.round).or_default().push(r);
    }
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    };
    let mut out = RoundAverages {
        dist: Vec::new(),
        dist_sq: Vec::new(),
        noise: Vec::new(),
        max_delta: None,
    };
    for (expected, (round, rows)) in by_round.iter().enumerate() {
        if *round != expected {
            return Err(Error::InvalidArgument(format!("rounds are not contiguous: missing round {expected}")));
        }
        if rows.iter().any(|r| !r.dist_to_opt.is_finite()) {
            return Err(Error::MissingOptimum);
        }
        out.dist.push(mean(&mut rows.iter().map(|r| r.dist_to_opt)));
        out.dist_sq.push(mean(&mut rows.iter().map(|r| r.dist_to_opt * r.dist_to_opt)));
        let noise = mean(&mut rows.iter().map(|r| r.noise_term).filter(|v| v.is_finite()));
        out.noise.push(noise);
        for d in rows.iter().map(|r| r.delta_probe).filter(|v| v.is_finite()) {
            out.max_delta = Some(out.max_delta.map_or(d, |m: f64| m.max(d)));
        }
    }
    // the evaluation-only row carries no channel data
    while out.noise.last().is_some_and(|v| v.is_nan()) {
        out.noise.pop();
    }
    if out.noise.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("noise term missing in an interior round".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub round: usize,
    pub observed: f64,
    pub bound: f64,
    pub bound_recursive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalReport {
    pub rows: Vec<CheckRow>,
    /// Fraction of rounds with `observed ≤ bound` (closed form).
    pub fraction: f64,
    pub fraction_recursive: f64,
    pub violations: Vec<usize>,
}

/// Compares observed mean distances (index = round) with a trace.
pub fn empirical_check(observed: &[f64], trace: &BoundTrace) -> Result<EmpiricalReport> {
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::MissingOptimum);
    }
    let n = observed.len().min(trace.rows.len());
    if n == 0 {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    // relative slack for rounding in rounds where both sides vanish
    let holds = |obs: f64, b: f64| obs <= b + 1e-12 * (1.0 + b.abs());
    let rows: Vec<CheckRow> = (0..n)
        .map(|t| CheckRow {
            round: t,
            observed: observed[t],
            bound: trace.rows[t].theorem1,
            bound_recursive: trace.rows[t].theorem1_recursive,
        })
        .collect();
    let violations: Vec<usize> = rows.iter().filter(|r| !holds(r.observed, r.bound)).map(|r| r.round).collect();
    let rec_ok = rows.iter().filter(|r| holds(r.observed, r.bound_recursive)).count();
    Ok(EmpiricalReport {
        fraction: 1.0 - violations.len() as f64 / n as f64,
        fraction_recursive: rec_ok as f64 / n as f64,
        rows,
        violations,
    })
}

/// Bounds for one method's runs: δ from `delta` or the largest probe,
/// `d₀` the seed mean at round 0, noise the per-round seed mean.
pub fn trace_for_records(
    constants: SmoothnessConstants,
    g0_norm: f64,
    delta: Option<f64>,
    form: T0Form,
    records: &[RoundRecord],
) -> Result<(BoundTrace, RoundAverages)> {
    let avg = round_averages(records)?;
    let delta = delta.or(avg.max_delta).unwrap_or(0.0);
    let inputs = BoundInputs::new(constants, delta, g0_norm).with_noise(avg.noise.clone()).with_t0_form(form);
    let rounds = avg.dist.len().saturating_sub(1);
    let trace = bound_trace(&inputs, avg.dist[0], avg.dist_sq[0], rounds)?;
    Ok((trace, avg))
}

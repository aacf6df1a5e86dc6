//! Round loop for the over-the-air training methods.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::channel::{
    assign_client_sigmas, combined_sigma, draw_channels, effective_channel, transmit_round, zf_alpha, ChannelRealization, CVector,
    ReceiverWeights,
};
use crate::error::{Error, Result};
use crate::gp::{delta_probe, newton_direction, GpHessianEstimator, GpOptions, HessianEstimate};
use crate::loss::{GlobalObjective, SmoothnessConstants};
use crate::receiver::{design_receiver, extract_receiver, mrc_baseline, DcOptions};
use crate::rng::{self, tag};
use crate::scheduler::{schedule, GibbsOptions, ScheduleProblem, SchedulerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Gpfl,
    FedavgAir,
    BfgsAir,
    NewtonIdeal,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [MethodKind::Gpfl, MethodKind::FedavgAir, MethodKind::BfgsAir, MethodKind::NewtonIdeal];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Gpfl => "gpfl",
            MethodKind::FedavgAir => "fedavg_air",
            MethodKind::BfgsAir => "bfgs_air",
            MethodKind::NewtonIdeal => "newton_ideal",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReceiverKind {
    Dc(DcOptions),
    Mrc,
}

/// `η = min{1, λ²/(L‖g‖)}`, and 1 for a zero gradient.
pub fn learning_rate(constants: SmoothnessConstants, g_norm: f64) -> f64 {
    if g_norm <= 0.0 {
        return 1.0;
    }
    (constants.lambda * constants.lambda / (constants.big_l * g_norm)).min(1.0)
}

/// Everything that is shared by all methods of one experiment.
#[derive(Debug, Clone)]
pub struct World {
    pub objective: GlobalObjective,
    pub constants: SmoothnessConstants,
    pub optimum: Option<DVector<f64>>,
    pub sigma_grid: Vec<f64>,
    /// Multiplies every client's noise level.
    pub sigma_scale: f64,
    pub antennas: usize,
    pub p0: f64,
    pub scheduler: SchedulerKind,
    pub gibbs: GibbsOptions,
    pub receiver: ReceiverKind,
}

#[derive(Debug, Clone, Copy)]
pub struct MethodOptions {
    pub method: MethodKind,
    /// Rate of the first-order baseline and of the warm-up rounds.
    pub first_order_rate: f64,
    pub warmup_rounds: usize,
    pub gp: GpOptions,
    pub probe_delta: bool,
    pub timing: bool,
}

impl MethodOptions {
    pub fn new(method: MethodKind) -> Self {
        Self {
            method,
            first_order_rate: 0.1,
            warmup_rounds: 2,
            gp: GpOptions::default(),
            probe_delta: true,
            timing: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelState {
    pub theta: DVector<f64>,
    pub round: usize,
    pub last_direction: Option<DVector<f64>>,
    pub eta: f64,
}

/// One row of the metrics table. Row `t` evaluates `θ_t` and carries the
/// diagnostics of the transmission in round `t`; the row after the last
/// round has NaN diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub method: MethodKind,
    pub seed: u64,
    pub round: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub dist_to_opt: f64,
    pub g_tilde_norm: f64,
    pub eta: f64,
    pub alpha: f64,
    pub c_norm: f64,
    pub delta_probe: f64,
    pub wall_ms: f64,
    /// `σ_S‖c‖/(|D_S|√α)` of the round.
    pub noise_term: f64,
    pub selected: usize,
}

/// Result of one over-the-air aggregation.
#[derive(Debug, Clone)]
pub struct AirRound {
    pub g_tilde: DVector<f64>,
    pub true_gradient: DVector<f64>,
    pub alpha: f64,
    pub c_norm: f64,
    pub noise_term: f64,
    pub selected: Vec<usize>,
}

impl World {
    pub fn client_sigmas(&self, seed: u64) -> Result<Vec<f64>> {
        let base = assign_client_sigmas(self.objective.clients.len(), &self.sigma_grid, seed)?;
        Ok(base.into_iter().map(|s| s * self.sigma_scale).collect())
    }

    /// Selection, receiver design and transmission for round `round` at
    /// `theta`. Channel, scheduling and noise streams depend only on
    /// `(seed, round)`.
    pub fn air_round(&self, theta: &DVector<f64>, sigmas: &[f64], seed: u64, round: u64) -> Result<AirRound> {
        let k = self.objective.clients.len();
        let h = draw_channels(k, self.antennas, rng::mix(seed, &[tag::CHANNEL, round]));
        let gradients: Vec<DVector<f64>> = self.objective.clients.iter().map(|c| c.gradient(theta)).collect::<Result<_>>()?;
        let sizes: Vec<f64> = self.objective.clients.iter().map(|c| c.len() as f64).collect();
        let true_gradient = self.objective.gradient(theta)?;

        // a client whose local gradient vanishes has nothing to send
        let active: Vec<usize> = (0..k).filter(|&i| gradients[i].norm() > 0.0).collect();
        if active.is_empty() {
            return Ok(AirRound {
                g_tilde: DVector::zeros(theta.len()),
                true_gradient,
                alpha: f64::NAN,
                c_norm: f64::NAN,
                noise_term: 0.0,
                selected: Vec::new(),
            });
        }
        let h_eff: Vec<CVector> = active.iter().map(|&i| effective_channel(&h[i], gradients[i].norm())).collect();
        let a_sizes: Vec<f64> = active.iter().map(|&i| sizes[i]).collect();
        let a_sigmas: Vec<f64> = active.iter().map(|&i| sigmas[i]).collect();
        let problem = ScheduleProblem {
            h_eff: &h_eff,
            sizes: &a_sizes,
            sigmas: &a_sigmas,
            p0: self.p0,
            dim: theta.len(),
        };
        let picked = schedule(&problem, self.scheduler, self.gibbs, rng::mix(seed, &[tag::SCHEDULE, round]))?.selected;
        let sel_h: Vec<CVector> = picked.iter().map(|&j| h_eff[j].clone()).collect();
        let sel_sizes: Vec<f64> = picked.iter().map(|&j| a_sizes[j]).collect();
        let selected: Vec<usize> = picked.iter().map(|&j| active[j]).collect();

        let c = match self.receiver {
            ReceiverKind::Dc(opts) => design_receiver(&sel_h, &sel_sizes, opts)?.c,
            ReceiverKind::Mrc => {
                let m = mrc_baseline(&sel_h);
                extract_receiver(&(&m * m.adjoint()), &sel_h, &sel_sizes)
            }
        };
        let alpha = zf_alpha(&c, &sel_h, &sel_sizes, self.p0, theta.len())?;
        let sigma = combined_sigma(sigmas, &selected);
        let realization = ChannelRealization {
            h: selected.iter().map(|&i| h[i].clone()).collect(),
            sigma,
            antennas: self.antennas,
        };
        let total: f64 = sel_sizes.iter().sum();
        let sel_grads: Vec<DVector<f64>> = selected.iter().map(|&i| gradients[i].clone()).collect();
        let weights = ReceiverWeights { c: c.clone(), alpha };
        let agg = transmit_round(&sel_grads, &realization, &weights, &sel_sizes, total, rng::mix(seed, &[tag::NOISE, round]))?;
        Ok(AirRound {
            g_tilde: agg.g_tilde,
            true_gradient,
            alpha,
            c_norm: c.norm(),
            noise_term: sigma * c.norm() / (total * alpha.sqrt()),
            selected,
        })
    }
}

/// Per-method training state.
#[derive(Debug, Clone)]
pub struct Trainer<'w> {
    pub world: &'w World,
    pub opts: MethodOptions,
    pub seed: u64,
    pub state: ModelState,
    pub sigmas: Vec<f64>,
    estimator: Option<GpHessianEstimator>,
    prev_g_tilde: Option<DVector<f64>>,
}

impl<'w> Trainer<'w> {
    pub fn new(world: &'w World, opts: MethodOptions, seed: u64, theta0: DVector<f64>) -> Result<Self> {
        if theta0.len() != world.objective.dim() {
            return Err(Error::Dimension {
                expected: world.objective.dim(),
                got: theta0.len(),
            });
        }
        let d = theta0.len();
        let estimator = match opts.method {
            MethodKind::Gpfl => Some(GpHessianEstimator::new(d, world.constants, opts.gp)),
            MethodKind::BfgsAir => Some(GpHessianEstimator::new(d, world.constants, GpOptions { window: 0, ..opts.gp })),
            _ => None,
        };
        Ok(Self {
            world,
            opts,
            seed,
            state: ModelState {
                theta: theta0,
                round: 0,
                last_direction: None,
                eta: 1.0,
            },
            sigmas: world.client_sigmas(seed)?,
            estimator,
            prev_g_tilde: None,
        })
    }

    pub fn estimator(&self) -> Option<&GpHessianEstimator> {
        self.estimator.as_ref()
    }

    fn evaluation(&self) -> Result<RoundRecord> {
        let theta = &self.state.theta;
        let obj = &self.world.objective;
        Ok(RoundRecord {
            method: self.opts.method,
            seed: self.seed,
            round: self.state.round,
            loss: obj.loss(theta)?,
            accuracy: obj.accuracy(theta),
            dist_to_opt: self.world.optimum.as_ref().map_or(f64::NAN, |o| (theta - o).norm()),
            g_tilde_norm: f64::NAN,
            eta: f64::NAN,
            alpha: f64::NAN,
            c_norm: f64::NAN,
            delta_probe: f64::NAN,
            wall_ms: 0.0,
            noise_term: f64::NAN,
            selected: 0,
        })
    }

    /// Evaluation row for the current model without taking a step.
    pub fn final_record(&self) -> Result<RoundRecord> {
        self.evaluation()
    }

    /// Runs one round and returns its record.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        let mut record = self.evaluation()?;
        let t = self.state.round as u64;
        let constants = self.world.constants;
        let theta = self.state.theta.clone();

        let (direction, eta, probe) = if self.opts.method == MethodKind::NewtonIdeal {
            let g = self.world.objective.gradient(&theta)?;
            let h = self.world.objective.hessian(&theta)?;
            let exact = HessianEstimate {
                b_hat: h,
                eig_range: (constants.lambda, constants.big_l),
            };
            record.g_tilde_norm = g.norm();
            record.noise_term = 0.0;
            let eta = learning_rate(constants, g.norm());
            (newton_direction(&exact, &g), eta, 0.0)
        } else {
            let air = self.world.air_round(&theta, &self.sigmas, self.seed, t)?;
            record.g_tilde_norm = air.g_tilde.norm();
            record.alpha = air.alpha;
            record.c_norm = air.c_norm;
            record.noise_term = air.noise_term;
            record.selected = air.selected.len();
            let g_tilde = air.g_tilde;
            if let (Some(est), Some(prev), Some(w)) = (self.estimator.as_mut(), self.prev_g_tilde.as_ref(), self.state.last_direction.as_ref()) {
                est.observe(w.clone(), &g_tilde - prev);
            }
            self.prev_g_tilde = Some(g_tilde.clone());
            let warm = self.state.round < self.opts.warmup_rounds;
            match (&self.estimator, warm) {
                (Some(est), false) => {
                    let estimate = est.estimate(self.seed, t)?;
                    let probe = if self.opts.probe_delta {
                        delta_probe(&estimate.b_hat, &self.world.objective.hessian(&theta)?)
                    } else {
                        f64::NAN
                    };
                    let eta = learning_rate(constants, g_tilde.norm());
                    (newton_direction(&estimate, &g_tilde), eta, probe)
                }
                _ => (-g_tilde, self.opts.first_order_rate, f64::NAN),
            }
        };
        let step = &direction * eta;
        self.state.theta = &theta + &step;
        // w_t = θ_{t+1} − θ_t, consumed with the next aggregate
        self.state.last_direction = Some(step);
        self.state.eta = eta;
        self.state.round += 1;
        record.eta = eta;
        record.delta_probe = probe;
        if self.opts.timing {
            record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        Ok(record)
    }
}

/// `rounds` steps followed by the final evaluation row.
pub fn run_method(world: &World, opts: MethodOptions, seed: u64, theta0: DVector<f64>, rounds: usize) -> Result<Vec<RoundRecord>> {
    let mut trainer = Trainer::new(world, opts, seed, theta0)?;
    let mut rows = Vec::with_capacity(rounds + 1);
    for _ in 0..rounds {
        rows.push(trainer.step()?);
    }
    rows.push(trainer.final_record()?);
    Ok(rows)
}

/// Exact Hessian of the global objective at `theta`.
pub fn true_hessian(world: &World, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    world.objective.hessian(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::quadratic_problem;

    fn quad_world(sigma_scale: f64) -> World {
        let center = DVector::from_fn(4, |i, _| 0.02 * (i as f64 + 1.0));
        let objective = quadratic_problem(4, 1.0, 2.0, 4, 10, center.clone(), 3).unwrap();
        let constants = objective.constants();
        World {
            objective,
            constants,
            optimum: Some(center),
            sigma_grid: crate::channel::sigma_grid(0.005, 200),
            sigma_scale,
            antennas: 3,
            p0: 1.0,
            scheduler: SchedulerKind::Gibbs,
            gibbs: GibbsOptions::default(),
            receiver: ReceiverKind::Dc(DcOptions::default()),
        }
    }

    #[test]
    fn learning_rate_examples() {
        let c = |l, big_l| SmoothnessConstants { lambda: l, big_l };
        assert_eq!(learning_rate(c(1.0, 2.0), 1.0), 0.5);
        assert_eq!(learning_rate(c(1.0, 2.0), 0.4), 1.0);
        assert!((learning_rate(c(0.1, 1.0), 10.0) - 0.001).abs() < 1e-15);
        assert_eq!(learning_rate(c(0.1, 1.0), 0.0), 1.0);
    }

    #[test]
    fn ideal_newton_solves_quadratic_in_one_step() {
        let world = quad_world(0.0);
        let rows = run_method(&world, MethodOptions::new(MethodKind::NewtonIdeal), 0, DVector::zeros(4), 1).unwrap();
        assert_eq!(rows[0].eta, 1.0);
        assert!(rows[1].dist_to_opt < 1e-12);
    }

    #[test]
    fn zero_rounds_gives_single_row() {
        let world = quad_world(1.0);
        let rows = run_method(&world, MethodOptions::new(MethodKind::Gpfl), 0, DVector::zeros(4), 0).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].eta.is_nan());
    }

    #[test]
    fn gpfl_without_window_is_bfgs_air() {
        let world = quad_world(0.0);
        let mut g = MethodOptions::new(MethodKind::Gpfl);
        g.warmup_rounds = 0;
        g.gp.window = 0;
        let mut b = MethodOptions::new(MethodKind::BfgsAir);
        b.warmup_rounds = 0;
        let a = run_method(&world, g, 5, DVector::zeros(4), 8).unwrap();
        let c = run_method(&world, b, 5, DVector::zeros(4), 8).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.g_tilde_norm.to_bits(), y.g_tilde_norm.to_bits());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let world = quad_world(1.0);
        let opts = MethodOptions {
            gp: GpOptions { window: 3, ..Default::default() },
            ..MethodOptions::new(MethodKind::Gpfl)
        };
        let a = run_method(&world, opts, 9, DVector::zeros(4), 6).unwrap();
        let b = run_method(&world, opts, 9, DVector::zeros(4), 6).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert!(a.iter().all(|r| r.eta.is_nan() || r.eta <= 1.0));
    }

    #[test]
    fn methods_share_channel_draws() {
        let world = quad_world(1.0);
        let sig = world.client_sigmas(2).unwrap();
        let theta = DVector::from_element(4, 0.7);
        let a = world.air_round(&theta, &sig, 2, 3).unwrap();
        let b = world.air_round(&theta, &sig, 2, 3).unwrap();
        assert_eq!(a.g_tilde, b.g_tilde);
        assert_eq!(a.alpha.to_bits(), b.alpha.to_bits());
    }

    #[test]
    fn noiseless_secant_holds_on_applied_updates() {
        let world = quad_world(0.0);
        let mut opts = MethodOptions::new(MethodKind::Gpfl);
        opts.gp.window = 2;
        let mut tr = Trainer::new(&world, opts, 1, DVector::zeros(4)).unwrap();
        let h = world.objective.hessian(&DVector::zeros(4)).unwrap();
        for _ in 0..5 {
            tr.step().unwrap();
            if let Some(est) = tr.estimator() {
                if let (Some(w), Some(y)) = (est.window.w.back(), est.window.y_tilde.back()) {
                    assert!((&est.b_tilde * w - y).norm() <= 1e-8 * y.norm().max(1e-12));
                    assert!((&h * w - y).norm() <= 1e-8 * y.norm().max(1e-12));
                }
            }
        }
    }
}

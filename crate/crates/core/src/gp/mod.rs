//! Gaussian-process Hessian estimation from noisy gradient differences.
//!
//! Each entry of the quasi-Newton matrix is modeled as a GP over the
//! concatenated window of noisy differences `o`. The posterior of every entry
//! shares one kernel factorization per round, entries are sampled
//! independently, and the sample is projected onto `[λ, L]`.

pub mod bfgs;
pub mod kernel;
pub mod posterior;

use nalgebra::{DMatrix, DVector};

pub use bfgs::{bfgs_sample, inverse_update, C_DAMP};
pub use kernel::{median_heuristic, rbf_kernel, KernelCache, TauChoice};
pub use posterior::{
    batched_posterior, clipped, delta_probe, entry_posterior, newton_direction, sample_hessian, GaussianPosterior, HessianEstimate,
    ObservationWindow, PosteriorSign, PosteriorSolver,
};

use crate::error::Result;
use crate::loss::SmoothnessConstants;

#[derive(Debug, Clone, Copy)]
pub struct GpOptions {
    pub window: usize,
    pub tau: TauChoice,
    pub jitter: f64,
    pub sign: PosteriorSign,
    pub solver: PosteriorSolver,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            window: 20,
            tau: TauChoice::Median,
            jitter: 1e-6,
            sign: PosteriorSign::Paper,
            solver: PosteriorSolver::Cholesky,
        }
    }
}

/// Running BFGS sample plus the observation window.
#[derive(Debug, Clone)]
pub struct GpHessianEstimator {
    pub opts: GpOptions,
    pub constants: SmoothnessConstants,
    pub b_tilde: DMatrix<f64>,
    pub window: ObservationWindow,
    pub applied_updates: usize,
    pub skipped_updates: usize,
}

impl GpHessianEstimator {
    pub fn new(dim: usize, constants: SmoothnessConstants, opts: GpOptions) -> Self {
        let scale = 0.5 * (constants.lambda + constants.big_l);
        Self {
            opts,
            constants,
            b_tilde: DMatrix::identity(dim, dim) * scale,
            window: ObservationWindow::new(opts.window),
            applied_updates: 0,
            skipped_updates: 0,
        }
    }

    /// Feeds one (step, noisy gradient difference) pair.
    pub fn observe(&mut self, w: DVector<f64>, y_tilde: DVector<f64>) {
        let (next, applied) = bfgs_sample(&self.b_tilde, &w, &y_tilde);
        if applied {
            self.applied_updates += 1;
        } else {
            self.skipped_updates += 1;
        }
        self.b_tilde = next;
        self.window.push(y_tilde, w, self.b_tilde.clone());
    }

    /// The posterior-sampled estimate for this round. With an empty window
    /// the GP carries no information and the estimate is the clipped BFGS
    /// sample itself.
    pub fn estimate(&self, seed: u64, round: u64) -> Result<HessianEstimate> {
        let Some(b_mean) = self.window.b_mean() else {
            return Ok(clipped(self.b_tilde.clone(), self.constants));
        };
        let cache = self.window.cache(self.opts.tau, self.opts.jitter)?;
        let (zeta, psi) = batched_posterior(&cache, &b_mean, &self.b_tilde, self.opts.sign, self.opts.solver);
        Ok(sample_hessian(&zeta, &psi, self.constants, seed, round))
    }
}

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::kernel::{rbf_column, KernelCache, TauChoice};
use crate::error::{Error, Result};
use crate::linalg::{clip_spectrum, conjugate_gradient, symmetrize};
use crate::loss::SmoothnessConstants;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorSign {
    /// `ζ = Ê{b} − aᵀ(o − μ)`
    Paper,
    /// `ζ = Ê{b} + aᵀ(o − μ)`, ordinary Gaussian conditioning.
    Standard,
}

impl PosteriorSign {
    fn factor(self) -> f64 {
        match self {
            PosteriorSign::Paper => -1.0,
            PosteriorSign::Standard => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorSolver {
    Cholesky,
    ConjugateGradient,
}

/// The last `r` noisy gradient differences with their steps and BFGS samples.
///
/// The difference that dropped out most recently is kept as the anchor of
/// the running means.
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    pub r: usize,
    pub y_tilde: VecDeque<DVector<f64>>,
    pub w: VecDeque<DVector<f64>>,
    pub b_samples: VecDeque<DMatrix<f64>>,
    pub anchor: Option<DVector<f64>>,
}

impl ObservationWindow {
    pub fn new(r: usize) -> Self {
        Self {
            r,
            y_tilde: VecDeque::with_capacity(r + 1),
            w: VecDeque::with_capacity(r + 1),
            b_samples: VecDeque::with_capacity(r + 1),
            anchor: None,
        }
    }

    pub fn len(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_tilde.is_empty()
    }

    pub fn push(&mut self, y: DVector<f64>, w: DVector<f64>, b: DMatrix<f64>) {
        if self.r == 0 {
            self.anchor = Some(y);
            return;
        }
        self.y_tilde.push_back(y);
        self.w.push_back(w);
        self.b_samples.push_back(b);
        if self.y_tilde.len() > self.r {
            self.anchor = self.y_tilde.pop_front();
            self.w.pop_front();
            self.b_samples.pop_front();
        }
    }

    /// Concatenation of the window's differences.
    pub fn o(&self) -> DVector<f64> {
        let d = self.y_tilde.front().map_or(0, |y| y.len());
        let mut o = DVector::zeros(d * self.len());
        for (s, y) in self.y_tilde.iter().enumerate() {
            o.rows_mut(s * d, d).copy_from(y);
        }
        o
    }

    /// Slot `s` holds the running average of the anchor and slots `0..=s`.
    pub fn mu_o(&self) -> DVector<f64> {
        let d = self.y_tilde.front().map_or(0, |y| y.len());
        let mut mu = DVector::zeros(d * self.len());
        let (mut sum, mut count) = match &self.anchor {
            Some(a) if a.len() == d => (a.clone(), 1.0),
            _ => (DVector::zeros(d), 0.0),
        };
        for (s, y) in self.y_tilde.iter().enumerate() {
            sum += y;
            count += 1.0;
            mu.rows_mut(s * d, d).copy_from(&(&sum / count));
        }
        mu
    }

    pub fn cache(&self, tau: TauChoice, jitter: f64) -> Result<KernelCache> {
        KernelCache::new(self.o(), self.mu_o(), tau, jitter)
    }

    /// Arithmetic mean of the window's BFGS samples (entrywise).
    pub fn b_mean(&self) -> Option<DMatrix<f64>> {
        let first = self.b_samples.front()?;
        let sum = self.b_samples.iter().skip(1).fold(first.clone(), |acc, b| acc + b);
        Some(sum / self.b_samples.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPosterior {
    pub zeta: f64,
    pub psi: f64,
    pub entry: (usize, usize),
}

fn clean_variance(psi: f64) -> f64 {
    if (-1e-8..0.0).contains(&psi) {
        0.0
    } else {
        psi
    }
}

/// Posterior of one matrix entry given the window.
///
/// `b_history` holds the entry's BFGS samples over the window and `b_now`
/// the current sample; `a` solves `K a = φ` by CG with a factorized fallback.
pub fn entry_posterior(
    cache: &KernelCache,
    b_history: &[f64],
    b_now: f64,
    o_t: &DVector<f64>,
    sign: PosteriorSign,
    entry: (usize, usize),
) -> Result<GaussianPosterior> {
    if b_history.is_empty() {
        return Err(Error::InvalidArgument("empty entry history".into()));
    }
    if o_t.len() != cache.len() {
        return Err(Error::Dimension {
            expected: cache.len(),
            got: o_t.len(),
        });
    }
    let mean = b_history.iter().sum::<f64>() / b_history.len() as f64;
    let phi = rbf_column(cache.o.as_slice(), b_now, cache.tau);
    let n = phi.len();
    let cg = conjugate_gradient(|v| &cache.k * v, &phi, 1e-15 * phi.norm().max(1e-300), 10 * n);
    let a = if cg.converged { cg.x } else { cache.factor.solve(&phi) };
    let diff = o_t - &cache.mu_o;
    Ok(GaussianPosterior {
        zeta: mean + sign.factor() * a.dot(&diff),
        psi: clean_variance(1.0 - a.dot(&phi)),
        entry,
    })
}

/// Posteriors of every entry `i ≤ j` from one shared factorization.
///
/// Returns `(ζ, ψ)` as full symmetric matrices.
pub fn batched_posterior(
    cache: &KernelCache,
    b_mean: &DMatrix<f64>,
    b_now: &DMatrix<f64>,
    sign: PosteriorSign,
    solver: PosteriorSolver,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = b_now.nrows();
    let diff = &cache.o - &cache.mu_o;
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let mut zeta = DMatrix::zeros(d, d);
    let mut psi = DMatrix::zeros(d, d);
    let n = cache.len();
    let phi = DMatrix::from_fn(n, pairs.len(), |m, p| {
        let (i, j) = pairs[p];
        let t = cache.o[m] - b_now[(i, j)];
        (-0.5 * t * t / (cache.tau * cache.tau)).exp()
    });
    match solver {
        PosteriorSolver::Cholesky => {
            let v = cache.factor.solve(&diff);
            let mut half = phi.clone();
            cache.factor.l().solve_lower_triangular_mut(&mut half);
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let z = b_mean[(i, j)] + sign.factor() * phi.column(p).dot(&v);
                let s = clean_variance(1.0 - half.column(p).norm_squared());
                zeta[(i, j)] = z;
                zeta[(j, i)] = z;
                psi[(i, j)] = s;
                psi[(j, i)] = s;
            }
        }
        PosteriorSolver::ConjugateGradient => {
            for (p, &(i, j)) in pairs.iter().enumerate() {
                let col = phi.column(p).into_owned();
                let cg = conjugate_gradient(|x| &cache.k * x, &col, 1e-15 * col.norm().max(1e-300), 10 * n);
                let a = if cg.converged { cg.x } else { cache.factor.solve(&col) };
                let z = b_mean[(i, j)] + sign.factor() * a.dot(&diff);
                let s = clean_variance(1.0 - a.dot(&col));
                zeta[(i, j)] = z;
                zeta[(j, i)] = z;
                psi[(i, j)] = s;
                psi[(j, i)] = s;
            }
        }
    }
    (zeta, psi)
}

#[derive(Debug, Clone)]
pub struct HessianEstimate {
    pub b_hat: DMatrix<f64>,
    pub eig_range: (f64, f64),
}

/// Draws `b̂_ij ~ N(ζ_ij, ψ_ij)` for `i ≤ j`, mirrors, and clips the spectrum
/// into `[λ, L]`. The stream for entry `(i,j)` is keyed by `(seed, round, i, j)`.
pub fn sample_hessian(zeta: &DMatrix<f64>, psi: &DMatrix<f64>, constants: SmoothnessConstants, seed: u64, round: u64) -> HessianEstimate {
    let d = zeta.nrows();
    let mut b = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let sd = psi[(i, j)].max(0.0).sqrt();
            let v = if sd > 0.0 {
                let mut r = rng::stream(seed, &[rng::tag::POSTERIOR, round, i as u64, j as u64]);
                zeta[(i, j)] + sd * rng::normal(&mut r)
            } else {
                zeta[(i, j)]
            };
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    clipped(b, constants)
}

pub fn clipped(b: DMatrix<f64>, constants: SmoothnessConstants) -> HessianEstimate {
    let b_hat = clip_spectrum(&symmetrize(&b), constants.lambda, constants.big_l);
    HessianEstimate {
        b_hat,
        eig_range: (constants.lambda, constants.big_l),
    }
}

/// `−B̂⁻¹g̃` by conjugate gradients (residual ≤ 1e-10‖g̃‖).
pub fn newton_direction(estimate: &HessianEstimate, g_tilde: &DVector<f64>) -> DVector<f64> {
    let b = &estimate.b_hat;
    let tol = 1e-10 * g_tilde.norm();
    let out = conjugate_gradient(|v| b * v, g_tilde, tol, 10 * g_tilde.len().max(1));
    let x = if out.converged {
        out.x
    } else {
        b.clone().cholesky().map_or(out.x, |c| c.solve(g_tilde))
    };
    -x
}

/// `‖B̂⁻¹ − H⁻¹‖₂ / ‖H⁻¹‖₂`.
pub fn delta_probe(b_hat: &DMatrix<f64>, hessian: &DMatrix<f64>) -> f64 {
    let (Some(bi), Some(hi)) = (b_hat.clone().try_inverse(), hessian.clone().try_inverse()) else {
        return f64::NAN;
    };
    crate::linalg::sym_spectral_norm(&(&bi - &hi)) / crate::linalg::sym_spectral_norm(&hi)
}

//! Receive beamforming for the zero-forcing aggregate.
//!
//! Minimizes the worst-case aggregation variance
//! `max_k |D_k|²‖c‖² / |cᴴĥ_k|²` by lifting `C = ccᴴ` and solving the
//! rank-penalized program `(1+ζ)Tr(C) − ζ‖C‖₂` with constraints
//! `Tr(C H_k) ≥ |D_k|²`, linearizing the spectral norm at each outer step.
//! The outer/inner structure is a reconstruction; the convex subproblems are
//! solved either by a dual log-barrier Newton method (default) or by an
//! augmented-Lagrangian projected-gradient method on the PSD cone.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::CVector;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{hermitian_cholesky, hermitian_eigen};

pub type CMatrix = DMatrix<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSolver {
    Barrier,
    ProjectedGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcOptions {
    pub zeta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub solver: InnerSolver,
}

impl Default for DcOptions {
    fn default() -> Self {
        Self {
            zeta: 10.0,
            max_iter: 200,
            tol: 1e-8,
            solver: InnerSolver::Barrier,
        }
    }
}

/// Iterate of the penalized program, in the internally rescaled units.
#[derive(Debug, Clone)]
pub struct DcState {
    pub c_mat: CMatrix,
    pub zeta: f64,
    pub iter: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct ReceiverDesign {
    pub c: CVector,
    /// `max_k |D_k|²‖c‖² / |cᴴĥ_k|²`
    pub objective: f64,
    /// `(Tr C − ‖C‖₂) / Tr C` of the final matrix iterate.
    pub rank_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The MRC direction beat the DC output and was returned instead.
    pub used_fallback: bool,
    /// Penalized objective after each outer iteration (rescaled units).
    pub history: Vec<f64>,
}

/// The min-max variance objective for a given receive vector.
pub fn variance_objective(c: &CVector, h_eff: &[CVector], sizes: &[f64]) -> f64 {
    let cn = c.norm_squared();
    h_eff
        .iter()
        .zip(sizes)
        .map(|(h, &s)| s * s * cn / c.dotc(h).norm_sqr())
        .fold(0.0, f64::max)
}

/// Maximum-ratio combining over the unit-normalized channels.
pub fn mrc_baseline(h_eff: &[CVector]) -> CVector {
    let n = h_eff.first().map_or(0, |h| h.len());
    let mut c = h_eff.iter().fold(CVector::zeros(n), |acc, h| acc + h.unscale(h.norm()));
    let norm = c.norm();
    if norm > 0.0 {
        c.unscale_mut(norm);
    }
    c
}

pub fn trace_re(m: &CMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// `⟨A, B⟩ = Re Tr(AᴴB)`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// A subgradient of the spectral norm: the average projector onto the top
/// eigenspace (ties within a relative 1e-9).
pub fn spectral_subgradient(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let top = vals[0];
    let tied: Vec<usize> = (0..vals.len())
        .take_while(|&i| (top - vals[i]).abs() <= 1e-9 * top.abs().max(1e-300))
        .collect();
    let n = m.nrows();
    let mut s = CMatrix::zeros(n, n);
    for &i in &tied {
        s += outer(&vecs.column(i).into_owned());
    }
    s / Complex64::new(tied.len() as f64, 0.0)
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0[0]
}

pub fn rank_one_residual(m: &CMatrix) -> f64 {
    let tr = trace_re(m);
    if tr <= 0.0 {
        return 1.0;
    }
    (tr - spectral_norm(m)) / tr
}

fn penalized(m: &CMatrix, zeta: f64) -> f64 {
    (1.0 + zeta) * trace_re(m) - zeta * spectral_norm(m)
}

/// Normalized constraint vectors `a_k = ĥ_k/|D_k|` with duplicates removed.
fn constraint_vectors(h_eff: &[CVector], sizes: &[f64]) -> Result<Vec<CVector>> {
    check_dim(h_eff.len(), sizes.len())?;
    if h_eff.is_empty() {
        return Err(Error::InvalidArgument("receiver design needs at least one client".into()));
    }
    let mut out: Vec<CVector> = Vec::new();
    for (k, (h, &s)) in h_eff.iter().zip(sizes).enumerate() {
        let norm = h.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateReceiver(k));
        }
        let a = h.unscale(s);
        // parallel constraints: the shorter vector is the tighter one
        if let Some(prev) = out.iter_mut().find(|p| p.dotc(&a).norm() >= (1.0 - 1e-12) * p.norm() * a.norm()) {
            if a.norm() < prev.norm() {
                *prev = a;
            }
            continue;
        }
        out.push(a);
    }
    Ok(out)
}

/// Dual log-barrier Newton for `min ⟨W,C⟩ s.t. |a_kᴴ·|² constraints ≥ 1, C ⪰ 0`.
fn solve_barrier(w: &CMatrix, a: &[CVector], tol: f64) -> CMatrix {
    let n = w.nrows();
    let k = a.len();
    let amat = CMatrix::from_fn(n, k, |r, c| a[c][r]);
    let z_of = |y: &DVector<f64>| -> CMatrix {
        let mut z = w.clone();
        for (j, aj) in a.iter().enumerate() {
            z -= outer(aj) * Complex64::new(y[j], 0.0);
        }
        z
    };
    let mut y = DVector::from_element(k, 0.5 / k as f64);
    let mut mu = 1.0;
    let mut zinv = CMatrix::identity(n, n);
    loop {
        for _ in 0..100 {
            let chol = match hermitian_cholesky(z_of(&y)) {
                Some(c) => c,
                None => break,
            };
            zinv = chol.clone().inverse();
            let m = amat.adjoint() * &zinv * &amat;
            let grad = DVector::from_fn(k, |i, _| 1.0 - mu * m[(i, i)].re + mu / y[i]);
            let hess = DMatrix::from_fn(k, k, |i, j| {
                let mut v = -mu * m[(i, j)].norm_sqr();
                if i == j {
                    v -= mu / (y[i] * y[i]);
                }
                v
            });
            let Some(step) = (-&hess).cholesky().map(|c| c.solve(&grad)) else {
                break;
            };
            let decrement = grad.dot(&step) / mu;
            // centered to working precision
            if decrement <= 1e-8 {
                break;
            }
            // backtracking on the barrier objective; the change is formed term
            // by term so that it stays accurate when μ is tiny
            let logdet = |c: &nalgebra::Cholesky<Complex64, nalgebra::Dyn>| -> f64 {
                (0..n).map(|i| 2.0 * c.l_dirty()[(i, i)].re.ln()).sum()
            };
            let base = logdet(&chol);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-6 {
                let trial = &y + &step * t;
                if trial.iter().all(|&v| v > 0.0) {
                    if let Some(c) = hermitian_cholesky(z_of(&trial)) {
                        let gain = t * step.sum() / mu
                            + (logdet(&c) - base)
                            + trial.iter().zip(y.iter()).map(|(a, b)| (a / b).ln()).sum::<f64>();
                        if gain >= 0.25 * t * decrement {
                            y = trial;
                            accepted = true;
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let gap = mu * (n + k) as f64;
        if gap <= tol * (1.0 + y.sum()) || mu < 1e-16 {
            break;
        }
        mu *= 0.1;
    }
    if let Some(chol) = hermitian_cholesky(z_of(&y)) {
        zinv = chol.inverse();
    }
    let c = zinv * Complex64::new(mu, 0.0);
    let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
    // restore exact feasibility lost to the finite barrier weight
    let worst = a.iter().map(|v| (v.adjoint() * &c * v)[(0, 0)].re).fold(f64::INFINITY, f64::min);
    if worst > 0.0 && worst.is_finite() {
        c / Complex64::new(worst, 0.0)
    } else {
        c
    }
}

fn project_psd(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (i, &v) in vals.iter().enumerate() {
        if v > 0.0 {
            out += outer(&vecs.column(i).into_owned()) * Complex64::new(v, 0.0);
        }
    }
    out
}

/// Augmented Lagrangian with FISTA steps and eigenvalue-clipping projection.
fn solve_projected(w: &CMatrix, a: &[CVector], tol: f64, start: &CMatrix) -> CMatrix {
    let gs: Vec<CMatrix> = a.iter().map(outer).collect();
    let mut y = vec![0.0; gs.len()];
    let mut rho = 10.0;
    let lip: f64 = gs.iter().map(|g| inner(g, g)).sum();
    let mut c = project_psd(start);
    for _ in 0..200 {
        let step = 1.0 / (rho * lip);
        let mut z = c.clone();
        let mut t = 1.0f64;
        for _ in 0..500 {
            let mut grad = w.clone();
            for (g, &yk) in gs.iter().zip(&y) {
                let m = (yk - rho * (inner(g, &z) - 1.0)).max(0.0);
                grad -= g * Complex64::new(m, 0.0);
            }
            let next = project_psd(&(&z - grad * Complex64::new(step, 0.0)));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let delta = &next - &c;
            z = &next + &delta * Complex64::new((t - 1.0) / t_next, 0.0);
            let moved = delta.norm();
            c = next;
            t = t_next;
            if moved <= tol * (1.0 + c.norm()) {
                break;
            }
        }
        let mut violation: f64 = 0.0;
        for (g, yk) in gs.iter().zip(y.iter_mut()) {
            let slack = inner(g, &c) - 1.0;
            *yk = (*yk - rho * slack).max(0.0);
            violation = violation.max((-slack).max(0.0));
        }
        if violation <= tol.sqrt() * 1e-2 {
            break;
        }
        rho = (rho * 2.0).min(1e8);
    }
    c
}

fn weight_matrix(c_mat: &CMatrix, zeta: f64) -> CMatrix {
    let n = c_mat.nrows();
    let s = spectral_subgradient(c_mat);
    CMatrix::identity(n, n) * Complex64::new(1.0 + zeta, 0.0) - s * Complex64::new(zeta, 0.0)
}

/// Subproblem on unit-scaled constraint vectors.
fn solve_scaled(state: &DcState, a_unit: &[CVector], tol: f64, solver: InnerSolver) -> CMatrix {
    let w = weight_matrix(&state.c_mat, state.zeta);
    match solver {
        InnerSolver::Barrier => solve_barrier(&w, a_unit, tol),
        InnerSolver::ProjectedGradient => solve_projected(&w, a_unit, tol, &state.c_mat),
    }
}

/// One linearized convex subproblem of the penalized program.
///
/// Minimizes `(1+ζ)Tr(C) − ζ⟨∂‖C_j‖₂, C⟩` over PSD `C` with
/// `Tr(C H_k) ≥ |D_k|²`, where `H_k = ĥ_kĥ_kᴴ`.
pub fn dc_subproblem(state: &DcState, h_eff: &[CVector], sizes: &[f64], tol: f64, solver: InnerSolver) -> Result<CMatrix> {
    let a = constraint_vectors(h_eff, sizes)?;
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let a_scaled: Vec<CVector> = a.iter().map(|v| v.unscale(scale)).collect();
    let s2 = Complex64::new(scale * scale, 0.0);
    let scaled_state = DcState {
        c_mat: &state.c_mat * s2,
        ..state.clone()
    };
    Ok(solve_scaled(&scaled_state, &a_scaled, tol, solver) / s2)
}

/// Extracts the principal direction of `C` and rescales it so the tightest
/// constraint holds with equality.
pub fn extract_receiver(c_mat: &CMatrix, h_eff: &[CVector], sizes: &[f64]) -> CVector {
    let (vals, vecs) = hermitian_eigen(c_mat);
    let mut c: CVector = vecs.column(0).into_owned() * Complex64::new(vals[0].max(0.0).sqrt(), 0.0);
    let worst = h_eff
        .iter()
        .zip(sizes)
        .map(|(h, &s)| c.dotc(h).norm_sqr() / (s * s))
        .fold(f64::INFINITY, f64::min);
    if worst > 0.0 && worst.is_finite() {
        c.unscale_mut(worst.sqrt());
    }
    c
}

/// Solves the min-max receive-beamforming problem.
pub fn design_receiver(h_eff: &[CVector], sizes: &[f64], opts: DcOptions) -> Result<ReceiverDesign> {
    let a = constraint_vectors(h_eff, sizes)?;
    let n = a[0].len();
    // work in units where the longest constraint vector has norm 1
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let a_unit: Vec<CVector> = a.iter().map(|v| v.unscale(scale)).collect();
    let ones = vec![1.0; a_unit.len()];

    let mut state = DcState {
        c_mat: CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0),
        zeta: opts.zeta,
        iter: 0,
        objective: f64::INFINITY,
    };
    let mut history = Vec::new();
    let mut best: Option<(f64, CMatrix)> = None;
    let mut stall = 0usize;
    let mut converged = false;
    while state.iter < opts.max_iter {
        let next = solve_scaled(&state, &a_unit, opts.tol, opts.solver);
        let residual = rank_one_residual(&next);
        let change = (&next - &state.c_mat).norm() / next.norm().max(1e-300);
        state.iter += 1;
        state.objective = penalized(&next, state.zeta);
        history.push(state.objective);
        state.c_mat = next;

        let candidate = extract_receiver(&state.c_mat, &a_unit, &ones);
        let obj = variance_objective(&candidate, &a_unit, &ones);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, state.c_mat.clone()));
        }
        if residual <= 1e-4 && change <= opts.tol.sqrt() {
            converged = true;
            break;
        }
        if residual > 1e-3 {
            stall += 1;
            if stall >= 20 {
                state.zeta *= 2.0;
                stall = 0;
            }
        } else {
            stall = 0;
        }
    }
    if !converged {
        log::warn!("receiver design stopped after {} iterations without converging", state.iter);
    }
    let final_residual = rank_one_residual(&state.c_mat);
    let (_, c_best) = best.expect("at least one outer iteration");
    let mut c = extract_receiver(&c_best, h_eff, sizes);
    let mut objective = variance_objective(&c, h_eff, sizes);
    let mrc = mrc_baseline(h_eff);
    let mrc_obj = variance_objective(&mrc, h_eff, sizes);
    let mut used_fallback = false;
    if !(objective <= mrc_obj) {
        c = extract_receiver(&(&mrc * mrc.adjoint()), h_eff, sizes);
        objective = variance_objective(&c, h_eff, sizes);
        used_fallback = true;
    }
    Ok(ReceiverDesign {
        c,
        objective,
        rank_residual: final_residual,
        iterations: state.iter,
        converged,
        used_fallback,
        history,
    })
}

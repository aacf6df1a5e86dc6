use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::median;

/// `[κ(u,v)]_ij = exp(−(u_i − v_j)²/(2τ²))`.
pub fn rbf_kernel(u: &[f64], v: &[f64], tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("kernel length-scale must be positive, got {tau}")));
    }
    let s = -0.5 / (tau * tau);
    Ok(DMatrix::from_fn(u.len(), v.len(), |i, j| {
        let d = u[i] - v[j];
        (s * d * d).exp()
    }))
}

pub fn rbf_column(o: &[f64], b: f64, tau: f64) -> DVector<f64> {
    let s = -0.5 / (tau * tau);
    DVector::from_iterator(o.len(), o.iter().map(|x| {
        let d = x - b;
        (s * d * d).exp()
    }))
}

/// Median of pairwise distances `|o_i − o_j|`, `i < j`. Falls back to 1 when
/// the median is zero or there is only one point.
pub fn median_heuristic(o: &[f64]) -> f64 {
    let mut dists = Vec::with_capacity(o.len() * o.len().saturating_sub(1) / 2);
    for i in 0..o.len() {
        for j in i + 1..o.len() {
            dists.push((o[i] - o[j]).abs());
        }
    }
    match median(&mut dists) {
        Some(m) if m > 0.0 && m.is_finite() => m,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauChoice {
    Median,
    Fixed(f64),
}

/// Kernel matrix of the window observations with its factorization.
#[derive(Debug, Clone)]
pub struct KernelCache {
    pub tau: f64,
    /// `κ(o,o) + εI` with the jitter that was finally used.
    pub k: DMatrix<f64>,
    pub jitter: f64,
    pub factor: Cholesky<f64, Dyn>,
    pub o: DVector<f64>,
    pub mu_o: DVector<f64>,
}

impl KernelCache {
    /// Factorizes `κ(o,o) + εI`, doubling ε on failure up to 1e-2.
    pub fn new(o: DVector<f64>, mu_o: DVector<f64>, tau: TauChoice, jitter: f64) -> Result<Self> {
        if o.is_empty() {
            return Err(Error::InvalidArgument("empty observation window".into()));
        }
        let tau = match tau {
            TauChoice::Median => median_heuristic(o.as_slice()),
            TauChoice::Fixed(t) => t,
        };
        let base = rbf_kernel(o.as_slice(), o.as_slice(), tau)?;
        let mut eps = jitter.max(f64::MIN_POSITIVE);
        loop {
            let mut k = base.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += eps;
            }
            if let Some(factor) = k.clone().cholesky() {
                return Ok(Self {
                    tau,
                    k,
                    jitter: eps,
                    factor,
                    o,
                    mu_o,
                });
            }
            if eps >= 1e-2 {
                return Err(Error::Factorization(eps));
            }
            eps = (eps * 2.0).min(1e-2);
        }
    }

    pub fn len(&self) -> usize {
        self.o.len()
    }

    pub fn is_empty(&self) -> bool {
        self.o.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn self_kernel_has_unit_diagonal() {
        let u = [0.3, -1.0, 2.5];
        let k = rbf_kernel(&u, &u, 0.7).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
        }
    }

    #[test]
    fn half_value_distance() {
        let tau = 1.3;
        let k = rbf_kernel(&[0.0], &[tau * (2.0 * 2f64.ln()).sqrt()], tau).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_tau_rejected() {
        assert!(rbf_kernel(&[0.0], &[0.0], 0.0).is_err());
        assert!(rbf_kernel(&[0.0], &[0.0], -1.0).is_err());
    }

    #[test]
    fn jittered_kernel_factorizes() {
        let mut r = rng::stream(4, &[]);
        let u: Vec<f64> = (0..50).map(|_| rng::normal(&mut r)).collect();
        let mut k = rbf_kernel(&u, &u, 1.0).unwrap();
        for i in 0..50 {
            k[(i, i)] += 1e-8;
        }
        assert!(k.cholesky().is_some());
    }

    #[test]
    fn scalar_cache() {
        let c = KernelCache::new(DVector::from_vec(vec![0.4]), DVector::from_vec(vec![0.4]), TauChoice::Fixed(1.0), 1e-6).unwrap();
        assert_eq!(c.k[(0, 0)], 1.0 + 1e-6);
    }

    #[test]
    fn duplicates_factorize_and_match_recomputation() {
        let o = DVector::from_vec(vec![0.1, 0.1, 0.1, 0.5, 0.5, -0.2]);
        let c = KernelCache::new(o.clone(), o.clone(), TauChoice::Median, 1e-6).unwrap();
        let direct = rbf_kernel(o.as_slice(), o.as_slice(), c.tau).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = direct[(i, j)] + if i == j { c.jitter } else { 0.0 };
                assert_eq!(c.k[(i, j)], expect);
            }
        }
    }

    #[test]
    fn median_heuristic_on_line() {
        assert_eq!(median_heuristic(&[0.0, 1.0, 2.0]), 1.0);
        assert_eq!(median_heuristic(&[3.0]), 1.0);
    }
}

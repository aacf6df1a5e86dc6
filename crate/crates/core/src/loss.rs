//! Local and global objectives with exact gradient and Hessian oracles.
//!
//! Two local objectives are supported: L2-regularized logistic regression
//! (the workhorse) and a quadratic `½(θ−c)ᵀA(θ−c)` used by the benchmarks
//! that need the Hessian in closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct LogisticLoss {
    /// One sample per row.
    pub features: DMatrix<f64>,
    /// Labels in {-1, +1}.
    pub labels: DVector<f64>,
    pub reg: f64,
}

impl LogisticLoss {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, reg: f64) -> Result<Self> {
        check_dim(features.nrows(), labels.len())?;
        if !(reg > 0.0) {
            return Err(Error::InvalidArgument(format!("regularization must be > 0, got {reg}")));
        }
        Ok(Self { features, labels, reg })
    }

    fn margins(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.features * theta
    }

    pub fn accuracy(&self, theta: &DVector<f64>) -> f64 {
        let z = self.margins(theta);
        let hits = z.iter().zip(self.labels.iter()).filter(|(z, v)| *z * *v > 0.0).count();
        hits as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    pub curvature: DMatrix<f64>,
    pub center: DVector<f64>,
    /// Number of samples this client nominally holds (its aggregation weight).
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub enum LocalObjective {
    Logistic(LogisticLoss),
    Quadratic(QuadraticLoss),
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        match self {
            Self::Logistic(l) => l.features.ncols(),
            Self::Quadratic(q) => q.center.len(),
        }
    }

    /// |D_k|
    pub fn len(&self) -> usize {
        match self {
            Self::Logistic(l) => l.labels.len(),
            Self::Quadratic(q) => q.samples,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn loss(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Self::Logistic(l) => {
                let z = l.margins(theta);
                let n = l.labels.len() as f64;
                let data: f64 = z.iter().zip(l.labels.iter()).map(|(z, v)| softplus(-v * z)).sum();
                data / n + 0.5 * l.reg * theta.norm_squared()
            }
            Self::Quadratic(q) => {
                let e = theta - &q.center;
                0.5 * e.dot(&(&q.curvature * &e))
            }
        })
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Self::Logistic(l) => {
                let z = l.margins(theta);
                let n = l.labels.len() as f64;
                // d/dz softplus(-v z) = -v σ(-v z)
                let coef = DVector::from_fn(z.len(), |i, _| -l.labels[i] * sigmoid(-l.labels[i] * z[i]) / n);
                l.features.tr_mul(&coef) + theta * l.reg
            }
            Self::Quadratic(q) => &q.curvature * (theta - &q.center),
        })
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(match self {
            Self::Logistic(l) => {
                let z = l.margins(theta);
                let n = l.labels.len() as f64;
                let mut scaled = l.features.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    let s = sigmoid(z[i]);
                    row *= (s * (1.0 - s) / n).sqrt();
                }
                let mut h = scaled.tr_mul(&scaled);
                for i in 0..h.nrows() {
                    h[(i, i)] += l.reg;
                }
                linalg::symmetrize(&h)
            }
            Self::Quadratic(q) => q.curvature.clone(),
        })
    }
}

/// Strong-convexity modulus and gradient Lipschitz constant of the global loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    pub lambda: f64,
    pub big_l: f64,
}

/// The weighted global objective `Σ_k (|D_k|/|D|) f_k`.
#[derive(Debug, Clone)]
pub struct GlobalObjective {
    pub clients: Vec<LocalObjective>,
    pub weights: Vec<f64>,
}

impl GlobalObjective {
    /// Weights each client by its share of the samples.
    pub fn new(clients: Vec<LocalObjective>) -> Result<Self> {
        let Some(first) = clients.first() else {
            return Err(Error::InvalidArgument("at least one client is required".into()));
        };
        let dim = first.dim();
        for c in &clients {
            check_dim(dim, c.dim())?;
            if c.is_empty() {
                return Err(Error::InvalidArgument("client with no samples".into()));
            }
        }
        let total: usize = clients.iter().map(LocalObjective::len).sum();
        let weights = clients.iter().map(|c| c.len() as f64 / total as f64).collect();
        Ok(Self { clients, weights })
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(LocalObjective::len).sum()
    }

    pub fn loss(&self, theta: &DVector<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for (c, w) in self.clients.iter().zip(&self.weights) {
            acc += w * c.loss(theta)?;
        }
        Ok(acc)
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim());
        for (c, w) in self.clients.iter().zip(&self.weights) {
            acc.axpy(*w, &c.gradient(theta)?, 1.0);
        }
        Ok(acc)
    }

    pub fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut acc = DMatrix::zeros(d, d);
        for (c, w) in self.clients.iter().zip(&self.weights) {
            acc += c.hessian(theta)? * *w;
        }
        Ok(linalg::symmetrize(&acc))
    }

    /// Classification accuracy over all logistic clients; NaN for quadratic problems.
    pub fn accuracy(&self, theta: &DVector<f64>) -> f64 {
        let mut hits = 0.0;
        let mut total = 0usize;
        for c in &self.clients {
            match c {
                LocalObjective::Logistic(l) => {
                    hits += l.accuracy(theta) * l.labels.len() as f64;
                    total += l.labels.len();
                }
                LocalObjective::Quadratic(_) => return f64::NAN,
            }
        }
        hits / total as f64
    }

    /// Certified `(λ, L)` such that `λI ⪯ ∇²f ⪯ LI` everywhere.
    ///
    /// Logistic: λ is the regularization, L adds a quarter of the top eigenvalue
    /// of the weighted second-moment matrix. Quadratic: exact extreme eigenvalues.
    pub fn constants(&self) -> SmoothnessConstants {
        let d = self.dim();
        let mut lambda = f64::INFINITY;
        let mut reg_max: f64 = 0.0;
        let mut moment = DMatrix::zeros(d, d);
        let mut curvature = DMatrix::zeros(d, d);
        let mut quadratic = false;
        for (c, w) in self.clients.iter().zip(&self.weights) {
            match c {
                LocalObjective::Logistic(l) => {
                    lambda = lambda.min(l.reg);
                    reg_max = reg_max.max(l.reg);
                    moment += l.features.tr_mul(&l.features) * (*w / l.labels.len() as f64);
                }
                LocalObjective::Quadratic(q) => {
                    quadratic = true;
                    curvature += &q.curvature * *w;
                }
            }
        }
        if quadratic {
            let (lo, hi) = linalg::eigen_range(&curvature);
            return SmoothnessConstants { lambda: lo, big_l: hi };
        }
        let top = linalg::power_iteration(&moment, 1e-8, 100_000);
        SmoothnessConstants {
            lambda,
            big_l: reg_max + 0.25 * top.max(0.0),
        }
    }

    /// The unique minimizer, by damped Newton to `‖∇f‖ ≤ 1e-10`.
    pub fn optimum(&self) -> Result<DVector<f64>> {
        let mut theta = DVector::zeros(self.dim());
        for _ in 0..200 {
            let g = self.gradient(&theta)?;
            if g.norm() <= 1e-10 {
                break;
            }
            let h = self.hessian(&theta)?;
            let step = h
                .cholesky()
                .ok_or_else(|| Error::InvalidArgument("Hessian is not positive definite".into()))?
                .solve(&g);
            let f0 = self.loss(&theta)?;
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let trial = &theta - &step * t;
                if self.loss(&trial)? <= f0 - 1e-4 * t * slope || t < 1e-12 {
                    theta = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        Ok(theta)
    }
}

/// A quadratic objective with prescribed spectrum, for closed-form checks.
///
/// Every client shares the same curvature and center, so local gradients
/// vanish at the optimum.
pub fn quadratic_problem(
    dim: usize,
    eig_min: f64,
    eig_max: f64,
    clients: usize,
    samples_per_client: usize,
    center: DVector<f64>,
    rotation_seed: u64,
) -> Result<GlobalObjective> {
    check_dim(dim, center.len())?;
    if !(eig_min > 0.0 && eig_max >= eig_min) {
        return Err(Error::InvalidArgument(format!("bad spectrum [{eig_min}, {eig_max}]")));
    }
    let mut r = crate::rng::stream(rotation_seed, &[crate::rng::tag::DATA, 1]);
    let g = DMatrix::from_fn(dim, dim, |_, _| crate::rng::normal(&mut r));
    let q = g.qr().q();
    let eig = DVector::from_fn(dim, |i, _| {
        if dim == 1 {
            eig_min
        } else {
            eig_min + (eig_max - eig_min) * i as f64 / (dim - 1) as f64
        }
    });
    let a = linalg::symmetrize(&(&q * DMatrix::from_diagonal(&eig) * q.transpose()));
    let locals = (0..clients)
        .map(|_| {
            LocalObjective::Quadratic(QuadraticLoss {
                curvature: a.clone(),
                center: center.clone(),
                samples: samples_per_client,
            })
        })
        .collect();
    GlobalObjective::new(locals)
}

/// Exact eigenvalues of a symmetric matrix, ascending.
pub fn spectrum(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(linalg::symmetrize(m)).eigenvalues.iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}

use nalgebra::{DMatrix, DVector};

/// Curvature threshold below which an update is skipped.
pub const C_DAMP: f64 = 1e-8;

fn curvature_ok(w: &DVector<f64>, y: &DVector<f64>) -> bool {
    let wy = w.dot(y);
    wy.is_finite() && wy > C_DAMP * w.norm() * y.norm()
}

/// One BFGS update `B − BwwᵀB/(wᵀBw) + yyᵀ/(wᵀy)`.
///
/// Returns the matrix and whether the update was applied. Skipped updates
/// return `b_prev` unchanged.
pub fn bfgs_sample(b_prev: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> (DMatrix<f64>, bool) {
    if !curvature_ok(w, y) {
        return (b_prev.clone(), false);
    }
    let bw = b_prev * w;
    let wbw = w.dot(&bw);
    if !(wbw > 0.0) {
        return (b_prev.clone(), false);
    }
    let mut next = b_prev - &bw * bw.transpose() / wbw + y * y.transpose() / w.dot(y);
    // keep exact symmetry
    next = (&next + next.transpose()) * 0.5;
    (next, true)
}

/// Inverse of [`bfgs_sample`]'s output from the previous inverse alone, as
/// two Sherman–Morrison steps: first add `yyᵀ/(wᵀy)`, then remove
/// `uuᵀ/(wᵀBw)` with `u = Bw`.
pub fn inverse_update(binv_prev: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> (DMatrix<f64>, bool) {
    if !curvature_ok(w, y) {
        return (binv_prev.clone(), false);
    }
    let wy = w.dot(y);
    let hy = binv_prev * y;
    let yhy = y.dot(&hy);
    let step1 = binv_prev - &hy * hy.transpose() / (wy + yhy);
    // B2⁻¹u = w − B2⁻¹y since Bw = B2w − y
    let v = w - &step1 * y;
    let denom = wy * wy / (wy + yhy);
    let mut next = step1 + &v * v.transpose() / denom;
    next = (&next + next.transpose()) * 0.5;
    (next, true)
}

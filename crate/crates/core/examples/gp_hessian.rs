//! Hessian estimation from noisy gradient differences on a quadratic with
//! known curvature, with and without the observation window.

use gpfl::gp::{delta_probe, GpHessianEstimator, GpOptions, TauChoice};
use gpfl::loss::quadratic_problem;
use gpfl::rng;
use nalgebra::DVector;

fn main() -> gpfl::Result<()> {
    let d = 6;
    let objective = quadratic_problem(d, 1.0, 3.0, 1, 10, DVector::zeros(d), 4)?;
    let constants = objective.constants();
    let theta = DVector::zeros(d);
    let hessian = objective.hessian(&theta)?;

    for noise in [0.0f64, 0.05] {
        for window in [0, 10] {
            let opts = GpOptions {
                window,
                tau: TauChoice::Fixed(1e4),
                ..GpOptions::default()
            };
            let mut est = GpHessianEstimator::new(d, constants, opts);
            let mut r = rng::stream(9, &[noise.to_bits()]);
            let mut last = f64::NAN;
            for t in 0..40u64 {
                let w = DVector::from_fn(d, |_, _| 0.1 * rng::normal(&mut r));
                let y = &hessian * &w + DVector::from_fn(d, |_, _| noise * rng::normal(&mut r));
                est.observe(w, y);
                last = delta_probe(&est.estimate(1, t)?.b_hat, &hessian);
            }
            println!(
                "noise {noise:<4} window {window:<2}: delta probe {last:.4} ({} applied, {} skipped updates)",
                est.applied_updates, est.skipped_updates
            );
        }
    }
    Ok(())
}

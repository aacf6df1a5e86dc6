//! Min-max receiver design: DC iterations against the matched-filter baseline.

use gpfl::channel::draw_channels;
use gpfl::receiver::{design_receiver, mrc_baseline, variance_objective, DcOptions, InnerSolver};

fn main() -> gpfl::Result<()> {
    let sizes = vec![100.0; 8];
    for seed in 0..4 {
        let h = draw_channels(sizes.len(), 5, seed);
        let mrc = variance_objective(&mrc_baseline(&h), &h, &sizes);
        let barrier = design_receiver(&h, &sizes, DcOptions::default())?;
        let projected = design_receiver(
            &h,
            &sizes,
            DcOptions {
                solver: InnerSolver::ProjectedGradient,
                max_iter: 30,
                ..DcOptions::default()
            },
        )?;
        println!(
            "seed {seed}: mrc {mrc:>10.2}  dc {:>10.2} ({} iters, rank residual {:.1e})  projected {:>10.2}",
            barrier.objective, barrier.iterations, barrier.rank_residual, projected.objective
        );
    }
    Ok(())
}

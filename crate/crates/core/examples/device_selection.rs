//! Device selection: annealed sampler against exhaustive search.

use gpfl::channel::{draw_channels, effective_channel};
use gpfl::scheduler::{brute_force, select_devices, GibbsOptions, ScheduleProblem};

fn main() -> gpfl::Result<()> {
    let k = 10;
    let sizes: Vec<f64> = (0..k).map(|i| 40.0 + 7.0 * i as f64).collect();
    let sigmas: Vec<f64> = (0..k).map(|i| 0.05 * (i + 1) as f64).collect();
    for rho in [0.0, 1e-4] {
        for seed in 0..3 {
            let h: Vec<_> = draw_channels(k, 4, seed).iter().map(|h| effective_channel(h, 2.0)).collect();
            let problem = ScheduleProblem {
                h_eff: &h,
                sizes: &sizes,
                sigmas: &sigmas,
                p0: 1.0,
                dim: 20,
            };
            let opts = GibbsOptions { rho, ..GibbsOptions::default() };
            let annealed = select_devices(&problem, opts, seed)?;
            let best = brute_force(&problem, rho)?;
            println!(
                "rho {rho:.0e} seed {seed}: sampler {:?} J={:.4e} | exhaustive {:?} J={:.4e}",
                annealed.selected, annealed.objective, best.selected, best.objective
            );
        }
    }
    Ok(())
}

//! Distance-to-optimum bound against simulated runs on a quadratic.

use gpfl::analysis::{empirical_check, rounds_to_epsilon, trace_for_records, BoundInputs, Convergence, T0Form};
use gpfl::config::RunConfig;
use gpfl::engine::{run_method, MethodKind};
use nalgebra::DVector;

fn main() -> gpfl::Result<()> {
    let cfg = RunConfig::from_toml(
        r#"
[dataset]
kind = "quadratic"
features = 10
clients = 5
center_scale = 0.5

[scheduler]
kind = "uniform"

[run]
rounds = 15
"#,
    )?;
    let world = cfg.world()?;
    let theta0 = DVector::zeros(world.objective.dim());
    let g0 = world.objective.gradient(&theta0)?.norm();

    for method in [MethodKind::NewtonIdeal, MethodKind::Gpfl] {
        let mut records = Vec::new();
        for seed in 0..5 {
            records.extend(run_method(&world, cfg.method_options(method)?, seed, theta0.clone(), cfg.run.rounds)?);
        }
        let delta = (method == MethodKind::NewtonIdeal).then_some(0.0);
        let (trace, avg) = trace_for_records(world.constants, g0, delta, T0Form::Corrected, &records)?;
        let report = empirical_check(&avg.dist, &trace)?;
        println!("{method}: delta {:.3}, mu {:.3}, fraction below bound {:.2}", trace.inputs.delta, trace.inputs.mu(), report.fraction);
        for row in report.rows.iter().step_by(3) {
            println!("  t={:<3} observed {:.3e}  bound {:.3e}", row.round, row.observed, row.bound);
        }
    }

    let inputs = BoundInputs::new(world.constants, 0.2, g0);
    for eps in [1e-2, 1e-4, 1e-8] {
        println!(
            "eps {eps:.0e}: linear regime {} rounds",
            rounds_to_epsilon(&inputs, eps, Convergence::Linear, 1.0)?
        );
    }
    Ok(())
}

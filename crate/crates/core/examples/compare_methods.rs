//! All four training methods on one synthetic logistic task with shared
//! channel randomness.

use gpfl::config::RunConfig;
use gpfl::engine::run_method;
use nalgebra::DVector;

fn main() -> gpfl::Result<()> {
    let cfg = RunConfig::from_toml(
        r#"
[dataset]
features = 20
samples = 1000
clients = 10

[channel]
p0 = 1e-4

[scheduler]
kind = "uniform"

[receiver]
max_iter = 10

[run]
rounds = 30
methods = ["newton_ideal", "gpfl", "bfgs_air", "fedavg_air"]
"#,
    )?;
    let world = cfg.world()?;
    let optimum = world.optimum.clone().expect("computed by the config");
    println!("optimal loss {:.5}", world.objective.loss(&optimum)?);
    for method in cfg.methods()? {
        let rows = run_method(&world, cfg.method_options(method)?, 0, DVector::zeros(world.objective.dim()), cfg.run.rounds)?;
        let last = rows.last().expect("final row");
        let trail: Vec<String> = rows.iter().step_by(10).map(|r| format!("{:.4}", r.loss)).collect();
        println!(
            "{method:<13} loss {:.5} accuracy {:.3} dist {:.3e}   trajectory {}",
            last.loss,
            last.accuracy,
            last.dist_to_opt,
            trail.join(" ")
        );
    }
    Ok(())
}

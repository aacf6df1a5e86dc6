//! Observation-window sweep through the same path as `gpfl sweep`.

use gpfl::cli::sweep_to_dir;
use gpfl::config::RunConfig;

fn main() -> gpfl::Result<()> {
    let cfg = RunConfig::from_toml(
        r#"
[dataset]
features = 10
samples = 500
clients = 8

[channel]
p0 = 1e-3

[scheduler]
kind = "uniform"

[receiver]
max_iter = 10

[run]
rounds = 20
seeds = [0, 1, 2]
methods = ["gpfl"]
"#,
    )?;
    let dir = std::env::temp_dir().join("gpfl-r-sweep");
    let values: Vec<String> = ["0", "5", "20"].iter().map(|s| s.to_string()).collect();
    let rows = sweep_to_dir(&cfg, "r", &values, &dir)?;
    for row in rows {
        println!("r = {:<3} median final loss {:.5}, accuracy {:.3}", row.value, row.final_loss, row.final_accuracy);
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

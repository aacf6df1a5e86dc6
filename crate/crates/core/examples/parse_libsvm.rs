//! Parse LIBSVM text, split it across clients and fit the pooled model.

use gpfl::dataio::{parse_libsvm_str, partition, synth_logistic, to_libsvm, PartitionScheme};
use gpfl::loss::{GlobalObjective, LocalObjective, LogisticLoss};

fn main() -> gpfl::Result<()> {
    let text = "+1 1:0.5 3:-2\n0 2:1.25\n-1 1:-0.3 2:0.7 3:0.1\r\n";
    let parsed = parse_libsvm_str(text)?;
    println!("parsed {} samples, dimension {}", parsed.len(), parsed.dim);
    for s in &parsed.samples {
        println!("  label {:+} features {:?}", s.label, s.features);
    }

    // a larger synthetic set goes through the same text format
    let (data, _planted) = synth_logistic(8, 600, 3.0, 11)?;
    let round_trip = parse_libsvm_str(&to_libsvm(&data.samples))?;
    assert_eq!(round_trip.samples, data.samples);

    for scheme in [PartitionScheme::Iid, PartitionScheme::Dirichlet { beta: 0.3 }] {
        let parts = partition(&data.samples, 6, scheme, 5)?;
        println!("{scheme:?}: client sizes {:?}", parts.sizes());
    }

    let parts = partition(&data.samples, 6, PartitionScheme::Iid, 5)?;
    let clients = parts
        .assignments
        .iter()
        .map(|idx| {
            let (x, y) = data.dense(idx);
            LogisticLoss::new(x, y, 0.05).map(LocalObjective::Logistic)
        })
        .collect::<gpfl::Result<Vec<_>>>()?;
    let objective = GlobalObjective::new(clients)?;
    let c = objective.constants();
    let opt = objective.optimum()?;
    println!(
        "lambda {:.3} L {:.3}; optimum loss {:.5}, accuracy {:.3}",
        c.lambda,
        c.big_l,
        objective.loss(&opt)?,
        objective.accuracy(&opt)
    );
    Ok(())
}

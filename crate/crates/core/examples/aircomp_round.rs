//! One over-the-air aggregation: zero-forcing scaling, superposition and
//! receiver noise, compared with the noiseless weighted gradient.

use gpfl::channel::{
    draw_channels, effective_channel, noise_variance, transmit_round, zf_alpha, ChannelRealization, ReceiverWeights,
};
use gpfl::receiver::{design_receiver, DcOptions};
use gpfl::rng;
use nalgebra::DVector;

fn main() -> gpfl::Result<()> {
    let (clients, antennas, d) = (6, 4, 12);
    let h = draw_channels(clients, antennas, 42);
    let mut r = rng::stream(42, &[7]);
    let gradients: Vec<DVector<f64>> = (0..clients).map(|_| DVector::from_fn(d, |_, _| rng::normal(&mut r))).collect();
    let sizes: Vec<f64> = (0..clients).map(|k| 50.0 + 10.0 * k as f64).collect();
    let total: f64 = sizes.iter().sum();

    let h_eff: Vec<_> = h.iter().zip(&gradients).map(|(h, g)| effective_channel(h, g.norm())).collect();
    let design = design_receiver(&h_eff, &sizes, DcOptions::default())?;
    let alpha = zf_alpha(&design.c, &h_eff, &sizes, 1.0, d)?;
    let weights = ReceiverWeights { c: design.c.clone(), alpha };

    for sigma in [0.0, 0.05, 0.5] {
        let realization = ChannelRealization {
            h: h.clone(),
            sigma,
            antennas,
        };
        let agg = transmit_round(&gradients, &realization, &weights, &sizes, total, 3)?;
        let err = (&agg.g_tilde - &agg.target).norm();
        let predicted = (d as f64 * noise_variance(sigma, &design.c, total, alpha) / 2.0).sqrt();
        println!("sigma {sigma:<5} |g~ - g| = {err:.3e}   predicted rms {predicted:.3e}");
    }
    println!("alpha {alpha:.4e}, receiver objective {:.4}", design.objective);
    Ok(())
}

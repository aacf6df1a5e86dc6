//! Analog over-the-air aggregation on a multi-antenna fading uplink.
//!
//! Each client normalizes its gradient, scales it with a zero-forcing factor
//! and transmits it entry by entry. The server sees the superposition plus
//! AWGN, applies the receive vector `c` and rescales to recover a noisy
//! estimate of the weighted gradient average.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::index;

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, tag};

pub type CVector = DVector<Complex64>;

/// One coherence block: a channel vector per selected client and the
/// receiver noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<CVector>,
    /// Noise standard deviation per complex receive entry.
    pub sigma: f64,
    pub antennas: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverWeights {
    pub c: CVector,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct NoisyAggregate {
    pub g_tilde: DVector<f64>,
    /// Realized real-valued error `g̃ − g`.
    pub noise_used: DVector<f64>,
    /// The complex post-processed noise `cᴴn_j / (|D|√α)` per symbol, before
    /// the real part is taken.
    pub noise_complex: Vec<Complex64>,
    /// The noiseless weighted aggregate `(1/|D|) Σ |D_k| g_k`.
    pub target: DVector<f64>,
}

/// `s = g / ‖g‖₂`.
pub fn normalize_gradient(g: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = g.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroGradient);
    }
    Ok(g / norm)
}

/// `ĥ = h / ‖g‖₂`.
pub fn effective_channel(h: &CVector, gradient_norm: f64) -> CVector {
    h.map(|z| z / gradient_norm)
}

fn projection_sq(c: &CVector, h_eff: &CVector) -> f64 {
    c.dotc(h_eff).norm_sqr()
}

/// Zero-forcing power factor `α = P0·d·min_k |cᴴĥ_k|² / |D_k|²`.
pub fn zf_alpha(c: &CVector, h_eff: &[CVector], sizes: &[f64], p0: f64, dim: usize) -> Result<f64> {
    check_dim(h_eff.len(), sizes.len())?;
    if h_eff.is_empty() {
        return Err(Error::InvalidArgument("no clients to aggregate".into()));
    }
    let mut best = f64::INFINITY;
    for (k, (h, &size)) in h_eff.iter().zip(sizes).enumerate() {
        check_dim(c.len(), h.len())?;
        let proj = projection_sq(c, h);
        if proj == 0.0 {
            return Err(Error::DegenerateReceiver(k));
        }
        best = best.min(proj / (size * size));
    }
    Ok(p0 * dim as f64 * best)
}

/// Transmit scaling `b_k = √α·|D_k|·ĥ_kᴴc / |cᴴĥ_k|²`.
pub fn scale_factor(alpha: f64, size: f64, h_eff: &CVector, c: &CVector) -> Result<Complex64> {
    check_dim(c.len(), h_eff.len())?;
    let proj = projection_sq(c, h_eff);
    if proj == 0.0 {
        return Err(Error::DegenerateReceiver(0));
    }
    // ĥᴴc
    let inner = h_eff.dotc(c);
    Ok(inner * (alpha.sqrt() * size / proj))
}

/// Superimposes the clients' scaled, normalized gradients over the channel
/// and post-processes the received signal.
///
/// `realization.h` holds the physical channels of the participating clients
/// in the same order as `gradients`. Noise for symbol `j` comes from the
/// stream keyed by `(noise_seed, j)`.
pub fn transmit_round(
    gradients: &[DVector<f64>],
    realization: &ChannelRealization,
    weights: &ReceiverWeights,
    sizes: &[f64],
    total: f64,
    noise_seed: u64,
) -> Result<NoisyAggregate> {
    check_dim(gradients.len(), realization.h.len())?;
    check_dim(gradients.len(), sizes.len())?;
    let Some(first) = gradients.first() else {
        return Err(Error::InvalidArgument("no clients to aggregate".into()));
    };
    let d = first.len();
    let n_ant = realization.antennas;
    check_dim(n_ant, weights.c.len())?;

    // per-client transmit chain: normalized signal and the effective channel times b_k
    let mut signals = Vec::with_capacity(gradients.len());
    let mut gains = Vec::with_capacity(gradients.len());
    let mut target = DVector::zeros(d);
    for ((g, h), &size) in gradients.iter().zip(&realization.h).zip(sizes) {
        check_dim(d, g.len())?;
        check_dim(n_ant, h.len())?;
        let norm = g.norm();
        let s = normalize_gradient(g)?;
        let h_eff = effective_channel(h, norm);
        let b = scale_factor(weights.alpha, size, &h_eff, &weights.c)?;
        // h_k x_k[j] = h_k b s[j]; keep the combined antenna response h_k·b
        gains.push(h.map(|z| z * b));
        signals.push(s);
        target.axpy(size / total, g, 1.0);
    }

    let scale = 1.0 / (total * weights.alpha.sqrt());
    let mut g_tilde = DVector::zeros(d);
    let mut noise_complex = Vec::with_capacity(d);
    let mut r = CVector::zeros(n_ant);
    for j in 0..d {
        r.fill(Complex64::new(0.0, 0.0));
        for (gain, s) in gains.iter().zip(&signals) {
            r.axpy(Complex64::new(s[j], 0.0), gain, Complex64::new(1.0, 0.0));
        }
        let mut nrng = rng::stream(noise_seed, &[tag::NOISE, j as u64]);
        let noise = CVector::from_fn(n_ant, |_, _| rng::complex_normal(&mut nrng, realization.sigma * realization.sigma));
        r += &noise;
        g_tilde[j] = weights.c.dotc(&r).re * scale;
        noise_complex.push(weights.c.dotc(&noise) * scale);
    }
    let noise_used = &g_tilde - &target;
    Ok(NoisyAggregate {
        g_tilde,
        noise_used,
        noise_complex,
        target,
    })
}

/// Predicted per-entry variance `σ²‖c‖² / (|D|²α)` of the complex noise.
pub fn noise_variance(sigma: f64, c: &CVector, total: f64, alpha: f64) -> f64 {
    sigma * sigma * c.norm_squared() / (total * total * alpha)
}

/// I.i.d. Rayleigh channels: entries are CN(0, 1).
pub fn draw_channels(clients: usize, antennas: usize, seed: u64) -> Vec<CVector> {
    let mut r = rng::stream(seed, &[tag::CHANNEL]);
    (0..clients)
        .map(|_| CVector::from_fn(antennas, |_, _| rng::complex_normal(&mut r, 1.0)))
        .collect()
}

/// `{step, 2·step, …, count·step}`; the default grid is 0.005 … 1.
pub fn sigma_grid(step: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| step * i as f64).collect()
}

/// Samples one noise level per client from the grid, without replacement
/// when the grid is large enough.
pub fn assign_client_sigmas(clients: usize, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sigma grid".into()));
    }
    let mut r = rng::stream(seed, &[tag::SIGMA]);
    if clients <= grid.len() {
        Ok(index::sample(&mut r, grid.len(), clients).into_iter().map(|i| grid[i]).collect())
    } else {
        Ok((0..clients)
            .map(|_| grid[rand::Rng::random_range(&mut r, 0..grid.len())])
            .collect())
    }
}

/// Receiver noise level for a participating set: independent per-link
/// contributions add in power.
pub fn combined_sigma(client_sigmas: &[f64], selected: &[usize]) -> f64 {
    selected.iter().map(|&k| client_sigmas[k] * client_sigmas[k]).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn normalizes_three_four_five() {
        let s = normalize_gradient(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-15 && (s[1] - 0.8).abs() < 1e-15);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(normalize_gradient(&e1).unwrap(), e1);
    }

    #[test]
    fn zero_gradient_is_rejected() {
        assert!(matches!(normalize_gradient(&DVector::zeros(3)), Err(Error::ZeroGradient)));
    }

    #[test]
    fn random_gradient_normalizes_to_unit_and_parallel() {
        let mut r = rng::stream(1, &[]);
        let g = DVector::from_fn(50, |_, _| rng::normal(&mut r));
        let s = normalize_gradient(&g).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert!((s.dot(&g) / g.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_single_client() {
        let cv = CVector::from_vec(vec![c(1.0, 0.0)]);
        let h = CVector::from_vec(vec![c(1.0, 0.0)]);
        let a = zf_alpha(&cv, &[h], &[1.0], 1.0, 4).unwrap();
        assert!((a - 4.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_takes_minimum() {
        let cv = CVector::from_vec(vec![c(1.0, 0.0)]);
        // |cᴴĥ|²/|D|² = 2 and 0.5
        let h1 = CVector::from_vec(vec![c(2f64.sqrt(), 0.0)]);
        let h2 = CVector::from_vec(vec![c(0.0, 1.0)]);
        let a = zf_alpha(&cv, &[h1, h2], &[1.0, 2f64.sqrt()], 0.25, 4).unwrap();
        assert!((a - 0.5).abs() < 1e-14);
    }

    #[test]
    fn degenerate_receiver_is_an_error() {
        let cv = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let h = CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(zf_alpha(&cv, &[h], &[1.0], 1.0, 2), Err(Error::DegenerateReceiver(0))));
    }

    #[test]
    fn scaling_is_tight_for_argmin_client() {
        let chans = draw_channels(4, 3, 7);
        let cv = draw_channels(1, 3, 8).remove(0);
        let sizes = [3.0, 5.0, 2.0, 7.0];
        let (p0, d) = (0.7, 6);
        let alpha = zf_alpha(&cv, &chans, &sizes, p0, d).unwrap();
        let powers: Vec<f64> = chans
            .iter()
            .zip(&sizes)
            .map(|(h, &s)| scale_factor(alpha, s, h, &cv).unwrap().norm_sqr() / d as f64)
            .collect();
        let max = powers.iter().cloned().fold(0.0, f64::max);
        assert!((max - p0).abs() < 1e-9);
        assert!(powers.iter().all(|&p| p <= p0 + 1e-12));
    }

    #[test]
    fn scaling_vanishes_with_alpha() {
        let h = CVector::from_vec(vec![c(0.3, 0.4)]);
        let cv = CVector::from_vec(vec![c(1.0, 0.0)]);
        assert!(scale_factor(1e-30, 2.0, &h, &cv).unwrap().norm() < 1e-13);
    }

    #[test]
    fn per_symbol_power_within_budget() {
        // E|b s[j]|² over the entries of a unit vector equals |b|²/d
        let chans = draw_channels(3, 4, 2);
        let cv = draw_channels(1, 4, 3).remove(0);
        let sizes = [4.0, 4.0, 9.0];
        let d = 200;
        let p0 = 1.5;
        let alpha = zf_alpha(&cv, &chans, &sizes, p0, d).unwrap();
        let mut r = rng::stream(4, &[]);
        for (h, &size) in chans.iter().zip(&sizes) {
            let b = scale_factor(alpha, size, h, &cv).unwrap();
            let g = DVector::from_fn(d, |_, _| rng::normal(&mut r));
            let s = normalize_gradient(&g).unwrap();
            let power = s.iter().map(|x| (b * x).norm_sqr()).sum::<f64>() / d as f64;
            assert!(power <= p0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn channel_draws_are_deterministic_with_requested_shape() {
        let a = draw_channels(3, 5, 11);
        assert_eq!(a, draw_channels(3, 5, 11));
        assert!(a.iter().all(|h| h.len() == 5));
    }

    #[test]
    fn channel_entries_have_unit_variance() {
        let draws = draw_channels(10_000, 1, 5);
        let var = draws.iter().map(|h| h[0].norm_sqr()).sum::<f64>() / draws.len() as f64;
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn noiseless_round_recovers_weighted_average() {
        let d = 6;
        let mut r = rng::stream(21, &[]);
        let grads: Vec<_> = (0..3).map(|_| DVector::from_fn(d, |_, _| rng::normal(&mut r))).collect();
        let h = draw_channels(3, 5, 22);
        let sizes = [10.0, 20.0, 30.0];
        let h_eff: Vec<_> = h.iter().zip(&grads).map(|(h, g)| effective_channel(h, g.norm())).collect();
        let cv = h_eff.iter().fold(CVector::zeros(5), |acc, x| acc + x);
        let alpha = zf_alpha(&cv, &h_eff, &sizes, 1.0, d).unwrap();
        let real = ChannelRealization { h, sigma: 0.0, antennas: 5 };
        let out = transmit_round(&grads, &real, &ReceiverWeights { c: cv, alpha }, &sizes, 60.0, 1).unwrap();
        assert!((&out.g_tilde - &out.target).amax() < 1e-10);
        assert!((&out.target + &out.noise_used - &out.g_tilde).amax() < 1e-15);
    }

    #[test]
    fn sigma_grid_default_endpoints() {
        let g = sigma_grid(0.005, 200);
        assert_eq!(g.len(), 200);
        assert!((g[0] - 0.005).abs() < 1e-15 && (g[199] - 1.0).abs() < 1e-12);
        let s = assign_client_sigmas(20, &g, 3).unwrap();
        assert_eq!(s, assign_client_sigmas(20, &g, 3).unwrap());
        assert_eq!(s.len(), 20);
    }
}

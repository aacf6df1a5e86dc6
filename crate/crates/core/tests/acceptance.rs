//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line and
//! asserts both the property and its runtime budget.

use std::time::{Duration, Instant};

use gpfl::analysis::{bound_trace, empirical_check, rounds_to_epsilon, trace_for_records, BoundInputs, Convergence, T0Form};
use gpfl::channel::{draw_channels, effective_channel, noise_variance, transmit_round, zf_alpha, ChannelRealization, CVector, ReceiverWeights};
use gpfl::cli::{median, run_cells, run_to_dir};
use gpfl::config::RunConfig;
use gpfl::engine::{learning_rate, run_method, MethodKind, RoundRecord};
use gpfl::gp::kernel::rbf_column;
use gpfl::gp::{bfgs_sample, delta_probe, entry_posterior, inverse_update, ObservationWindow, PosteriorSign, TauChoice};
use gpfl::receiver::{design_receiver, mrc_baseline, variance_objective, DcOptions};
use gpfl::rng;
use gpfl::scheduler::{brute_force, select_devices, GibbsOptions, ScheduleProblem};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) {
    let within = elapsed <= limit;
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    println!(
        "criterion {id:>2} {name}: {verdict} ({detail}; {:.1}s of {:.0}s)",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(ok, "criterion {id} ({name}) violated: {detail}");
    assert!(within, "criterion {id} ({name}) exceeded its runtime budget");
}

fn random_vec(r: &mut impl Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng::normal(r))
}

/// Synthetic logistic regression at desk scale with full participation and
/// a power budget low enough that channel noise matters.
fn desk_config() -> RunConfig {
    RunConfig::from_toml(
        r#"
[dataset]
kind = "synthetic"
features = 30
samples = 2000
clients = 20

[channel]
p0 = 1e-4

[scheduler]
kind = "uniform"

[receiver]
max_iter = 10

[run]
rounds = 50
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
"#,
    )
    .expect("desk config is valid")
}

fn final_rows(records: &[RoundRecord], method: MethodKind, rounds: usize) -> Vec<&RoundRecord> {
    records.iter().filter(|r| r.method == method && r.round == rounds).collect()
}

#[test]
fn c01_noiseless_aggregation_is_exact() {
    let start = Instant::now();
    let mut r = rng::stream(1, &[]);
    let mut worst: f64 = 0.0;
    for inst in 0..500u64 {
        let k = r.random_range(1..=8);
        let n = r.random_range(1..=6);
        let d = r.random_range(1..=20);
        let h = draw_channels(k, n, inst);
        let grads: Vec<DVector<f64>> = (0..k).map(|_| random_vec(&mut r, d) * r.random_range(0.01..10.0)).collect();
        let sizes: Vec<f64> = (0..k).map(|_| r.random_range(1..200) as f64).collect();
        let total: f64 = sizes.iter().sum();
        let c = CVector::from_fn(n, |_, _| rng::complex_normal(&mut r, 1.0));
        let h_eff: Vec<CVector> = h.iter().zip(&grads).map(|(h, g)| effective_channel(h, g.norm())).collect();
        let alpha = zf_alpha(&c, &h_eff, &sizes, r.random_range(0.1..10.0), d).unwrap();
        let realization = ChannelRealization { h, sigma: 0.0, antennas: n };
        let agg = transmit_round(&grads, &realization, &ReceiverWeights { c, alpha }, &sizes, total, inst).unwrap();
        let expected = grads.iter().zip(&sizes).fold(DVector::zeros(d), |acc, (g, s)| acc + g * (s / total));
        worst = worst.max((&agg.g_tilde - &expected).amax());
    }
    report(1, "zero-forcing exactness", worst <= 1e-10, start.elapsed(), Duration::from_secs(10), format!("max error {worst:.2e}"));
}

#[test]
fn c02_noise_statistics() {
    let start = Instant::now();
    let (k, n, d) = (4, 4, 100_000);
    let h = draw_channels(k, n, 5);
    let mut r = rng::stream(2, &[]);
    let grads: Vec<DVector<f64>> = (0..k).map(|_| random_vec(&mut r, d)).collect();
    let sizes = vec![30.0, 50.0, 70.0, 90.0];
    let total: f64 = sizes.iter().sum();
    let h_eff: Vec<CVector> = h.iter().zip(&grads).map(|(h, g)| effective_channel(h, g.norm())).collect();
    let c = mrc_baseline(&h_eff);
    let alpha = zf_alpha(&c, &h_eff, &sizes, 1.0, d).unwrap();
    let sigma = 0.3;
    let realization = ChannelRealization { h, sigma, antennas: n };
    let agg = transmit_round(&grads, &realization, &ReceiverWeights { c: c.clone(), alpha }, &sizes, total, 77).unwrap();

    let predicted = noise_variance(sigma, &c, total, alpha);
    let m = d as f64;
    let mean: Complex64 = agg.noise_complex.iter().sum::<Complex64>() / m;
    let var = agg.noise_complex.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (m - 1.0);
    // each component carries half the complex variance
    let se = (predicted / 2.0 / m).sqrt();
    let mean_ok = mean.re.abs() <= 4.0 * se && mean.im.abs() <= 4.0 * se;
    let rel = (var - predicted).abs() / predicted;
    // the real part is what reaches the model
    let real_noise = &agg.g_tilde - &agg.target;
    let real_rel = (real_noise.norm_squared() / m - predicted / 2.0).abs() / (predicted / 2.0);
    report(
        2,
        "aggregation noise statistics",
        mean_ok && rel <= 0.05 && real_rel <= 0.05,
        start.elapsed(),
        Duration::from_secs(30),
        format!(
            "mean ({:.2}, {:.2}) standard errors, variance off by {:.2}%, real part off by {:.2}%",
            mean.re / se,
            mean.im / se,
            100.0 * rel,
            100.0 * real_rel
        ),
    );
}

/// Conditions the assembled joint Gaussian of `(o, b)` directly.
fn dense_conditioning(o: &DVector<f64>, mu: &DVector<f64>, b_now: f64, b_mean: f64, tau: f64, jitter: f64) -> (f64, f64) {
    let n = o.len();
    let mut z = o.as_slice().to_vec();
    z.push(b_now);
    let mut joint = DMatrix::from_fn(n + 1, n + 1, |i, j| (-(z[i] - z[j]).powi(2) / (2.0 * tau * tau)).exp());
    for i in 0..n {
        joint[(i, i)] += jitter;
    }
    let k_oo = joint.view((0, 0), (n, n)).into_owned();
    let k_bo = joint.view((n, 0), (1, n)).into_owned();
    let inv = k_oo.try_inverse().expect("jittered kernel is invertible");
    let gain = &k_bo * &inv;
    let zeta = b_mean - (&gain * (o - mu))[(0, 0)];
    let psi = joint[(n, n)] - (&gain * k_bo.transpose())[(0, 0)];
    (zeta, psi)
}

#[test]
fn c03_posterior_matches_joint_gaussian_conditioning() {
    let start = Instant::now();
    let mut r = rng::stream(3, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = r.random_range(1..=4);
        let width = r.random_range(1..=(8 / d));
        let mut window = ObservationWindow::new(width);
        for _ in 0..r.random_range(width..=width + 2) {
            let b = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
            window.push(random_vec(&mut r, d), random_vec(&mut r, d), b);
        }
        let tau = r.random_range(0.3..3.0);
        let jitter = 1e-3;
        let cache = window.cache(TauChoice::Fixed(tau), jitter).unwrap();
        let (i, j) = (r.random_range(0..d), r.random_range(0..d));
        let history: Vec<f64> = window.b_samples.iter().map(|b| b[(i, j)]).collect();
        let b_now = r.random_range(-1.0..1.0);
        let post = entry_posterior(&cache, &history, b_now, &window.o(), PosteriorSign::Paper, (i, j)).unwrap();
        let b_mean = history.iter().sum::<f64>() / history.len() as f64;
        let (zeta, psi) = dense_conditioning(&window.o(), &window.mu_o(), b_now, b_mean, tau, cache.jitter);
        worst = worst.max((post.zeta - zeta).abs()).max((post.psi - psi).abs());
        assert_eq!(rbf_column(cache.o.as_slice(), b_now, tau).len(), cache.len());
    }
    report(3, "posterior equals dense conditioning", worst <= 1e-8, start.elapsed(), Duration::from_secs(5), format!("max deviation {worst:.2e}"));
}

#[test]
fn c04_secant_and_inverse_identities() {
    let start = Instant::now();
    let mut r = rng::stream(4, &[]);
    let (mut secant, mut inverse): (f64, f64) = (0.0, 0.0);
    let mut applied = 0usize;
    for case in 0..1000u64 {
        let d = r.random_range(2..=8);
        let g = DMatrix::from_fn(d, d, |_, _| rng::normal(&mut r));
        let a = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        let mut b = DMatrix::identity(d, d) * r.random_range(0.5..2.0);
        let mut binv = b.clone().try_inverse().unwrap();
        for _ in 0..20 {
            let w = random_vec(&mut r, d);
            // occasionally noisy enough to violate curvature
            let y = &a * &w + random_vec(&mut r, d) * 0.3;
            let (next, ok) = bfgs_sample(&b, &w, &y);
            let (next_inv, ok_inv) = inverse_update(&binv, &w, &y);
            assert_eq!(ok, ok_inv, "case {case}: skip decisions differ");
            if ok {
                applied += 1;
                secant = secant.max((&next * &w - &y).norm() / y.norm());
            } else {
                assert_eq!(next, b);
            }
            b = next;
            binv = next_inv;
        }
        let direct = b.clone().try_inverse().unwrap();
        inverse = inverse.max((&binv - &direct).norm() / direct.norm());
    }
    report(
        4,
        "secant and inverse-update identities",
        secant <= 1e-9 && inverse <= 1e-8,
        start.elapsed(),
        Duration::from_secs(10),
        format!("{applied} applied updates, secant residual {secant:.2e}, inverse drift {inverse:.2e}"),
    );
}

#[test]
fn c05_receiver_design() {
    let start = Instant::now();
    let mut r = rng::stream(5, &[]);
    let mut failures = Vec::new();
    let (mut worst_rank, mut worst_ratio): (f64, f64) = (0.0, 0.0);
    for inst in 0..100u64 {
        let k = r.random_range(1..=6);
        let h: Vec<CVector> = draw_channels(k, 5, 500 + inst)
            .iter()
            .map(|h| effective_channel(h, r.random_range(0.1..5.0)))
            .collect();
        let sizes: Vec<f64> = (0..k).map(|_| r.random_range(10..200) as f64).collect();
        let design = design_receiver(&h, &sizes, DcOptions::default()).unwrap();
        let feasible = h
            .iter()
            .zip(&sizes)
            .map(|(h, s)| design.c.dotc(h).norm_sqr() / (s * s))
            .fold(f64::INFINITY, f64::min);
        let mrc = variance_objective(&mrc_baseline(&h), &h, &sizes);
        worst_rank = worst_rank.max(design.rank_residual);
        worst_ratio = worst_ratio.max(design.objective / mrc);
        if feasible < 1.0 - 1e-9 || design.rank_residual > 1e-4 || design.objective > mrc * (1.0 + 1e-9) {
            failures.push(inst);
        }
    }
    let mut single: f64 = 0.0;
    for inst in 0..20u64 {
        let h = draw_channels(1, 5, 900 + inst);
        let size = 10.0 + inst as f64;
        let design = design_receiver(&h, &[size], DcOptions::default()).unwrap();
        let closed = size * size / h[0].norm_squared();
        single = single.max((design.objective - closed).abs() / closed);
    }
    report(
        5,
        "receiver design",
        failures.is_empty() && single <= 1e-6,
        start.elapsed(),
        Duration::from_secs(60),
        format!(
            "failing instances {failures:?}, worst rank residual {worst_rank:.1e}, worst objective/MRC {worst_ratio:.3}, single-client error {single:.1e}"
        ),
    );
}

#[test]
fn c06_scheduler_near_optimal() {
    let start = Instant::now();
    let mut r = rng::stream(6, &[]);
    let mut hits = 0;
    for trial in 0..100u64 {
        let k = r.random_range(2..=12);
        let h: Vec<CVector> = draw_channels(k, 5, 600 + trial)
            .iter()
            .map(|h| effective_channel(h, r.random_range(0.2..5.0)))
            .collect();
        let sizes: Vec<f64> = (0..k).map(|_| r.random_range(20..150) as f64).collect();
        let sigmas: Vec<f64> = (0..k).map(|_| r.random_range(1..=200) as f64 * 0.005).collect();
        let problem = ScheduleProblem {
            h_eff: &h,
            sizes: &sizes,
            sigmas: &sigmas,
            p0: 1.0,
            dim: 30,
        };
        let opts = GibbsOptions::default();
        let found = select_devices(&problem, opts, trial).unwrap();
        let best = brute_force(&problem, opts.rho).unwrap();
        if found.objective <= best.objective + 0.05 * best.objective.abs() {
            hits += 1;
        }
    }
    report(6, "scheduler optimality", hits >= 90, start.elapsed(), Duration::from_secs(60), format!("{hits}/100 within 5%"));
}

fn quadratic_config(rounds: usize) -> RunConfig {
    RunConfig::from_toml(&format!(
        r#"
[dataset]
kind = "quadratic"
features = 20
clients = 10
center_scale = 1.0

[run]
rounds = {rounds}
seeds = [{}]
methods = ["gpfl", "newton_ideal"]
"#,
        (0..20).map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
    ))
    .unwrap()
}

#[test]
fn c07_distance_bound_holds() {
    let start = Instant::now();
    let cfg = quadratic_config(30);
    let world = cfg.world().unwrap();
    let records = run_cells(&cfg, &world).unwrap();
    let g0 = world.objective.gradient(&DVector::zeros(20)).unwrap().norm();

    let gp: Vec<RoundRecord> = records.iter().filter(|r| r.method == MethodKind::Gpfl).cloned().collect();
    let (trace, avg) = trace_for_records(world.constants, g0, None, T0Form::Corrected, &gp).unwrap();
    let gp_report = empirical_check(&avg.dist, &trace).unwrap();

    let ideal: Vec<RoundRecord> = records.iter().filter(|r| r.method == MethodKind::NewtonIdeal).cloned().collect();
    let (trace_i, avg_i) = trace_for_records(world.constants, g0, Some(0.0), T0Form::Corrected, &ideal).unwrap();
    let ideal_report = empirical_check(&avg_i.dist, &trace_i).unwrap();

    report(
        7,
        "distance bound soundness",
        gp_report.fraction >= 0.95 && ideal_report.violations.is_empty(),
        start.elapsed(),
        Duration::from_secs(120),
        format!(
            "gpfl with probed delta {:.3} (mu {:.3}): {:.0}% of rounds below the bound; ideal Newton violations {:?}",
            trace.inputs.delta,
            trace.inputs.mu(),
            100.0 * gp_report.fraction,
            ideal_report.violations
        ),
    );
}

fn first_round_below(dist: &[f64], eps: f64) -> Option<usize> {
    dist.iter().position(|&d| d <= eps)
}

#[test]
fn c08_rounds_to_epsilon_shape() {
    let start = Instant::now();
    let eps_grid = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10];

    // exact Hessian, noiseless gradients
    let mut cfg = quadratic_config(40);
    cfg.run.seeds = vec![0];
    cfg.run.methods = vec!["newton_ideal".into()];
    let world = cfg.world().unwrap();
    let theta0 = DVector::zeros(20);
    let rows = run_method(&world, cfg.method_options(MethodKind::NewtonIdeal).unwrap(), 0, theta0.clone(), 40).unwrap();
    let probed = rows.iter().map(|r| r.delta_probe).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let dist: Vec<f64> = rows.iter().map(|r| r.dist_to_opt).collect();
    let quad: Vec<usize> = eps_grid.iter().map(|&e| first_round_below(&dist, e).expect("reaches eps")).collect();
    // doubly exponential decay: squaring 1/eps costs at most a constant number of rounds
    let allowed = (eps_grid[4].ln() / eps_grid[0].ln()).log2().ceil() as usize + 1;
    let superlinear_ok = probed < 1e-12 && quad[4] - quad[0] <= allowed;

    // constant relative error injected into the inverse Hessian
    let h = world.objective.hessian(&theta0).unwrap();
    let optimum = world.optimum.clone().unwrap();
    let c = world.constants;
    let mu = 0.4;
    let delta = mu * c.lambda / c.big_l;
    let h_inv = h.clone().try_inverse().unwrap();
    let b_inv = &h_inv - DMatrix::identity(20, 20) * (delta / c.lambda);
    let b_hat = b_inv.clone().try_inverse().unwrap();
    let probed_delta = delta_probe(&b_hat, &h);
    let eig = h.clone().symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let d0 = 0.2;
    let mut theta = &optimum + eig.eigenvectors.column(top) * d0;
    let mut dist = vec![d0];
    for _ in 0..60 {
        let g = world.objective.gradient(&theta).unwrap();
        let eta = learning_rate(c, g.norm());
        theta -= &b_inv * g * eta;
        dist.push((&theta - &optimum).norm());
    }
    let inputs = BoundInputs::new(c, probed_delta, h.norm());
    let mut linear_gaps = Vec::new();
    for &eps in &eps_grid {
        let observed = first_round_below(&dist, eps).expect("reaches eps") as i64;
        let predicted = rounds_to_epsilon(&inputs, eps, Convergence::Linear, d0).unwrap() as i64;
        linear_gaps.push(predicted - observed);
    }
    let linear_ok = (probed_delta - delta).abs() < 1e-9 && linear_gaps.iter().all(|g| g.abs() <= 1);
    report(
        8,
        "rounds-to-epsilon shape",
        superlinear_ok && linear_ok,
        start.elapsed(),
        Duration::from_secs(120),
        format!("exact Hessian rounds {quad:?} (allowed growth {allowed}); injected mu {mu}: predicted minus observed {linear_gaps:?}"),
    );
}

#[test]
fn c09_desk_scale_ordering() {
    let start = Instant::now();
    let mut cfg = desk_config();
    cfg.run.methods = vec!["gpfl".into(), "bfgs_air".into(), "fedavg_air".into()];
    let world = cfg.world().unwrap();
    let records = run_cells(&cfg, &world).unwrap();
    let med = |m| median(final_rows(&records, m, cfg.run.rounds).iter().map(|r| r.loss).collect());
    let (gp, bfgs, fedavg) = (med(MethodKind::Gpfl), med(MethodKind::BfgsAir), med(MethodKind::FedavgAir));
    report(
        9,
        "desk-scale method ordering",
        gp <= bfgs && gp <= fedavg,
        start.elapsed(),
        Duration::from_secs(300),
        format!("median final loss gpfl {gp:.5}, bfgs_air {bfgs:.5}, fedavg_air {fedavg:.5}"),
    );
}

#[test]
fn c10_window_sweep_trend() {
    let start = Instant::now();
    let mut acc = Vec::new();
    for r in [0usize, 5, 20, 50] {
        let mut cfg = desk_config();
        cfg.run.methods = vec!["gpfl".into()];
        cfg.gp.window = r;
        let world = cfg.world().unwrap();
        let records = run_cells(&cfg, &world).unwrap();
        acc.push(median(final_rows(&records, MethodKind::Gpfl, cfg.run.rounds).iter().map(|r| r.accuracy).collect()));
    }
    let monotone = acc[0] <= acc[1] && acc[1] <= acc[2];
    let plateau = (acc[3] - acc[2]).abs() < 0.005;
    report(
        10,
        "observation-window trend",
        monotone && plateau,
        start.elapsed(),
        Duration::from_secs(600),
        format!(
            "median final accuracy r=0 {:.2}%, r=5 {:.2}%, r=20 {:.2}%, r=50 {:.2}%",
            100.0 * acc[0],
            100.0 * acc[1],
            100.0 * acc[2],
            100.0 * acc[3]
        ),
    );
}

#[test]
fn c11_repeat_runs_are_byte_identical() {
    let start = Instant::now();
    let cfg = RunConfig::from_toml(
        r#"
[dataset]
features = 8
samples = 300
clients = 6

[run]
rounds = 8
seeds = [0, 1]
methods = ["gpfl", "fedavg_air", "bfgs_air", "newton_ideal"]
"#,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run_to_dir(&cfg, &tmp.path().join("a")).unwrap();
    run_to_dir(&cfg, &tmp.path().join("b")).unwrap();
    let a = std::fs::read(tmp.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/metrics.csv")).unwrap();
    report(11, "determinism", a == b && !a.is_empty(), start.elapsed(), Duration::from_secs(60), format!("{} bytes compared", a.len()));
}

#[test]
fn bound_trace_is_usable_standalone() {
    let inputs = BoundInputs::new(gpfl::loss::SmoothnessConstants { lambda: 1.0, big_l: 2.0 }, 0.1, 0.5);
    let trace = bound_trace(&inputs, 1.0, 1.0, 5).unwrap();
    assert_eq!(trace.rows.len(), 6);
}

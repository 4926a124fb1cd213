//! Acceptance gates. Each gate prints one PASS/FAIL line with the measured
//! statistic, its pinned tolerance, and wall-clock time against its budget.
//! The process exits nonzero if any gate fails.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use gma_core::bank::build_bank;
use gma_core::bench::{mh_sample, run_experiment, RunConfig};
use gma_core::boed::{bernoulli_entropy, greedy_allocate, per_dose_gains, DoseDesignProblem};
use gma_core::emgma::{match_components, run_emgma, EmConfig};
use gma_core::gauss::{logsumexp, Covariance, GaussianComponent, Mixture};
use gma_core::lma::{build_laplace_mixture, default_fd_step, fd_hessian, find_modes, LmaConfig};
use gma_core::metrics::{mmd2_unbiased, wasserstein1_1d, SampleSet, DEFAULT_MMD_SCALES};
use gma_core::resample::{proportional_counts, stratified_resample};
use gma_core::simplex::{project_to_simplex, EtaRule, ScheduleSet};
use gma_core::target::{make_zoo_target, FnTarget, TargetDensity, ZooSpec};
use gma_core::wgma::{estimate_gradient, optimize_weights, run_wgma, Optimizer, WgmaConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn gate(id: u32, name: &str, budget_s: f64, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let secs = t0.elapsed().as_secs_f64();
    let in_time = secs < budget_s;
    let pass = out.pass && in_time;
    println!(
        "[{}] {id:02} {name}: {} ({secs:.2} s, budget {budget_s} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn iso(mean: Vec<f64>, var: f64) -> GaussianComponent {
    let d = mean.len();
    GaussianComponent::new(mean, Covariance::isotropic(d, var).unwrap()).unwrap()
}

fn full2(mean: [f64; 2], a: f64, b: f64, c: f64) -> GaussianComponent {
    GaussianComponent::new(mean.to_vec(), Covariance::full(DMatrix::from_row_slice(2, 2, &[a, b, b, c])).unwrap())
        .unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Euclidean projection by enumerating every support set.
fn projection_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let shift = (idx.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / idx.len() as f64;
        let mut x = vec![0.0; n];
        let mut feasible = true;
        for &i in &idx {
            x[i] = v[i] - shift;
            if x[i] < -1e-15 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let obj: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best.unwrap().1
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = project_to_simplex(&v).unwrap();
        let want = projection_oracle(&v);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max |w - oracle| = {worst:.3e} over 1000 vectors (tol 1e-9)"),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_spread = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(1..=3);
        let comps: Vec<GaussianComponent> = (0..n)
            .map(|_| {
                let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
                iso(mean, rng.random_range(0.2..2.0))
            })
            .collect();
        let w = random_simplex(&mut rng, n);
        let mix = Mixture::new(comps, w.clone()).unwrap();
        let c: f64 = rng.random_range(-5.0..5.0);
        let target_mix = mix.clone();
        let target = FnTarget::new(d, move |z: &[f64]| target_mix.log_pdf(z) + c);
        let bank = build_bank(&mix, 50, &target, &mut rng).unwrap();
        let g = estimate_gradient(&bank, &w, 1.0, 0.0, false).unwrap();
        let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        worst_spread = worst_spread.max(hi - lo);
        // brute force: evaluate every density from scratch
        for (i, gi) in g.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..bank.per_component() {
                let s = bank.sample(i, j);
                acc += mix.log_pdf(s) - target.eval(s);
            }
            let want = 1.0 + acc / bank.per_component() as f64;
            worst_oracle = worst_oracle.max((gi - want).abs()).max((gi - (1.0 - c)).abs());
        }
    }
    Outcome {
        pass: worst_spread <= 1e-10 && worst_oracle <= 1e-9,
        detail: format!(
            "max gradient spread = {worst_spread:.3e} (tol 1e-10), max |g - oracle| = {worst_oracle:.3e} (tol 1e-9)"
        ),
    }
}

fn criterion_3() -> Outcome {
    let w0 = [0.7, 0.3];
    let truth = Mixture::new(vec![iso(vec![-2.0], 1.0), iso(vec![2.0], 1.0)], w0.to_vec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let bank = build_bank(&truth, 500, &truth, &mut rng).unwrap();
    // grid oracle: minimize the bank KL estimate over w = (t, 1 - t)
    let m = bank.per_component() as f64;
    let objective = |t: f64| {
        let w = [t, 1.0 - t];
        let q = Mixture::new(truth.components().to_vec(), w.to_vec()).unwrap();
        (0..2)
            .map(|i| {
                w[i] * (0..bank.per_component())
                    .map(|j| {
                        let s = bank.sample(i, j);
                        q.log_pdf(s) - truth.log_pdf(s)
                    })
                    .sum::<f64>()
                    / m
            })
            .sum::<f64>()
    };
    let t_grid = (1..10_000)
        .map(|k| k as f64 / 10_000.0)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap();
    let mut details = vec![format!("grid oracle w1 = {t_grid:.4}")];
    let mut pass = (t_grid - w0[0]).abs() * 2.0 <= 0.05;
    for opt in [Optimizer::Pgd, Optimizer::Md] {
        let t0 = Instant::now();
        let cfg = WgmaConfig {
            iterations: 200,
            optimizer: opt,
            ..WgmaConfig::default()
        };
        let (w, _) = optimize_weights(&bank, &cfg, &mut rng).unwrap();
        let l1 = (w[0] - w0[0]).abs() + (w[1] - w0[1]).abs();
        let secs = t0.elapsed().as_secs_f64();
        pass &= l1 <= 0.05 && secs < 10.0;
        details.push(format!("{opt:?} ||w - w0||_1 = {l1:.4} vs oracle {:.4} in {secs:.2} s", 2.0 * (w[0] - t_grid).abs()));
    }
    Outcome {
        pass,
        detail: format!("{} (tol 0.05)", details.join(", ")),
    }
}

/// Evenly spaced means with variances interpolated linearly from `v0` to `v1`.
fn lattice_1d(n: usize, lo: f64, hi: f64, v0: f64, v1: f64) -> Mixture {
    let comps = (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            iso(vec![lo + (hi - lo) * f], v0 + (v1 - v0) * f)
        })
        .collect();
    Mixture::uniform(comps).unwrap()
}

fn trimodal_config(eta0: f64) -> WgmaConfig {
    WgmaConfig {
        iterations: 120,
        schedules: ScheduleSet {
            eta: EtaRule::Harmonic { eta0 },
            ..ScheduleSet::default()
        },
        ..WgmaConfig::default()
    }
}

fn mass_near(x: &[f64], c: f64, r: f64) -> f64 {
    x.iter().filter(|v| (*v - c).abs() <= r).count() as f64 / x.len() as f64
}

fn criterion_4() -> Outcome {
    let spec = ZooSpec::ConnectedTrimodal;
    let target = make_zoo_target(&spec).unwrap();
    let init = lattice_1d(10, -6.0, 6.0, 0.25, 0.49);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let res = run_wgma(target.as_ref(), &init, &trimodal_config(0.5), None, 200, &mut rng).unwrap();
    let x = res.ensemble.points.clone();
    let reference =
        gma_core::bench::grid_inverse_cdf_1d(target.as_ref(), (-10.0, 10.0), 1e-3, x.len(), &mut rng).unwrap();
    let w1 = wasserstein1_1d(&SampleSet::from_1d(x.clone()).unwrap(), &reference).unwrap();
    let masses: Vec<f64> = [-3.0, 0.0, 3.0].iter().map(|&c| mass_near(&x, c, 1.0)).collect();
    Outcome {
        pass: w1 <= 0.5 && masses.iter().all(|&m| m >= 0.05),
        detail: format!(
            "W1 = {w1:.4} (tol 0.5), mode masses = [{:.3}, {:.3}, {:.3}] (each >= 0.05)",
            masses[0], masses[1], masses[2]
        ),
    }
}

fn criterion_5() -> Outcome {
    let target = make_zoo_target(&ZooSpec::IsolatedTrimodal).unwrap();
    let init = lattice_1d(10, -6.0, 6.0, 0.25, 0.49);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let res = run_wgma(target.as_ref(), &init, &trimodal_config(0.01), None, 200, &mut rng).unwrap();
    let x = &res.ensemble.points;
    let gma = [mass_near(x, -5.0, 0.6), mass_near(x, 5.0, 0.6)];
    // the gate uses the seed above; other seeds are reported, not scored
    let other_ok = (0..10u64)
        .filter(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(50_000 + s);
            let res = run_wgma(target.as_ref(), &init, &trimodal_config(0.01), None, 200, &mut r).unwrap();
            let x = &res.ensemble.points;
            mass_near(x, -5.0, 0.6) >= 0.03 && mass_near(x, 5.0, 0.6) >= 0.03
        })
        .count();
    let chain = mh_sample(target.as_ref(), &[0.0], 1.0, 0, 2000, &mut rng).unwrap();
    let y = chain.points();
    let mh = [mass_near(y, -5.0, 0.6), mass_near(y, 5.0, 0.6)];
    Outcome {
        pass: gma.iter().all(|&m| m >= 0.03) && mh.iter().all(|&m| m < 0.01),
        detail: format!(
            "GMA side masses = [{:.3}, {:.3}] (each >= 0.03), MH side masses = [{:.4}, {:.4}] (each < 0.01); unscored: {other_ok}/10 other seeds meet the GMA bound",
            gma[0], gma[1], mh[0], mh[1]
        ),
    }
}

fn toy_truth() -> Mixture {
    Mixture::new(
        vec![
            full2([0.0, 0.0], 1.0, 0.3, 0.8),
            full2([3.0, 1.5], 0.5, -0.15, 0.5),
            full2([-2.0, 3.0], 0.8, 0.2, 0.6),
        ],
        vec![0.45, 0.25, 0.30],
    )
    .unwrap()
}

fn criterion_6() -> Outcome {
    let truth = toy_truth();
    // untempered E-step: at T_resp = 2 the three components merge before they separate
    let cfg = EmConfig {
        sweeps: 80,
        bank_size: 4096,
        resp_temperature: 1.0,
        ..EmConfig::default()
    };
    let mut results = Vec::new();
    let mut pass = true;
    for seed in [601u64, 602, 603] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Mixture::uniform(
            (0..3)
                .map(|_| iso(vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)], 1.0))
                .collect(),
        )
        .unwrap();
        let (fit, _) = run_emgma(&truth, &init, &cfg, &mut rng).unwrap();
        let p = match_components(&fit, &truth).unwrap();
        let (mut dw, mut dm) = (0.0f64, 0.0f64);
        for (k, c) in truth.components().iter().enumerate() {
            dw = dw.max((fit.weights()[p[k]] - truth.weights()[k]).abs());
            for (a, b) in fit.components()[p[k]].mean().iter().zip(c.mean()) {
                dm = dm.max((a - b).abs());
            }
        }
        pass &= dw <= 0.05 && dm <= 0.15;
        results.push(format!("seed {seed}: dw = {dw:.4}, dmu = {dm:.4}"));
    }
    Outcome {
        pass,
        detail: format!("{} (tol 0.05 / 0.15)", results.join("; ")),
    }
}

fn criterion_7() -> Outcome {
    let star = ZooSpec::star().exact_mixture().unwrap().unwrap();
    let cfg = EmConfig {
        sweeps: 80,
        bank_size: 8192,
        ridge: 1e-5,
        ..EmConfig::default()
    };
    let mut values = Vec::new();
    for seed in 701u64..706 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let init = Mixture::uniform(
            (0..5)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / 5.0;
                    iso(vec![2.0 * a.cos(), 2.0 * a.sin()], 1.0)
                })
                .collect(),
        )
        .unwrap();
        let (fit, _) = run_emgma(&star, &init, &cfg, &mut rng).unwrap();
        let (xs, _) = fit.sample_many(2000, &mut rng);
        let (ys, _) = star.sample_many(2000, &mut rng);
        let v = mmd2_unbiased(
            &SampleSet::new(2, xs).unwrap(),
            &SampleSet::new(2, ys).unwrap(),
            &DEFAULT_MMD_SCALES,
        )
        .unwrap();
        values.push(v);
    }
    let good = values.iter().filter(|&&v| v <= 5e-3).count();
    Outcome {
        pass: good >= 3,
        detail: format!(
            "MMD2 per seed = [{}], {good}/5 <= 5e-3 (need 3)",
            values.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn criterion_8() -> Outcome {
    let mean = [1.0, -2.0];
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let gauss = Mixture::uniform(vec![GaussianComponent::new(mean.to_vec(), Covariance::full(cov.clone()).unwrap()).unwrap()])
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut cfg = LmaConfig::new(8, vec![-5.0, -5.0], vec![5.0, 5.0]);
    cfg.dedup_radius = Some(0.5);
    let modes = find_modes(&gauss, &cfg, &mut rng).unwrap();
    let lap = build_laplace_mixture(&modes, 1.0, 0.0).unwrap();
    let c = &lap.components()[0];
    let dmean = c.mean().iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dcov = (c.cov().to_dense() - &cov).norm() / cov.norm();

    let mut dhess = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..=4);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let a = (&a + a.transpose()) * 0.5;
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (aq, bq) = (a.clone(), b.clone());
        let quad = FnTarget::new(d, move |z: &[f64]| {
            let zv = nalgebra::DVector::from_column_slice(z);
            -0.5 * zv.dot(&(&aq * &zv)) + bq.iter().zip(z).map(|(p, q)| p * q).sum::<f64>()
        });
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = fd_hessian(&quad, &theta, default_fd_step(&theta)).unwrap();
        dhess = dhess.max((h - &a).abs().max());
    }
    Outcome {
        pass: modes.len() == 1 && dmean <= 1e-4 && dcov <= 1e-3 && dhess <= 1e-6,
        detail: format!(
            "{} mode(s), |dmu| = {dmean:.2e} (tol 1e-4), rel cov err = {dcov:.2e} (tol 1e-3), max FD Hessian err = {dhess:.2e} (tol 1e-6)",
            modes.len()
        ),
    }
}

fn criterion_9() -> Outcome {
    let w = [0.1, 0.2, 0.3, 0.4];
    let mix = Mixture::uniform((0..4).map(|i| iso(vec![3.0 * i as f64], 1.0)).collect()).unwrap();
    let draws = 100_000usize;
    let tol = 3.0 * (w.iter().map(|x| x * (1.0 - x)).fold(0.0, f64::max) / draws as f64).sqrt();
    let m = 20;
    let mut passed = 0;
    let mut min_p = 1.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let bank = build_bank(&mix, m, &mix, &mut rng).unwrap();
        let ens = stratified_resample(&bank, &w, draws, &mut rng).unwrap();
        let mut freq = [0usize; 4];
        let mut within = vec![vec![0usize; m]; 4];
        for &(i, j) in &ens.provenance {
            freq[i] += 1;
            within[i][j] += 1;
        }
        let linf = freq
            .iter()
            .zip(&w)
            .map(|(&f, &x)| (f as f64 / draws as f64 - x).abs())
            .fold(0.0, f64::max);
        if linf <= tol {
            passed += 1;
        }
        if seed == 0 {
            let chi = ChiSquared::new((m - 1) as f64).unwrap();
            for (i, counts) in within.iter().enumerate() {
                let expected = freq[i] as f64 / m as f64;
                let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
                min_p = min_p.min(1.0 - chi.cdf(stat));
            }
        }
    }
    Outcome {
        pass: passed as f64 >= 0.95 * 50.0 && min_p > 0.001,
        detail: format!(
            "{passed}/50 seeds within L_inf {tol:.2e} (need 48), min within-component chi-square p = {min_p:.4} (> 0.001)"
        ),
    }
}

fn criterion_10() -> Outcome {
    let w = [0.2, 0.3, 0.5];
    let mix = Mixture::uniform(vec![iso(vec![0.0], 1.0), iso(vec![5.0], 1.0), iso(vec![10.0], 1.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let m = 200;
    let bank = build_bank(&mix, m, &mix, &mut rng).unwrap();
    let stratum_mean = |i: usize| (0..m).map(|j| bank.sample(i, j)[0]).sum::<f64>() / m as f64;
    let mu: f64 = (0..3).map(|i| w[i] * stratum_mean(i)).sum();
    let n = 30;
    let counts = proportional_counts(&w, n);
    let trials = 2000;
    let (mut err_srs, mut err_str) = (Vec::with_capacity(trials), Vec::with_capacity(trials));
    for _ in 0..trials {
        let ens = stratified_resample(&bank, &w, n, &mut rng).unwrap();
        let srs = ens.points.iter().sum::<f64>() / n as f64;
        let strat: f64 = (0..3)
            .map(|i| {
                let s: f64 = (0..counts[i]).map(|_| bank.sample(i, rng.random_range(0..m))[0]).sum();
                w[i] * s / counts[i] as f64
            })
            .sum();
        err_srs.push((srs - mu).powi(2));
        err_str.push((strat - mu).powi(2));
    }
    let var_srs = err_srs.iter().sum::<f64>() / trials as f64;
    let var_str = err_str.iter().sum::<f64>() / trials as f64;
    let wins = err_str.iter().zip(&err_srs).filter(|(a, b)| a < b).count();
    let binom = Binomial::new(0.5, trials as u64).unwrap();
    let p_value = 1.0 - binom.cdf(wins as u64 - 1);
    Outcome {
        pass: var_str <= var_srs && p_value < 0.01,
        detail: format!(
            "var stratified = {var_str:.4e}, var SRS = {var_srs:.4e}, stratified closer in {wins}/{trials} trials, sign-test p = {p_value:.2e} (< 0.01)"
        ),
    }
}

fn criterion_11() -> Outcome {
    let delta = [0.0025, 0.0023, 0.0021, 0.0014, 0.0045, 0.1371, 0.4675];
    let alloc = greedy_allocate(&delta, 21, true).unwrap();
    let entropy_ok = bernoulli_entropy(0.0).unwrap() == 0.0
        && bernoulli_entropy(1.0).unwrap() == 0.0
        && (bernoulli_entropy(0.5).unwrap() - 2f64.ln()).abs() < 1e-15;
    let mut rng = ChaCha8Rng::seed_from_u64(1100);
    let mut min_gain = f64::INFINITY;
    for _ in 0..10_000 {
        let s = rng.random_range(1..=20);
        let problem = DoseDesignProblem {
            doses: vec![0.1, 0.5, 1.0, 5.0, 20.0],
            budget: 5,
            x_offset: rng.random_range(-1.0..1.0),
            param_samples: (0..s).map(|_| (rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0))).collect(),
        };
        for g in per_dose_gains(&problem).unwrap() {
            min_gain = min_gain.min(g);
        }
    }
    Outcome {
        pass: alloc == vec![1, 1, 1, 1, 1, 1, 15] && entropy_ok && min_gain >= -1e-12,
        detail: format!("allocation = {alloc:?}, entropy checks {}, min gain over 1e4 clouds = {min_gain:.2e} (>= -1e-12)", if entropy_ok { "ok" } else { "failed" }),
    }
}

fn criterion_12() -> Outcome {
    let deep: Vec<f64> = (0..50).map(|k| -1e4 - k as f64 * 0.25).collect();
    let lse = logsumexp(&deep).unwrap();
    let lse_ok = (-1e4..-1e4 + 2.0).contains(&lse);
    // log-densities near -1e4 through the mixture and bank paths
    let far = Mixture::uniform(vec![iso(vec![0.0], 1.0), iso(vec![1.0], 1.0)]).unwrap();
    let lp = far.log_pdf(&[141.0]);
    let deep_target = FnTarget::new(1, |z: &[f64]| -1e4 - z[0] * z[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(1200);
    let bank = build_bank(&far, 50, &deep_target, &mut rng).unwrap();
    let g = estimate_gradient(&bank, &[0.5, 0.5], 1.0, 0.0, true).unwrap();
    let paths_ok = lp.is_finite() && lp < -9000.0 && g.iter().all(|x| x.is_finite());

    let funnel: Arc<dyn TargetDensity> = make_zoo_target(&ZooSpec::Funnel).unwrap();
    let init = Mixture::uniform(
        (0..16)
            .map(|k| iso(vec![-3.0 + 2.0 * (k % 4) as f64, -3.0 + 2.0 * (k / 4) as f64], 1.0))
            .collect(),
    )
    .unwrap();
    let cfg = WgmaConfig {
        iterations: 50,
        ..WgmaConfig::default()
    };
    let mut bad_runs = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_200_000 + seed);
        match run_wgma(funnel.as_ref(), &init, &cfg, None, 50, &mut rng) {
            Ok(r) if r.traces.iter().all(|t| t.weights.iter().flatten().all(|x| x.is_finite()))
                && r.weights.iter().all(|x| x.is_finite()) => {}
            _ => bad_runs += 1,
        }
    }
    Outcome {
        pass: lse_ok && paths_ok && bad_runs == 0,
        detail: format!(
            "logsumexp at -1e4 = {lse:.4}, tail log-pdf = {lp:.1}, gradient finite = {}, funnel runs with NaN or error = {bad_runs}/100",
            g.iter().all(|x| x.is_finite())
        ),
    }
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn criterion_13() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for name in ["connected-trimodal", "isolated-trimodal", "moon-wgma", "star-emgma", "funnel-lma"] {
        let text = std::fs::read_to_string(config_dir().join(format!("{name}.json"))).unwrap();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let mut cfg = RunConfig::from_json(&text).unwrap();
            cfg.output_dir = tmp.path().join(format!("{name}-{run}"));
            pool.install(|| run_experiment(&cfg)).unwrap();
            outputs.push(cfg.output_dir);
        }
        for file in ["ensemble.csv", "trace.csv", "metrics.csv", "mixture.json"] {
            let a = outputs[0].join(file);
            if !a.exists() {
                continue;
            }
            checked += 1;
            if std::fs::read(&a).unwrap() != std::fs::read(outputs[1].join(file)).unwrap() {
                mismatches.push(format!("{name}/{file}"));
            }
        }
    }
    Outcome {
        pass: mismatches.is_empty() && checked > 0,
        detail: format!("{checked} artifacts compared across 5 configs, mismatches: {mismatches:?}"),
    }
}

fn main() {
    let results = [
        gate(1, "simplex projection vs support-enumeration oracle", 5.0, criterion_1),
        gate(2, "KKT gradient constancy", 60.0, criterion_2),
        gate(3, "weight recovery (pGD and MD)", 20.0, criterion_3),
        gate(4, "connected tri-modal", 30.0, criterion_4),
        gate(5, "isolated tri-modal", 30.0, criterion_5),
        gate(6, "EM toy recovery", 60.0, criterion_6),
        gate(7, "star density EM", 120.0, criterion_7),
        gate(8, "Laplace exactness and FD Hessian", 5.0, criterion_8),
        gate(9, "stratified resampling law", 10.0, criterion_9),
        gate(10, "stratified variance reduction", 10.0, criterion_10),
        gate(11, "dose allocation", 1.0, criterion_11),
        gate(12, "numerical stability", 60.0, criterion_12),
        gate(13, "determinism", 120.0, criterion_13),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} acceptance gates passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

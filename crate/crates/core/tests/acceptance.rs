//! Acceptance criteria, run in order with one PASS/FAIL line each.

mod common;

use std::time::Instant;

use common::*;
use gmm_sensing::adaptive::{
    self, measurement_covariance, mu_from_posteriors, mu_gradient, mu_measure, posterior_matrices,
    residual_covariance, AcquisitionState, AscentOptions,
};
use gmm_sensing::harness::images::{patch_extract, patch_extract_strided};
use gmm_sensing::harness::training::{
    batch_psnr, coadapt, orientation_init, train_clean, BatchSensing,
};
use gmm_sensing::harness::{
    run_single_step, run_two_step, ExperimentReport, ProtocolConfig, Step1, Step2,
};
use gmm_sensing::inference::{map_objective, sht_run, wiener_coefficients, NoisySignal};
use gmm_sensing::linalg::vstack;
use gmm_sensing::model::{sample_signals, synth_pair_in_range};
use gmm_sensing::rng::stream_rng;
use gmm_sensing::sensing::{
    average_basis, eigen_sensing, random_orthonormal, rip_ab, rip_objective,
};
use gmm_sensing::{Designer, GaussianComponent, GmmModel, ShtOptions};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

struct Verdict {
    pass: bool,
    detail: String,
}

/// Name, check and wall-clock limit in seconds.
type Criterion = (&'static str, fn() -> Verdict, f64);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Sine of the largest principal angle between two row spaces.
fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let proj = DMatrix::identity(n, n) - b.transpose() * b;
    (proj * a.transpose())
        .svd(false, false)
        .singular_values
        .max()
}

fn with_seed(mut c: ProtocolConfig, seed: u64) -> ProtocolConfig {
    c.seed = seed;
    c
}

fn mse_sum(r: &ExperimentReport) -> f64 {
    r.records.iter().map(|x| x.mse).sum()
}

fn batch_ordering() -> Verdict {
    let (mut rip, mut rand) = (Vec::new(), Vec::new());
    for name in IMAGES {
        let img = image(name);
        let train = patch_extract_strided(&img, 8, 2, name).unwrap().signals;
        let test = patch_extract(&img, 8, false, name).unwrap().signals;
        let init = orientation_init(&train, 8, 18).unwrap();
        let a = coadapt(&train, &init, BatchSensing::RipAb, 8, 0.0, 11).unwrap();
        let b = coadapt(&train, &init, BatchSensing::Random { seed: 1 }, 8, 0.0, 11).unwrap();
        rip.push(batch_psnr(&test, &a.rows, &a.model).unwrap());
        rand.push(batch_psnr(&test, &b.rows, &b.model).unwrap());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&rip) - mean(&rand);
    verdict(
        gap >= 0.5,
        format!(
            "mean PSNR RIP-AB {:.2} dB, random {:.2} dB, gap {gap:+.2} dB (need >= +0.5) over {} images",
            mean(&rip),
            mean(&rand),
            IMAGES.len()
        ),
    )
}

fn two_step_superiority() -> Verdict {
    // Synthetic: five pairs, 400 signals each, pooled.
    let (mut aida, mut ida, mut random, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut ks = Vec::new();
    for seed in 1..=5u64 {
        let pair = synth_pair_in_range(64, 30.0, 46.0, seed, 10_000).unwrap();
        let batch = sample_signals(&pair.model, 400, seed + 100).unwrap();
        let a = run_two_step(
            &with_seed(
                ProtocolConfig::new(Step1::AidaSht, Step2::MiAdaptive, 16, 0),
                seed,
            ),
            &batch,
            &pair.model,
        )
        .unwrap();
        let k = (a.mean_k.round() as usize).clamp(1, 15);
        let i = run_two_step(
            &with_seed(
                ProtocolConfig::new(Step1::Ida, Step2::MiAdaptive, 16, k),
                seed,
            ),
            &batch,
            &pair.model,
        )
        .unwrap();
        let r = run_two_step(
            &with_seed(
                ProtocolConfig::new(Step1::Random, Step2::EigenMse, 16, k),
                seed,
            ),
            &batch,
            &pair.model,
        )
        .unwrap();
        aida += mse_sum(&a);
        ida += mse_sum(&i);
        random += mse_sum(&r);
        count += batch.len();
        ks.push(k);
    }
    let (aida, ida, random) = (
        aida / count as f64,
        ida / count as f64,
        random / count as f64,
    );
    let synthetic = aida <= ida && ida <= random;

    // Natural 6x6 patches, one shared 19-class model.
    let (train, test) = patch_corpus(6, 3);
    let init = orientation_init(&train, 6, 18).unwrap();
    let model = train_clean(&train, &init, 2).unwrap().model;
    let test = evenly_spaced(&test, 1000);
    let a = run_two_step(
        &with_seed(
            ProtocolConfig::new(Step1::AidaSht, Step2::MiAdaptive, 6, 0),
            1,
        ),
        &test,
        &model,
    )
    .unwrap();
    let k = (a.mean_k.round() as usize).clamp(1, 5);
    let r = run_two_step(
        &with_seed(ProtocolConfig::new(Step1::Random, Step2::EigenMse, 6, k), 1),
        &test,
        &model,
    )
    .unwrap();
    let (pa, pr) = (a.mean_psnr.unwrap(), r.mean_psnr.unwrap());
    let natural = pa - pr >= 2.0;
    verdict(
        synthetic && natural,
        format!(
            "synthetic ({count} signals, K {ks:?}): MSE aida_sht {aida:.2} <= ida {ida:.2} <= random {random:.2}: {}; \
             natural ({} patches, K {k}, AIDA mean K {:.2}): PSNR aida_sht {pa:.2} - random {pr:.2} = {:+.2} dB (need >= +2): {}",
            if synthetic { "ok" } else { "violated" },
            test.len(),
            a.mean_k,
            pa - pr,
            if natural { "ok" } else { "violated" }
        ),
    )
}

fn sht_stopping() -> Verdict {
    let pair = synth_pair_in_range(64, 30.0, 46.0, 7, 10_000).unwrap();
    let batch = sample_signals(&pair.model, 1000, 707).unwrap();
    let opts = ShtOptions::new(1, 16, 0.01, Designer::Aida);
    let mut total = 0usize;
    for (i, x) in batch.signals.iter().enumerate() {
        let mut oracle = NoisySignal::new(x.clone(), 0.0, 7, i as u64);
        total += sht_run(&mut oracle, &pair.model, 0.0, &opts, i as u64)
            .unwrap()
            .measurements_used;
    }
    let mean_k = total as f64 / batch.len() as f64;
    verdict(
        (1.5..=4.0).contains(&mean_k),
        format!(
            "mean K {mean_k:.3} over {} signals, BD {:.1} (need 1.5..=4.0)",
            batch.len(),
            pair.distance
        ),
    )
}

fn k_equals_m() -> Verdict {
    let model = random_model(16, 3, 0.5, 41);
    let batch = sample_signals(&model, 60, 42).unwrap();
    let mut ok = true;
    let mut names = Vec::new();
    for (s1, s2) in [
        (Step1::Random, Step2::EigenMse),
        (Step1::RipAb, Step2::EigenMse),
        (Step1::Ida, Step2::EigenMse),
    ] {
        let mut c = ProtocolConfig::new(s1, s2, 6, 6);
        c.sigma2 = 0.01;
        c.seed = 5;
        let two = run_two_step(&c, &batch, &model).unwrap();
        let one = run_single_step(&c, &batch, &model).unwrap();
        let same = two.estimates == one.estimates
            && two.records.len() == one.records.len()
            && two.records.iter().zip(&one.records).all(|(a, b)| {
                a.class == b.class && a.k == b.k && a.mse.to_bits() == b.mse.to_bits()
            });
        ok &= same;
        names.push(format!(
            "{s1}: {}",
            if same { "identical" } else { "differs" }
        ));
    }
    verdict(ok, names.join(", "))
}

fn gradient_correctness() -> Verdict {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for t in 0..50u64 {
        let mut rng = stream_rng(500, t);
        let n = rng.random_range(3..=12);
        let g = rng.random_range(2..=4);
        let b = rng.random_range(1..=3.min(n / 2));
        let sigma2 = if rng.random::<bool>() {
            0.0
        } else {
            rng.random_range(0.01..0.5)
        };
        let model = random_model(n, g, 0.0, 600 + t);
        let mut state = AcquisitionState::new(&model, sigma2, b, n).unwrap();
        let blocks = rng.random_range(0..=((n / b).saturating_sub(1)).min(2));
        for k in 0..blocks {
            let rows = random_orthonormal(b, n, 700 + 10 * t + k as u64)
                .unwrap()
                .into_rows();
            let y = &rows * gaussian_vector(n, &mut rng);
            state.push_block(&model, &rows, &y).unwrap();
        }
        let phi = random_orthonormal(b, n, 900 + t).unwrap().into_rows();
        let grad = mu_gradient(&phi, &state, &model).unwrap();
        // Richardson-extrapolated central differences: O(h⁴) truncation with a
        // step large enough to keep cancellation well below 1e-4.
        let h = 1e-3;
        for i in 0..b {
            for j in 0..n {
                let central = |h: f64| {
                    let mut plus = phi.clone();
                    plus[(i, j)] += h;
                    let mut minus = phi.clone();
                    minus[(i, j)] -= h;
                    (mu_measure(&plus, &state, &model).unwrap()
                        - mu_measure(&minus, &state, &model).unwrap())
                        / (2.0 * h)
                };
                let fd = (4.0 * central(h / 2.0) - central(h)) / 3.0;
                let g = grad[(i, j)];
                if g.abs().max(fd.abs()) > 1e-8 {
                    worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && secs <= 60.0,
        format!("worst entrywise relative error {worst:.2e} over 50 instances (need <= 1e-4), {secs:.1} s (need <= 60)"),
    )
}

fn closed_form_reductions() -> Verdict {
    // (a) step-2 design with no history is eigen sensing of the class.
    let mut worst_a: f64 = 0.0;
    for t in 0..20u64 {
        let model = random_model(10, 3, 0.0, 1000 + t);
        let sigma2 = if t % 2 == 0 { 0.0 } else { 0.1 };
        let state = AcquisitionState::new(&model, sigma2, 1, 10).unwrap();
        let gamma = (t % 3) as usize;
        let m = 1 + (t % 6) as usize;
        let rows = adaptive::mi_optimal_step2(&state, &model, gamma, m)
            .unwrap()
            .into_rows();
        let eig = eigen_sensing(model.component(gamma), m)
            .unwrap()
            .into_rows();
        worst_a = worst_a
            .max(subspace_gap(&rows, &eig))
            .max(subspace_gap(&eig, &rows));
    }
    // (b) RIP-AB of a single Gaussian is its eigen sensing, row by row up to sign.
    let mut worst_b: f64 = 0.0;
    for t in 0..20u64 {
        let mut rng = stream_rng(1100, t);
        let c = GaussianComponent::from_covariance(DVector::zeros(9), random_spd(9, &mut rng), 1.0)
            .unwrap();
        let model = GmmModel::new(vec![c.clone()]).unwrap();
        let m = 1 + (t % 9) as usize;
        let rip = rip_ab(&model, m).unwrap().into_rows();
        let eig = eigen_sensing(&c, m).unwrap().into_rows();
        for i in 0..m {
            let d = (rip.row(i) - eig.row(i))
                .norm()
                .min((rip.row(i) + eig.row(i)).norm());
            worst_b = worst_b.max(d);
        }
        worst_b = worst_b.max(subspace_gap(&rip, &eig));
    }
    // (c) |Σ_y(k)| = |Σ_y(k−1)| · |Φ_k P Φ_kᵀ|.
    let mut worst_c: f64 = 0.0;
    for t in 0..100u64 {
        let mut rng = stream_rng(1200, t);
        let n = rng.random_range(4..=8);
        let b = rng.random_range(1..=2);
        let k_prev = rng.random_range(1..=n - b);
        let sigma2 = if t % 3 == 0 {
            0.0
        } else {
            rng.random_range(0.01..1.0)
        };
        let cov = random_spd(n, &mut rng);
        let all = random_orthonormal(k_prev + b, n, 1300 + t)
            .unwrap()
            .into_rows();
        let prev = all.rows(0, k_prev).into_owned();
        let next = all.rows(k_prev, b).into_owned();
        let det = |rows: &DMatrix<f64>| measurement_covariance(rows, &cov, sigma2).determinant();
        let p = residual_covariance(&cov, &prev, sigma2).unwrap();
        let lhs = det(&vstack(&prev, &next));
        let rhs = det(&prev) * (&next * p * next.transpose()).determinant();
        worst_c = worst_c.max((lhs - rhs).abs() / lhs.abs());
    }
    let pass = worst_a <= 1e-8 && worst_b <= 1e-8 && worst_c <= 1e-8;
    verdict(
        pass,
        format!(
            "(a) step-2 vs eigen sine of principal angle {worst_a:.1e}; (b) RIP-AB(G=1) vs eigen {worst_b:.1e}; \
             (c) determinant identity relative error {worst_c:.1e} (all need <= 1e-8)"
        ),
    )
}

fn optimality_oracles() -> Verdict {
    // RIP-AB against 1000 random orthogonal matrices.
    let model = random_model(8, 3, 0.0, 2000);
    let e = average_basis(&model);
    let best = rip_objective(&rip_ab(&model, 8).unwrap().into_rows(), &e);
    let rip_ok = (0..1000u64).all(|s| {
        best <= rip_objective(&random_orthonormal(8, 8, 2100 + s).unwrap().into_rows(), &e)
    });

    // Step-2 design against 1000 random blocks on |Φ P_γ Φᵀ|.
    let model = random_model(10, 3, 0.0, 2200);
    let mut state = AcquisitionState::new(&model, 0.05, 3, 10).unwrap();
    let hist = random_orthonormal(3, 10, 2201).unwrap().into_rows();
    let mut rng = stream_rng(2202, 0);
    let y = &hist * gaussian_vector(10, &mut rng);
    state.push_block(&model, &hist, &y).unwrap();
    let p = residual_covariance(model.component(1).covariance(), &hist, 0.05).unwrap();
    let rows = adaptive::mi_optimal_step2(&state, &model, 1, 4)
        .unwrap()
        .into_rows();
    let value = |r: &DMatrix<f64>| (r * &p * r.transpose()).determinant();
    let top = value(&rows);
    let mi_ok = (0..1000u64)
        .all(|s| value(&random_orthonormal(4, 10, 2300 + s).unwrap().into_rows()) <= top);

    // Classification design against 200 random candidates.
    let mut mu_ok = true;
    let mut margin = f64::INFINITY;
    for t in 0..5u64 {
        let model = random_model(6, 3, 0.0, 2400 + t);
        let state = AcquisitionState::new(&model, 0.0, 2, 6).unwrap();
        let designed = adaptive::design_classification_block(
            &state,
            &model,
            2,
            2500 + t,
            &AscentOptions::default(),
        )
        .unwrap();
        let pm = posterior_matrices(&state, &model).unwrap();
        let best_random = (0..200u64)
            .map(|s| {
                mu_from_posteriors(
                    &random_orthonormal(2, 6, 2600 + 1000 * t + s)
                        .unwrap()
                        .into_rows(),
                    &pm,
                )
                .unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        mu_ok &= designed.mu >= best_random;
        margin = margin.min(designed.mu - best_random);
    }
    verdict(
        rip_ok && mi_ok && mu_ok,
        format!(
            "RIP-AB vs 1000 random B: {}; step-2 vs 1000 random blocks: {}; μ ascent vs 200 random candidates on 5 models: {} (smallest margin {margin:.3e})",
            if rip_ok { "never beaten" } else { "beaten" },
            if mi_ok { "never beaten" } else { "beaten" },
            if mu_ok { "never beaten" } else { "beaten" },
        ),
    )
}

fn identity_suite() -> Verdict {
    // ‖DᵀΦᵀΦD − I‖² = ‖ΦDDᵀΦᵀ − I‖² + GN − M and ΦDDᵀΦᵀ = GΦΦᵀ.
    let mut worst_8: f64 = 0.0;
    let mut worst_9: f64 = 0.0;
    for t in 0..50u64 {
        let mut rng = stream_rng(3000, t);
        let n = rng.random_range(4..=10);
        let g = rng.random_range(1..=4);
        let m = rng.random_range(1..=n);
        let model = random_model(n, g, 0.0, 3100 + t);
        let d = model.dictionary();
        let phi =
            random_orthonormal(m, n, 3200 + t).unwrap().into_rows() * rng.random_range(0.3..2.0);
        let a = &phi * &d;
        let lhs = (a.transpose() * &a - DMatrix::identity(g * n, g * n)).norm_squared();
        let rhs = (&a * a.transpose() - DMatrix::identity(m, m)).norm_squared() + (g * n) as f64
            - m as f64;
        worst_8 = worst_8.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        let gram = &a * a.transpose();
        let expected = (&phi * phi.transpose()) * g as f64;
        worst_9 = worst_9.max((gram - &expected).norm() / expected.norm());
    }
    // μ ≥ 0 for the non-adaptive measure.
    let mut min_mu = f64::INFINITY;
    for t in 0..100u64 {
        let mut rng = stream_rng(3300, t);
        let n = rng.random_range(3..=8);
        let b = rng.random_range(1..=n);
        let model = random_model(n, rng.random_range(1..=4), 0.0, 3400 + t);
        let state = AcquisitionState::new(&model, 0.0, b, n).unwrap();
        let phi = random_orthonormal(b, n, 3500 + t).unwrap().into_rows();
        min_mu = min_mu.min(mu_measure(&phi, &state, &model).unwrap());
        let designed = adaptive::design_classification_block(
            &state,
            &model,
            b,
            3600 + t,
            &AscentOptions::default(),
        )
        .unwrap();
        min_mu = min_mu.min(designed.mu);
    }
    // Wiener coefficients minimise the data-fit objective.
    let mut wiener_ok = true;
    let mut smallest_rise = f64::INFINITY;
    for t in 0..20u64 {
        let mut rng = stream_rng(3700, t);
        let n = rng.random_range(3..=10);
        let m = rng.random_range(1..=n);
        let sigma2 = rng.random_range(0.01..1.0);
        let model = random_model(n, 1, 1.0, 3800 + t);
        let c = model.component(0);
        let phi = gaussian_matrix(m, n, &mut rng);
        let y = &phi * gaussian_vector(n, &mut rng);
        let alpha = wiener_coefficients(&y, &phi, c, sigma2).unwrap();
        let base = map_objective(&y, &phi, c, sigma2, &alpha).unwrap();
        for _ in 0..100 {
            let delta = gaussian_vector(n, &mut rng).normalize() * 1e-3;
            let moved = map_objective(&y, &phi, c, sigma2, &(&alpha + delta)).unwrap();
            wiener_ok &= base <= moved;
            smallest_rise = smallest_rise.min(moved - base);
        }
    }
    let pass = worst_8 <= 1e-10 && worst_9 <= 1e-10 && min_mu >= 0.0 && wiener_ok;
    verdict(
        pass,
        format!(
            "dictionary identity rel. err {worst_8:.1e}, Gram identity rel. err {worst_9:.1e} (need <= 1e-10); \
             min μ {min_mu:.2e} (need >= 0); Wiener minimum {} (smallest rise {smallest_rise:.2e})",
            if wiener_ok { "held" } else { "violated" }
        ),
    )
}

fn sht_error_control() -> Verdict {
    let pair = synth_pair_in_range(64, 62.0, 78.0, 9, 10_000).unwrap();
    let batch = sample_signals(&pair.model, 2000, 909).unwrap();
    let labels = batch.labels.as_ref().unwrap();
    let opts = ShtOptions::new(1, 16, 0.05, Designer::Aida);
    let (mut decided, mut wrong) = (0usize, 0usize);
    for (i, x) in batch.signals.iter().enumerate() {
        let mut oracle = NoisySignal::new(x.clone(), 0.0, 9, i as u64);
        let out = sht_run(&mut oracle, &pair.model, 0.0, &opts, i as u64).unwrap();
        if let Some(c) = out.decided_class {
            decided += 1;
            wrong += usize::from(c != labels[i]);
        }
    }
    let rate = wrong as f64 / decided.max(1) as f64;
    verdict(
        decided > 0 && rate <= 0.1,
        format!(
            "decided-class error {rate:.4} ({wrong}/{decided} decided of {}), BD {:.1} (need <= 0.10)",
            batch.len(),
            pair.distance
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("batch ordering", batch_ordering, 600.0),
        ("two-step superiority", two_step_superiority, 900.0),
        ("SHT stopping", sht_stopping, f64::INFINITY),
        ("K = M reduction", k_equals_m, f64::INFINITY),
        ("gradient correctness", gradient_correctness, 60.0),
        (
            "closed-form reductions",
            closed_form_reductions,
            f64::INFINITY,
        ),
        ("optimality oracles", optimality_oracles, f64::INFINITY),
        ("identity suite", identity_suite, f64::INFINITY),
        ("SHT error control", sht_error_control, f64::INFINITY),
    ];
    let mut failed = Vec::new();
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = run();
        let secs = started.elapsed().as_secs_f64();
        let pass = v.pass && secs <= *budget;
        let limit = if budget.is_finite() {
            format!(", limit {budget:.0} s")
        } else {
            String::new()
        };
        println!(
            "criterion {} [{name}]: {} | {} | {secs:.1} s{limit}",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

mod common;

use common::{image, random_model};
use gmm_sensing::harness::images::patch_extract;
use gmm_sensing::harness::metrics::psnr_from_mse;
use gmm_sensing::harness::protocol::STANDARD_PAIRS;
use gmm_sensing::harness::training::orientation_init;
use gmm_sensing::harness::{
    run_single_step, run_two_step, ExperimentReport, ProtocolConfig, Step1, Step2,
};
use gmm_sensing::model::{sample_signals, synth_pair_in_range};
use gmm_sensing::GmmModel;

fn run_with_threads(
    threads: usize,
    c: &ProtocolConfig,
    batch: &gmm_sensing::SignalBatch,
    m: &GmmModel,
) -> ExperimentReport {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_two_step(c, batch, m).unwrap())
}

fn without_timing(mut r: ExperimentReport) -> String {
    r.wall_time_s = 0.0;
    serde_json::to_string(&r).unwrap()
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let model = synth_pair_in_range(12, 30.0, 46.0, 2, 10_000)
        .unwrap()
        .model;
    let batch = sample_signals(&model, 24, 6).unwrap();
    for (s1, s2) in STANDARD_PAIRS {
        let mut c = ProtocolConfig::new(s1, s2, 6, 2);
        c.sigma2 = 0.05;
        c.seed = 3;
        let a = run_with_threads(1, &c, &batch, &model);
        let b = run_with_threads(3, &c, &batch, &model);
        assert_eq!(
            without_timing(a.clone()),
            without_timing(b.clone()),
            "{}",
            c.name()
        );
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.records_csv(), b.records_csv());
    }
}

#[test]
fn budgets_and_report_means_are_consistent() {
    let model = random_model(10, 3, 1.0, 12);
    let batch = sample_signals(&model, 40, 7).unwrap();
    for (s1, s2) in STANDARD_PAIRS {
        let mut c = ProtocolConfig::new(s1, s2, 6, 3);
        c.block_size = 2;
        c.sigma2 = 0.02;
        let r = run_two_step(&c, &batch, &model).unwrap();
        assert!(r.records.iter().all(|rec| rec.k <= 6));
        if s1 == Step1::AidaSht {
            assert!(r.mean_k >= 2.0 && r.mean_k <= 6.0);
        } else {
            assert!(r.records.iter().all(|rec| rec.k == 3));
        }
        let from_records = r.records.iter().map(|rec| rec.mse).sum::<f64>() / 40.0;
        let independent = batch
            .signals
            .iter()
            .zip(&r.estimates)
            .map(|(x, e)| (x - e).norm_squared() / 10.0)
            .sum::<f64>()
            / 40.0;
        assert!((from_records - r.mean_mse).abs() <= 1e-12 * r.mean_mse);
        assert!((independent - r.mean_mse).abs() <= 1e-12 * r.mean_mse);
        let labels = batch.labels.as_ref().unwrap();
        let acc = r
            .records
            .iter()
            .filter(|rec| Some(rec.class) == rec.label)
            .count() as f64
            / 40.0;
        assert_eq!(r.accuracy, Some(acc));
        assert_eq!(
            r.records
                .iter()
                .map(|rec| rec.label.unwrap())
                .collect::<Vec<_>>(),
            *labels
        );
    }
}

#[test]
fn noiseless_full_budget_is_exact_for_every_pair() {
    let model = random_model(7, 2, 1.0, 3);
    let batch = sample_signals(&model, 15, 2).unwrap();
    for (s1, s2) in STANDARD_PAIRS {
        for k in [1, 4, 7] {
            let c = ProtocolConfig::new(s1, s2, 7, k);
            let r = run_two_step(&c, &batch, &model).unwrap();
            assert!(r.mean_mse <= 1e-10, "{} K={k}: {}", c.name(), r.mean_mse);
        }
    }
}

#[test]
fn full_step_one_equals_single_step() {
    let model = random_model(9, 3, 0.5, 17);
    let batch = sample_signals(&model, 25, 1).unwrap();
    for s1 in [Step1::Random, Step1::RipAb, Step1::Ida] {
        let mut c = ProtocolConfig::new(s1, Step2::EigenMse, 5, 5);
        c.sigma2 = 0.03;
        c.seed = 21;
        let two = run_two_step(&c, &batch, &model).unwrap();
        let one = run_single_step(&c, &batch, &model).unwrap();
        assert_eq!(two.records, one.records);
        assert_eq!(two.estimates, one.estimates);
    }
}

#[test]
fn image_patches_report_psnr_with_dc_restored() {
    let img = image("camera");
    let batch = patch_extract(&img, 8, false, "camera").unwrap();
    assert_eq!(batch.len(), 32 * 32);
    let model = orientation_init(&batch.signals, 8, 18).unwrap();
    let c = ProtocolConfig::new(Step1::RipAb, Step2::EigenMse, 16, 16);
    let r = run_two_step(&c, &batch, &model).unwrap();
    let psnr = r.mean_psnr.unwrap();
    assert!((psnr - psnr_from_mse(r.mean_mse, 255.0)).abs() <= 1e-9);
    assert!(psnr > 20.0, "PSNR {psnr}");
}

#[test]
fn invalid_configurations_are_rejected() {
    let model = random_model(6, 2, 0.0, 1);
    let batch = sample_signals(&model, 3, 1).unwrap();
    let bad = [
        ProtocolConfig::new(Step1::Random, Step2::MiAdaptive, 4, 2),
        ProtocolConfig::new(Step1::Ida, Step2::EigenMse, 7, 2),
        ProtocolConfig::new(Step1::Ida, Step2::EigenMse, 4, 5),
        ProtocolConfig::new(Step1::Ida, Step2::EigenMse, 4, 0),
    ];
    for c in bad {
        assert!(run_two_step(&c, &batch, &model).is_err(), "{}", c.name());
    }
}

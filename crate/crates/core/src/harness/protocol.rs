//! Two-step acquisition protocols: classify with `K` measurements, then
//! spend the remaining `M − K` on reconstruction rows for the detected
//! class, and reconstruct from all `M`.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::images::I_MAX;
use super::metrics::{mse, psnr_from_mse};
use crate::adaptive::{self, AcquisitionState, AscentOptions};
use crate::error::{invalid, Result, ScsError};
use crate::inference::{self, Designer, MapReconstructor, NoisySignal, ShtOptions, SignalOracle};
use crate::linalg;
use crate::model::{GmmModel, Provenance, SignalBatch};
use crate::rng::derive_seed;
use crate::sensing::{eigen_sensing, random_orthonormal, rip_ab};

const NOISE_SALT: u64 = 1;
const DESIGN_SALT: u64 = 2;
const SHT_SALT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step1 {
    Random,
    RipAb,
    Ida,
    AidaSht,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step2 {
    EigenMse,
    MiAdaptive,
}

impl fmt::Display for Step1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step1::Random => "random",
            Step1::RipAb => "rip_ab",
            Step1::Ida => "ida",
            Step1::AidaSht => "aida_sht",
        })
    }
}

impl fmt::Display for Step2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step2::EigenMse => "eigen_mse",
            Step2::MiAdaptive => "mi_adaptive",
        })
    }
}

/// The five standard step-1/step-2 pairings.
pub const STANDARD_PAIRS: [(Step1, Step2); 5] = [
    (Step1::Random, Step2::EigenMse),
    (Step1::RipAb, Step2::EigenMse),
    (Step1::Ida, Step2::EigenMse),
    (Step1::Ida, Step2::MiAdaptive),
    (Step1::AidaSht, Step2::MiAdaptive),
];

fn default_block() -> usize {
    1
}
fn default_error_target() -> f64 {
    0.01
}
fn default_first_test() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub step1: Step1,
    pub step2: Step2,
    /// Total measurements per signal.
    pub m: usize,
    /// Step-1 measurements; ignored by `aida_sht`, which stops on its own.
    pub k: usize,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default = "default_error_target")]
    pub error_target: f64,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub ascent: AscentOptions,
    #[serde(default)]
    pub seed: u64,
    /// Accept pairs outside [`STANDARD_PAIRS`].
    #[serde(default)]
    pub allow_any_pair: bool,
    /// Blocks acquired by the sequential test before its first decision.
    #[serde(default = "default_first_test")]
    pub first_test_block: usize,
}

impl ProtocolConfig {
    pub fn new(step1: Step1, step2: Step2, m: usize, k: usize) -> Self {
        Self {
            step1,
            step2,
            m,
            k,
            block_size: 1,
            error_target: 0.01,
            sigma2: 0.0,
            ascent: AscentOptions::default(),
            seed: 0,
            allow_any_pair: false,
            first_test_block: 2,
        }
    }

    pub fn name(&self) -> String {
        format!("{}+{}", self.step1, self.step2)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !self.allow_any_pair && !STANDARD_PAIRS.contains(&(self.step1, self.step2)) {
            let valid = STANDARD_PAIRS
                .iter()
                .map(|(a, b)| format!("{a}+{b}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(ScsError::InvalidProtocol {
                step1: self.step1.to_string(),
                step2: self.step2.to_string(),
                valid,
            });
        }
        if self.m == 0 || self.m > n {
            return Err(invalid(format!(
                "need 1 <= M <= N, got M={}, N={n}",
                self.m
            )));
        }
        if self.step1 == Step1::AidaSht {
            if self.block_size == 0 || self.block_size > self.m {
                return Err(invalid(format!(
                    "block size {} must lie in 1..={}",
                    self.block_size, self.m
                )));
            }
            if !(self.error_target > 0.0 && self.error_target < 0.5) {
                return Err(invalid("error target must lie in (0, 0.5)"));
            }
        } else if self.k == 0 || self.k > self.m {
            return Err(invalid(format!(
                "need 1 <= K <= M, got K={}, M={}",
                self.k, self.m
            )));
        }
        if self.sigma2.is_nan() || self.sigma2 < 0.0 {
            return Err(invalid("noise variance must be non-negative"));
        }
        Ok(())
    }
}

/// Per-signal outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub index: usize,
    pub label: Option<usize>,
    pub class: usize,
    /// Whether a sequential test accepted the class before its budget ran out.
    pub decided: bool,
    /// Measurements spent on classification.
    pub k: usize,
    /// `‖x − x̂‖² / N`.
    pub mse: f64,
}

mod psnr_sentinel {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() && *x > 0.0 => Repr::Text("inf".into()).serialize(s),
            Some(x) => Repr::Num(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t == "inf" => Some(f64::INFINITY),
            Some(Repr::Text(t)) => {
                return Err(serde::de::Error::custom(format!("bad PSNR value {t}")))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub config: ProtocolConfig,
    pub signals: usize,
    /// Fraction of signals whose class matches the label, when labels exist.
    pub accuracy: Option<f64>,
    pub mean_mse: f64,
    /// `10 log₁₀(255² / mean MSE)` for image patches; `"inf"` when exact.
    #[serde(with = "psnr_sentinel")]
    pub mean_psnr: Option<f64>,
    /// Mean step-1 measurement count.
    pub mean_k: f64,
    pub wall_time_s: f64,
    pub seed: u64,
    pub records: Vec<SignalRecord>,
    #[serde(skip)]
    pub estimates: Vec<DVector<f64>>,
}

impl ExperimentReport {
    pub const CSV_HEADER: &'static str =
        "protocol,signals,m,k,mean_k,accuracy,mean_mse,mean_psnr,wall_time_s,seed";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.signals,
            self.config.m,
            self.config.k,
            self.mean_k,
            opt(self.accuracy),
            self.mean_mse,
            opt(self.mean_psnr),
            self.wall_time_s,
            self.seed
        )
    }

    /// Per-signal rows for plotting.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("index,label,class,decided,k,mse\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.index,
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                r.class,
                r.decided,
                r.k,
                r.mse
            ));
        }
        s
    }
}

struct Outcome {
    record: SignalRecord,
    estimate: DVector<f64>,
}

fn summarise(
    config: &ProtocolConfig,
    batch: &SignalBatch,
    outcomes: Vec<Outcome>,
    started: Instant,
) -> ExperimentReport {
    let s = outcomes.len();
    let mut records = Vec::with_capacity(s);
    let mut estimates = Vec::with_capacity(s);
    for o in outcomes {
        records.push(o.record);
        estimates.push(o.estimate);
    }
    let mean_mse = records.iter().map(|r| r.mse).sum::<f64>() / s as f64;
    let mean_k = records.iter().map(|r| r.k as f64).sum::<f64>() / s as f64;
    let accuracy = batch
        .labels
        .as_ref()
        .map(|_| records.iter().filter(|r| r.label == Some(r.class)).count() as f64 / s as f64);
    let mean_psnr = matches!(batch.provenance, Provenance::ImagePatches { .. })
        .then(|| psnr_from_mse(mean_mse, I_MAX));
    ExperimentReport {
        protocol: config.name(),
        config: config.clone(),
        signals: s,
        accuracy,
        mean_mse,
        mean_psnr,
        mean_k,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed: config.seed,
        records,
        estimates,
    }
}

fn check_batch(batch: &SignalBatch, model: &GmmModel) -> Result<()> {
    if batch.dimension() != model.dimension() {
        return Err(ScsError::DimensionMismatch {
            expected: model.dimension(),
            found: batch.dimension(),
        });
    }
    batch.validate_labels(model.len())
}

/// Non-adaptive `rows × N` step-1 design shared by every signal.
pub fn batch_design(
    step1: Step1,
    model: &GmmModel,
    rows: usize,
    seed: u64,
    ascent: &AscentOptions,
) -> Result<DMatrix<f64>> {
    let n = model.dimension();
    let design_seed = derive_seed(seed, DESIGN_SALT);
    Ok(match step1 {
        Step1::Random => random_orthonormal(rows, n, design_seed)?.into_rows(),
        Step1::RipAb => rip_ab(model, rows)?.into_rows(),
        Step1::Ida => {
            let state = AcquisitionState::new(model, 0.0, rows, rows)?;
            adaptive::design_classification_block(&state, model, rows, design_seed, ascent)?.rows
        }
        Step1::AidaSht => return Err(invalid("aida_sht has no batch design")),
    })
}

/// Single-step batch sensing: one shared `M`-row design, MAP model
/// selection and Wiener reconstruction per signal.
pub fn run_single_step(
    config: &ProtocolConfig,
    batch: &SignalBatch,
    model: &GmmModel,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut config = config.clone();
    config.k = config.m;
    config.validate(model.dimension())?;
    check_batch(batch, model)?;
    let phi = batch_design(config.step1, model, config.m, config.seed, &config.ascent)?;
    let rec = MapReconstructor::new(&phi, model, config.sigma2)?;
    let noise_seed = derive_seed(config.seed, NOISE_SALT);
    let outcomes = batch
        .signals
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut oracle = NoisySignal::new(x.clone(), config.sigma2, noise_seed, i as u64);
            let y = oracle.measure(&phi);
            let r = rec.reconstruct(&y)?;
            Ok(Outcome {
                record: SignalRecord {
                    index: i,
                    label: batch.labels.as_ref().map(|l| l[i]),
                    class: r.selected_class,
                    decided: false,
                    k: config.m,
                    mse: mse(x, &r.signal_estimate)?,
                },
                estimate: r.signal_estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarise(&config, batch, outcomes, started))
}

/// Run a two-step protocol over a batch. With `K = M` and a non-adaptive
/// first step there is no second step and the run is single-step batch
/// sensing.
pub fn run_two_step(
    config: &ProtocolConfig,
    batch: &SignalBatch,
    model: &GmmModel,
) -> Result<ExperimentReport> {
    config.validate(model.dimension())?;
    check_batch(batch, model)?;
    if config.step1 != Step1::AidaSht && config.k == config.m {
        return run_single_step(config, batch, model);
    }
    let started = Instant::now();
    let step1_rows = match config.step1 {
        Step1::AidaSht => None,
        s => Some(batch_design(
            s,
            model,
            config.k,
            config.seed,
            &config.ascent,
        )?),
    };
    let noise_seed = derive_seed(config.seed, NOISE_SALT);
    let sht_seed = derive_seed(config.seed, SHT_SALT);
    let outcomes = batch
        .signals
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut oracle = NoisySignal::new(x.clone(), config.sigma2, noise_seed, i as u64);
            let (state, class, decided) = match &step1_rows {
                Some(phi) => {
                    let mut state =
                        AcquisitionState::new(model, config.sigma2, config.k, config.m)?;
                    let y = oracle.measure(phi);
                    state.push_block(model, phi, &y)?;
                    let class = inference::map_classify(&state, model)?;
                    (state, class, false)
                }
                None => {
                    let mut opts = ShtOptions::new(
                        config.block_size,
                        config.m,
                        config.error_target,
                        Designer::Aida,
                    );
                    opts.ascent = config.ascent;
                    opts.first_test_block = config.first_test_block;
                    let out = inference::sht_run(
                        &mut oracle,
                        model,
                        config.sigma2,
                        &opts,
                        derive_seed(sht_seed, i as u64),
                    )?;
                    (out.state, out.class, out.decided_class.is_some())
                }
            };
            let k = state.acquired();
            let rest = config.m - k;
            let (rows, y) = if rest == 0 {
                (state.rows().clone(), state.measurements().clone())
            } else {
                let extra = match config.step2 {
                    Step2::EigenMse => eigen_sensing(model.component(class), rest)?.into_rows(),
                    Step2::MiAdaptive => {
                        adaptive::mi_optimal_step2(&state, model, class, rest)?.into_rows()
                    }
                };
                let y2 = oracle.measure(&extra);
                let mut y = DVector::zeros(config.m);
                y.rows_mut(0, k).copy_from(state.measurements());
                y.rows_mut(k, rest).copy_from(&y2);
                (linalg::vstack(state.rows(), &extra), y)
            };
            let c = model.component(class);
            let alpha = inference::wiener_coefficients(&y, &rows, c, config.sigma2)?;
            let estimate = c.basis() * alpha + c.mean();
            Ok(Outcome {
                record: SignalRecord {
                    index: i,
                    label: batch.labels.as_ref().map(|l| l[i]),
                    class,
                    decided,
                    k,
                    mse: mse(x, &estimate)?,
                },
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarise(config, batch, outcomes, started))
}

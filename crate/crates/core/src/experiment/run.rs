//! Uniform TTA against fitted VB-TTA weights on synthetic data.

use nalgebra::DMatrix;
use rand::Rng as _;

use super::config::{ExperimentConfig, FitMethod, MetricKind, SigmaEps, TaskKind};
use super::data::generate_synthetic;
use super::report::{MetricRow, RunReport};
use crate::advi::{advi_fit, advi_weights, AdviConfig, AdviMode, VbttaLogJoint};
use crate::augment::{AugmentationSpec, ReferencePool};
use crate::error::{Error, Result};
use crate::mathstats::Rng;
use crate::moments::{moments_for_instances, ComponentMoments, MomentMethod, NoiseConfig};
use crate::par;
use crate::predictor::{self, Dataset, Head, MlpModel};
use crate::vbcore::{
    augmented_means, fit_categorical, fit_continuous, label_probabilities, predict_from_means, spec_keys, CalibrationInstance, FitConfig,
    PriorConfig, PriorMode, ProbitComponent, SimplexWeights,
};

const PROBIT_TOL: f64 = 1e-8;
const ADVI_WEIGHT_DRAWS: usize = 256;

/// A subset of the configured augmentations fitted and evaluated together.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    /// Set when the subset holds a single augmentation kind.
    pub kind: Option<&'static str>,
    pub members: Vec<usize>,
}

impl Strategy {
    fn name(&self, method: &str) -> String {
        match self.kind {
            None => format!("{}-{method}", self.members.len()),
            Some(k) => format!("{}-{method}[{k}]", self.members.len()),
        }
    }

    /// `K-TTA`, or `K-TTA[kind]` for a kind subset.
    pub fn uniform_name(&self) -> String {
        self.name("TTA")
    }

    pub fn fitted_name(&self) -> String {
        self.name("VB-TTA")
    }
}

/// The full augmentation list first, then each kind that occurs at least
/// twice when several kinds are present.
pub fn strategies(config: &ExperimentConfig) -> Vec<Strategy> {
    let augs = &config.augmentations;
    let mut out = vec![Strategy {
        kind: None,
        members: (0..augs.len()).collect(),
    }];
    if config.kind_groups {
        let mut seen = Vec::new();
        for kind in augs.iter().map(AugmentationSpec::kind) {
            if seen.contains(&kind) {
                continue;
            }
            seen.push(kind);
            let members: Vec<usize> = (0..augs.len()).filter(|&k| augs[k].kind() == kind).collect();
            if members.len() >= 2 && members.len() < augs.len() {
                out.push(Strategy {
                    kind: Some(kind),
                    members,
                });
            }
        }
    }
    out
}

/// Everything one seed produced.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// Metric per checkpoint, keyed by strategy name in report order.
    pub metrics: Vec<(String, Vec<f64>)>,
    /// Weights of the full-list fit at steps `1..=steps`.
    pub weight_trace: Vec<Vec<f64>>,
    pub negative_elbo: Vec<f64>,
}

impl SeedResult {
    pub fn metric(&self, strategy: &str) -> Option<&[f64]> {
        self.metrics.iter().find(|(n, _)| n == strategy).map(|(_, v)| v.as_slice())
    }
}

struct FitTrace {
    /// One entry per step, step 1 being the uniform initialization.
    weights: Vec<SimplexWeights>,
    negative_elbo: Vec<f64>,
}

fn pick<T: Clone>(row: &[T], members: &[usize]) -> Vec<T> {
    members.iter().map(|&k| row[k].clone()).collect()
}

fn score(metric: MetricKind, predictions: &[f64], labels: &[f64]) -> Result<f64> {
    let m = predictor::metrics(predictions, labels)?;
    Ok(match metric {
        MetricKind::Mse => m.mse,
        MetricKind::Mae => m.mae,
        MetricKind::Accuracy => m.accuracy,
    })
}

fn training_residual(model: &MlpModel, train: &Dataset) -> f64 {
    let pairs = train.pairs();
    pairs.iter().map(|(x, y)| (model.forward_unchecked(x)[0] - y).powi(2)).sum::<f64>() / pairs.len() as f64
}

fn fit_regression(
    config: &ExperimentConfig,
    model: &MlpModel,
    calibration: &Dataset,
    moments: &[Vec<ComponentMoments>],
    rng: &Rng,
) -> Result<FitTrace> {
    let cal = calibration
        .inputs
        .iter()
        .zip(&calibration.labels)
        .map(|(x, s)| CalibrationInstance::scalar(s, model.forward_unchecked(x)[0]))
        .collect::<Result<Vec<_>>>()?;
    match config.method {
        FitMethod::Cavi => {
            let prior = match config.prior {
                PriorMode::Fixed => PriorConfig::fixed(1),
                PriorMode::MomentInformed => PriorConfig::moment_informed(1, config.prior_beta, config.prior_nu),
            };
            let fit = fit_continuous(
                &cal,
                moments,
                &prior,
                &FitConfig {
                    max_steps: config.steps - 1,
                    rel_tol: 0.0,
                    init: None,
                },
            )?;
            Ok(FitTrace {
                weights: fit.weight_trace,
                negative_elbo: fit.elbo_trace.iter().map(|e| -e).collect(),
            })
        }
        FitMethod::Advi => {
            let joint = VbttaLogJoint::new(&cal, moments, AdviMode::WeightsOnly, config.prior_beta, config.prior_nu)?;
            let cfg = AdviConfig {
                n_steps: config.steps - 1,
                seed: rng.clone().gen(),
                ..AdviConfig::default()
            };
            let fit = advi_fit(&joint, joint.transform(), &joint.initial_q(0.1), &cfg)?;
            let weights = fit
                .history
                .iter()
                .enumerate()
                .map(|(t, q)| advi_weights(&joint, q, ADVI_WEIGHT_DRAWS, &mut rng.split(t as u64)))
                .collect::<Result<Vec<_>>>()?;
            Ok(FitTrace {
                weights,
                negative_elbo: fit.trace.iter().map(|e| -e).collect(),
            })
        }
    }
}

fn fit_classification(config: &ExperimentConfig, probs: &[DMatrix<f64>]) -> Result<FitTrace> {
    let fit = fit_categorical(
        probs,
        &FitConfig {
            max_steps: config.steps - 1,
            rel_tol: 0.0,
            init: None,
        },
    )?;
    Ok(FitTrace {
        weights: fit.weight_trace,
        negative_elbo: fit.loglik_trace.iter().map(|l| -l).collect(),
    })
}

/// Runs one seed end to end; failures name the stage they came from.
pub fn run_seed(config: &ExperimentConfig, seed_index: usize) -> Result<SeedResult> {
    let root = Rng::new(config.seed).split(seed_index as u64);
    let data = generate_synthetic(config, &mut root.split_named("data", 0)).map_err(|e| e.in_stage("generate"))?;

    let (head, out) = match config.task {
        TaskKind::Regression => (Head::Regression, 1),
        TaskKind::Classification { classes } => (Head::Classification, classes),
    };
    let mut sizes = vec![config.dim];
    sizes.extend(&config.hidden);
    sizes.push(out);
    let model = (|| {
        let init = MlpModel::new(&sizes, head, &mut root.split_named("init", 0))?;
        let train_cfg = predictor::TrainConfig {
            seed: root.split_named("train", 0).gen(),
            ..config.train
        };
        predictor::train(&data.train, &init, &train_cfg)
    })()
    .map_err(|e| e.in_stage("train"))?;

    let pool = ReferencePool::new(data.train.inputs.clone()).map_err(|e| e.in_stage("train"))?;
    let sigma_eps = match (config.sigma_eps, head) {
        (SigmaEps::Fixed(s), _) => s,
        (SigmaEps::Auto, Head::Regression) => training_residual(&model, &data.train),
        (SigmaEps::Auto, Head::Classification) => NoiseConfig::default().sigma_eps[0],
    };
    let noise = NoiseConfig::new(sigma_eps, config.tta_samples);
    let specs = &config.augmentations;
    let moments = moments_for_instances(
        &model,
        &data.calibration.inputs,
        specs,
        MomentMethod::MonteCarlo {
            samples: config.moment_samples,
        },
        &noise,
        &root.split_named("moments", 0),
        Some(&pool),
    )
    .map_err(|e| e.in_stage("moments"))?;

    let predict_rng = root.split_named("predict", 0);
    let test_means = par::try_map_range(data.test.len(), |i| {
        augmented_means(&model, &data.test.inputs[i], specs, config.tta_samples, &predict_rng.split(i as u64), Some(&pool))
    })
    .map_err(|e| e.in_stage("predict"))?;
    let test_labels: Vec<f64> = data.test.labels.iter().map(|s| s[0]).collect();
    let keys = spec_keys(specs);

    let probs = match config.task {
        TaskKind::Regression => Vec::new(),
        TaskKind::Classification { .. } => par::try_map_range(data.calibration.len(), |i| {
            let comps = moments[i]
                .iter()
                .map(ProbitComponent::from_moments)
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = data.calibration.labels[i].iter().map(|&y| y as usize).collect();
            label_probabilities(&labels, &comps, PROBIT_TOL)
        })
        .map_err(|e| e.in_stage("fit"))?,
    };

    let evaluate = |members: &[usize], weights: &SimplexWeights| -> Result<f64> {
        let sub_keys = pick(&keys, members);
        let preds = test_means
            .iter()
            .map(|per_k| {
                let p = predict_from_means(head, &pick(per_k, members), weights, &sub_keys)?;
                Ok(match head {
                    Head::Regression => p.regression().map_or(f64::NAN, |v| v[0]),
                    Head::Classification => p.class().map_or(f64::NAN, |c| c as f64),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        score(config.metric, &preds, &test_labels)
    };

    let mut metrics = Vec::new();
    let mut primary = None;
    for (g, strategy) in strategies(config).into_iter().enumerate() {
        let m = &strategy.members;
        let uniform = evaluate(m, &SimplexWeights::uniform(m.len())).map_err(|e| e.in_stage("predict"))?;
        let fit_rng = root.split_named("fit", g as u64);
        let trace = match config.task {
            TaskKind::Regression => {
                let sub: Vec<Vec<ComponentMoments>> = moments.iter().map(|row| pick(row, m)).collect();
                fit_regression(config, &model, &data.calibration, &sub, &fit_rng)
            }
            TaskKind::Classification { .. } => {
                let sub: Vec<DMatrix<f64>> = probs.iter().map(|p| p.select_columns(m)).collect();
                fit_classification(config, &sub)
            }
        }
        .map_err(|e| e.in_stage("fit"))?;
        if trace.weights.len() != config.steps {
            return Err(Error::numerical("fit", format!("expected {} iterates, got {}", config.steps, trace.weights.len())).in_stage("fit"));
        }
        let fitted = config
            .checkpoints
            .iter()
            .map(|&s| evaluate(m, &trace.weights[s - 1]))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.in_stage("predict"))?;
        metrics.push((strategy.uniform_name(), vec![uniform; config.checkpoints.len()]));
        metrics.push((strategy.fitted_name(), fitted));
        if primary.is_none() {
            primary = Some(trace);
        }
    }
    let primary = primary.expect("at least one strategy");
    Ok(SeedResult {
        seed: root.seed(),
        metrics,
        weight_trace: primary.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
        negative_elbo: primary.negative_elbo,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed-sorted reduction of per-seed results.
pub fn aggregate(config: &ExperimentConfig, per_seed: Vec<SeedResult>) -> RunReport {
    let mut rows = Vec::new();
    if let Some(first) = per_seed.first() {
        for (name, _) in &first.metrics {
            for (c, &step) in config.checkpoints.iter().enumerate() {
                let vals: Vec<f64> = per_seed.iter().filter_map(|s| s.metric(name).map(|v| v[c])).collect();
                let (mean, std) = mean_std(&vals);
                rows.push(MetricRow {
                    strategy: name.clone(),
                    step,
                    mean,
                    std,
                });
            }
        }
    }
    let n = per_seed.len() as f64;
    let steps = per_seed.first().map_or(0, |s| s.weight_trace.len());
    let weights = (0..steps)
        .map(|t| {
            let k = per_seed[0].weight_trace[t].len();
            (0..k).map(|j| per_seed.iter().map(|s| s.weight_trace[t][j]).sum::<f64>() / n).collect()
        })
        .collect();
    let negative_elbo = (0..steps).map(|t| per_seed.iter().map(|s| s.negative_elbo[t]).sum::<f64>() / n).collect();
    RunReport {
        metric: config.metric.name().to_string(),
        rows,
        weight_labels: spec_keys(&config.augmentations),
        weights,
        negative_elbo,
        per_seed,
    }
}

/// Trains, fits and evaluates every seed, in parallel across seeds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let per_seed = par::try_map_range(config.seeds, |s| run_seed(config, s))?;
    Ok(aggregate(config, per_seed))
}

//! Synthetic noisy-label data from a random cubic in a 1-D projection.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use super::config::{DataSource, ExperimentConfig, TaskKind};
use crate::error::{Error, Result};
use crate::mathstats::Rng;
use crate::predictor::{Dataset, Task};

/// `g(x) = Σ_{p=1}^{3} a_p (u·x)^p` with a random unit `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub direction: Vec<f64>,
    pub coefficients: [f64; 3],
}

impl Polynomial {
    pub fn random(dim: usize, rng: &mut Rng) -> Self {
        let mut u: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        let mut a = [0.0; 3];
        a.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        Self {
            direction: u,
            coefficients: a,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let t: f64 = self.direction.iter().zip(x).map(|(u, v)| u * v).sum();
        let [a1, a2, a3] = self.coefficients;
        t * (a1 + t * (a2 + t * a3))
    }
}

/// Inputs and label sets of one split.
type Split = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Train, calibration and test splits sharing one labelling function.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub polynomial: Polynomial,
    /// Class boundaries on the regression target (empty for regression).
    pub thresholds: Vec<f64>,
    pub train: Dataset,
    pub calibration: Dataset,
    pub test: Dataset,
}

fn draw_inputs(source: DataSource, dim: usize, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    match source {
        DataSource::Gaussian => Ok((0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect()),
        DataSource::Gamma { shape, rate } => {
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Config(e.to_string()))?;
            Ok((0..n).map(|_| (0..dim).map(|_| g.sample(rng)).collect()).collect())
        }
    }
}

fn class_of(y: f64, thresholds: &[f64]) -> f64 {
    thresholds.iter().filter(|&&t| y > t).count() as f64
}

/// Inner quantile boundaries splitting `values` into `classes` equal bins.
fn quantile_thresholds(values: &[f64], classes: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (1..classes)
        .map(|j| {
            let pos = j as f64 / classes as f64 * (v.len() - 1) as f64;
            let (lo, frac) = (pos.floor() as usize, pos.fract());
            v[lo] + frac * (v[(lo + 1).min(v.len() - 1)] - v[lo])
        })
        .collect()
}

/// Builds the three splits. `⌊n·fraction⌋` randomly chosen training and
/// calibration instances get a second label `y + N(0, noise_scale²)`; test
/// instances keep their clean label only.
pub fn generate_synthetic(config: &ExperimentConfig, rng: &mut Rng) -> Result<SyntheticData> {
    config.validate()?;
    let polynomial = Polynomial::random(config.dim, rng);
    let eps = Normal::new(0.0, config.label_noise).map_err(|e| Error::Config(e.to_string()))?;
    let extra = Normal::new(0.0, config.noise_scale).map_err(|e| Error::Config(e.to_string()))?;
    let split = |n: usize, fraction: f64, rng: &mut Rng| -> Result<Split> {
        let inputs = draw_inputs(config.data, config.dim, n, rng)?;
        let mut labels: Vec<Vec<f64>> = inputs.iter().map(|x| vec![polynomial.eval(x) + eps.sample(rng)]).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let noisy = (n as f64 * fraction).floor() as usize;
        for &i in &order[..noisy] {
            let y = labels[i][0] + extra.sample(rng);
            labels[i].push(y);
        }
        Ok((inputs, labels))
    };
    let train = split(config.n_train, config.noisy_fraction, rng)?;
    let calibration = split(config.n_calibration, config.noisy_fraction, rng)?;
    let test = split(config.n_test, 0.0, rng)?;
    let (task, thresholds) = match config.task {
        TaskKind::Regression => (Task::Regression, Vec::new()),
        TaskKind::Classification { classes } => {
            let clean: Vec<f64> = train.1.iter().map(|s| s[0]).collect();
            (Task::Classification { classes }, quantile_thresholds(&clean, classes))
        }
    };
    let finish = |(inputs, labels): Split| {
        let labels = if thresholds.is_empty() {
            labels
        } else {
            labels.into_iter().map(|s| s.into_iter().map(|y| class_of(y, &thresholds)).collect()).collect()
        };
        Dataset { inputs, labels, task }
    };
    Ok(SyntheticData {
        polynomial,
        train: finish(train),
        calibration: finish(calibration),
        test: finish(test),
        thresholds,
    })
}

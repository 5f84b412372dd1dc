//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentationSpec;
use crate::error::{Error, Result};
use crate::predictor::TrainConfig;
use crate::vbcore::PriorMode;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "VBTTA_SEED";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DataSource {
    /// `x ~ N(0, I_d)`.
    Gaussian,
    /// Independent `Gamma(shape, rate)` coordinates.
    Gamma { shape: f64, rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    /// Regression targets binned into `classes` quantile bins.
    Classification { classes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMethod {
    Cavi,
    Advi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Mse,
    Mae,
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Mae => "mae",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// Observation-noise variance added to every component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaEps {
    /// Mean squared training residual of the fitted predictor.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub dim: usize,
    pub n_train: usize,
    pub n_calibration: usize,
    pub n_test: usize,
    /// Fraction of training and calibration instances given a second label.
    pub noisy_fraction: f64,
    /// Standard deviation of the extra label around the clean one.
    pub noise_scale: f64,
    /// Standard deviation of the additive noise on clean labels.
    pub label_noise: f64,
    pub task: TaskKind,
    pub seed: u64,
    pub seeds: usize,
    pub augmentations: Vec<AugmentationSpec>,
    /// Also fit every augmentation kind that appears more than once on its own.
    pub kind_groups: bool,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub method: FitMethod,
    pub steps: usize,
    pub checkpoints: Vec<usize>,
    /// Monte-Carlo draws per instance and augmentation for the moments.
    pub moment_samples: usize,
    /// Draws per augmentation averaged at prediction time.
    pub tta_samples: usize,
    pub sigma_eps: SigmaEps,
    pub prior: PriorMode,
    pub prior_beta: f64,
    pub prior_nu: f64,
    pub metric: MetricKind,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let aug = |s: &str| s.parse::<AugmentationSpec>().expect("valid default augmentation");
        Self {
            data: DataSource::Gaussian,
            dim: 40,
            n_train: 1000,
            n_calibration: 1000,
            n_test: 1000,
            noisy_fraction: 0.3,
            noise_scale: 1.0,
            label_noise: 0.1,
            task: TaskKind::Regression,
            seed: 0,
            seeds: 10,
            augmentations: ["mixup(0.1)", "mixup(0.5)", "mixup(0.9)", "cutmix(0.1)", "cutmix(0.5)", "cutmix(0.9)"]
                .into_iter()
                .map(aug)
                .collect(),
            kind_groups: true,
            hidden: vec![32],
            train: TrainConfig {
                learning_rate: 1e-2,
                epochs: 200,
                ..TrainConfig::default()
            },
            method: FitMethod::Cavi,
            steps: 300,
            checkpoints: vec![1, 50, 100, 200, 300],
            moment_samples: 64,
            tta_samples: 128,
            sigma_eps: SigmaEps::Auto,
            prior: PriorMode::MomentInformed,
            prior_beta: 100.0,
            prior_nu: 20.0,
            metric: MetricKind::Mse,
            output_dir: PathBuf::from("vbtta-out"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut shape, mut rate) = (2.0, 2.0);
        let mut source = "gaussian".to_string();
        let mut classes = 0usize;
        let mut task = "regression".to_string();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            let at_line = |e: Error| Error::Parse { line: n + 1, msg: e.to_string() };
            let r: Result<()> = (|| {
                match key {
                    "data" => source = v.to_string(),
                    "gamma_shape" => shape = parse_num(key, v)?,
                    "gamma_rate" => rate = parse_num(key, v)?,
                    "dim" => cfg.dim = parse_num(key, v)?,
                    "n_train" => cfg.n_train = parse_num(key, v)?,
                    "n_calibration" => cfg.n_calibration = parse_num(key, v)?,
                    "n_test" => cfg.n_test = parse_num(key, v)?,
                    "noisy_fraction" => cfg.noisy_fraction = parse_num(key, v)?,
                    "noise_scale" => cfg.noise_scale = parse_num(key, v)?,
                    "label_noise" => cfg.label_noise = parse_num(key, v)?,
                    "task" => task = v.to_string(),
                    "classes" => classes = parse_num(key, v)?,
                    "seed" => cfg.seed = parse_num(key, v)?,
                    "seeds" => cfg.seeds = parse_num(key, v)?,
                    "augmentations" => cfg.augmentations = parse_list(key, v)?,
                    "kind_groups" => cfg.kind_groups = parse_num(key, v)?,
                    "hidden" => cfg.hidden = parse_list(key, v)?,
                    "learning_rate" => cfg.train.learning_rate = parse_num(key, v)?,
                    "epochs" => cfg.train.epochs = parse_num(key, v)?,
                    "batch_size" => cfg.train.batch_size = parse_num(key, v)?,
                    "method" => {
                        cfg.method = match v {
                            "cavi" => FitMethod::Cavi,
                            "advi" => FitMethod::Advi,
                            _ => return Err(Error::Config(format!("unknown method `{v}`"))),
                        }
                    }
                    "steps" => cfg.steps = parse_num(key, v)?,
                    "checkpoints" => cfg.checkpoints = parse_list(key, v)?,
                    "moment_samples" => cfg.moment_samples = parse_num(key, v)?,
                    "tta_samples" => cfg.tta_samples = parse_num(key, v)?,
                    "sigma_eps" => cfg.sigma_eps = if v == "auto" { SigmaEps::Auto } else { SigmaEps::Fixed(parse_num(key, v)?) },
                    "prior" => {
                        cfg.prior = match v {
                            "fixed" => PriorMode::Fixed,
                            "moment_informed" => PriorMode::MomentInformed,
                            _ => return Err(Error::Config(format!("unknown prior `{v}`"))),
                        }
                    }
                    "prior_beta" => cfg.prior_beta = parse_num(key, v)?,
                    "prior_nu" => cfg.prior_nu = parse_num(key, v)?,
                    "metric" => {
                        cfg.metric = match v {
                            "mse" => MetricKind::Mse,
                            "mae" => MetricKind::Mae,
                            "accuracy" => MetricKind::Accuracy,
                            _ => return Err(Error::Config(format!("unknown metric `{v}`"))),
                        }
                    }
                    "output_dir" => cfg.output_dir = PathBuf::from(v),
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            })();
            r.map_err(at_line)?;
        }
        cfg.data = match source.as_str() {
            "gaussian" => DataSource::Gaussian,
            "gamma" => DataSource::Gamma { shape, rate },
            other => return Err(Error::Config(format!("unknown data source `{other}`"))),
        };
        cfg.task = match task.as_str() {
            "regression" => TaskKind::Regression,
            "classification" => TaskKind::Classification { classes },
            other => return Err(Error::Config(format!("unknown task `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the `VBTTA_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.n_train == 0 || self.n_calibration == 0 || self.n_test == 0 || self.seeds == 0 {
            return bad("dimension, sizes and seed count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noisy_fraction) {
            return bad(format!("noisy_fraction must lie in [0, 1], got {}", self.noisy_fraction));
        }
        if !(self.noise_scale >= 0.0) || !(self.label_noise >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if let DataSource::Gamma { shape, rate } = self.data {
            if !(shape > 0.0 && rate > 0.0) {
                return bad(format!("gamma parameters must be positive, got ({shape}, {rate})"));
            }
        }
        if let TaskKind::Classification { classes } = self.task {
            if classes < 2 {
                return bad("classification needs `classes` ≥ 2".into());
            }
        }
        if self.augmentations.is_empty() {
            return bad("at least one augmentation is required".into());
        }
        for a in &self.augmentations {
            a.validate(self.dim).map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut keys: Vec<String> = self.augmentations.iter().map(|a| a.to_string()).collect();
        keys.sort();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return bad("augmentations must be distinct".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.checkpoints.is_empty() || self.checkpoints.iter().any(|&c| c < 1 || c > self.steps) {
            return bad(format!("checkpoints must lie in [1, {}]", self.steps));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing".into());
        }
        if self.moment_samples < 2 || self.tta_samples == 0 {
            return bad("moment_samples must be ≥ 2 and tta_samples ≥ 1".into());
        }
        if let SigmaEps::Fixed(s) = self.sigma_eps {
            if !(s >= 0.0) {
                return bad(format!("sigma_eps must be non-negative, got {s}"));
            }
        }
        if !(self.prior_beta > 0.0) || !(self.prior_nu > 0.0) {
            return bad("prior_beta and prior_nu must be positive".into());
        }
        let classification = matches!(self.task, TaskKind::Classification { .. });
        if classification != (self.metric == MetricKind::Accuracy) {
            return bad("accuracy is the classification metric; regression uses mse or mae".into());
        }
        if classification && self.method == FitMethod::Advi {
            return bad("ADVI fitting is available for regression only".into());
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match self.data {
            DataSource::Gaussian => kv("data", "gaussian".into()),
            DataSource::Gamma { shape, rate } => {
                kv("data", "gamma".into());
                kv("gamma_shape", shape.to_string());
                kv("gamma_rate", rate.to_string());
            }
        }
        kv("dim", self.dim.to_string());
        kv("n_train", self.n_train.to_string());
        kv("n_calibration", self.n_calibration.to_string());
        kv("n_test", self.n_test.to_string());
        kv("noisy_fraction", self.noisy_fraction.to_string());
        kv("noise_scale", self.noise_scale.to_string());
        kv("label_noise", self.label_noise.to_string());
        match self.task {
            TaskKind::Regression => kv("task", "regression".into()),
            TaskKind::Classification { classes } => {
                kv("task", "classification".into());
                kv("classes", classes.to_string());
            }
        }
        kv("seed", self.seed.to_string());
        kv("seeds", self.seeds.to_string());
        kv("augmentations", join(&self.augmentations));
        kv("kind_groups", self.kind_groups.to_string());
        kv("hidden", join(&self.hidden));
        kv("learning_rate", self.train.learning_rate.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("method", if self.method == FitMethod::Cavi { "cavi" } else { "advi" }.into());
        kv("steps", self.steps.to_string());
        kv("checkpoints", join(&self.checkpoints));
        kv("moment_samples", self.moment_samples.to_string());
        kv("tta_samples", self.tta_samples.to_string());
        kv(
            "sigma_eps",
            match self.sigma_eps {
                SigmaEps::Auto => "auto".into(),
                SigmaEps::Fixed(v) => v.to_string(),
            },
        );
        kv("prior", if self.prior == PriorMode::Fixed { "fixed" } else { "moment_informed" }.into());
        kv("prior_beta", self.prior_beta.to_string());
        kv("prior_nu", self.prior_nu.to_string());
        kv("metric", self.metric.name().into());
        kv("output_dir", self.output_dir.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig {
            data: DataSource::Gamma { shape: 2.0, rate: 2.0 },
            sigma_eps: SigmaEps::Fixed(0.25),
            checkpoints: vec![1, 7],
            steps: 7,
            ..ExperimentConfig::default()
        };
        cfg.augmentations.push(AugmentationSpec::gaussian_noise(0.1));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match ExperimentConfig::parse("dim = 3\nsteps = many\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("colour = red"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn invariants_are_enforced() {
        for text in [
            "noisy_fraction = 1.5",
            "n_test = 0",
            "checkpoints = 1, 400",
            "checkpoints = 50, 10",
            "augmentations = mixup(0.5), mixup(0.5)",
            "task = classification\nclasses = 1\nmetric = accuracy",
            "task = classification\nclasses = 3",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}

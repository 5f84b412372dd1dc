//! Monte-Carlo ELBO and its stochastic maximization.

use nalgebra::DVector;

use super::gaussian::FullRankGaussian;
use super::transform::TransformSpec;
use crate::error::{check_dim, Error, Result};
use crate::mathstats::Rng;
use crate::par;
use crate::predictor::Adam;

const MAX_REJECTIONS: usize = 100;

/// Log joint density evaluated at constrained latents.
pub trait LogJoint: Sync {
    fn log_joint(&self, eta: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> LogJoint for F {
    fn log_joint(&self, eta: &[f64]) -> f64 {
        self(eta)
    }
}

/// `ln p(T⁻¹(ζ)) + ln|det J_{T⁻¹}(ζ)|`; non-finite when ζ is unusable.
pub fn log_joint_unconstrained(log_joint: &dyn LogJoint, transform: &TransformSpec, zeta: &[f64]) -> f64 {
    match transform.from_unconstrained(zeta) {
        Ok((eta, log_det)) => log_joint.log_joint(&eta) + log_det,
        Err(_) => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Draws `n` standard-normal vectors whose objective value is finite,
/// redrawing rejected ones.
fn accepted_draws(
    q: &FullRankGaussian,
    n: usize,
    rng: &mut Rng,
    eval: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
) -> Result<Vec<(DVector<f64>, f64)>> {
    let eps: Vec<DVector<f64>> = (0..n).map(|_| q.standard_draw(rng)).collect();
    let values = par::map_slice(&eps, |e| eval(&q.transform(e)));
    let mut out = Vec::with_capacity(n);
    for (e, v) in eps.into_iter().zip(values) {
        if v.is_finite() {
            out.push((e, v));
            continue;
        }
        let mut rejected = 1;
        loop {
            if rejected >= MAX_REJECTIONS {
                return Err(Error::Evaluation(format!("log joint was non-finite for {MAX_REJECTIONS} consecutive draws")));
            }
            let e = q.standard_draw(rng);
            let v = eval(&q.transform(&e));
            if v.is_finite() {
                out.push((e, v));
                break;
            }
            rejected += 1;
        }
    }
    Ok(out)
}

/// `E_q[ln p(T⁻¹ζ) + ln|det J|] + H(q)` with its Monte-Carlo standard error.
pub fn advi_elbo_estimate_detailed(
    q: &FullRankGaussian,
    transform: &TransformSpec,
    log_joint: &dyn LogJoint,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    if n_mc == 0 {
        return Err(Error::domain("n_mc must be at least 1"));
    }
    check_dim(transform.unconstrained_len(), q.dim())?;
    let eval = |z: &DVector<f64>| log_joint_unconstrained(log_joint, transform, z.as_slice());
    let draws = accepted_draws(q, n_mc, rng, &eval)?;
    let n = draws.len() as f64;
    let mean = draws.iter().map(|(_, v)| v).sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ElboEstimate {
        value: mean + q.entropy(),
        std_error: (var / n).sqrt(),
    })
}

pub fn advi_elbo_estimate(q: &FullRankGaussian, transform: &TransformSpec, log_joint: &dyn LogJoint, n_mc: usize, rng: &mut Rng) -> Result<f64> {
    advi_elbo_estimate_detailed(q, transform, log_joint, n_mc, rng).map(|e| e.value)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdviConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step size at step `t` is `learning_rate / sqrt(1 + decay · t)`.
    pub decay: f64,
    pub n_steps: usize,
    /// Draws per gradient estimate.
    pub n_mc: usize,
    /// Fixed draws used to evaluate the recorded ELBO trace.
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for AdviConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 0.05,
            n_steps: 2000,
            n_mc: 16,
            n_eval: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdviFit {
    pub q: FullRankGaussian,
    /// ELBO under fixed evaluation draws, at initialization and after each step.
    pub trace: Vec<f64>,
    /// `q` at initialization and after each step.
    pub history: Vec<FullRankGaussian>,
}

/// Central-difference gradient of `f` at `z`.
fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, z: &[f64]) -> Vec<f64> {
    let mut zz = z.to_vec();
    (0..z.len())
        .map(|i| {
            let h = 1e-5 * (1.0 + z[i].abs());
            zz[i] = z[i] + h;
            let up = f(&zz);
            zz[i] = z[i] - h;
            let down = f(&zz);
            zz[i] = z[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn fixed_draw_elbo(q: &FullRankGaussian, eval: &(dyn Fn(&DVector<f64>) -> f64 + Sync), eps: &[DVector<f64>]) -> f64 {
    let values = par::map_slice(eps, |e| eval(&q.transform(e)));
    values.iter().sum::<f64>() / eps.len() as f64 + q.entropy()
}

/// Maximizes the Monte-Carlo ELBO with Adam over `(μ, L)`, the diagonal of
/// `L` in log space. Gradients combine the exact entropy gradient with the
/// reparameterized pathwise term.
pub fn advi_fit(log_joint: &dyn LogJoint, transform: &TransformSpec, init: &FullRankGaussian, config: &AdviConfig) -> Result<AdviFit> {
    let m = transform.unconstrained_len();
    check_dim(m, init.dim())?;
    if config.n_mc == 0 || config.n_eval == 0 {
        return Err(Error::Config("n_mc and n_eval must be at least 1".into()));
    }
    if !(config.learning_rate >= 0.0) || !(config.decay >= 0.0) {
        return Err(Error::Config("learning rate and decay must be non-negative".into()));
    }
    let h = |z: &[f64]| log_joint_unconstrained(log_joint, transform, z);
    let eval = |z: &DVector<f64>| h(z.as_slice());
    let root = Rng::new(config.seed);
    let mut eval_rng = root.split_named("advi-eval", 0);
    let eval_eps: Vec<DVector<f64>> = (0..config.n_eval).map(|_| init.standard_draw(&mut eval_rng)).collect();
    let mut rng = root.split_named("advi-grad", 0);

    let mut params = init.to_params();
    let mut q = FullRankGaussian::from_params(m, &params);
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut trace = vec![fixed_draw_elbo(&q, &eval, &eval_eps)];
    let mut history = vec![q.clone()];

    for step in 1..=config.n_steps {
        let draws = accepted_draws(&q, config.n_mc, &mut rng, &eval).map_err(|_| Error::AdviDivergence { step, trace: trace.clone() })?;
        let grads = par::map_slice(&draws, |(e, _)| fd_gradient(&h, q.transform(e).as_slice()));
        let mut grad = vec![0.0; params.len()];
        let scale = 1.0 / draws.len() as f64;
        for ((e, _), g) in draws.iter().zip(&grads) {
            for i in 0..m {
                grad[i] += scale * g[i];
            }
            let mut at = m;
            for i in 0..m {
                for j in 0..=i {
                    grad[at] += scale * if i == j { g[i] * e[i] * q.chol[(i, i)] } else { g[i] * e[j] };
                    at += 1;
                }
            }
        }
        let mut at = m;
        for i in 0..m {
            at += i;
            grad[at] += 1.0;
            at += 1;
        }
        adam.set_learning_rate(config.learning_rate / (1.0 + config.decay * step as f64).sqrt());
        adam.ascend(&mut params, &grad);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::AdviDivergence { step, trace });
        }
        q = FullRankGaussian::from_params(m, &params);
        let value = fixed_draw_elbo(&q, &eval, &eval_eps);
        trace.push(value);
        if !value.is_finite() {
            return Err(Error::AdviDivergence { step, trace });
        }
        history.push(q.clone());
    }
    Ok(AdviFit { q, trace, history })
}

/// Monte-Carlo mean of `T⁻¹(ζ)` under `q`.
pub fn posterior_mean(q: &FullRankGaussian, transform: &TransformSpec, n: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    check_dim(transform.unconstrained_len(), q.dim())?;
    let mut acc = vec![0.0; transform.constrained_len()];
    for _ in 0..n {
        let (eta, _) = transform.from_unconstrained(q.sample(rng).as_slice())?;
        for (a, v) in acc.iter_mut().zip(eta) {
            *a += v;
        }
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

//! Continuous case: CAVI over per-instance Gaussian-Wishart factors with an
//! EM update of the shared mixture weights.

use nalgebra::{DMatrix, DVector};

use super::weights::SimplexWeights;
use crate::error::{check_dim, Error, Result};
use crate::mathstats::{linalg, wishart_expectations, wishart_ln_norm, WishartMoments, LN_2PI};
use crate::moments::ComponentMoments;
use crate::par;

const SPD_FLOOR: f64 = 1e-12;

/// How per-component priors are attached to an instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorMode {
    /// Zero-mean prior on label residuals `y - center` and a shared Wishart rate.
    Fixed,
    /// Prior mean `μ_k(x)` and Wishart rate `ν Σ_k(x)`, so that the prior
    /// mean precision equals the inverse component variance.
    MomentInformed,
}

/// Hyperparameters of the conjugate priors on component means and precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig {
    /// Precision of the Gaussian prior on each component mean.
    pub beta: f64,
    /// Wishart degrees of freedom.
    pub nu: f64,
    /// Wishart rate matrix (used in [`PriorMode::Fixed`]).
    pub rate: DMatrix<f64>,
    pub mode: PriorMode,
}

impl PriorConfig {
    /// Broad zero-centred prior: `β = 1e-4`, `ν = c`, `V = I`.
    pub fn fixed(c: usize) -> Self {
        Self {
            beta: 1e-4,
            nu: c as f64,
            rate: DMatrix::identity(c, c),
            mode: PriorMode::Fixed,
        }
    }

    pub fn moment_informed(c: usize, beta: f64, nu: f64) -> Self {
        Self {
            beta,
            nu,
            rate: DMatrix::identity(c, c),
            mode: PriorMode::MomentInformed,
        }
    }

    pub fn dim(&self) -> usize {
        self.rate.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.dim();
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("β must be positive, got {}", self.beta)));
        }
        if !(self.nu > c as f64 - 1.0) || !self.nu.is_finite() {
            return Err(Error::Config(format!("ν must exceed c - 1 = {}, got {}", c as f64 - 1.0, self.nu)));
        }
        linalg::cholesky(&self.rate, "prior Wishart rate").map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Resolves the prior of one component at one instance.
    pub fn component(&self, moments: &ComponentMoments) -> Result<ComponentPrior> {
        let c = self.dim();
        check_dim(c, moments.mean.len())?;
        check_dim(c, moments.variance.len())?;
        let (mean, rate) = match self.mode {
            PriorMode::Fixed => (DVector::zeros(c), self.rate.clone()),
            PriorMode::MomentInformed => (
                DVector::from_column_slice(&moments.mean),
                DMatrix::from_diagonal(&DVector::from_iterator(c, moments.variance.iter().map(|v| v * self.nu))),
            ),
        };
        ComponentPrior::new(mean, self.beta, self.nu, rate)
    }
}

/// Fully resolved prior `N(μ | m₀, β⁻¹I) W(Λ | ν, V)` for one component.
#[derive(Clone, Debug)]
pub struct ComponentPrior {
    pub mean: DVector<f64>,
    pub beta: f64,
    pub nu: f64,
    pub rate: DMatrix<f64>,
    ln_norm: f64,
}

impl ComponentPrior {
    pub fn new(mean: DVector<f64>, beta: f64, nu: f64, rate: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), rate.nrows())?;
        if !(beta > 0.0) {
            return Err(Error::domain("β must be positive"));
        }
        let ln_norm = wishart_ln_norm(nu, &rate)?;
        Ok(Self {
            mean,
            beta,
            nu,
            rate,
            ln_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Variational factor `N(μ | m, G⁻¹) W(Λ | ν, V)` of one component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentFactor {
    pub m: DVector<f64>,
    /// Precision matrix of the Gaussian factor.
    pub g: DMatrix<f64>,
    pub nu: f64,
    /// Rate matrix of the Wishart factor.
    pub v: DMatrix<f64>,
}

/// Expectations derived from a [`ComponentFactor`].
#[derive(Clone, Debug)]
pub struct FactorExpectations {
    pub wishart: WishartMoments,
    pub g_inv: DMatrix<f64>,
    pub ln_det_g: f64,
}

impl ComponentFactor {
    /// The factor equal to the prior.
    pub fn from_prior(prior: &ComponentPrior) -> Self {
        let c = prior.dim();
        Self {
            m: prior.mean.clone(),
            g: DMatrix::identity(c, c) * prior.beta,
            nu: prior.nu,
            v: prior.rate.clone(),
        }
    }

    pub fn expectations(&self) -> Result<FactorExpectations> {
        let ch = linalg::cholesky(&self.g, "Gaussian factor precision")?;
        let ln_det_g = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(FactorExpectations {
            wishart: wishart_expectations(self.nu, &self.v)?,
            g_inv: linalg::symmetrize(&ch.inverse()),
            ln_det_g,
        })
    }
}

/// Label set of one calibration instance with the prediction it is centred on.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationInstance {
    pub labels: Vec<DVector<f64>>,
    /// Typically `f(x)`; subtracted from labels under [`PriorMode::Fixed`].
    pub center: DVector<f64>,
}

impl CalibrationInstance {
    pub fn new(labels: Vec<DVector<f64>>, center: DVector<f64>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::domain("a label set needs at least one label"));
        }
        for y in &labels {
            check_dim(center.len(), y.len())?;
        }
        Ok(Self { labels, center })
    }

    pub fn scalar(labels: &[f64], center: f64) -> Result<Self> {
        Self::new(labels.iter().map(|&y| DVector::from_element(1, y)).collect(), DVector::from_element(1, center))
    }
}

/// Calibration labels paired with their resolved component priors.
#[derive(Clone, Debug)]
pub struct ContinuousProblem {
    pub labels: Vec<Vec<DVector<f64>>>,
    pub priors: Vec<Vec<ComponentPrior>>,
}

impl ContinuousProblem {
    pub fn new(calibration: &[CalibrationInstance], moments: &[Vec<ComponentMoments>], prior: &PriorConfig) -> Result<Self> {
        prior.validate()?;
        if calibration.is_empty() {
            return Err(Error::Degenerate("calibration set is empty".into()));
        }
        check_dim(calibration.len(), moments.len())?;
        let k = moments[0].len();
        if k == 0 {
            return Err(Error::domain("at least one component is required"));
        }
        let mut labels = Vec::with_capacity(calibration.len());
        let mut priors = Vec::with_capacity(calibration.len());
        for (inst, mk) in calibration.iter().zip(moments) {
            check_dim(k, mk.len())?;
            check_dim(prior.dim(), inst.center.len())?;
            labels.push(match prior.mode {
                PriorMode::Fixed => inst.labels.iter().map(|y| y - &inst.center).collect(),
                PriorMode::MomentInformed => inst.labels.clone(),
            });
            priors.push(mk.iter().map(|m| prior.component(m)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self { labels, priors })
    }

    pub fn components(&self) -> usize {
        self.priors[0].len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Initial state: responsibilities equal to `weights`, means at the prior
    /// mean, `E[Λ_k]` at the inverse component variance with `ν_k = ν + 1`, and
    /// `G_k = βI + E[Λ_k]`.
    pub fn initial_states(&self, moments: &[Vec<ComponentMoments>], weights: &SimplexWeights) -> Result<Vec<InstanceState>> {
        check_dim(self.components(), weights.len())?;
        self.labels
            .iter()
            .zip(&self.priors)
            .zip(moments)
            .map(|((labels, priors), mk)| {
                let factors = priors
                    .iter()
                    .zip(mk)
                    .map(|(p, m)| {
                        let c = p.dim();
                        let nu = p.nu + 1.0;
                        let var = DVector::from_column_slice(&m.variance);
                        if var.iter().any(|v| !(*v > 0.0)) {
                            return Err(Error::Degenerate("component variance must be positive".into()));
                        }
                        let precision = DMatrix::from_diagonal(&var.map(|v| 1.0 / v));
                        Ok(ComponentFactor {
                            m: p.mean.clone(),
                            g: DMatrix::identity(c, c) * p.beta + precision,
                            nu,
                            v: DMatrix::from_diagonal(&(var * nu)),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let resp = DMatrix::from_fn(labels.len(), priors.len(), |_, k| weights.as_slice()[k]);
                Ok(InstanceState { resp, factors })
            })
            .collect()
    }
}

/// Variational parameters of one calibration instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceState {
    /// `p_jk`, one row per label.
    pub resp: DMatrix<f64>,
    pub factors: Vec<ComponentFactor>,
}

fn quad_trace(y: &DVector<f64>, m: &DVector<f64>, e: &FactorExpectations) -> f64 {
    let d = y - m;
    (d.transpose() * &e.wishart.precision * &d)[(0, 0)] + (&e.wishart.precision * &e.g_inv).trace()
}

fn expected_log_density(y: &DVector<f64>, f: &ComponentFactor, e: &FactorExpectations) -> f64 {
    let c = y.len() as f64;
    0.5 * e.wishart.ln_det - 0.5 * c * LN_2PI - 0.5 * quad_trace(y, &f.m, e)
}

fn responsibilities_with(labels: &[DVector<f64>], ln_w: &[f64], factors: &[ComponentFactor], exps: &[FactorExpectations]) -> Result<DMatrix<f64>> {
    let k = factors.len();
    let mut p = DMatrix::zeros(labels.len(), k);
    let mut row = vec![0.0; k];
    for (j, y) in labels.iter().enumerate() {
        for kk in 0..k {
            row[kk] = ln_w[kk] + expected_log_density(y, &factors[kk], &exps[kk]);
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::numerical("responsibilities", format!("label {j} has no finite log-responsibility")));
        }
        let total: f64 = row.iter().map(|r| (r - max).exp()).sum();
        for kk in 0..k {
            p[(j, kk)] = (row[kk] - max).exp() / total;
        }
    }
    Ok(p)
}

/// `p_jk ∝ w_k exp{½E ln|Λ_k| - ½E[(y_j-μ_k)ᵀΛ_k(y_j-μ_k)]}`, normalized in log space.
pub fn responsibilities_continuous(labels: &[DVector<f64>], weights: &SimplexWeights, factors: &[ComponentFactor]) -> Result<DMatrix<f64>> {
    check_dim(weights.len(), factors.len())?;
    let exps = factors.iter().map(|f| f.expectations()).collect::<Result<Vec<_>>>()?;
    responsibilities_with(labels, &weights.ln(), factors, &exps)
}

/// Optimal Gaussian factor: `G = βI + E[Λ] N_k`, `m = G⁻¹(β m₀ + E[Λ] Σ_j p_j y_j)`.
pub fn update_gaussian_factor(
    prior: &ComponentPrior,
    e_lambda: &DMatrix<f64>,
    labels: &[DVector<f64>],
    p: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dim(labels.len(), p.len())?;
    let c = prior.dim();
    let n_k: f64 = p.iter().sum();
    let mut weighted = DVector::zeros(c);
    for (y, pj) in labels.iter().zip(p) {
        weighted.axpy(*pj, y, 1.0);
    }
    let g = linalg::symmetrize(&(DMatrix::identity(c, c) * prior.beta + e_lambda * n_k));
    let rhs = &prior.mean * prior.beta + e_lambda * weighted;
    let m = linalg::cholesky(&g, "Gaussian factor precision")?.solve(&rhs);
    Ok((m, g))
}

/// Optimal Wishart factor: `ν_k = ν + N_k`,
/// `V_k = V + Σ_j p_j [(y_j - m)(y_j - m)ᵀ + G⁻¹]`, floored to SPD.
pub fn update_wishart_factor(
    prior: &ComponentPrior,
    labels: &[DVector<f64>],
    p: &[f64],
    m: &DVector<f64>,
    g_inv: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_dim(labels.len(), p.len())?;
    let n_k: f64 = p.iter().sum();
    let mut v = prior.rate.clone();
    for (y, pj) in labels.iter().zip(p) {
        let d = y - m;
        v.ger(*pj, &d, &d, 1.0);
    }
    v += g_inv * n_k;
    Ok((prior.nu + n_k, linalg::floor_spd(&v, SPD_FLOOR)))
}

/// The seven lower-bound terms; `total = J_S + J_z + J_μ + J_Σ - Π_z - Π_μ - Π_Σ`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    pub j_s: f64,
    pub j_z: f64,
    pub j_mu: f64,
    pub j_sigma: f64,
    pub pi_z: f64,
    pub pi_mu: f64,
    pub pi_sigma: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.j_s + self.j_z + self.j_mu + self.j_sigma - self.pi_z - self.pi_mu - self.pi_sigma
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("J_S", self.j_s),
            ("J_z", self.j_z),
            ("J_mu", self.j_mu),
            ("J_Sigma", self.j_sigma),
            ("Pi_z", self.pi_z),
            ("Pi_mu", self.pi_mu),
            ("Pi_Sigma", self.pi_sigma),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() {
                return Err(Error::numerical(name, format!("term evaluated to {v}")));
            }
        }
        Ok(())
    }
}

impl std::ops::AddAssign for ElboTerms {
    fn add_assign(&mut self, o: Self) {
        self.j_s += o.j_s;
        self.j_z += o.j_z;
        self.j_mu += o.j_mu;
        self.j_sigma += o.j_sigma;
        self.pi_z += o.pi_z;
        self.pi_mu += o.pi_mu;
        self.pi_sigma += o.pi_sigma;
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn instance_terms_with(
    labels: &[DVector<f64>],
    priors: &[ComponentPrior],
    state: &InstanceState,
    weights: &SimplexWeights,
    exps: &[FactorExpectations],
) -> Result<ElboTerms> {
    let mut t = ElboTerms::default();
    for (k, ((prior, f), e)) in priors.iter().zip(&state.factors).zip(exps).enumerate() {
        let c = prior.dim() as f64;
        let w = weights.as_slice()[k];
        for (j, y) in labels.iter().enumerate() {
            let p = state.resp[(j, k)];
            if p > 0.0 {
                t.j_s += p * expected_log_density(y, f, e);
            }
            t.j_z += xlogy(p, w);
            t.pi_z += xlogy(p, p);
        }
        let dm = &f.m - &prior.mean;
        t.j_mu += 0.5 * c * (prior.beta.ln() - LN_2PI) - 0.5 * prior.beta * (e.g_inv.trace() + dm.norm_squared());
        t.j_sigma += prior.ln_norm + 0.5 * (prior.nu - c - 1.0) * e.wishart.ln_det
            - 0.5 * (&prior.rate * &e.wishart.precision).trace();
        t.pi_mu += -0.5 * c * (1.0 + LN_2PI) + 0.5 * e.ln_det_g;
        t.pi_sigma += wishart_ln_norm(f.nu, &f.v)? + 0.5 * (f.nu - c - 1.0) * e.wishart.ln_det - 0.5 * f.nu * c;
    }
    Ok(t)
}

/// Lower-bound terms of a single instance.
pub fn elbo_instance(labels: &[DVector<f64>], priors: &[ComponentPrior], state: &InstanceState, weights: &SimplexWeights) -> Result<ElboTerms> {
    check_dim(priors.len(), state.factors.len())?;
    check_dim(priors.len(), weights.len())?;
    check_dim(labels.len(), state.resp.nrows())?;
    let exps = state.factors.iter().map(|f| f.expectations()).collect::<Result<Vec<_>>>()?;
    let t = instance_terms_with(labels, priors, state, weights, &exps)?;
    t.check_finite()?;
    Ok(t)
}

/// Lower bound summed over all calibration instances.
pub fn elbo_terms(problem: &ContinuousProblem, states: &[InstanceState], weights: &SimplexWeights) -> Result<ElboTerms> {
    check_dim(problem.len(), states.len())?;
    let per = par::try_map_range(states.len(), |i| elbo_instance(&problem.labels[i], &problem.priors[i], &states[i], weights))?;
    let mut total = ElboTerms::default();
    for t in per {
        total += t;
    }
    total.check_finite()?;
    Ok(total)
}

pub fn elbo_continuous(problem: &ContinuousProblem, states: &[InstanceState], weights: &SimplexWeights) -> Result<f64> {
    Ok(elbo_terms(problem, states, weights)?.total())
}

fn sweep_instance(labels: &[DVector<f64>], priors: &[ComponentPrior], state: &mut InstanceState, ln_w: &[f64]) -> Result<Vec<f64>> {
    let exps = state.factors.iter().map(|f| f.expectations()).collect::<Result<Vec<_>>>()?;
    state.resp = responsibilities_with(labels, ln_w, &state.factors, &exps)?;
    let mut mass = Vec::with_capacity(priors.len());
    for (k, (prior, exp)) in priors.iter().zip(exps).enumerate() {
        let p: Vec<f64> = state.resp.column(k).iter().copied().collect();
        let (m, g) = update_gaussian_factor(prior, &exp.wishart.precision, labels, &p)?;
        let g_inv = linalg::inverse_spd(&g, "Gaussian factor precision")?;
        let (nu, v) = update_wishart_factor(prior, labels, &p, &m, &g_inv)?;
        state.factors[k] = ComponentFactor { m, g, nu, v };
        mass.push(p.iter().sum());
    }
    Ok(mass)
}

/// One E-step over every instance (responsibilities, then the Gaussian and
/// Wishart factors). Returns the responsibility mass per component.
pub fn cavi_sweep(problem: &ContinuousProblem, states: &mut [InstanceState], weights: &SimplexWeights) -> Result<Vec<f64>> {
    check_dim(problem.len(), states.len())?;
    check_dim(problem.components(), weights.len())?;
    let ln_w = weights.ln();
    let per = par::map_mut(states, |i, s| sweep_instance(&problem.labels[i], &problem.priors[i], s, &ln_w));
    let mut mass = vec![0.0; problem.components()];
    for m in per {
        for (acc, v) in mass.iter_mut().zip(m?) {
            *acc += v;
        }
    }
    Ok(mass)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub max_steps: usize,
    /// Stop once the ELBO gain falls below `rel_tol · |ELBO|`; non-positive
    /// values run all `max_steps`.
    pub rel_tol: f64,
    pub init: Option<SimplexWeights>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_steps: 300,
            rel_tol: 1e-8,
            init: None,
        }
    }
}

/// Result of [`fit_continuous`]. Traces have one entry per completed step
/// plus the initial value at index 0.
#[derive(Clone, Debug)]
pub struct ContinuousFit {
    pub weights: SimplexWeights,
    pub states: Vec<InstanceState>,
    pub elbo_trace: Vec<f64>,
    pub weight_trace: Vec<SimplexWeights>,
    pub converged: bool,
}

impl ContinuousFit {
    pub fn steps(&self) -> usize {
        self.weight_trace.len() - 1
    }

    /// Weights after `step` EM steps; holds the final value past convergence.
    pub fn weights_at(&self, step: usize) -> &SimplexWeights {
        &self.weight_trace[step.min(self.weight_trace.len() - 1)]
    }
}

/// Alternates CAVI E-steps and the closed-form weight M-step.
pub fn fit_continuous(
    calibration: &[CalibrationInstance],
    moments: &[Vec<ComponentMoments>],
    prior: &PriorConfig,
    config: &FitConfig,
) -> Result<ContinuousFit> {
    let problem = ContinuousProblem::new(calibration, moments, prior)?;
    let mut weights = config.init.clone().unwrap_or_else(|| SimplexWeights::uniform(problem.components()));
    let states = problem.initial_states(moments, &weights)?;
    fit_from(&problem, states, &mut weights, config)
}

/// Runs the EM loop from a given state.
pub fn fit_from(problem: &ContinuousProblem, mut states: Vec<InstanceState>, weights: &mut SimplexWeights, config: &FitConfig) -> Result<ContinuousFit> {
    let mut elbo_trace = vec![elbo_continuous(problem, &states, weights)?];
    let mut weight_trace = vec![weights.clone()];
    let mut converged = false;
    for _ in 0..config.max_steps {
        let mass = cavi_sweep(problem, &mut states, weights)?;
        *weights = SimplexWeights::from_mass(&mass)?;
        let elbo = elbo_continuous(problem, &states, weights)?;
        let prev = *elbo_trace.last().unwrap();
        elbo_trace.push(elbo);
        weight_trace.push(weights.clone());
        if config.rel_tol > 0.0 && elbo - prev < config.rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(ContinuousFit {
        weights: weights.clone(),
        states,
        elbo_trace,
        weight_trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathstats::{integrate, QuadOptions, Rng};
    use crate::moments::Provenance;
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn lab(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&y| DVector::from_element(1, y)).collect()
    }

    fn moment(mean: f64, var: f64) -> ComponentMoments {
        ComponentMoments {
            mean: vec![mean],
            variance: vec![var],
            provenance: Provenance::MonteCarlo,
        }
    }

    fn sharp_factor(m: f64) -> ComponentFactor {
        ComponentFactor {
            m: DVector::from_element(1, m),
            g: scalar(1e12),
            nu: 4.0,
            v: scalar(4.0),
        }
    }

    /// Instances whose component moments are jittered around `centers`, with
    /// labels drawn from the mixture `w_true`.
    fn synthetic(seed: u64, centers: &[f64], w_true: &[f64], n: usize, labels_per: usize) -> (Vec<CalibrationInstance>, Vec<Vec<ComponentMoments>>) {
        let mut rng = Rng::new(seed);
        let mut cal = Vec::new();
        let mut mom = Vec::new();
        for _ in 0..n {
            let shift = rng.gen_range(-1.0..1.0);
            let mk: Vec<ComponentMoments> = centers.iter().map(|c| moment(c + shift, rng.gen_range(0.5..1.5))).collect();
            let labels: Vec<f64> = (0..labels_per)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let k = w_true.iter().position(|w| {
                        acc += w;
                        u < acc
                    });
                    let k = k.unwrap_or(w_true.len() - 1);
                    Normal::new(mk[k].mean[0], mk[k].variance[0].sqrt()).unwrap().sample(&mut rng)
                })
                .collect();
            cal.push(CalibrationInstance::scalar(&labels, shift).unwrap());
            mom.push(mk);
        }
        (cal, mom)
    }

    #[test]
    fn identical_components_split_evenly() {
        let f = vec![sharp_factor(0.0), sharp_factor(0.0)];
        let p = responsibilities_continuous(&lab(&[0.3, -2.0]), &SimplexWeights::uniform(2), &f).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_weight_excludes_component() {
        let f = vec![sharp_factor(0.0), sharp_factor(10.0)];
        let w = SimplexWeights::new(vec![1.0, 0.0]).unwrap();
        let p = responsibilities_continuous(&lab(&[10.0]), &w, &f).unwrap();
        assert_eq!((p[(0, 0)], p[(0, 1)]), (1.0, 0.0));
    }

    #[test]
    fn responsibilities_match_bayes_rule() {
        let f = vec![sharp_factor(0.0), sharp_factor(5.0)];
        // E[Λ] = ν/V = 1 for both, so the ratio is a plain density ratio.
        let p = responsibilities_continuous(&lab(&[0.0]), &SimplexWeights::uniform(2), &f).unwrap();
        let oracle = 1.0 / (1.0 + (-12.5f64).exp());
        assert!((p[(0, 0)] - oracle).abs() < 1e-10);
        assert!((p[(0, 0)] + p[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_factor_examples() {
        let prior = ComponentPrior::new(DVector::zeros(1), 0.7, 2.0, scalar(1.0)).unwrap();
        let (m, g) = update_gaussian_factor(&prior, &scalar(3.0), &lab(&[1.0, 2.0]), &[0.0, 0.0]).unwrap();
        assert_eq!((m[0], g[(0, 0)]), (0.0, 0.7));

        let flat = ComponentPrior::new(DVector::zeros(1), 1e-12, 2.0, scalar(1.0)).unwrap();
        let (m, _) = update_gaussian_factor(&flat, &scalar(3.0), &lab(&[1.0, 2.0, 6.0]), &[1.0; 3]).unwrap();
        assert!((m[0] - 3.0).abs() < 1e-9);

        let unit = ComponentPrior::new(DVector::zeros(1), 1.0, 2.0, scalar(1.0)).unwrap();
        let (m, g) = update_gaussian_factor(&unit, &scalar(2.0), &lab(&[1.0, 3.0]), &[1.0, 1.0]).unwrap();
        assert!((g[(0, 0)] - 5.0).abs() < 1e-15);
        assert!((m[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn wishart_factor_examples() {
        let prior = ComponentPrior::new(DVector::zeros(1), 1.0, 2.0, scalar(1.0)).unwrap();
        let (nu, v) = update_wishart_factor(&prior, &lab(&[4.0]), &[0.0], &DVector::zeros(1), &scalar(0.3)).unwrap();
        assert_eq!((nu, v[(0, 0)]), (2.0, 1.0));
        let (nu, v) = update_wishart_factor(&prior, &lab(&[2.0]), &[1.0], &DVector::zeros(1), &scalar(0.0)).unwrap();
        assert_eq!((nu, v[(0, 0)]), (3.0, 5.0));
    }

    #[test]
    fn wishart_factor_is_the_scatter_matrix() {
        let rate = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let prior = ComponentPrior::new(DVector::zeros(2), 1.0, 3.0, rate.clone()).unwrap();
        let ys = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![3.0, -2.0])];
        let mean = (&ys[0] + &ys[1] + &ys[2]) / 3.0;
        let (_, v) = update_wishart_factor(&prior, &ys, &[1.0; 3], &mean, &DMatrix::zeros(2, 2)).unwrap();
        let mut scatter = rate;
        for y in &ys {
            for i in 0..2 {
                for j in 0..2 {
                    scatter[(i, j)] += (y[i] - mean[i]) * (y[j] - mean[j]);
                }
            }
        }
        assert!((v - scatter).abs().max() < 1e-12);
    }

    #[test]
    fn prior_against_itself_has_zero_kl() {
        let rate = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let priors = vec![
            ComponentPrior::new(DVector::from_vec(vec![1.0, -1.0]), 0.5, 3.5, rate.clone()).unwrap(),
            ComponentPrior::new(DVector::zeros(2), 4.0, 2.0, rate * 3.0).unwrap(),
        ];
        let state = InstanceState {
            resp: DMatrix::zeros(0, 2),
            factors: priors.iter().map(ComponentFactor::from_prior).collect(),
        };
        let t = elbo_instance(&[], &priors, &state, &SimplexWeights::uniform(2)).unwrap();
        assert!((t.j_mu - t.pi_mu).abs() < 1e-8);
        assert!((t.j_sigma - t.pi_sigma).abs() < 1e-8);
        assert!(t.total().abs() < 1e-8);
    }

    fn random_states(problem: &ContinuousProblem, rng: &mut Rng) -> Vec<InstanceState> {
        let k = problem.components();
        problem
            .labels
            .iter()
            .map(|labels| {
                let resp = DMatrix::from_fn(labels.len(), k, |_, _| rng.gen_range(0.01..1.0));
                let resp = DMatrix::from_fn(labels.len(), k, |j, kk| resp[(j, kk)] / resp.row(j).sum());
                let factors = (0..k)
                    .map(|_| ComponentFactor {
                        m: DVector::from_element(1, rng.gen_range(-8.0..8.0)),
                        g: scalar(rng.gen_range(0.5..20.0)),
                        nu: rng.gen_range(2.0..30.0),
                        v: scalar(rng.gen_range(0.5..30.0)),
                    })
                    .collect();
                InstanceState { resp, factors }
            })
            .collect()
    }

    #[test]
    fn one_sweep_from_random_init_increases_elbo() {
        for seed in 0..10 {
            let (cal, mom) = synthetic(seed, &[-4.0, 0.0, 4.0], &[0.5, 0.3, 0.2], 40, 2);
            let problem = ContinuousProblem::new(&cal, &mom, &PriorConfig::moment_informed(1, 10.0, 5.0)).unwrap();
            let mut rng = Rng::new(100 + seed);
            let mut states = random_states(&problem, &mut rng);
            let w = SimplexWeights::from_mass(&[rng.gen(), rng.gen(), rng.gen()]).unwrap();
            let before = elbo_continuous(&problem, &states, &w).unwrap();
            let mass = cavi_sweep(&problem, &mut states, &w).unwrap();
            let w = SimplexWeights::from_mass(&mass).unwrap();
            let after = elbo_continuous(&problem, &states, &w).unwrap();
            assert!(after > before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn single_component_weight_is_one() {
        let (cal, mom) = synthetic(1, &[0.0], &[1.0], 20, 2);
        let fit = fit_continuous(&cal, &mom, &PriorConfig::fixed(1), &FitConfig::default()).unwrap();
        assert_eq!(fit.weights.as_slice(), &[1.0]);
        assert!(fit.weight_trace.iter().all(|w| w.as_slice() == [1.0]));
    }

    #[test]
    fn recovers_mixture_weights() {
        let w_true = [0.7, 0.2, 0.1];
        let (cal, mom) = synthetic(7, &[-6.0, 0.0, 6.0], &w_true, 1000, 2);
        let fit = fit_continuous(&cal, &mom, &PriorConfig::moment_informed(1, 100.0, 20.0), &FitConfig::default()).unwrap();
        for (a, b) in fit.weights.as_slice().iter().zip(w_true) {
            assert!((a - b).abs() < 0.05, "{}", fit.weights);
        }
    }

    #[test]
    fn duplicated_calibration_leaves_weights_unchanged() {
        let (cal, mom) = synthetic(3, &[-3.0, 0.0, 3.0], &[0.5, 0.3, 0.2], 50, 2);
        let prior = PriorConfig::moment_informed(1, 50.0, 10.0);
        let cfg = FitConfig {
            max_steps: 40,
            rel_tol: 0.0,
            init: None,
        };
        let once = fit_continuous(&cal, &mom, &prior, &cfg).unwrap();
        let cal2: Vec<_> = cal.iter().chain(&cal).cloned().collect();
        let mom2: Vec<_> = mom.iter().chain(&mom).cloned().collect();
        let twice = fit_continuous(&cal2, &mom2, &prior, &cfg).unwrap();
        for (a, b) in once.weights.as_slice().iter().zip(twice.weights.as_slice()) {
            assert!((a - b).abs() < 1e-10, "{:.15} vs {:.15}", once.weights, twice.weights);
        }
    }

    #[test]
    fn permuting_components_permutes_weights() {
        let (cal, mom) = synthetic(4, &[-3.0, 0.0, 3.0], &[0.6, 0.3, 0.1], 60, 2);
        let perm = [2, 0, 1];
        let mom_p: Vec<Vec<_>> = mom.iter().map(|mk| perm.iter().map(|&k| mk[k].clone()).collect()).collect();
        let prior = PriorConfig::moment_informed(1, 100.0, 20.0);
        let a = fit_continuous(&cal, &mom, &prior, &FitConfig::default()).unwrap();
        let b = fit_continuous(&cal, &mom_p, &prior, &FitConfig::default()).unwrap();
        for (i, &k) in perm.iter().enumerate() {
            assert!((b.weights.as_slice()[i] - a.weights.as_slice()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_prior_fit_is_monotone() {
        let (cal, mom) = synthetic(5, &[-2.0, 0.0, 2.0], &[0.2, 0.5, 0.3], 30, 3);
        let fit = fit_continuous(&cal, &mom, &PriorConfig::fixed(1), &FitConfig::default()).unwrap();
        for w in fit.elbo_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8 * w[0].abs());
        }
    }

    #[test]
    fn elbo_failure_names_the_term() {
        let priors = vec![ComponentPrior::new(DVector::zeros(1), 1.0, 2.0, scalar(1.0)).unwrap()];
        let mut state = InstanceState {
            resp: DMatrix::from_element(1, 1, 1.0),
            factors: priors.iter().map(ComponentFactor::from_prior).collect(),
        };
        state.factors[0].m[0] = f64::INFINITY;
        let err = elbo_instance(&lab(&[0.0]), &priors, &state, &SimplexWeights::uniform(1)).unwrap_err();
        assert!(matches!(err, Error::Numerical { ref term, .. } if term == "J_S"), "{err}");
    }

    /// ln ∫∫ ∏_{j∈S} N(y_j | μ, 1/λ) N(μ | m₀, 1/β) Gamma(λ | ν/2, V/2) dμ dλ.
    fn ln_marginal_numeric(ys: &[f64], m0: f64, beta: f64, nu: f64, v: f64) -> f64 {
        let opts = QuadOptions {
            abs_tol: 1e-13,
            ..QuadOptions::default()
        };
        let ln_gamma_pdf = |l: f64| {
            let (a, b) = (nu / 2.0, v / 2.0);
            a * b.ln() - libm::lgamma(a) + (a - 1.0) * l.ln() - b * l
        };
        let outer = |l: f64| {
            if l <= 0.0 {
                return 0.0;
            }
            let inner = |mu: f64| {
                let mut s = 0.5 * (beta / (2.0 * std::f64::consts::PI)).ln() - 0.5 * beta * (mu - m0).powi(2);
                for y in ys {
                    s += 0.5 * (l / (2.0 * std::f64::consts::PI)).ln() - 0.5 * l * (y - mu).powi(2);
                }
                s.exp()
            };
            integrate(inner, f64::NEG_INFINITY, f64::INFINITY, &opts).unwrap().value * ln_gamma_pdf(l).exp()
        };
        integrate(outer, 0.0, f64::INFINITY, &opts).unwrap().value.ln()
    }

    #[test]
    fn elbo_is_below_brute_force_evidence() {
        let ys = [0.3, 1.8, -0.4];
        let (m0, beta, nu, v) = ([0.0, 2.0], 1.0, 3.0, 2.0);
        let w = [0.4, 0.6];
        // Enumerate all assignments z ∈ {0,1}^n.
        let n = ys.len();
        let mut terms = Vec::new();
        for z in 0..(1 << n) {
            let mut s = 0.0;
            for k in 0..2 {
                let sub: Vec<f64> = (0..n).filter(|j| (z >> j) & 1 == k).map(|j| ys[j]).collect();
                s += sub.len() as f64 * f64::ln(w[k]) + ln_marginal_numeric(&sub, m0[k], beta, nu, v);
            }
            terms.push(s);
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let evidence = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();

        let priors: Vec<ComponentPrior> = (0..2).map(|k| ComponentPrior::new(DVector::from_element(1, m0[k]), beta, nu, scalar(v)).unwrap()).collect();
        let problem = ContinuousProblem {
            labels: vec![lab(&ys)],
            priors: vec![priors.clone()],
        };
        let weights = SimplexWeights::new(w.to_vec()).unwrap();
        let mut states = vec![InstanceState {
            resp: DMatrix::from_element(n, 2, 0.5),
            factors: priors.iter().map(ComponentFactor::from_prior).collect(),
        }];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..200 {
            cavi_sweep(&problem, &mut states, &weights).unwrap();
            best = best.max(elbo_continuous(&problem, &states, &weights).unwrap());
        }
        assert!(best <= evidence + 1e-4, "ELBO {best} above evidence {evidence}");
        assert!(evidence - best < 1.0, "bound unexpectedly loose: {best} vs {evidence}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn elbo_trace_is_monotone(seed in 0u64..1000, k_idx in 0usize..3) {
            let k = [2, 3, 6][k_idx];
            let centers: Vec<f64> = (0..k).map(|i| 2.0 * i as f64 - k as f64).collect();
            let w_true = vec![1.0 / k as f64; k];
            let (cal, mom) = synthetic(seed, &centers, &w_true, 30, 2);
            let fit = fit_continuous(&cal, &mom, &PriorConfig::moment_informed(1, 20.0, 8.0), &FitConfig::default()).unwrap();
            for w in fit.elbo_trace.windows(2) {
                prop_assert!(w[1] - w[0] >= -1e-8 * w[0].abs());
            }
            for st in &fit.states {
                for row in st.resp.row_iter() {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                }
            }
            for w in &fit.weight_trace {
                prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

//! Weighted test-time-augmentation prediction.

use super::weights::SimplexWeights;
use crate::augment::{AugmentationSpec, Augmenter, ReferencePool};
use crate::error::{check_dim, Error, Result};
use crate::mathstats::Rng;
use crate::predictor::{softmax, Head, MlpModel};

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Regression(Vec<f64>),
    Class { index: usize, probs: Vec<f64> },
}

impl Prediction {
    pub fn regression(&self) -> Option<&[f64]> {
        match self {
            Prediction::Regression(v) => Some(v),
            Prediction::Class { .. } => None,
        }
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Class { index, .. } => Some(*index),
            Prediction::Regression(_) => None,
        }
    }
}

/// Mean over `n_samples` draws of each augmentation's output: raw outputs for
/// regression, softmax probabilities for classification.
///
/// Each augmentation draws from `rng.split_named(spec, 0)`, so its draws do
/// not depend on its position in `specs`.
pub fn augmented_means(
    model: &MlpModel,
    x: &[f64],
    specs: &[AugmentationSpec],
    n_samples: usize,
    rng: &Rng,
    pool: Option<&ReferencePool>,
) -> Result<Vec<Vec<f64>>> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    check_dim(model.input_dim(), x.len())?;
    let out = model.output_dim();
    specs
        .iter()
        .map(|spec| {
            let aug = Augmenter::new(spec, x.len(), pool)?;
            let mut r = rng.split_named(&spec.to_string(), 0);
            let mut acc = vec![0.0; out];
            for _ in 0..n_samples {
                let y = model.forward_unchecked(&aug.apply(x, &mut r)?);
                let y = match model.head() {
                    Head::Regression => y,
                    Head::Classification => softmax(&y),
                };
                for (a, v) in acc.iter_mut().zip(y) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|a| a / n_samples as f64).collect())
        })
        .collect()
}

/// `Σ_k w_k m_k`, summed in the order of `keys` (ties by index) so that the
/// result is independent of how the components are listed.
pub fn combine(per_k: &[Vec<f64>], weights: &[f64], keys: &[String]) -> Result<Vec<f64>> {
    check_dim(per_k.len(), weights.len())?;
    check_dim(per_k.len(), keys.len())?;
    let out = per_k.first().map_or(0, |m| m.len());
    let mut order: Vec<usize> = (0..per_k.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let mut acc = vec![0.0; out];
    for k in order {
        check_dim(out, per_k[k].len())?;
        for (a, v) in acc.iter_mut().zip(&per_k[k]) {
            *a += weights[k] * v;
        }
    }
    Ok(acc)
}

pub fn spec_keys(specs: &[AugmentationSpec]) -> Vec<String> {
    specs.iter().map(|s| s.to_string()).collect()
}

fn finish(head: Head, combined: Vec<f64>) -> Prediction {
    match head {
        Head::Regression => Prediction::Regression(combined),
        Head::Classification => {
            let index = (0..combined.len()).fold(0, |best, i| if combined[i] > combined[best] { i } else { best });
            Prediction::Class { index, probs: combined }
        }
    }
}

/// Weighted TTA: regression returns `Σ_k w_k mean f(φ_k(x))`; classification
/// returns the argmax of the weighted mean softmax.
pub fn predict_weighted(
    model: &MlpModel,
    x: &[f64],
    specs: &[AugmentationSpec],
    weights: &SimplexWeights,
    n_samples: usize,
    rng: &Rng,
    pool: Option<&ReferencePool>,
) -> Result<Prediction> {
    check_dim(specs.len(), weights.len())?;
    let per_k = augmented_means(model, x, specs, n_samples, rng, pool)?;
    Ok(finish(model.head(), combine(&per_k, weights.as_slice(), &spec_keys(specs))?))
}

/// Plain TTA: every augmentation weighted `1/K`.
pub fn predict_uniform(
    model: &MlpModel,
    x: &[f64],
    specs: &[AugmentationSpec],
    n_samples: usize,
    rng: &Rng,
    pool: Option<&ReferencePool>,
) -> Result<Prediction> {
    if specs.is_empty() {
        return Err(Error::domain("TTA needs at least one augmentation"));
    }
    predict_weighted(model, x, specs, &SimplexWeights::uniform(specs.len()), n_samples, rng, pool)
}

/// Applies a weighted combination to precomputed per-augmentation means.
pub fn predict_from_means(head: Head, per_k: &[Vec<f64>], weights: &SimplexWeights, keys: &[String]) -> Result<Prediction> {
    Ok(finish(head, combine(per_k, weights.as_slice(), keys)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> MlpModel {
        MlpModel::from_layers(&[2, 1], Head::Regression, &[(vec![0.0, 0.0], vec![v])]).unwrap()
    }

    #[test]
    fn identity_augmentation_reproduces_model() {
        let m = MlpModel::new(&[2, 8, 1], Head::Regression, &mut Rng::new(1)).unwrap();
        let x = [0.3, -0.7];
        let w = SimplexWeights::new(vec![1.0, 0.0]).unwrap();
        let specs = [AugmentationSpec::gaussian_noise(0.0), AugmentationSpec::gaussian_noise(0.5)];
        let p = predict_weighted(&m, &x, &specs, &w, 7, &Rng::new(0), None).unwrap();
        assert_eq!(p.regression().unwrap(), m.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn convex_combination_of_constants() {
        let per_k = vec![constant(1.0).forward(&[0.0, 0.0]).unwrap(), constant(2.0).forward(&[0.0, 0.0]).unwrap()];
        let w = SimplexWeights::new(vec![0.3, 0.7]).unwrap();
        let p = predict_from_means(Head::Regression, &per_k, &w, &["a".into(), "b".into()]).unwrap();
        assert!((p.regression().unwrap()[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn uniform_weights_reproduce_plain_tta() {
        let m = MlpModel::new(&[2, 8, 1], Head::Regression, &mut Rng::new(2)).unwrap();
        let x = [0.3, -0.7];
        let specs = [AugmentationSpec::gaussian_noise(0.1), AugmentationSpec::gaussian_noise(0.4), AugmentationSpec::gaussian_noise(0.2)];
        let rng = Rng::new(5);
        let u = predict_uniform(&m, &x, &specs, 16, &rng, None).unwrap();
        let w = predict_weighted(&m, &x, &specs, &SimplexWeights::uniform(3), 16, &rng, None).unwrap();
        assert_eq!(u, w);
        let means = augmented_means(&m, &x, &specs, 16, &rng, None).unwrap();
        let plain = means.iter().map(|v| v[0]).sum::<f64>() / 3.0;
        assert!((u.regression().unwrap()[0] - plain).abs() < 1e-12);
    }

    #[test]
    fn uniform_tta_ignores_list_order() {
        let m = MlpModel::new(&[2, 8, 1], Head::Regression, &mut Rng::new(3)).unwrap();
        let specs = vec![AugmentationSpec::gaussian_noise(0.1), AugmentationSpec::gaussian_noise(0.4), AugmentationSpec::gaussian_noise(0.2)];
        let mut rev = specs.clone();
        rev.reverse();
        let a = predict_uniform(&m, &[0.1, 0.2], &specs, 9, &Rng::new(8), None).unwrap();
        let b = predict_uniform(&m, &[0.1, 0.2], &rev, 9, &Rng::new(8), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classification_returns_argmax() {
        let m = MlpModel::from_layers(&[1, 3], Head::Classification, &[(vec![0.0, 0.0, 0.0], vec![0.1, 2.0, -1.0])]).unwrap();
        let p = predict_uniform(&m, &[0.0], &[AugmentationSpec::gaussian_noise(0.1)], 3, &Rng::new(0), None).unwrap();
        assert_eq!(p.class(), Some(1));
    }

    #[test]
    fn mismatched_weights_rejected() {
        let m = constant(1.0);
        let r = predict_weighted(&m, &[0.0, 0.0], &[AugmentationSpec::gaussian_noise(0.1)], &SimplexWeights::uniform(2), 1, &Rng::new(0), None);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}

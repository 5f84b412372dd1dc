//! Feed-forward ReLU predictor with Adam training, input Jacobians for the
//! delta method, evaluation metrics and a versioned flat-file format.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::mathstats::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Linear output, squared-error loss.
    Regression,
    /// Raw class scores, softmax cross-entropy loss.
    Classification,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::Regression => "regression",
            Head::Classification => "classification",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    /// Offset of the row-major `outputs × inputs` weight block.
    weights: usize,
    /// Offset of the bias vector (directly after the weights).
    bias: usize,
}

/// Multilayer perceptron with ReLU hidden activations.
///
/// Parameters live in one flat vector, layer by layer, each layer storing its
/// row-major weight matrix followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    sizes: Vec<usize>,
    head: Head,
    layout: Vec<LayerShape>,
    params: Vec<f64>,
}

fn layout_for(sizes: &[usize]) -> (Vec<LayerShape>, usize) {
    let mut off = 0;
    let layout = sizes
        .windows(2)
        .map(|w| {
            let s = LayerShape {
                inputs: w[0],
                outputs: w[1],
                weights: off,
                bias: off + w[0] * w[1],
            };
            off += w[0] * w[1] + w[1];
            s
        })
        .collect();
    (layout, off)
}

impl MlpModel {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain("layer sizes must have at least two non-zero entries"));
        }
        let (layout, n) = layout_for(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            layout,
            params: vec![0.0; n],
        })
    }

    /// He-normal weights, zero biases.
    pub fn new(sizes: &[usize], head: Head, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sizes, head)?;
        for l in m.layout.clone() {
            let std = (2.0 / l.inputs as f64).sqrt();
            for w in &mut m.params[l.weights..l.bias] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
        }
        Ok(m)
    }

    /// Builds a model from explicit `(row-major weights, bias)` per layer.
    pub fn from_layers(sizes: &[usize], head: Head, layers: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let mut m = Self::zeros(sizes, head)?;
        check_dim(m.layout.len(), layers.len())?;
        for (l, (w, b)) in m.layout.clone().iter().zip(layers) {
            check_dim(l.inputs * l.outputs, w.len())?;
            check_dim(l.outputs, b.len())?;
            m.params[l.weights..l.bias].copy_from_slice(w);
            m.params[l.bias..l.bias + l.outputs].copy_from_slice(b);
        }
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn affine(&self, l: &LayerShape, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &self.params[l.weights..l.bias];
        let b = &self.params[l.bias..l.bias + l.outputs];
        for (row, bias) in w.chunks_exact(l.inputs).zip(b) {
            out.push(bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>());
        }
    }

    /// Evaluates the network at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layout.len() - 1;
        for (i, l) in self.layout.iter().enumerate() {
            self.affine(l, &cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping every layer's pre-activation.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layout.len());
        let mut cur = x.to_vec();
        let last = self.layout.len() - 1;
        for (i, l) in self.layout.iter().enumerate() {
            let mut z = Vec::with_capacity(l.outputs);
            self.affine(l, &cur, &mut z);
            cur = if i < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            pre.push(z);
        }
        pre
    }

    /// Jacobian of the outputs with respect to the input (`out × d`).
    ///
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn input_gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let pre = self.forward_trace(x);
        let d = self.input_dim();
        // Forward-mode product W_L D_{L-1} ... D_1 W_1, carried as a row-major
        // (units × d) matrix.
        let first = &self.layout[0];
        let mut jac: Vec<f64> = self.params[first.weights..first.bias].to_vec();
        for (i, l) in self.layout.iter().enumerate().skip(1) {
            for (u, row) in jac.chunks_exact_mut(d).enumerate() {
                if pre[i - 1][u] <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            let w = &self.params[l.weights..l.bias];
            let mut next = vec![0.0; l.outputs * d];
            for (o, nrow) in next.chunks_exact_mut(d).enumerate() {
                for (u, jrow) in jac.chunks_exact(d).enumerate() {
                    let a = w[o * l.inputs + u];
                    if a != 0.0 {
                        nrow.iter_mut().zip(jrow).for_each(|(n, j)| *n += a * j);
                    }
                }
            }
            jac = next;
        }
        Ok(DMatrix::from_row_slice(self.output_dim(), d, &jac))
    }

    /// Loss of one example and its gradient accumulated into `grad`.
    fn accumulate(&self, x: &[f64], y: f64, grad: &mut [f64], scale: f64) -> f64 {
        let pre = self.forward_trace(x);
        let out = pre.last().expect("at least one layer");
        let (loss, mut delta) = match self.head {
            Head::Regression => {
                let r = out[0] - y;
                let mut d = vec![0.0; out.len()];
                d[0] = 2.0 * r;
                (r * r, d)
            }
            Head::Classification => {
                let class = y as usize;
                let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + out.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                let d: Vec<f64> = out
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v - lse).exp() - if i == class { 1.0 } else { 0.0 })
                    .collect();
                (lse - out[class], d)
            }
        };
        for (i, l) in self.layout.iter().enumerate().rev() {
            let input: Vec<f64> = if i == 0 { x.to_vec() } else { pre[i - 1].iter().map(|v| v.max(0.0)).collect() };
            for (o, dv) in delta.iter().enumerate() {
                let g = dv * scale;
                if g == 0.0 {
                    continue;
                }
                let row = &mut grad[l.weights + o * l.inputs..l.weights + (o + 1) * l.inputs];
                row.iter_mut().zip(&input).for_each(|(r, a)| *r += g * a);
                grad[l.bias + o] += g;
            }
            if i > 0 {
                let w = &self.params[l.weights..l.bias];
                let mut prev = vec![0.0; l.inputs];
                for (o, dv) in delta.iter().enumerate() {
                    if *dv != 0.0 {
                        prev.iter_mut()
                            .zip(&w[o * l.inputs..(o + 1) * l.inputs])
                            .for_each(|(p, a)| *p += dv * a);
                    }
                }
                for (p, z) in prev.iter_mut().zip(&pre[i - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        loss
    }

    /// Mean loss over `(x, y)` pairs and its parameter gradient.
    pub fn loss_and_gradient(&self, pairs: &[(&[f64], f64)]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / pairs.len() as f64;
        let loss = pairs
            .iter()
            .map(|(x, y)| self.accumulate(x, *y, &mut grad, scale))
            .sum::<f64>()
            * scale;
        (loss, grad)
    }

    /// Writes the versioned flat format: a text header followed by the
    /// parameters as little-endian f64 in layer order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(w, "vbtta-mlp 1")?;
        writeln!(w, "sizes {}", sizes.join(" "))?;
        writeln!(w, "head {}", self.head.name())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
        let mut lines = Vec::new();
        let mut pos = 0;
        for _ in 0..3 {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or(Error::Parse { line: lines.len() + 1, msg: "truncated header".into() })?;
            lines.push(String::from_utf8_lossy(&bytes[pos..pos + end]).into_owned());
            pos += end + 1;
        }
        if lines[0] != "vbtta-mlp 1" {
            return Err(Error::Parse { line: 1, msg: format!("unsupported header `{}`", lines[0]) });
        }
        let sizes: Vec<usize> = lines[1]
            .strip_prefix("sizes ")
            .ok_or(Error::Parse { line: 2, msg: "expected `sizes`".into() })?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse { line: 2, msg: format!("bad size `{t}`") }))
            .collect::<Result<_>>()?;
        let head = match lines[2].as_str() {
            "head regression" => Head::Regression,
            "head classification" => Head::Classification,
            other => return Err(Error::Parse { line: 3, msg: format!("unknown head `{other}`") }),
        };
        let mut m = Self::zeros(&sizes, head)?;
        let body = &bytes[pos..];
        check_dim(m.params.len() * 8, body.len())?;
        for (p, chunk) in m.params.iter_mut().zip(body.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

/// Inputs with one or more (possibly conflicting) labels each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    /// Label set per instance; class labels are stored as integral values.
    pub labels: Vec<Vec<f64>>,
    pub task: Task,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        check_dim(self.inputs.len(), self.labels.len())?;
        let d = self.inputs[0].len();
        for (x, s) in self.inputs.iter().zip(&self.labels) {
            check_dim(d, x.len())?;
            if s.is_empty() {
                return Err(Error::domain("every instance needs at least one label"));
            }
            if let Task::Classification { classes } = self.task {
                if s.iter().any(|&y| y < 0.0 || y.fract() != 0.0 || y as usize >= classes) {
                    return Err(Error::domain(format!("class labels must be integers in [0, {classes})")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// One `(x, y)` pair per label.
    pub fn pairs(&self) -> Vec<(&[f64], f64)> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .flat_map(|(x, s)| s.iter().map(move |&y| (x.as_slice(), y)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("learning rate must be ≥ 0, epochs and batch size ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam decay rates must lie in [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }

    /// Ascends along `grad`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.step(params, &neg);
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Empirical risk minimization with Adam; every label in an instance's label
/// set is used as a separate example.
pub fn train(dataset: &Dataset, model_init: &MlpModel, config: &TrainConfig) -> Result<MlpModel> {
    train_with_report(dataset, model_init, config).map(|(m, _)| m)
}

pub fn train_with_report(dataset: &Dataset, model_init: &MlpModel, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    dataset.validate()?;
    config.validate()?;
    check_dim(model_init.input_dim(), dataset.inputs[0].len())?;
    if let Task::Classification { classes } = dataset.task {
        check_dim(classes, model_init.output_dim())?;
    }
    let mut model = model_init.clone();
    let pairs = dataset.pairs();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = Rng::new(config.seed);
    let mut adam = Adam::new(model.params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let b: Vec<(&[f64], f64)> = batch.iter().map(|&i| pairs[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&b);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            total += loss * b.len() as f64;
            if config.learning_rate > 0.0 {
                adam.step(&mut model.params, &grad);
            }
        }
        losses.push(total / pairs.len() as f64);
    }
    Ok((model, TrainReport { epoch_losses: losses }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub accuracy: f64,
}

/// Mean squared error, mean absolute error and exact-match accuracy.
pub fn metrics(predictions: &[f64], labels: &[f64]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::domain("metrics need at least one prediction"));
    }
    check_dim(predictions.len(), labels.len())?;
    let n = predictions.len() as f64;
    let (mut se, mut ae, mut hit) = (0.0, 0.0, 0usize);
    for (p, y) in predictions.iter().zip(labels) {
        se += (p - y).powi(2);
        ae += (p - y).abs();
        hit += usize::from(p == y);
    }
    Ok(Metrics {
        mse: se / n,
        mae: ae / n,
        accuracy: hit as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_x(d: usize, rng: &mut Rng) -> Vec<f64> {
        (0..d).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn single_linear_layer_is_dot_product() {
        let a = vec![0.5, -2.0, 3.0];
        let m = MlpModel::from_layers(&[3, 1], Head::Regression, &[(a.clone(), vec![0.0])]).unwrap();
        let x = [1.0, 2.0, -1.0];
        assert_eq!(m.forward(&x).unwrap(), vec![0.5 - 4.0 - 3.0]);
        let j = m.input_gradient(&x).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), a);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(&[4, 8, 8, 2], Head::Classification).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = Rng::new(1);
        let m = MlpModel::new(&[5, 16, 16, 1], Head::Regression, &mut rng).unwrap();
        let x = random_x(5, &mut rng);
        let first = m.forward(&x).unwrap();
        for _ in 0..100 {
            assert_eq!(m.forward(&x).unwrap(), first);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MlpModel::zeros(&[3, 1], Head::Regression).unwrap();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut rng = Rng::new(2);
        for trial in 0..20 {
            let m = MlpModel::new(&[6, 12, 10, 3], Head::Classification, &mut rng).unwrap();
            let x = random_x(6, &mut rng);
            let j = m.input_gradient(&x).unwrap();
            for k in 0..6 {
                let h = 1e-5 * (1.0 + x[k].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fp = m.forward(&xp).unwrap();
                let fm = m.forward(&xm).unwrap();
                for o in 0..3 {
                    let fd = (fp[o] - fm[o]) / (2.0 * h);
                    let err = (fd - j[(o, k)]).abs() / j[(o, k)].abs().max(1e-3);
                    assert!(err < 1e-4, "trial {trial} out {o} in {k}: {fd} vs {}", j[(o, k)]);
                }
            }
        }
    }

    #[test]
    fn dead_relu_gives_zero_jacobian() {
        let m = MlpModel::from_layers(
            &[2, 2, 1],
            Head::Regression,
            &[(vec![1.0, 1.0, 1.0, 1.0], vec![-100.0, -100.0]), (vec![1.0, 1.0], vec![0.5])],
        )
        .unwrap();
        let j = m.input_gradient(&[0.3, 0.4]).unwrap();
        assert!(j.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        for head in [Head::Regression, Head::Classification] {
            let out = if head == Head::Regression { 1 } else { 3 };
            let m = MlpModel::new(&[3, 5, 4, out], head, &mut rng).unwrap();
            let xs: Vec<Vec<f64>> = (0..4).map(|_| random_x(3, &mut rng)).collect();
            let ys = [0.0, 1.0, 2.0, 1.0];
            let pairs: Vec<(&[f64], f64)> = xs.iter().zip(ys).map(|(x, y)| (x.as_slice(), y)).collect();
            let (_, g) = m.loss_and_gradient(&pairs);
            for p in 0..m.params.len() {
                let h = 1e-6 * (1.0 + m.params[p].abs());
                let mut mp = m.clone();
                let mut mm = m.clone();
                mp.params[p] += h;
                mm.params[p] -= h;
                let fd = (mp.loss_and_gradient(&pairs).0 - mm.loss_and_gradient(&pairs).0) / (2.0 * h);
                let err = (fd - g[p]).abs() / g[p].abs().max(1e-3);
                assert!(err < 1e-4, "{head:?} param {p}: {fd} vs {}", g[p]);
            }
        }
    }

    fn line_dataset(n: usize, slope: f64, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_x(1, &mut rng)).collect();
        let labels = inputs.iter().map(|x| vec![slope * x[0]]).collect();
        Dataset { inputs, labels, task: Task::Regression }
    }

    #[test]
    fn learns_a_line() {
        let data = line_dataset(500, 2.0, 4);
        // closed-form least squares through the origin
        let sxy: f64 = data.inputs.iter().zip(&data.labels).map(|(x, y)| x[0] * y[0]).sum();
        let sxx: f64 = data.inputs.iter().map(|x| x[0] * x[0]).sum();
        let ols = sxy / sxx;
        let init = MlpModel::zeros(&[1, 1], Head::Regression).unwrap();
        let cfg = TrainConfig { epochs: 200, learning_rate: 0.01, ..TrainConfig::default() };
        let m = train(&data, &init, &cfg).unwrap();
        assert!((m.params()[0] - ols).abs() < 0.05, "{} vs {ols}", m.params()[0]);
    }

    #[test]
    fn full_batch_loss_is_non_increasing_on_convex_problem() {
        let data = line_dataset(200, -1.5, 5);
        let init = MlpModel::zeros(&[1, 1], Head::Regression).unwrap();
        let cfg = TrainConfig { epochs: 60, batch_size: 200, learning_rate: 0.01, ..TrainConfig::default() };
        let (_, rep) = train_with_report(&data, &init, &cfg).unwrap();
        for w in rep.epoch_losses.windows(2) {
            assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = line_dataset(50, 1.0, 6);
        let init = MlpModel::new(&[1, 4, 1], Head::Regression, &mut Rng::new(7)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
        assert_eq!(train(&data, &init, &cfg).unwrap(), init);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        for scale in [1e-6, 1.0, 1e6] {
            let mut adam = Adam::new(2, 1e-3, 0.9, 0.999, 1e-8);
            let mut p = vec![0.0, 0.0];
            adam.step(&mut p, &[scale, -3.0 * scale]);
            assert!((p[0].abs() - 1e-3).abs() < 1e-3 * 1e-2);
            assert!((p[1].abs() - 1e-3).abs() < 1e-3 * 1e-2);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = line_dataset(100, 0.5, 8);
        let init = MlpModel::new(&[1, 8, 8, 1], Head::Regression, &mut Rng::new(9)).unwrap();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        assert_eq!(train(&data, &init, &cfg).unwrap(), train(&data, &init, &cfg).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset { inputs: vec![vec![1.0]], labels: vec![vec![f64::NAN]], task: Task::Regression };
        let init = MlpModel::zeros(&[1, 1], Head::Regression).unwrap();
        assert!(matches!(train(&data, &init, &TrainConfig::default()), Err(Error::Divergence { epoch: 0 })));
    }

    #[test]
    fn metric_arithmetic() {
        let m = metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.mse, m.mae, m.accuracy), (0.0, 0.0, 1.0));
        let m = metrics(&[0.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!((m.mae, m.mse), (1.5, 2.5));
        let m = metrics(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let m = MlpModel::new(&[3, 4, 2], Head::Classification, &mut Rng::new(10)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"vbtta-mlp 1\nsizes 3 4 2\nhead classification\n"));
        assert_eq!(MlpModel::read_from(buf.as_slice()).unwrap(), m);
        buf.truncate(buf.len() - 3);
        assert!(MlpModel::read_from(buf.as_slice()).is_err());
    }
}

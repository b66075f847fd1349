//! Dense feed-forward classifier with exact analytic gradients.
//!
//! The network is `input -> hidden... -> classes` with rectified-linear hidden
//! activations and a softmax cross-entropy loss over a single shared head.
//! Parameters flatten in a fixed order (layer-major, weights before biases,
//! row-major within each weight matrix) so gradient vectors index stably.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::argmax;

/// One labeled input flowing through the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Feature vector, intensities scaled to [0, 1].
    pub features: Vec<f64>,
    /// Class id in `0..classes`.
    pub label: usize,
    /// Monotonically increasing arrival counter.
    pub stream_index: u64,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize, stream_index: u64) -> Self {
        Example {
            features,
            label,
            stream_index,
        }
    }
}

/// Where a gradient came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradSource {
    /// Gradient of a single example, by stream index.
    Example(u64),
    /// Mean gradient of a batch.
    Batch,
    /// Constructed directly (tests, snapshots).
    Synthetic,
}

/// Flattened parameter gradient of the per-example loss; the feature space
/// for all selection math.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub source: GradSource,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Self {
        GradientVector {
            values,
            source: GradSource::Synthetic,
        }
    }

    pub fn with_source(values: Vec<f64>, source: GradSource) -> Self {
        GradientVector { values, source }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// out = W x + b
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward classifier parameter record.
#[derive(Debug, Clone)]
pub struct MlpModel {
    input_dim: usize,
    classes: usize,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Seeded model with weights uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`
    /// and zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut model = Self::zeroed(input_dim, hidden, classes);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        model
    }

    /// All-zero parameters; useful as a canvas for `unflatten`.
    pub fn zeroed(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        assert!(input_dim > 0 && classes > 0, "degenerate architecture");
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .map(|d| Layer::zeroed(d[0], d[1]))
            .collect();
        MlpModel {
            input_dim,
            classes,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters in the documented order: layer-major, weights before
    /// biases, row-major within each matrix.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Inverse of `flatten`.
    pub fn unflatten(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            layer.weights.copy_from_slice(&params[off..off + layer.weights.len()]);
            off += layer.weights.len();
            layer.biases.copy_from_slice(&params[off..off + layer.biases.len()]);
            off += layer.biases.len();
        }
        Ok(())
    }

    /// Pre-softmax logits for one input.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        let mut act = features.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&act, &mut next);
            if i < last {
                for v in &mut next {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut act, &mut next);
        }
        Ok(act)
    }

    /// `parameters <- parameters - lr * direction`.
    pub fn sgd_step(&mut self, direction: &GradientVector, lr: f64) -> Result<()> {
        if direction.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: direction.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                *w -= lr * direction.values[off];
                off += 1;
            }
            for b in &mut layer.biases {
                *b -= lr * direction.values[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Forward pass keeping post-activation values of every layer
    /// (index 0 is the input itself; the last entry holds raw logits).
    fn forward_cached(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        if features.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim,
                got: features.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(acts.last().unwrap(), &mut z);
            if i < last {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Adds the gradient of `loss(forward(x), y)` for one example into `out`
    /// (flatten order). Returns the example loss.
    fn accumulate_gradient(&self, example: &Example, out: &mut [f64]) -> Result<f64> {
        let acts = self.forward_cached(&example.features)?;
        let logits = acts.last().unwrap();
        let loss_value = loss(logits, example.label)?;

        // Output delta: softmax(logits) - onehot(label).
        let mut delta = softmax_probs(logits);
        delta[example.label] -= 1.0;

        // Walk layers backwards; `off` tracks where each layer's block starts.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weights.len() + layer.biases.len();
        }

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            let base = offsets[li];
            for o in 0..layer.out_dim {
                let d = delta[o];
                let row = base + o * layer.in_dim;
                for (i, xi) in input.iter().enumerate() {
                    out[row + i] += d * xi;
                }
                out[base + layer.weights.len() + o] += d;
            }
            if li > 0 {
                // Propagate through the weights, masking by the rectifier:
                // acts[li] holds post-ReLU values, zero exactly where the
                // unit was inactive.
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(&acts[li]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(loss_value)
    }
}

/// Softmax cross-entropy via the log-sum-exp stabilized form.
pub fn loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum_exp.ln() - logits[label])
}

/// Stabilized softmax probabilities.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Exact analytic gradient of the per-example loss, flattened.
pub fn example_gradient(model: &MlpModel, example: &Example) -> Result<GradientVector> {
    let mut values = vec![0.0; model.param_count()];
    model.accumulate_gradient(example, &mut values)?;
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(GradientVector::with_source(
        values,
        GradSource::Example(example.stream_index),
    ))
}

/// Arithmetic mean of the example gradients of a batch.
pub fn batch_gradient(model: &MlpModel, batch: &[Example]) -> Result<GradientVector> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch_gradient over empty batch"));
    }
    let mut values = vec![0.0; model.param_count()];
    for example in batch {
        model.accumulate_gradient(example, &mut values)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for v in &mut values {
        *v *= inv;
    }
    debug_assert!(values.iter().all(|v| v.is_finite()));
    Ok(GradientVector::with_source(values, GradSource::Batch))
}

/// Mean loss over a set; handy for probing forgetting.
pub fn mean_loss(model: &MlpModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("mean_loss over empty set"));
    }
    let mut total = 0.0;
    for ex in examples {
        total += loss(&model.forward(&ex.features)?, ex.label)?;
    }
    Ok(total / examples.len() as f64)
}

/// Per-task and overall argmax accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Accuracy per task id; tasks with no test examples are absent.
    pub per_task: BTreeMap<usize, f64>,
    /// Fraction of argmax-correct predictions over the whole set.
    pub overall: f64,
}

/// Evaluates argmax accuracy with a single shared head over all classes.
/// `task_of[i]` names the group of `test_set[i]` for the per-task map.
pub fn evaluate(model: &MlpModel, test_set: &[Example], task_of: &[usize]) -> Result<AccuracyReport> {
    assert!(!test_set.is_empty(), "evaluate requires a nonempty test set");
    assert_eq!(test_set.len(), task_of.len());
    let mut correct_total = 0usize;
    let mut per_task_counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (ex, &task) in test_set.iter().zip(task_of) {
        let logits = model.forward(&ex.features)?;
        let hit = argmax(&logits) == ex.label;
        let entry = per_task_counts.entry(task).or_insert((0, 0));
        entry.1 += 1;
        if hit {
            entry.0 += 1;
            correct_total += 1;
        }
    }
    let per_task = per_task_counts
        .into_iter()
        .map(|(task, (c, n))| (task, c as f64 / n as f64))
        .collect();
    Ok(AccuracyReport {
        per_task,
        overall: correct_total as f64 / test_set.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, StreamTag};
    use rand::Rng;

    fn random_example(dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Example {
        let features = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        Example::new(features, rng.gen_range(0..classes), 0)
    }

    #[test]
    fn forward_zero_parameters_gives_zero_logits() {
        let model = MlpModel::zeroed(4, &[3, 3], 2);
        let logits = model.forward(&[0.3, 0.1, 0.9, 0.5]).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_one_unit_passthrough() {
        let mut model = MlpModel::zeroed(1, &[1], 1);
        // [w1, b1, w2, b2]
        model.unflatten(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let logits = model.forward(&[2.0]).unwrap();
        assert_eq!(logits, vec![2.0]);
    }

    #[test]
    fn forward_matches_straight_line_matrix_oracle() {
        let mut rng = seeded(11, StreamTag::ModelInit);
        let model = MlpModel::new(5, &[4, 3], 3, &mut rng);
        let x = [0.2, -0.4, 0.9, 0.0, 0.7];

        // Independent hand-rolled pass over the flattened parameters.
        let p = model.flatten();
        let dims = [5usize, 4, 3, 3];
        let mut act: Vec<f64> = x.to_vec();
        let mut off = 0;
        for l in 0..3 {
            let (ind, outd) = (dims[l], dims[l + 1]);
            let mut next = vec![0.0; outd];
            for (o, n) in next.iter_mut().enumerate() {
                let mut acc = p[off + ind * outd + o]; // bias
                for (i, a) in act.iter().enumerate() {
                    acc += p[off + o * ind + i] * a;
                }
                *n = if l < 2 { acc.max(0.0) } else { acc };
            }
            off += ind * outd + outd;
            act = next;
        }

        let logits = model.forward(&x).unwrap();
        for (a, b) in logits.iter().zip(&act) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = MlpModel::zeroed(3, &[2], 2);
        assert!(matches!(
            model.forward(&[1.0]),
            Err(Error::ShapeMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn loss_uniform_logits_is_ln_k() {
        let v = loss(&[0.0, 0.0], 0).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_is_stable_for_huge_logits() {
        let v = loss(&[1000.0, 0.0], 0).unwrap();
        assert!(v.is_finite());
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn loss_matches_frozen_high_precision_value() {
        // -log softmax([1,2,3])[2] evaluated at 40 decimal digits.
        let v = loss(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((v - 0.4076059644443803).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_label_out_of_range() {
        assert!(matches!(
            loss(&[0.0, 0.0], 2),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let mut rng = seeded(3, StreamTag::Geometry);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..7).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let s: f64 = softmax_probs(&logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_when_saturated_correct() {
        let mut model = MlpModel::zeroed(1, &[1], 2);
        // Hidden unit passes input through; output layer pushes label 0 far up.
        model.unflatten(&[1.0, 0.5, 60.0, -60.0, 0.0, 0.0]).unwrap();
        let ex = Example::new(vec![1.0], 0, 0);
        let g = example_gradient(&model, &ex).unwrap();
        let norm = crate::linalg::norm(&g.values);
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let mut rng = seeded(42, StreamTag::ModelInit);
        for trial in 0..5 {
            let mut model = MlpModel::new(6, &[8, 7], 4, &mut rng);
            let ex = random_example(6, 4, &mut rng);
            let g = example_gradient(&model, &ex).unwrap();
            let params = model.flatten();
            let d = params.len();
            for _ in 0..25 {
                let k = rng.gen_range(0..d);
                let h = 1e-5;
                let mut plus = params.clone();
                plus[k] += h;
                model.unflatten(&plus).unwrap();
                let lp = loss(&model.forward(&ex.features).unwrap(), ex.label).unwrap();
                let mut minus = params.clone();
                minus[k] -= h;
                model.unflatten(&minus).unwrap();
                let lm = loss(&model.forward(&ex.features).unwrap(), ex.label).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let denom = g.values[k].abs().max(fd.abs()).max(1e-6);
                let rel = (g.values[k] - fd).abs() / denom;
                assert!(rel < 1e-4, "trial {trial} coord {k}: {} vs {fd}", g.values[k]);
            }
            model.unflatten(&params).unwrap();
        }
    }

    #[test]
    fn batch_gradient_of_singleton_equals_example_gradient() {
        let mut rng = seeded(5, StreamTag::ModelInit);
        let model = MlpModel::new(4, &[5], 3, &mut rng);
        let ex = random_example(4, 3, &mut rng);
        let a = example_gradient(&model, &ex).unwrap();
        let b = batch_gradient(&model, &[ex]).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn batch_gradient_of_duplicated_example_is_unchanged() {
        let mut rng = seeded(6, StreamTag::ModelInit);
        let model = MlpModel::new(4, &[5], 3, &mut rng);
        let ex = random_example(4, 3, &mut rng);
        let a = example_gradient(&model, &ex).unwrap();
        let b = batch_gradient(&model, &[ex.clone(), ex]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_example_gradients() {
        let mut rng = seeded(7, StreamTag::ModelInit);
        let model = MlpModel::new(5, &[6, 6], 4, &mut rng);
        let batch: Vec<Example> = (0..5).map(|_| random_example(5, 4, &mut rng)).collect();
        let combined = batch_gradient(&model, &batch).unwrap();
        let mut oracle = vec![0.0; model.param_count()];
        for ex in &batch {
            let g = example_gradient(&model, ex).unwrap();
            for (acc, v) in oracle.iter_mut().zip(&g.values) {
                *acc += v / batch.len() as f64;
            }
        }
        for (a, b) in combined.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_gradient_rejects_empty_batch() {
        let model = MlpModel::zeroed(2, &[2], 2);
        assert!(matches!(
            batch_gradient(&model, &[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn sgd_step_edge_cases_and_additivity() {
        let mut rng = seeded(8, StreamTag::ModelInit);
        let model0 = MlpModel::new(3, &[4], 2, &mut rng);
        let d = model0.param_count();

        let mut m = model0.clone();
        let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        m.sgd_step(&GradientVector::new(dir.clone()), 0.0).unwrap();
        assert_eq!(m.flatten(), model0.flatten());

        m.sgd_step(&GradientVector::new(vec![0.0; d]), 0.3).unwrap();
        assert_eq!(m.flatten(), model0.flatten());

        // Two steps with a then b equal one step with a+b at fixed lr.
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut two = model0.clone();
        two.sgd_step(&GradientVector::new(a.clone()), 0.1).unwrap();
        two.sgd_step(&GradientVector::new(b.clone()), 0.1).unwrap();
        let mut one = model0.clone();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        one.sgd_step(&GradientVector::new(ab), 0.1).unwrap();
        for (x, y) in two.flatten().iter().zip(one.flatten()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn flatten_unflatten_roundtrip_is_identity() {
        let mut rng = seeded(9, StreamTag::ModelInit);
        for _ in 0..10 {
            let model = MlpModel::new(
                rng.gen_range(2..6),
                &[rng.gen_range(1..5), rng.gen_range(1..5)],
                rng.gen_range(2..5),
                &mut rng,
            );
            let p = model.flatten();
            let mut copy = model.clone();
            copy.unflatten(&vec![0.0; p.len()]).unwrap();
            copy.unflatten(&p).unwrap();
            assert_eq!(copy.flatten(), p);
        }
    }

    #[test]
    fn evaluate_constant_predictor_on_balanced_set() {
        // Zero parameters predict class 0 everywhere (argmax tie -> index 0).
        let model = MlpModel::zeroed(2, &[2], 2);
        let test: Vec<Example> = (0..10)
            .map(|i| Example::new(vec![0.1, 0.2], i % 2, i as u64))
            .collect();
        let tasks = vec![0usize; 10];
        let report = evaluate(&model, &test, &tasks).unwrap();
        assert_eq!(report.overall, 0.5);
    }

    #[test]
    fn evaluate_omits_absent_groups_and_matches_recount() {
        let mut rng = seeded(10, StreamTag::ModelInit);
        let model = MlpModel::new(3, &[4], 3, &mut rng);
        let test: Vec<Example> = (0..30).map(|i| {
            let mut e = random_example(3, 3, &mut rng);
            e.stream_index = i;
            e
        }).collect();
        // Only groups 0 and 2 appear; group 1 must be absent from the map.
        let tasks: Vec<usize> = (0..30).map(|i| if i % 2 == 0 { 0 } else { 2 }).collect();
        let report = evaluate(&model, &test, &tasks).unwrap();
        assert!(report.per_task.contains_key(&0));
        assert!(!report.per_task.contains_key(&1));
        assert!(report.per_task.contains_key(&2));

        // Independent recount.
        let mut correct = 0;
        for ex in &test {
            let logits = model.forward(&ex.features).unwrap();
            if argmax(&logits) == ex.label {
                correct += 1;
            }
        }
        assert_eq!(report.overall, correct as f64 / 30.0);
    }
}

//! Evaluation metrics: content accuracy through a trained classifier and
//! style discrepancy through Gram-matrix statistics.

use crate::checkpoint::{self, CheckpointError};
use crate::error::TensorError;
use crate::kernels::elem::LossKind;
use crate::nets::{Classifier, ClassifierConfig};
use crate::optim::AdamState;
use crate::rng::SplitMix64;
use crate::tape::Tape;
use crate::tensor::{Shape, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sample set: {0}")]
    Empty(&'static str),
    #[error("gram matrix needs a single sample, got batch {0}")]
    BatchedGram(usize),
    #[error("representation mismatch: {0}")]
    Mismatch(String),
    #[error("label {0:#06x} unknown to the classifier")]
    UnknownLabel(u32),
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("class count mismatch: config says {config}, data has {data}")]
    ClassCount { config: usize, data: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Symmetric channel-correlation matrix, f64 row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl GramMatrix {
    pub fn zeros(dim: usize) -> Self {
        GramMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }
}

/// Gram matrix of one sample's feature map: G_ij is the inner product of
/// the vectorized maps i and j, normalized by the spatial size H*W.
pub fn gram_matrix(values: &[f32], shape: Shape) -> Result<GramMatrix, MetricsError> {
    if shape.n != 1 {
        return Err(MetricsError::BatchedGram(shape.n));
    }
    debug_assert_eq!(values.len(), shape.len());
    let c = shape.c;
    let hw = shape.h * shape.w;
    let mut g = GramMatrix::zeros(c);
    for i in 0..c {
        let fi = &values[i * hw..(i + 1) * hw];
        for j in i..c {
            let fj = &values[j * hw..(j + 1) * hw];
            let mut acc = 0.0f64;
            for (a, b) in fi.iter().zip(fj) {
                acc += *a as f64 * *b as f64;
            }
            acc /= hw as f64;
            g.data[i * c + j] = acc;
            g.data[j * c + i] = acc;
        }
    }
    Ok(g)
}

/// Set-level style statistics: the mean of per-sample Gram matrices at one
/// designated layer.
#[derive(Debug, Clone)]
pub struct StyleRepresentation {
    pub gram: GramMatrix,
    pub layer_id: String,
    pub n_samples: usize,
}

/// Identifier of the substitute classifier's designated style layer.
pub const STYLE_LAYER_ID: &str = "conv1.relu";

fn forward_sample(
    cls: &Classifier,
    sample: &Tensor,
) -> Result<(Vec<f32>, Vec<f32>, Shape), TensorError> {
    let mut tape = Tape::<f32>::new();
    let bind = cls.bind(&mut tape);
    let x = tape.leaf_tensor(sample);
    let out = cls.forward(&mut tape, &bind, x)?;
    Ok((
        tape.values(out.logits).to_vec(),
        tape.values(out.style_layer).to_vec(),
        tape.shape(out.style_layer),
    ))
}

/// Class scores (logits) for one sample.
pub fn classify(cls: &Classifier, sample: &Tensor) -> Result<Vec<f32>, MetricsError> {
    Ok(forward_sample(cls, sample)?.0)
}

/// Mean of per-sample Grams over a set.
pub fn style_representation(
    cls: &Classifier,
    samples: &[Tensor],
) -> Result<StyleRepresentation, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty("style_representation"));
    }
    let mut mean: Option<GramMatrix> = None;
    for s in samples {
        let (_, style, shape) = forward_sample(cls, s)?;
        let g = gram_matrix(&style, shape)?;
        match &mut mean {
            None => mean = Some(g),
            Some(m) => {
                if m.dim != g.dim {
                    return Err(MetricsError::Mismatch(format!(
                        "gram dims {} vs {}",
                        m.dim, g.dim
                    )));
                }
                for (a, b) in m.data.iter_mut().zip(&g.data) {
                    *a += *b;
                }
            }
        }
    }
    let mut gram = mean.expect("nonempty set");
    let n = samples.len() as f64;
    gram.data.iter_mut().for_each(|v| *v /= n);
    Ok(StyleRepresentation {
        gram,
        layer_id: STYLE_LAYER_ID.to_string(),
        n_samples: samples.len(),
    })
}

/// Root-mean-square difference over all N^2 Gram entries. A pseudometric:
/// symmetric, non-negative, zero on equal representations.
pub fn style_discrepancy(
    a: &StyleRepresentation,
    b: &StyleRepresentation,
) -> Result<f64, MetricsError> {
    if a.layer_id != b.layer_id {
        return Err(MetricsError::Mismatch(format!(
            "layers {} vs {}",
            a.layer_id, b.layer_id
        )));
    }
    rms_diff(&a.gram, &b.gram)
}

pub(crate) fn rms_diff(a: &GramMatrix, b: &GramMatrix) -> Result<f64, MetricsError> {
    if a.dim != b.dim {
        return Err(MetricsError::Mismatch(format!(
            "gram dims {} vs {}",
            a.dim, b.dim
        )));
    }
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.data.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub label: u32,
    pub n: usize,
    pub top1_hits: usize,
    pub top5_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub top1: f64,
    pub top5: f64,
    pub n_evaluated: usize,
    pub per_class: Vec<ClassAccuracy>,
}

/// Builds a report from raw score rows. `targets` are class indices into
/// `labels`; top-5 clamps to the class count. Ties break toward the lower
/// class index, deterministically.
pub fn accuracy_from_scores(
    scores: &[Vec<f32>],
    targets: &[usize],
    labels: &[u32],
) -> Result<AccuracyReport, MetricsError> {
    if scores.is_empty() || scores.len() != targets.len() {
        return Err(MetricsError::Empty("accuracy_from_scores"));
    }
    let n_classes = labels.len();
    let k = n_classes.min(5);
    let mut per_class: Vec<ClassAccuracy> = labels
        .iter()
        .map(|&label| ClassAccuracy {
            label,
            n: 0,
            top1_hits: 0,
            top5_hits: 0,
        })
        .collect();
    let (mut hits1, mut hits5) = (0usize, 0usize);
    for (row, &target) in scores.iter().zip(targets) {
        debug_assert_eq!(row.len(), n_classes);
        let mut order: Vec<usize> = (0..n_classes).collect();
        order.sort_by(|&i, &j| row[j].partial_cmp(&row[i]).unwrap_or(std::cmp::Ordering::Equal));
        let top1 = order[0] == target;
        let top5 = order[..k].contains(&target);
        per_class[target].n += 1;
        if top1 {
            hits1 += 1;
            per_class[target].top1_hits += 1;
        }
        if top5 {
            hits5 += 1;
            per_class[target].top5_hits += 1;
        }
    }
    Ok(AccuracyReport {
        top1: hits1 as f64 / scores.len() as f64,
        top5: hits5 as f64 / scores.len() as f64,
        n_evaluated: scores.len(),
        per_class,
    })
}

/// A classifier plus its label table and held-out accuracy.
pub struct TrainedClassifier {
    pub net: Classifier,
    /// Sorted label values; class index = position.
    pub labels: Vec<u32>,
    pub holdout_top1: f64,
}

impl TrainedClassifier {
    pub fn class_index(&self, label: u32) -> Result<usize, MetricsError> {
        self.labels
            .binary_search(&label)
            .map_err(|_| MetricsError::UnknownLabel(label))
    }
}

/// Trains the substitute classifier with Adam at batch size 1.
///
/// A stratified ~20% holdout measures generalization; when classes are too
/// small to spare a sample the holdout falls back to the training set.
pub fn train_classifier(
    samples: &[(Tensor, u32)],
    cfg: ClassifierConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainedClassifier, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty("train_classifier"));
    }
    let mut labels: Vec<u32> = samples.iter().map(|(_, l)| *l).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(MetricsError::TooFewClasses(labels.len()));
    }
    if labels.len() != cfg.n_classes {
        return Err(MetricsError::ClassCount {
            config: cfg.n_classes,
            data: labels.len(),
        });
    }

    let mut rng = SplitMix64::new(seed);
    let net = Classifier::build("cls", cfg, &mut rng)?;

    // Stratified holdout: up to 20% per class, keeping at least one
    // training sample of each class.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
    for (i, (_, label)) in samples.iter().enumerate() {
        let class = labels.binary_search(label).expect("label collected above");
        by_class[class].push(i);
    }
    let mut train_idx = Vec::new();
    let mut hold_idx = Vec::new();
    for members in &mut by_class {
        rng.shuffle(members);
        let hold = (members.len() / 5).min(members.len() - 1);
        hold_idx.extend_from_slice(&members[..hold]);
        train_idx.extend_from_slice(&members[hold..]);
    }

    let mut tc = TrainedClassifier {
        net,
        labels,
        holdout_top1: 0.0,
    };
    let mut opt = AdamState::new();
    const LEARNING_RATE: f32 = 1e-3;
    for _ in 0..epochs {
        rng.shuffle(&mut train_idx);
        for &i in &train_idx {
            let (sample, label) = &samples[i];
            let class = tc.class_index(*label)?;
            let mut tape = Tape::<f32>::new();
            let bind = tc.net.bind(&mut tape);
            let x = tape.leaf_tensor(sample);
            let out = tc.net.forward(&mut tape, &bind, x)?;
            let loss = tape.softmax_cross_entropy(out.logits, &[class])?;
            let mut grads = tape.backward(loss);
            tc.net.stack.accumulate_grads(&bind, &mut grads);
            opt.step_group(tc.net.stack.tensors_mut(), LEARNING_RATE)?;
            tc.net.stack.clear_grads();
        }
    }

    let eval_idx: &[usize] = if hold_idx.is_empty() {
        &train_idx
    } else {
        &hold_idx
    };
    let eval: Vec<(Tensor, u32)> = eval_idx
        .iter()
        .map(|&i| (samples[i].0.clone(), samples[i].1))
        .collect();
    tc.holdout_top1 = content_accuracy(&tc, &eval)?.top1;
    Ok(tc)
}

/// Top-1/top-5 accuracy of the classifier on labeled samples.
pub fn content_accuracy(
    cls: &TrainedClassifier,
    samples: &[(Tensor, u32)],
) -> Result<AccuracyReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty("content_accuracy"));
    }
    let mut scores = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for (sample, label) in samples {
        targets.push(cls.class_index(*label)?);
        scores.push(classify(&cls.net, sample)?);
    }
    accuracy_from_scores(&scores, &targets, &cls.labels)
}

/// Serializes a trained classifier (container layout shared with training
/// checkpoints, magic `GCLS`). Labels ride along bit-cast into f32 slots.
pub fn save_classifier(tc: &TrainedClassifier) -> Vec<u8> {
    let mut entries: Vec<(String, Shape, Vec<f32>)> = Vec::new();
    for p in tc.net.stack.params() {
        entries.push((p.name.clone(), p.tensor.shape(), p.tensor.values().to_vec()));
    }
    let labels: Vec<f32> = tc.labels.iter().map(|&l| f32::from_bits(l)).collect();
    entries.push((
        "meta.labels".into(),
        Shape::new(1, 1, 1, labels.len()),
        labels,
    ));
    entries.push((
        "meta.image_size".into(),
        Shape::scalar(),
        vec![tc.net.cfg.image_size as f32],
    ));
    entries.push((
        "meta.conv_widths".into(),
        Shape::new(1, 1, 1, 2),
        vec![tc.net.cfg.conv_widths.0 as f32, tc.net.cfg.conv_widths.1 as f32],
    ));
    entries.push((
        "meta.in_channels".into(),
        Shape::scalar(),
        vec![tc.net.cfg.in_channels as f32],
    ));
    entries.push((
        "meta.holdout_top1".into(),
        Shape::scalar(),
        vec![tc.holdout_top1 as f32],
    ));
    checkpoint::encode_container(
        checkpoint::CLASSIFIER_MAGIC,
        0,
        0,
        entries.iter().map(|(n, s, v)| (n.as_str(), *s, v.as_slice())),
    )
}

pub fn load_classifier(bytes: &[u8]) -> Result<TrainedClassifier, MetricsError> {
    let (_, _, entries) = checkpoint::decode_container(checkpoint::CLASSIFIER_MAGIC, bytes)?;
    let mut map: std::collections::HashMap<String, checkpoint::Entry> = entries
        .into_iter()
        .map(|e| (e.name.clone(), e))
        .collect();
    let mut meta = |name: &str| -> Result<Vec<f32>, MetricsError> {
        Ok(map
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?
            .values)
    };
    let labels: Vec<u32> = meta("meta.labels")?.iter().map(|v| v.to_bits()).collect();
    let image_size = meta("meta.image_size")?[0] as usize;
    let widths = meta("meta.conv_widths")?;
    let in_channels = meta("meta.in_channels")?[0] as usize;
    let holdout_top1 = meta("meta.holdout_top1")?[0] as f64;
    let cfg = ClassifierConfig {
        n_classes: labels.len(),
        image_size,
        in_channels,
        conv_widths: (widths[0] as usize, widths[1] as usize),
    };
    let mut rng = SplitMix64::new(0);
    let mut net = Classifier::build("cls", cfg, &mut rng)?;
    let names: Vec<(String, Shape)> = net
        .stack
        .params()
        .map(|p| (p.name.clone(), p.tensor.shape()))
        .collect();
    for (name, shape) in names {
        let entry = map
            .remove(&name)
            .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        if entry.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                file: vec![
                    entry.shape.n as u32,
                    entry.shape.c as u32,
                    entry.shape.h as u32,
                    entry.shape.w as u32,
                ],
                expected: shape,
            }
            .into());
        }
        net.stack
            .by_name_mut(&name)
            .expect("name from this stack")
            .values_mut()
            .copy_from_slice(&entry.values);
    }
    if let Some(name) = map.keys().next() {
        return Err(CheckpointError::Unknown(name.clone()).into());
    }
    Ok(TrainedClassifier {
        net,
        labels,
        holdout_top1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_hand_example() {
        // Two channels with vectorized maps [1,2] and [3,4]:
        // unnormalized [[5,11],[11,25]], normalized by H*W=2.
        let shape = Shape::new(1, 2, 1, 2);
        let g = gram_matrix(&[1.0, 2.0, 3.0, 4.0], shape).unwrap();
        assert_eq!(g.at(0, 0), 2.5);
        assert_eq!(g.at(0, 1), 5.5);
        assert_eq!(g.at(1, 0), 5.5);
        assert_eq!(g.at(1, 1), 12.5);
    }

    #[test]
    fn gram_of_zero_map_is_zero() {
        let shape = Shape::new(1, 3, 2, 2);
        let g = gram_matrix(&vec![0.0; shape.len()], shape).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_is_permutation_invariant_over_positions() {
        let shape = Shape::new(1, 2, 1, 3);
        let a = gram_matrix(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], shape).unwrap();
        // Permute spatial positions consistently across channels.
        let b = gram_matrix(&[3.0, 1.0, 2.0, 6.0, 4.0, 5.0], shape).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_rejects_batches() {
        let shape = Shape::new(2, 1, 1, 1);
        assert!(matches!(
            gram_matrix(&[0.0, 0.0], shape),
            Err(MetricsError::BatchedGram(2))
        ));
    }

    #[test]
    fn discrepancy_closed_form_and_identity() {
        let id = StyleRepresentation {
            gram: GramMatrix {
                dim: 2,
                data: vec![1.0, 0.0, 0.0, 1.0],
            },
            layer_id: "l".into(),
            n_samples: 1,
        };
        let zero = StyleRepresentation {
            gram: GramMatrix::zeros(2),
            layer_id: "l".into(),
            n_samples: 1,
        };
        assert_eq!(style_discrepancy(&id, &id).unwrap(), 0.0);
        let d = style_discrepancy(&id, &zero).unwrap();
        assert!((d - (2.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_rejects_mismatched_layers() {
        let a = StyleRepresentation {
            gram: GramMatrix::zeros(2),
            layer_id: "a".into(),
            n_samples: 1,
        };
        let b = StyleRepresentation {
            gram: GramMatrix::zeros(2),
            layer_id: "b".into(),
            n_samples: 1,
        };
        assert!(style_discrepancy(&a, &b).is_err());
    }

    #[test]
    fn perfect_scores_give_perfect_report() {
        let labels = vec![100, 200, 300];
        let targets = vec![0usize, 1, 2, 1];
        let scores: Vec<Vec<f32>> = targets
            .iter()
            .map(|&t| {
                let mut row = vec![0.0f32; 3];
                row[t] = 1.0;
                row
            })
            .collect();
        let r = accuracy_from_scores(&scores, &targets, &labels).unwrap();
        assert_eq!(r.top1, 1.0);
        assert_eq!(r.top5, 1.0);
        assert_eq!(r.n_evaluated, 4);
        assert!(r.top5 >= r.top1);
    }

    #[test]
    fn top5_clamps_to_class_count() {
        let labels = vec![1, 2];
        let scores = vec![vec![0.9f32, 0.1], vec![0.2, 0.8]];
        let r = accuracy_from_scores(&scores, &[1, 1], &labels).unwrap();
        // k = min(5, 2) = 2, so top5 is always 1 here.
        assert_eq!(r.top5, 1.0);
        assert!(r.top1 < 1.0);
    }
}

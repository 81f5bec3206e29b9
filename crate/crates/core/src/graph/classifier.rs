//! Learned stand-in for the abstraction function: a small conv net that
//! classifies side-view depth images into abstract state ids, trained on
//! generated (image, label) pairs.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::ops::{softmax_cross_entropy, softmax_rows, Conv2d, Linear, MaxPool2, Relu};
use crate::nn::optim::{Adam, Net};
use crate::nn::tensor::{Element, Tensor};
use crate::sim::render_side_view;

use super::abstraction::generate_instance;
use super::{GoalGraph, StateId};

/// Generated supervision for the classifier: side-view images with exact
/// abstract-state labels.
pub struct AbstractionDataset {
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
}

/// Samples abstract states (stratified so every state appears once the
/// pair budget allows it), realizes each with sub-tolerance pose jitter
/// and renders the side view. Labels are exact by construction.
pub fn generate_abstraction_dataset(
    graph: &GoalGraph,
    cfg: &EnvConfig,
    n_pairs: usize,
    jitter: f32,
    seed: u64,
) -> AbstractionDataset {
    assert!(n_pairs > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = graph.len();
    let mut ids: Vec<u32> = Vec::with_capacity(n_pairs);
    let full_rounds = n_pairs / n_states;
    for _ in 0..full_rounds {
        ids.extend(0..n_states as u32);
    }
    while ids.len() < n_pairs {
        ids.push(rng.random_range(0..n_states as u32));
    }
    ids.shuffle(&mut rng);

    let (rows, cols) = cfg.side_view_dims();
    let mut images = Vec::with_capacity(n_pairs);
    for &id in &ids {
        let world = generate_instance(graph.state(StateId(id)), cfg, jitter, &mut rng);
        images.push(render_side_view(&world, cfg));
    }
    AbstractionDataset { images, labels: ids, rows, cols }
}

const DATA_MAGIC: &[u8; 4] = b"BGDS";
const LABEL_MAGIC: &[u8; 4] = b"BGLB";

impl AbstractionDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flat binary image file: magic, version, count, rows, cols, then
    /// f32 little-endian pixels.
    pub fn write_images<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(DATA_MAGIC)?;
        out.write_all(&1u16.to_le_bytes())?;
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        out.write_all(&(self.rows as u16).to_le_bytes())?;
        out.write_all(&(self.cols as u16).to_le_bytes())?;
        for img in &self.images {
            for v in img.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Label index file: magic, version, count, then u32 little-endian ids.
    pub fn write_labels<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(LABEL_MAGIC)?;
        out.write_all(&1u16.to_le_bytes())?;
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        for l in &self.labels {
            out.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read, L: Read>(images: &mut R, labels: &mut L) -> Result<AbstractionDataset> {
        let mut m = [0u8; 4];
        images.read_exact(&mut m)?;
        if &m != DATA_MAGIC {
            return Err(Error::Checkpoint("bad dataset magic".into()));
        }
        let mut b2 = [0u8; 2];
        let mut b4 = [0u8; 4];
        images.read_exact(&mut b2)?;
        if u16::from_le_bytes(b2) != 1 {
            return Err(Error::Checkpoint("dataset version mismatch".into()));
        }
        images.read_exact(&mut b4)?;
        let count = u32::from_le_bytes(b4) as usize;
        images.read_exact(&mut b2)?;
        let rows = u16::from_le_bytes(b2) as usize;
        images.read_exact(&mut b2)?;
        let cols = u16::from_le_bytes(b2) as usize;
        let mut imgs = Vec::with_capacity(count);
        let mut raw = vec![0u8; rows * cols * 4];
        for _ in 0..count {
            images.read_exact(&mut raw)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            imgs.push(Tensor::from_vec(&[1, rows, cols], data));
        }
        labels.read_exact(&mut m)?;
        if &m != LABEL_MAGIC {
            return Err(Error::Checkpoint("bad label magic".into()));
        }
        labels.read_exact(&mut b2)?;
        labels.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) as usize != count {
            return Err(Error::Checkpoint("label/image count mismatch".into()));
        }
        let mut lab = Vec::with_capacity(count);
        for _ in 0..count {
            labels.read_exact(&mut b4)?;
            lab.push(u32::from_le_bytes(b4));
        }
        Ok(AbstractionDataset { images: imgs, labels: lab, rows, cols })
    }
}

/// Two conv stages plus a hidden fully connected layer over the side
/// view.
pub struct Classifier<E: Element> {
    conv1: Conv2d<E>,
    r1: Relu<E>,
    pool1: MaxPool2<E>,
    conv2: Conv2d<E>,
    r2: Relu<E>,
    pool2: MaxPool2<E>,
    fc1: Linear<E>,
    r3: Relu<E>,
    fc2: Linear<E>,
    rows: usize,
    cols: usize,
    norm: E,
}

impl<E: Element> Classifier<E> {
    pub fn new<R: Rng>(rows: usize, cols: usize, classes: usize, norm: f64, rng: &mut R) -> Self {
        let (h2, w2) = (rows / 2 / 2, cols / 2 / 2);
        Classifier {
            conv1: Conv2d::new(1, 8, 3, 1, 1, rng),
            r1: Relu::new(),
            pool1: MaxPool2::new(),
            conv2: Conv2d::new(8, 16, 3, 1, 1, rng),
            r2: Relu::new(),
            pool2: MaxPool2::new(),
            fc1: Linear::new(16 * h2 * w2, 64, rng),
            r3: Relu::new(),
            fc2: Linear::new(64, classes, rng),
            rows,
            cols,
            norm: E::from_f64(norm),
        }
    }

    pub fn classes(&self) -> usize {
        self.fc2.out_features()
    }

    pub fn forward(&mut self, x: &Tensor<E>) -> Tensor<E> {
        let (n, _, h, w) = x.dims4();
        assert_eq!((h, w), (self.rows, self.cols), "side view size");
        let mut x = x.clone();
        let norm = self.norm;
        for v in x.data_mut() {
            *v = *v / norm;
        }
        let h1 = self.r1.forward(self.conv1.forward(&x));
        let p1 = self.pool1.forward(&h1);
        let h2 = self.r2.forward(self.conv2.forward(&p1));
        let p2 = self.pool2.forward(&h2);
        let flat = p2.reshaped(&[n, self.fc1.in_features()]);
        let f1 = self.r3.forward(self.fc1.forward(&flat));
        self.fc2.forward(&f1)
    }

    pub fn backward(&mut self, dlogits: &Tensor<E>) {
        let (n, _) = dlogits.dims2();
        let df1 = self.fc2.backward(dlogits);
        let dflat = self.fc1.backward(&self.r3.backward(df1));
        let (h2, w2) = (self.rows / 4, self.cols / 4);
        let dp2 = dflat.reshaped(&[n, 16, h2, w2]);
        let dh2 = self.r2.backward(self.pool2.backward(&dp2));
        let dp1 = self.conv2.backward(&dh2);
        let dh1 = self.r1.backward(self.pool1.backward(&dp1));
        self.conv1.backward(&dh1);
    }

    /// Argmax class for a single side view.
    pub fn classify(&mut self, p: &Tensor<E>) -> StateId {
        let (_, h, w) = p.dims3();
        let x = Tensor::from_vec(&[1, 1, h, w], p.data().to_vec());
        let logits = self.forward(&x);
        StateId(logits.argmax_flat() as u32)
    }

    /// Class probabilities for a single side view.
    pub fn probabilities(&mut self, p: &Tensor<E>) -> Tensor<E> {
        let (_, h, w) = p.dims3();
        let x = Tensor::from_vec(&[1, 1, h, w], p.data().to_vec());
        let logits = self.forward(&x);
        softmax_rows(&logits)
    }
}

impl<E: Element> Net<E> for Classifier<E> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<E>, &mut Tensor<E>)) {
        f("conv1.w", &mut self.conv1.w, &mut self.conv1.gw);
        f("conv1.b", &mut self.conv1.b, &mut self.conv1.gb);
        f("conv2.w", &mut self.conv2.w, &mut self.conv2.gw);
        f("conv2.b", &mut self.conv2.b, &mut self.conv2.gb);
        f("fc1.w", &mut self.fc1.w, &mut self.fc1.gw);
        f("fc1.b", &mut self.fc1.b, &mut self.fc1.gb);
        f("fc2.w", &mut self.fc2.w, &mut self.fc2.gw);
        f("fc2.b", &mut self.fc2.b, &mut self.fc2.gb);
    }
}

pub struct TrainReport {
    pub holdout_accuracy: f64,
    pub final_loss: f64,
    pub holdout_size: usize,
}

/// Supervised cross-entropy training with a held-out split. Errors on a
/// degenerate single-class dataset.
pub fn train_abstraction_classifier(
    dataset: &AbstractionDataset,
    classes: usize,
    norm: f64,
    epochs: usize,
    seed: u64,
) -> Result<(Classifier<f32>, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::Training("empty dataset".into()));
    }
    let first = dataset.labels[0];
    if dataset.labels.iter().all(|&l| l == first) {
        return Err(Error::Training("dataset contains a single class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Classifier::new(dataset.rows, dataset.cols, classes, norm, &mut rng);
    let mut opt = Adam::new(1e-3, 10.0);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let holdout = (dataset.len() / 10).max(1);
    let (test_idx, train_idx) = order.split_at(holdout);

    let batch = 32usize;
    let mut final_loss = 0.0;
    let mut train_order = train_idx.to_vec();
    for _ in 0..epochs {
        train_order.shuffle(&mut rng);
        for chunk in train_order.chunks(batch) {
            let (x, y) = gather(dataset, chunk);
            net.zero_grads();
            let logits = net.forward(&x);
            let (loss, dlogits, _) = softmax_cross_entropy(&logits, &y);
            net.backward(&dlogits);
            opt.step(&mut net);
            final_loss = loss;
        }
    }

    let mut correct = 0usize;
    for chunk in test_idx.chunks(64) {
        let (x, y) = gather(dataset, chunk);
        let logits = net.forward(&x);
        let (n, c) = logits.dims2();
        for ni in 0..n {
            let row = &logits.data()[ni * c..(ni + 1) * c];
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            if best == y[ni] {
                correct += 1;
            }
        }
    }
    let report = TrainReport {
        holdout_accuracy: correct as f64 / test_idx.len() as f64,
        final_loss,
        holdout_size: test_idx.len(),
    };
    Ok((net, report))
}

fn gather(ds: &AbstractionDataset, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
    let (rows, cols) = (ds.rows, ds.cols);
    let mut x = Tensor::zeros(&[idx.len(), 1, rows, cols]);
    let mut y = Vec::with_capacity(idx.len());
    for (bi, &i) in idx.iter().enumerate() {
        x.data_mut()[bi * rows * cols..(bi + 1) * rows * cols]
            .copy_from_slice(ds.images[i].data());
        y.push(ds.labels[i] as usize);
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ObjectSet;

    #[test]
    fn dataset_covers_every_class_and_labels_are_exact() {
        let graph = GoalGraph::build(2, ObjectSet::Base);
        let cfg = EnvConfig::default();
        let n = graph.len() * 10;
        let ds = generate_abstraction_dataset(&graph, &cfg, n, 0.9, 7);
        assert_eq!(ds.len(), n);
        let mut seen = vec![false; graph.len()];
        for &l in &ds.labels {
            seen[l as usize] = true;
        }
        assert!(seen.iter().all(|&b| b), "all abstract states sampled");
        // spot-check label exactness through the ground-truth f
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (id, state) in graph.iter().take(8) {
            let world = generate_instance(state, &cfg, 0.9, &mut rng);
            assert_eq!(
                crate::graph::f_abstract(&world, &graph, &cfg),
                crate::graph::Abstract::State(id)
            );
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let graph = GoalGraph::build(1, ObjectSet::Base);
        let cfg = EnvConfig::default();
        let ds = generate_abstraction_dataset(&graph, &cfg, 12, 0.5, 9);
        let mut imgs = Vec::new();
        let mut labs = Vec::new();
        ds.write_images(&mut imgs).unwrap();
        ds.write_labels(&mut labs).unwrap();
        let back = AbstractionDataset::read(&mut imgs.as_slice(), &mut labs.as_slice()).unwrap();
        assert_eq!(back.len(), 12);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.images[3], ds.images[3]);
    }

    #[test]
    fn single_class_dataset_is_a_training_error() {
        let ds = AbstractionDataset {
            images: vec![Tensor::zeros(&[1, 8, 8]); 4],
            labels: vec![2; 4],
            rows: 8,
            cols: 8,
        };
        assert!(train_abstraction_classifier(&ds, 4, 1.0, 1, 1).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_and_empty_classifies_itself() {
        let graph = GoalGraph::build(1, ObjectSet::Base);
        let cfg = EnvConfig::default();
        let ds = generate_abstraction_dataset(&graph, &cfg, 400, 0.8, 11);
        let (mut net, report) =
            train_abstraction_classifier(&ds, graph.len(), cfg.obs_norm() as f64, 6, 5).unwrap();
        // the all-zero side view is its own class: the clear platform
        let (rows, cols) = cfg.side_view_dims();
        let empty = Tensor::zeros(&[1, rows, cols]);
        assert_eq!(net.classify(&empty), graph.empty_id());
        let p = net.probabilities(&empty);
        let sum: f32 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(p.data().iter().all(|&v| v >= 0.0));
        assert!(report.holdout_accuracy > 0.6, "tiny fit sanity: {}", report.holdout_accuracy);
    }
}

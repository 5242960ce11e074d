use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::unsupervised::schedule;
use super::{
    check_finite, check_scheme, EpochAccumulator, Scheme, TrainConfig, TrainObserver, SEED_INIT,
    SEED_SHUFFLE,
};
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::losses::{combine, distance_loss, triplet_loss_hardest, LossValue};
use crate::nn::{build_encoder, Adam, MlpModel, Mode};
use crate::numerics::Matrix;

/// Matching descriptor pairs: row `i` of `anchors` and `positives` share
/// `labels[i]`, and labels are distinct across rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Matrix,
    pub positives: Matrix,
    pub labels: Vec<u32>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Anchors stacked on top of positives.
    pub fn stacked(&self) -> Matrix {
        Matrix::vstack(&self.anchors, &self.positives).expect("anchor and positive widths agree")
    }
}

/// Draws per-epoch batches of distinct classes, one (anchor, positive) pair of
/// different rows per class. Classes are visited without replacement in a
/// seeded shuffled order.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    classes: Vec<(u32, Vec<usize>)>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl TripletSampler {
    pub fn new(set: &DescriptorSet, batch_size: usize, seed: u64) -> Result<TripletSampler> {
        if batch_size < 2 {
            return Err(Error::config("triplet batches need at least 2 classes"));
        }
        let classes: Vec<(u32, Vec<usize>)> = set
            .indices_by_label()
            .into_iter()
            .filter(|(_, rows)| rows.len() >= 2)
            .collect();
        if classes.len() < batch_size {
            return Err(Error::config(format!(
                "only {} classes have at least 2 descriptors, fewer than batch_size {batch_size}",
                classes.len()
            )));
        }
        Ok(TripletSampler {
            classes,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn eligible_classes(&self) -> usize {
        self.classes.len()
    }

    /// Batches per epoch; a trailing partial batch is kept when it has ≥ 2 classes.
    pub fn batches_per_epoch(&self) -> usize {
        let c = self.classes.len();
        c / self.batch_size + usize::from(c % self.batch_size >= 2)
    }

    /// Row-index pairs `(anchor, positive)` for each batch of one epoch.
    pub fn epoch(&mut self) -> Vec<Vec<(usize, usize)>> {
        let mut order: Vec<usize> = (0..self.classes.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .filter(|c| c.len() >= 2)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&c| {
                        let rows = &self.classes[c].1;
                        let a = self.rng.random_range(0..rows.len());
                        let mut p = self.rng.random_range(0..rows.len() - 1);
                        if p >= a {
                            p += 1;
                        }
                        (rows[a], rows[p])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn batch(set: &DescriptorSet, pairs: &[(usize, usize)]) -> TripletBatch {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        TripletBatch {
            anchors: set.descriptors.select_rows(&a),
            positives: set.descriptors.select_rows(&p),
            labels: a.iter().map(|&i| set.labels[i]).collect(),
        }
    }
}

/// Mean hardest-in-batch triplet loss of an eval-mode encoder over one seeded
/// sampling epoch of `set`.
pub fn triplet_loss_on(
    encoder: &MlpModel,
    set: &DescriptorSet,
    batch_size: usize,
    margin: f64,
    seed: u64,
) -> Result<f64> {
    let mut sampler = TripletSampler::new(set, batch_size, seed)?;
    let batches = sampler.epoch();
    let mut total = 0.0;
    for pairs in &batches {
        let batch = TripletSampler::batch(set, pairs);
        let emb = encoder.infer(&batch.stacked())?;
        total += triplet_loss_hardest(&emb, margin)?.value;
    }
    Ok(total / batches.len() as f64)
}

/// Distance loss between original rows `range` of `x` and of `emb`, with the
/// gradient placed in those rows of a zero matrix shaped like `emb`.
fn distance_on_rows(x: &Matrix, emb: &Matrix, range: std::ops::Range<usize>) -> Result<LossValue> {
    let idx: Vec<usize> = range.collect();
    let part = distance_loss(&x.select_rows(&idx), &emb.select_rows(&idx))?;
    let mut grad = Matrix::zeros(emb.rows(), emb.cols());
    for (r, &i) in idx.iter().enumerate() {
        grad.row_mut(i).copy_from_slice(part.grad.row(r));
    }
    Ok(LossValue { value: part.value, grad })
}

/// Trains an encoder with the hardest-in-batch triplet margin loss on
/// ground-truth labels, plus the weighted distance loss on the anchors (and
/// optionally the positives) when enabled.
pub fn train_supervised(
    set: &DescriptorSet,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<MlpModel> {
    check_scheme(config, Scheme::Supervised)?;
    let mut sampler = TripletSampler::new(set, config.batch_size, config.seed + SEED_SHUFFLE)?;
    let mut encoder = build_encoder(set.dim(), config.target_dim, &config.hidden_sizes, config.seed + SEED_INIT)?;
    let mut opt = Adam::new(config.learning_rate, schedule(config, sampler.batches_per_epoch()));
    let weight = config.distance_weight();

    for epoch in 1..=config.epochs {
        let mut acc = EpochAccumulator::default();
        for pairs in sampler.epoch() {
            let batch = TripletSampler::batch(set, &pairs);
            debug_assert!({
                let mut l = batch.labels.clone();
                l.sort_unstable();
                l.windows(2).all(|w| w[0] != w[1])
            });
            let x = batch.stacked();
            let n = batch.len();
            let emb = encoder.forward(&x)?;
            let trip = triplet_loss_hardest(&emb, config.margin)?;
            let (aux, total) = if config.use_distance_loss {
                let mut dist = distance_on_rows(&x, &emb, 0..n)?;
                if config.distance_on_positives {
                    let pos = distance_on_rows(&x, &emb, n..2 * n)?;
                    dist = combine(&dist, &pos, 1.0)?;
                }
                (dist.value, combine(&trip, &dist, weight)?)
            } else {
                (0.0, trip.clone())
            };
            encoder.backward(&total.grad)?;
            let lr = opt.step(&mut encoder)?;
            acc.add(trip.value, aux, total.value, lr);
        }
        check_finite(&encoder, epoch)?;
        observer.on_epoch(&acc.finish(epoch, "triplet", "distance", weight));
    }
    encoder.set_mode(Mode::Eval);
    Ok(encoder)
}

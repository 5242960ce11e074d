//! The three training schemes and the projection of descriptor sets through a
//! trained encoder.

mod config;
mod selfsupervised;
mod supervised;
mod unsupervised;

pub use config::{parse_hidden, Scheme, TrainConfig, TARGET_DIMS};
pub use selfsupervised::{train_selfsupervised, ClassifierHead};
pub use supervised::{triplet_loss_on, train_supervised, TripletBatch, TripletSampler};
pub use unsupervised::train_unsupervised;

use std::fmt;

use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::nn::{FrozenEncoder, MlpModel};

/// Seed offsets so every subsystem draws from its own stream.
pub(crate) const SEED_INIT: u64 = 0;
pub(crate) const SEED_SHUFFLE: u64 = 1;
pub(crate) const SEED_CLUSTER: u64 = 2;
pub(crate) const SEED_HEAD: u64 = 3;
pub(crate) const SEED_DECODER: u64 = 4;

/// Mean loss components over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub main_name: &'static str,
    pub main: f64,
    pub aux_name: &'static str,
    /// Unweighted auxiliary (distance) loss; zero when disabled.
    pub aux: f64,
    pub aux_weight: f64,
    /// Mean of the per-step combined losses `main + aux_weight · aux`.
    pub total: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub steps: usize,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} {}={:.9} {}={:.9} weight={} total={:.9} lr={:.3e} steps={}",
            self.epoch, self.main_name, self.main, self.aux_name, self.aux, self.aux_weight, self.total, self.lr, self.steps
        )
    }
}

/// Where pseudo-labels of the self-supervised scheme were computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Original,
    Embedded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEvent {
    /// Epoch (1-based) about to use the new labels.
    pub epoch: usize,
    pub source: LabelSource,
    pub k: usize,
    pub objective: f64,
    pub head_width: usize,
}

/// Hooks called during training; all methods default to no-ops.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    fn on_cluster(&mut self, _event: &ClusterEvent) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Observer that keeps every record and event.
#[derive(Debug, Default, Clone)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub clusters: Vec<ClusterEvent>,
}

impl TrainObserver for History {
    fn on_epoch(&mut self, record: &EpochRecord) {
        self.epochs.push(record.clone());
    }

    fn on_cluster(&mut self, event: &ClusterEvent) {
        self.clusters.push(event.clone());
    }
}

/// Trains the scheme named in `config`.
pub fn train(set: &DescriptorSet, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<MlpModel> {
    match config.scheme {
        Scheme::Unsupervised => train_unsupervised(set, config, observer),
        Scheme::SelfSupervised => train_selfsupervised(set, config, observer),
        Scheme::Supervised => train_supervised(set, config, observer),
    }
}

pub(crate) fn check_scheme(config: &TrainConfig, scheme: Scheme) -> Result<()> {
    config.validate()?;
    if config.scheme != scheme {
        return Err(Error::config(format!(
            "configuration is for scheme {}, not {scheme}",
            config.scheme
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(model: &MlpModel, epoch: usize) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::numeric(format!("non-finite weights after epoch {epoch}")));
    }
    Ok(())
}

/// Running sums for an [`EpochRecord`].
#[derive(Default)]
pub(crate) struct EpochAccumulator {
    main: f64,
    aux: f64,
    total: f64,
    steps: usize,
    lr: f64,
}

impl EpochAccumulator {
    pub(crate) fn add(&mut self, main: f64, aux: f64, total: f64, lr: f64) {
        self.main += main;
        self.aux += aux;
        self.total += total;
        self.steps += 1;
        self.lr = lr;
    }

    pub(crate) fn finish(
        self,
        epoch: usize,
        main_name: &'static str,
        aux_name: &'static str,
        aux_weight: f64,
    ) -> EpochRecord {
        let n = self.steps.max(1) as f64;
        EpochRecord {
            epoch,
            main_name,
            main: self.main / n,
            aux_name,
            aux: self.aux / n,
            aux_weight,
            total: self.total / n,
            lr: self.lr,
            steps: self.steps,
        }
    }
}

/// Splits a shuffled index list into batches of `batch` rows; a trailing batch
/// smaller than 2 is dropped because training-mode batchnorm needs two rows.
pub(crate) fn minibatches(order: &[usize], batch: usize) -> Vec<&[usize]> {
    order.chunks(batch).filter(|c| c.len() >= 2).collect()
}

/// Maps every row through the encoder in eval mode. Output rows are unit norm
/// (or zero) for encoders ending in ℓ2 normalization.
pub fn reduce(encoder: &MlpModel, set: &DescriptorSet) -> Result<DescriptorSet> {
    if set.dim() != encoder.input_dim() {
        return Err(Error::shape(format!(
            "encoder expects dimension {}, descriptors have dimension {}",
            encoder.input_dim(),
            set.dim()
        )));
    }
    set.with_descriptors(encoder.infer(&set.descriptors)?)
}

/// Single-precision projection through a folded copy of the encoder; used for timing.
pub fn reduce_fast(encoder: &FrozenEncoder, set: &DescriptorSet) -> Result<DescriptorSet> {
    set.with_descriptors(encoder.project(&set.descriptors)?)
}

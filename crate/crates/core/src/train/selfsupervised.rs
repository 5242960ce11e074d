use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::unsupervised::schedule;
use super::{
    check_finite, check_scheme, minibatches, ClusterEvent, EpochAccumulator, LabelSource, Scheme,
    TrainConfig, TrainObserver, SEED_CLUSTER, SEED_HEAD, SEED_INIT, SEED_SHUFFLE,
};
use crate::cluster::kmeans_fit_restarts;
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::losses::{softmax_cross_entropy, LossValue};
use crate::nn::{build_encoder, Adam, Linear, LrSchedule, MlpModel, Mode, Parameterized};
use crate::numerics::Matrix;

/// Linear classification layer over embeddings, trained with softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new<R: Rng>(embedding_dim: usize, classes: usize, rng: &mut R) -> Self {
        ClassifierHead {
            linear: Linear::glorot(embedding_dim, classes, rng),
        }
    }

    /// Number of classes.
    pub fn width(&self) -> usize {
        self.linear.fan_out()
    }

    /// Cross-entropy of the head's logits; stores head gradients and returns the
    /// gradient with respect to the embeddings.
    pub fn loss(&mut self, emb: &Matrix, targets: &[usize]) -> Result<LossValue> {
        let logits = self.linear.forward_train(emb)?;
        let ce = softmax_cross_entropy(&logits, targets)?;
        Ok(LossValue {
            value: ce.value,
            grad: self.linear.backward(&ce.grad)?,
        })
    }
}

impl Parameterized for ClassifierHead {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.linear.visit_params(f);
    }
}

/// Trains an encoder with a classification head on k-means pseudo-labels.
/// Labels first come from clustering the original descriptors; every
/// `recluster_period` epochs they are recomputed from the current embeddings and
/// the head is re-initialized.
pub fn train_selfsupervised(
    set: &DescriptorSet,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<MlpModel> {
    check_scheme(config, Scheme::SelfSupervised)?;
    let n = set.len();
    let k = config.cluster_count(n);
    if k > n {
        return Err(Error::config(format!("k = {k} exceeds the {n} training rows")));
    }
    if n < 2 {
        return Err(Error::config(format!("need at least 2 training rows, got {n}")));
    }
    let mut encoder = build_encoder(set.dim(), config.target_dim, &config.hidden_sizes, config.seed + SEED_INIT)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(config.seed + SEED_HEAD);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + SEED_SHUFFLE);
    let mut order: Vec<usize> = (0..n).collect();
    let steps = minibatches(&order, config.batch_size).len();
    let mut opt = Adam::new(config.learning_rate, schedule(config, steps));

    let clustering = kmeans_fit_restarts(
        &set.descriptors,
        k,
        config.kmeans_max_iters,
        config.kmeans_restarts,
        config.seed + SEED_CLUSTER,
    )?;
    let mut labels = clustering.assignments;
    let mut head = ClassifierHead::new(config.target_dim, k, &mut head_rng);
    let mut opt_head = Adam::new(config.learning_rate, LrSchedule::Constant);
    observer.on_cluster(&ClusterEvent {
        epoch: 1,
        source: LabelSource::Original,
        k,
        objective: clustering.objective,
        head_width: head.width(),
    });

    for epoch in 1..=config.epochs {
        if epoch > 1 && (epoch - 1) % config.recluster_period == 0 {
            let emb = encoder.infer(&set.descriptors)?;
            let clustering = kmeans_fit_restarts(
                &emb,
                k,
                config.kmeans_max_iters,
                config.kmeans_restarts,
                config.seed + SEED_CLUSTER + epoch as u64,
            )?;
            labels = clustering.assignments;
            head = ClassifierHead::new(config.target_dim, k, &mut head_rng);
            opt_head = Adam::new(config.learning_rate, LrSchedule::Constant);
            observer.on_cluster(&ClusterEvent {
                epoch,
                source: LabelSource::Embedded,
                k,
                objective: clustering.objective,
                head_width: head.width(),
            });
        }
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for batch in minibatches(&order, config.batch_size) {
            let x = set.descriptors.select_rows(batch);
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let e = encoder.forward(&x)?;
            let loss = head.loss(&e, &targets)?;
            encoder.backward(&loss.grad)?;
            let lr = opt.step(&mut encoder)?;
            opt_head.step(&mut head)?;
            acc.add(loss.value, 0.0, loss.value, lr);
        }
        check_finite(&encoder, epoch)?;
        observer.on_epoch(&acc.finish(epoch, "xent", "none", 0.0));
    }
    encoder.set_mode(Mode::Eval);
    Ok(encoder)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, check_scheme, minibatches, EpochAccumulator, Scheme, TrainConfig, TrainObserver,
    SEED_DECODER, SEED_INIT, SEED_SHUFFLE,
};
use crate::data::DescriptorSet;
use crate::error::{Error, Result};
use crate::losses::{combine, distance_loss, reconstruction_loss, LossValue};
use crate::nn::{build_decoder, build_encoder, Adam, LrSchedule, MlpModel, Mode};

pub(crate) fn schedule(config: &TrainConfig, steps_per_epoch: usize) -> LrSchedule {
    if config.lr_decay {
        LrSchedule::LinearToZero {
            total_steps: (config.epochs * steps_per_epoch) as u64,
        }
    } else {
        LrSchedule::Constant
    }
}

/// Trains an encoder/decoder pair on reconstruction error (plus the weighted
/// distance loss between the input batch and its embeddings when enabled) and
/// returns the encoder in eval mode.
pub fn train_unsupervised(
    set: &DescriptorSet,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<MlpModel> {
    check_scheme(config, Scheme::Unsupervised)?;
    let n = set.len();
    if config.use_distance_loss && config.batch_size < 2 {
        return Err(Error::config("the distance loss needs batch_size ≥ 2"));
    }
    if n < 2 {
        return Err(Error::config(format!("need at least 2 training rows, got {n}")));
    }
    let dim = set.dim();
    let mut encoder = build_encoder(dim, config.target_dim, &config.hidden_sizes, config.seed + SEED_INIT)?;
    let mut decoder = build_decoder(config.target_dim, dim, &config.hidden_sizes, config.seed + SEED_DECODER)?;
    let mut order: Vec<usize> = (0..n).collect();
    let steps = minibatches(&order, config.batch_size).len();
    let schedule = schedule(config, steps);
    let mut opt_enc = Adam::new(config.learning_rate, schedule);
    let mut opt_dec = Adam::new(config.learning_rate, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed + SEED_SHUFFLE);
    let weight = config.distance_weight();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut acc = EpochAccumulator::default();
        for batch in minibatches(&order, config.batch_size) {
            let x = set.descriptors.select_rows(batch);
            let e = encoder.forward(&x)?;
            let r = decoder.forward(&e)?;
            let rec = reconstruction_loss(&x, &r)?;
            let main = LossValue {
                value: rec.value,
                grad: decoder.backward(&rec.grad)?,
            };
            let (aux, total) = if config.use_distance_loss {
                let dist = distance_loss(&x, &e)?;
                (dist.value, combine(&main, &dist, weight)?)
            } else {
                (0.0, main)
            };
            encoder.backward(&total.grad)?;
            let lr = opt_enc.step(&mut encoder)?;
            opt_dec.step(&mut decoder)?;
            acc.add(rec.value, aux, total.value, lr);
        }
        check_finite(&encoder, epoch)?;
        check_finite(&decoder, epoch)?;
        observer.on_epoch(&acc.finish(epoch, "recon", "distance", weight));
    }
    encoder.set_mode(Mode::Eval);
    Ok(encoder)
}

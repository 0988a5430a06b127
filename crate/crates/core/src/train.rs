//! Per-example Adam training with teacher forcing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{loss, Accuracy, DecodeError, Prepared};
use crate::model::Model;
use crate::neural::{AdamConfig, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds the example order of every epoch.
    pub seed: u64,
    pub shuffle: bool,
    /// Stop once every accuracy of an epoch reaches this rate.
    pub stop_at: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            adam: AdamConfig::default(),
            seed: 1,
            shuffle: true,
            stop_at: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Accuracies of the predictions made before each example's update.
    pub accuracy: Accuracy,
}

/// One update per example per epoch. `on_epoch` sees each report as it is
/// produced.
pub fn train(
    model: &mut Model,
    data: &[Prepared],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>, DecodeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut reports = Vec::new();
    for epoch in 1..=opts.epochs {
        if opts.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut accuracy = Accuracy::default();
        for &i in &order {
            let grads = {
                let mut tape = Tape::new(&model.store);
                let (l, acc) = loss(&mut tape, &model.net, &data[i])?;
                total += tape.value(l)[0];
                accuracy.add(&acc);
                tape.backward(l)?
            };
            model.store.accumulate(&grads);
            model.store.adam_step(&opts.adam);
        }
        let report = EpochReport {
            epoch,
            loss: total,
            accuracy,
        };
        on_epoch(&report);
        let done = opts.stop_at.is_some_and(|t| accuracy.min_rate() >= t);
        reports.push(report);
        if done {
            break;
        }
    }
    Ok(reports)
}

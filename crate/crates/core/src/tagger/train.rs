use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{
    apply_noisy_update, apply_true_update, gradients, init_params, predict_labels, Example,
    TaggerParams,
};
use super::{TaggerConfig, Vocab};
use crate::corpus::{Dataset, Label, Sentence, TypeSet};
use crate::error::{Error, Result};
use crate::evalkit::mention_prf;
use crate::robust::{mask_augment, sample_noisy_labels, AdvParams, NoisySequence};

/// Independent random streams derived from one seed.
pub(crate) mod streams {
    pub const INIT: u64 = 0;
    pub const ORDER: u64 = 1;
    pub const NOISE: u64 = 2;
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub loss_true: f64,
    pub loss_noisy: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss_true: f64,
    pub loss_noisy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_f1: Option<f64>,
}

/// A tagger with its vocabulary, type set and both parameter sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Tagger {
    pub config: TaggerConfig,
    pub typeset: TypeSet,
    pub vocab: Vocab,
    pub params: TaggerParams,
    pub adv: AdvParams,
}

impl Tagger {
    /// Freshly initialised from `config.seed`.
    pub fn new(config: TaggerConfig, vocab: Vocab, typeset: TypeSet) -> Result<Tagger> {
        let mut rng = rng_stream(config.seed, streams::INIT);
        let (params, adv) = init_params(&config, &vocab, &typeset, &mut rng)?;
        Ok(Tagger {
            config,
            typeset,
            vocab,
            params,
            adv,
        })
    }

    pub fn example(&self, sentence: &Sentence, noisy: Option<&NoisySequence>) -> Example {
        Example::new(sentence, &self.vocab, noisy)
    }

    /// One SGD step: θ moves along the true-loss gradient and θ′ along the
    /// noisy-loss gradient, both taken at the current parameters.
    /// `position` (epoch, batch) is only used for diagnostics.
    pub fn train_step(
        &mut self,
        batch: &[Example],
        lr: f64,
        position: (usize, usize),
    ) -> Result<StepLosses> {
        let ((loss_true, loss_noisy), g_true, g_noisy) = gradients(&self.params, &self.adv, batch);
        if !loss_true.is_finite() || !loss_noisy.is_finite() {
            return Err(Error::NonFinite {
                epoch: position.0,
                batch: position.1,
                loss_true,
                loss_noisy,
            });
        }
        apply_true_update(&mut self.params, &g_true, lr, self.config.freeze_embeddings);
        if self.config.use_adv {
            apply_noisy_update(&mut self.adv, &g_noisy, lr);
        }
        Ok(StepLosses {
            loss_true,
            loss_noisy,
        })
    }

    pub fn predict(&self, sentence: &Sentence) -> Vec<Label> {
        predict_labels(&self.params, &self.vocab, sentence)
    }

    pub fn predict_dataset(&self, dataset: &Dataset) -> Vec<Vec<Label>> {
        dataset
            .sentences()
            .iter()
            .map(|s| self.predict(s))
            .collect()
    }

    /// Mention-level F1 on `dataset`.
    pub fn f1(&self, dataset: &Dataset) -> Result<f64> {
        Ok(mention_prf(dataset, &self.predict_dataset(dataset))?
            .overall
            .f1)
    }
}

/// Trains a tagger on `train`.
///
/// With `use_mask` the training set is first extended by
/// [`mask_augment`]. With `use_adv` a new noisy label sequence is drawn for
/// every sentence at every epoch. Batches follow a seeded shuffle, so a
/// fixed seed reproduces the same parameters bit for bit.
pub fn train(
    train: &Dataset,
    config: &TaggerConfig,
    dev: Option<&Dataset>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Tagger> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let data = if config.use_mask {
        mask_augment(train)
    } else {
        train.clone()
    };
    let vocab = Vocab::build(&data);
    let mut tagger = Tagger::new(config.clone(), vocab, train.typeset().clone())?;

    let mut order_rng = rng_stream(config.seed, streams::ORDER);
    let mut noise_rng = rng_stream(config.seed, streams::NOISE);
    let clean: Vec<Example> = data
        .sentences()
        .iter()
        .map(|s| tagger.example(s, None))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let noisy: Option<Vec<Example>> = config.use_adv.then(|| {
            data.sentences()
                .iter()
                .map(|s| {
                    let n = sample_noisy_labels(s, data.typeset(), config.lambda, &mut noise_rng);
                    tagger.example(s, Some(&n))
                })
                .collect()
        });
        let examples = noisy.as_ref().unwrap_or(&clean);
        order.shuffle(&mut order_rng);

        let (mut sum_true, mut sum_noisy, mut steps) = (0.0, 0.0, 0usize);
        let mut batch = Vec::with_capacity(config.batch_size);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let l = tagger.train_step(&batch, lr, (epoch, b))?;
            sum_true += l.loss_true;
            sum_noisy += l.loss_noisy;
            steps += 1;
        }

        let dev_f1 = dev.map(|d| tagger.f1(d)).transpose()?;
        on_epoch(&EpochLog {
            epoch,
            learning_rate: lr,
            loss_true: sum_true / steps as f64,
            loss_noisy: sum_noisy / steps as f64,
            dev_f1,
        });
    }
    Ok(tagger)
}

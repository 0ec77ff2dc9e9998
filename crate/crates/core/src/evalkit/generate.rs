use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{RankedBasket, Recommender};
use crate::data::{CategoryId, CategoryVocab, CustomerHistory};
use crate::error::{Error, Result};
use crate::model::{Model, Parameters};
use crate::numeric::softmax_rows;
use crate::numeric::Matrix;
use crate::sampler::inference_sample;
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Top-k of the first decoder step.
    OneShot,
    /// Greedy decoding, feeding each pick back as the next decoder input.
    #[default]
    Autoregressive,
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenerationMode::OneShot => "one_shot",
            GenerationMode::Autoregressive => "autoregressive",
        })
    }
}

impl FromStr for GenerationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "one_shot" | "oneshot" => Ok(GenerationMode::OneShot),
            "autoregressive" | "ar" => Ok(GenerationMode::Autoregressive),
            _ => Err(Error::InvalidConfig(format!("unknown generation mode {s:?}"))),
        }
    }
}

/// A frozen model bound to its vocabulary.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    model: Model,
    params: &'a Parameters,
    vocab: &'a CategoryVocab,
    mode: GenerationMode,
}

impl<'a> Predictor<'a> {
    pub fn new(model: Model, params: &'a Parameters, vocab: &'a CategoryVocab, mode: GenerationMode) -> Result<Self> {
        params.check(model.layout())?;
        if vocab.size() != model.config().vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.size(),
                model.config().vocab_size
            )));
        }
        Ok(Self {
            model,
            params,
            vocab,
            mode,
        })
    }

    pub fn from_checkpoint(ckpt: &'a Checkpoint, mode: GenerationMode) -> Result<Self> {
        Self::new(Model::new(ckpt.model.clone())?, &ckpt.params, &ckpt.vocab, mode)
    }

    pub fn mode(&self) -> GenerationMode {
        self.mode
    }

    pub fn vocab(&self) -> &CategoryVocab {
        self.vocab
    }

    /// Ranks `k` categories for the session after `history`. `prefix` holds
    /// categories already placed in that session; they are fed to the decoder
    /// and never recommended again.
    pub fn generate(&self, history: &CustomerHistory, k: usize, prefix: &[CategoryId]) -> Result<RankedBasket> {
        let n_cat = self.vocab.num_categories();
        let mut excluded: HashSet<CategoryId> = HashSet::new();
        for &c in prefix {
            if !self.vocab.is_category(c) {
                return Err(Error::InvalidToken {
                    id: c,
                    vocab_size: self.vocab.size(),
                });
            }
            if !excluded.insert(c) {
                return Err(Error::InvalidConfig(format!("category {c} repeated in prefix")));
            }
        }
        if k == 0 || k > n_cat - prefix.len() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} outside 1..={} available categories",
                n_cat - prefix.len()
            )));
        }

        let cfg = self.model.config().sampler();
        let mut sample = inference_sample(history, prefix, &cfg, self.vocab)?;
        let memory = self.model.encode(self.params, &sample)?;
        let mut pos = prefix.len();
        let mut items = Vec::with_capacity(k);
        let mut joint = 1.0;

        loop {
            let probs = self.step_probs(&sample, &memory, pos)?;
            let ranked = ranked_candidates(&probs, n_cat, &excluded);
            let window_full = pos + 1 >= cfg.n_dec;
            if self.mode == GenerationMode::OneShot || window_full {
                // rank the rest from this step's distribution
                let need = k - items.len();
                items.extend(ranked.into_iter().take(need).map(|(c, p)| (c, joint * p)));
                break;
            }
            let (c, p) = ranked[0];
            joint *= p;
            items.push((c, joint));
            excluded.insert(c);
            if items.len() == k {
                break;
            }
            pos += 1;
            sample.dec_input.tokens[pos] = c;
            sample.dec_input.day_offsets[pos] = 0;
            sample.dec_input.pad_mask[pos] = true;
        }
        RankedBasket::new(items)
    }

    fn step_probs(&self, sample: &crate::sampler::TrainingSample, memory: &Matrix, pos: usize) -> Result<Vec<f64>> {
        let logits = self.model.decode(self.params, sample, memory)?;
        let row = Matrix::row_vector(logits.row(pos));
        Ok(softmax_rows(&row).into_vec())
    }
}

/// Real, non-excluded categories by descending probability, ties by id.
fn ranked_candidates(probs: &[f64], n_cat: usize, excluded: &HashSet<CategoryId>) -> Vec<(CategoryId, f64)> {
    let mut c: Vec<(CategoryId, f64)> = (0..n_cat)
        .filter(|i| !excluded.contains(i))
        .map(|i| (i, probs[i]))
        .collect();
    c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    c
}

impl Recommender for Predictor<'_> {
    fn name(&self) -> &str {
        "trex"
    }

    fn num_categories(&self) -> usize {
        self.vocab.num_categories()
    }

    fn recommend(&self, history: &CustomerHistory, k: usize) -> Result<RankedBasket> {
        self.generate(history, k, &[])
    }
}

//! Dynamic sequence splitting.
//!
//! A customer history is flattened into `(category, day)` tokens. A pivot day
//! is drawn near a uniformly sampled time; tokens strictly before the pivot
//! day form the encoder context and the first `n_dec` tokens on or after it
//! form the decoder targets. Redrawing the pivot yields many samples per
//! customer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CategoryId, CategoryVocab, CustomerHistory, Dataset};
use crate::error::{Error, Result};
use crate::numeric::Mask;

const PIVOT_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<CategoryId>,
    /// Days relative to the pivot day.
    pub day_offsets: Vec<i64>,
    /// `true` for real tokens, `false` for PAD.
    pub pad_mask: Vec<bool>,
}

impl TokenSequence {
    fn with_capacity(n: usize) -> Self {
        Self {
            tokens: Vec::with_capacity(n),
            day_offsets: Vec::with_capacity(n),
            pad_mask: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, token: CategoryId, offset: i64, real: bool) {
        self.tokens.push(token);
        self.day_offsets.push(offset);
        self.pad_mask.push(real);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    /// Appends PAD up to `n` positions.
    pub fn pad_to(&mut self, n: usize, pad: CategoryId) {
        while self.len() < n {
            self.push(pad, 0, false);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    /// History before the pivot day, padded to `n_enc`.
    pub enc: TokenSequence,
    /// BOS followed by the targets shifted right by one, padded to `n_dec`.
    pub dec_input: TokenSequence,
    /// Targets with PAD where unfilled, length `n_dec`.
    pub dec_target: Vec<CategoryId>,
    pub pivot_day: i64,
}

impl TrainingSample {
    /// Cross-entropy targets, `None` for padding.
    pub fn loss_targets(&self, pad: CategoryId) -> Vec<Option<usize>> {
        self.dec_target
            .iter()
            .map(|&t| (t != pad).then_some(t))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_enc: usize,
    pub n_dec: usize,
    /// Shuffle tokens within each session instead of ascending id order.
    pub shuffle_within_session: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_enc: 64,
            n_dec: 16,
            shuffle_within_session: false,
        }
    }
}

/// Tokens of every session dated on or before `upto_day`, ordered by day and
/// then ascending id, or a seeded shuffle within each session.
pub fn flatten_history(history: &CustomerHistory, upto_day: i64, shuffle_seed: Option<u64>) -> Vec<(CategoryId, i64)> {
    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = Vec::new();
    for s in history.sessions().iter().take_while(|s| s.day <= upto_day) {
        let start = out.len();
        out.extend(s.categories().iter().map(|&c| (c, s.day)));
        if let Some(rng) = rng.as_mut() {
            out[start..].shuffle(rng);
        }
    }
    out
}

/// Pivot day for a sampled time `t`: the nearest session day, later day on
/// ties. `None` when that session has nothing before it.
pub fn pivot_for_time(history: &CustomerHistory, t: f64) -> Option<i64> {
    let sessions = history.sessions();
    let mut best = 0;
    for (i, s) in sessions.iter().enumerate() {
        if (t - s.day as f64).abs() <= (t - sessions[best].day as f64).abs() {
            best = i;
        }
    }
    (best >= 1).then(|| sessions[best].day)
}

pub fn sample_pivot_time(history: &CustomerHistory, rng: &mut impl Rng) -> Result<i64> {
    if history.len() < 2 {
        return Err(Error::InsufficientHistory {
            customer: history.customer_id.clone(),
            sessions: history.len(),
            needed: 2,
        });
    }
    let first = history.first_day().expect("non-empty") as f64;
    let last = history.last_day().expect("non-empty") as f64;
    for _ in 0..PIVOT_RETRIES {
        let t = rng.random_range(first..=last);
        if let Some(day) = pivot_for_time(history, t) {
            return Ok(day);
        }
    }
    Ok(history.sessions()[1].day)
}

pub fn split_at_pivot(
    history: &CustomerHistory,
    pivot_day: i64,
    cfg: &SamplerConfig,
    vocab: &CategoryVocab,
    shuffle_seed: Option<u64>,
) -> Result<TrainingSample> {
    let tokens = flatten_history(history, i64::MAX, shuffle_seed);
    let split = tokens.partition_point(|&(_, d)| d < pivot_day);
    let (past, future) = tokens.split_at(split);
    if past.is_empty() {
        return Err(Error::EmptyEncoder { pivot_day });
    }
    let past = &past[past.len().saturating_sub(cfg.n_enc)..];
    let future = &future[..future.len().min(cfg.n_dec)];

    let mut enc = TokenSequence::with_capacity(cfg.n_enc);
    for &(c, d) in past {
        enc.push(c, d - pivot_day, true);
    }
    enc.pad_to(cfg.n_enc, vocab.pad());

    let mut dec_target: Vec<CategoryId> = future.iter().map(|&(c, _)| c).collect();
    dec_target.resize(cfg.n_dec, vocab.pad());

    let mut dec_input = TokenSequence::with_capacity(cfg.n_dec);
    dec_input.push(vocab.bos(), 0, true);
    for &(c, d) in future.iter().take(cfg.n_dec.saturating_sub(1)) {
        dec_input.push(c, d - pivot_day, true);
    }
    dec_input.pad_to(cfg.n_dec, vocab.pad());

    Ok(TrainingSample {
        enc,
        dec_input,
        dec_target,
        pivot_day,
    })
}

/// Sample whose decoder targets are exactly the history's last session.
pub fn last_session_sample(history: &CustomerHistory, cfg: &SamplerConfig, vocab: &CategoryVocab) -> Result<TrainingSample> {
    let pivot = history.last_day().ok_or(Error::EmptyHistory)?;
    split_at_pivot(history, pivot, cfg, vocab, None)
}

/// Inference input: the whole history on the encoder side, pivot one day
/// after the last session, decoder fed BOS plus any already-chosen
/// categories (dated on the pivot day).
pub fn inference_sample(
    history: &CustomerHistory,
    prefix: &[CategoryId],
    cfg: &SamplerConfig,
    vocab: &CategoryVocab,
) -> Result<TrainingSample> {
    let pivot_day = history.last_day().ok_or(Error::EmptyHistory)? + 1;
    let tokens = flatten_history(history, i64::MAX, None);
    let past = &tokens[tokens.len().saturating_sub(cfg.n_enc)..];
    let mut enc = TokenSequence::with_capacity(cfg.n_enc);
    for &(c, d) in past {
        enc.push(c, d - pivot_day, true);
    }
    enc.pad_to(cfg.n_enc, vocab.pad());

    if prefix.len() >= cfg.n_dec {
        return Err(Error::InvalidConfig(format!(
            "decoder prefix of {} tokens does not fit n_dec = {}",
            prefix.len(),
            cfg.n_dec
        )));
    }
    let mut dec_input = TokenSequence::with_capacity(cfg.n_dec);
    dec_input.push(vocab.bos(), 0, true);
    for &c in prefix {
        dec_input.push(c, 0, true);
    }
    dec_input.pad_to(cfg.n_dec, vocab.pad());
    let mut dec_target = prefix.to_vec();
    dec_target.resize(cfg.n_dec, vocab.pad());

    Ok(TrainingSample {
        enc,
        dec_input,
        dec_target,
        pivot_day,
    })
}

/// Attention masks for one padded sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleMasks {
    /// `n_enc × n_enc`: keys restricted to real encoder tokens.
    pub encoder: Mask,
    /// `n_dec × n_dec`: `[i][j]` iff `j ≤ i` and both positions are real.
    pub causal: Mask,
    /// `n_dec × n_enc`: keys restricted to real encoder tokens.
    pub cross: Mask,
}

impl SampleMasks {
    pub fn new(sample: &TrainingSample) -> Self {
        let (ne, nd) = (sample.enc.len(), sample.dec_input.len());
        let enc_real = &sample.enc.pad_mask;
        let dec_real = &sample.dec_input.pad_mask;
        Self {
            encoder: Mask::from_fn(ne, ne, |_, j| enc_real[j]),
            causal: Mask::from_fn(nd, nd, |i, j| j <= i && dec_real[i] && dec_real[j]),
            cross: Mask::from_fn(nd, ne, |_, j| enc_real[j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub samples: Vec<TrainingSample>,
    pub masks: Vec<SampleMasks>,
}

impl Batch {
    pub fn new(samples: Vec<TrainingSample>) -> Self {
        let masks = samples.iter().map(SampleMasks::new).collect();
        Self { samples, masks }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of non-PAD decoder targets across the batch.
    pub fn target_tokens(&self, pad: CategoryId) -> usize {
        self.samples
            .iter()
            .map(|s| s.dec_target.iter().filter(|&&t| t != pad).count())
            .sum()
    }
}

/// Draws `samples_per_customer` pivots for every customer with at least two
/// sessions, shuffles all samples and groups them into batches.
pub fn make_epoch(
    train: &Dataset,
    samples_per_customer: usize,
    cfg: &SamplerConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for h in train.customers.iter().filter(|h| h.len() >= 2) {
        for _ in 0..samples_per_customer {
            let pivot = sample_pivot_time(h, &mut rng)?;
            let shuffle = cfg.shuffle_within_session.then(|| rng.random::<u64>());
            samples.push(split_at_pivot(h, pivot, cfg, &train.vocab, shuffle)?);
        }
    }
    samples.shuffle(&mut rng);
    let mut batches = Vec::with_capacity(samples.len().div_ceil(batch_size));
    let mut it = samples.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(Batch::new(it.by_ref().take(batch_size).collect()));
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Session;

    fn vocab() -> CategoryVocab {
        CategoryVocab::numbered(5).unwrap()
    }

    fn history(sessions: &[(i64, &[usize])]) -> CustomerHistory {
        CustomerHistory::new(
            "c",
            sessions
                .iter()
                .map(|(d, c)| Session::new(*d, c.iter().copied()).unwrap())
                .collect(),
        )
    }

    #[test]
    fn flatten_canonical_order_and_cutoff() {
        let h = history(&[(1, &[3, 1]), (5, &[2])]);
        assert_eq!(flatten_history(&h, i64::MAX, None), vec![(1, 1), (3, 1), (2, 5)]);
        assert_eq!(flatten_history(&h, 1, None), vec![(1, 1), (3, 1)]);
    }

    #[test]
    fn flatten_shuffle_deterministic() {
        let h = history(&[(0, &[0, 1, 2, 3, 4]), (2, &[0, 1, 2, 3, 4])]);
        let a = flatten_history(&h, i64::MAX, Some(9));
        assert_eq!(a, flatten_history(&h, i64::MAX, Some(9)));
        // still grouped by day
        assert!(a.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn pivot_nearest_and_eligibility() {
        let h = history(&[(0, &[0]), (10, &[1])]);
        // nearest is day 0, which has nothing before it
        assert_eq!(pivot_for_time(&h, 3.9), None);
        assert_eq!(pivot_for_time(&h, 5.0), Some(10));
        let h3 = history(&[(0, &[0]), (10, &[1]), (20, &[2])]);
        assert_eq!(pivot_for_time(&h3, 11.0), Some(10));
        assert_eq!(pivot_for_time(&h3, 15.0), Some(20));
    }

    #[test]
    fn pivot_sampling_eligible_and_errors() {
        let h = history(&[(0, &[0]), (10, &[1])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_pivot_time(&h, &mut rng).unwrap(), 10);
        }
        let single = history(&[(0, &[0])]);
        assert!(sample_pivot_time(&single, &mut rng).is_err());
    }

    #[test]
    fn split_direct_rule() {
        let (a, b, c) = (0, 1, 2);
        let h = history(&[(1, &[a]), (5, &[b]), (9, &[c])]);
        let cfg = SamplerConfig {
            n_enc: 4,
            n_dec: 2,
            shuffle_within_session: false,
        };
        let v = vocab();
        let s = split_at_pivot(&h, 5, &cfg, &v, None).unwrap();
        assert_eq!(&s.enc.tokens[..1], &[a]);
        assert_eq!(s.enc.real_len(), 1);
        assert_eq!(s.enc.day_offsets[0], -4);
        assert_eq!(s.dec_target, vec![b, c]);
        assert_eq!(s.dec_input.tokens, vec![v.bos(), b]);
        assert_eq!(s.dec_input.day_offsets, vec![0, 0]);

        let wide = SamplerConfig { n_dec: 4, ..cfg };
        let s = split_at_pivot(&h, 5, &wide, &v, None).unwrap();
        assert_eq!(s.dec_target, vec![b, c, v.pad(), v.pad()]);
        assert_eq!(s.loss_targets(v.pad()), vec![Some(b), Some(c), None, None]);
        assert_eq!(s.dec_input.tokens, vec![v.bos(), b, c, v.pad()]);
        assert_eq!(s.dec_input.day_offsets[..3], [0, 0, 4]);
        assert_eq!(s.dec_input.pad_mask, vec![true, true, true, false]);
    }

    #[test]
    fn encoder_keeps_latest() {
        let h = history(&[(1, &[0]), (2, &[1]), (3, &[2]), (4, &[3])]);
        let cfg = SamplerConfig {
            n_enc: 1,
            n_dec: 1,
            shuffle_within_session: false,
        };
        let s = split_at_pivot(&h, 4, &cfg, &vocab(), None).unwrap();
        assert_eq!(s.enc.tokens, vec![2]);
        assert_eq!(s.enc.day_offsets, vec![-1]);
    }

    #[test]
    fn empty_encoder_rejected() {
        let h = history(&[(1, &[0]), (2, &[1])]);
        let err = split_at_pivot(&h, 1, &SamplerConfig::default(), &vocab(), None).unwrap_err();
        assert!(matches!(err, Error::EmptyEncoder { pivot_day: 1 }));
    }

    #[test]
    fn inference_geometry() {
        let h = history(&[(1, &[0]), (4, &[1, 2])]);
        let cfg = SamplerConfig {
            n_enc: 8,
            n_dec: 3,
            shuffle_within_session: false,
        };
        let v = vocab();
        let s = inference_sample(&h, &[2], &cfg, &v).unwrap();
        assert_eq!(s.pivot_day, 5);
        assert_eq!(&s.enc.day_offsets[..3], &[-4, -1, -1]);
        assert_eq!(s.dec_input.tokens, vec![v.bos(), 2, v.pad()]);
        assert!(inference_sample(&h, &[0, 1, 2], &cfg, &v).is_err());
    }

    #[test]
    fn masks_shape_and_causality() {
        let h = history(&[(1, &[0]), (5, &[1])]);
        let cfg = SamplerConfig {
            n_enc: 3,
            n_dec: 3,
            shuffle_within_session: false,
        };
        let s = split_at_pivot(&h, 5, &cfg, &vocab(), None).unwrap();
        let m = SampleMasks::new(&s);
        assert_eq!(m.encoder.shape(), (3, 3));
        assert_eq!(m.cross.shape(), (3, 3));
        // dec_input = [BOS, b, PAD]
        assert!(m.causal.get(1, 0) && m.causal.get(1, 1) && !m.causal.get(0, 1));
        assert!(!m.causal.get(2, 2) && !m.causal.get(2, 0));
        assert!(m.encoder.get(2, 0) && !m.encoder.get(0, 1));
    }

    #[test]
    fn epoch_batch_sizes_and_determinism() {
        let customers = (0..3)
            .map(|i| {
                CustomerHistory::new(
                    format!("c{i}"),
                    vec![Session::new(0, [i]).unwrap(), Session::new(3, [i + 1]).unwrap()],
                )
            })
            .collect();
        let ds = Dataset::new(vocab(), customers).unwrap();
        let cfg = SamplerConfig {
            n_enc: 4,
            n_dec: 2,
            shuffle_within_session: false,
        };
        let batches = make_epoch(&ds, 2, &cfg, 4, 1).unwrap();
        assert_eq!(batches.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 2]);
        assert_eq!(batches, make_epoch(&ds, 2, &cfg, 4, 1).unwrap());

        let single = make_epoch(&ds, 1, &cfg, 1, 1).unwrap();
        assert_eq!(single.len(), 3);
        for b in &single {
            assert_eq!(b.masks[0], SampleMasks::new(&b.samples[0]));
        }
        assert!(make_epoch(&ds, 1, &cfg, 0, 1).is_err());
    }
}

//! The encoder-decoder network and its training objective.
//!
//! Each encoder block is self-attention over real history tokens followed by
//! a position-wise feed-forward network. Each decoder block adds causal
//! self-attention and cross-attention over the encoder output. Sublayers are
//! wrapped as `LayerNorm(x + Dropout(sublayer(x)))`.

mod config;
mod layers;
mod params;
mod positional;

pub use config::{ModelConfig, PositionalStrategy};
pub use layers::{dropout, ffn, multi_head_attention, AttentionWeights, FfnWeights};
pub use params::{Init, Layout, Parameters, TensorSpec};
pub use positional::{
    decoder_positions, encoder_positions, position_row, positional_encoding, sinusoid, table_rows, Position,
    PositionRow,
};

use rand::Rng;

use crate::data::CategoryId;
use crate::error::{Error, Result};
use crate::numeric::{Graph, Mask, Matrix, NodeId, Reduction};
use crate::sampler::{Batch, SampleMasks, TokenSequence, TrainingSample};
use params::{AttentionIdx, FfnIdx, NormIdx};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    layout: Layout,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        Ok(Self { cfg, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn pad(&self) -> CategoryId {
        self.cfg.vocab_size - 2
    }

    pub fn bos(&self) -> CategoryId {
        self.cfg.vocab_size - 1
    }

    pub fn init_params(&self, seed: u64) -> Parameters {
        Parameters::init(&self.layout, seed)
    }

    /// Records every parameter as a tracked leaf, in layout order.
    pub fn register<'p>(&self, g: &mut Graph<'p>, params: &'p Parameters) -> Result<Vec<NodeId>> {
        params.check(&self.layout)?;
        Ok(params.tensors.iter().map(|t| g.param(t)).collect())
    }

    fn attn(leaves: &[NodeId], i: &AttentionIdx) -> AttentionWeights {
        AttentionWeights {
            wq: leaves[i.wq],
            wk: leaves[i.wk],
            wv: leaves[i.wv],
            wo: leaves[i.wo],
        }
    }

    fn ffn_weights(leaves: &[NodeId], i: &FfnIdx) -> FfnWeights {
        FfnWeights {
            w1: leaves[i.w1],
            b1: leaves[i.b1],
            w2: leaves[i.w2],
            b2: leaves[i.b2],
        }
    }

    fn add_norm<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        leaves: &[NodeId],
        x: NodeId,
        sub: NodeId,
        norm: &NormIdx,
        rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let sub = dropout(g, sub, self.cfg.dropout, rng)?;
        let sum = g.add(x, sub)?;
        g.layer_norm(sum, leaves[norm.gamma], leaves[norm.beta], self.cfg.layer_norm_eps)
    }

    /// Category embedding plus position vector per token.
    pub fn embed<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        leaves: &[NodeId],
        seq: &TokenSequence,
        positions: &[Position],
        rng: Option<&mut R>,
    ) -> Result<NodeId> {
        if let Some(&bad) = seq.tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::InvalidToken {
                id: bad,
                vocab_size: self.cfg.vocab_size,
            });
        }
        let tokens = g.gather(leaves[self.layout.embedding], &seq.tokens)?;
        let rows: Vec<PositionRow> = positions.iter().map(|&p| position_row(p, &self.cfg)).collect();
        let pos = match (&rows[..], self.layout.positional) {
            (_, Some(table)) => {
                let idx: Vec<usize> = rows
                    .iter()
                    .map(|r| match r {
                        PositionRow::Table(i) => *i,
                        PositionRow::Fixed(_) => unreachable!("learned strategy"),
                    })
                    .collect();
                g.gather(leaves[table], &idx)?
            }
            (_, None) => {
                let mut m = Matrix::zeros(rows.len(), self.cfg.embed_dim);
                for (r, row) in rows.iter().enumerate() {
                    if let PositionRow::Fixed(v) = row {
                        m.row_mut(r).copy_from_slice(v);
                    }
                }
                g.constant(m)
            }
        };
        let sum = g.add(tokens, pos)?;
        dropout(g, sum, self.cfg.dropout, rng)
    }

    pub fn encode_graph<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        leaves: &[NodeId],
        enc: &TokenSequence,
        mask: &Mask,
        mut rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let positions = encoder_positions(&enc.day_offsets, enc.real_len());
        let mut x = self.embed(g, leaves, enc, &positions, rng.as_deref_mut())?;
        for layer in &self.layout.encoder {
            let a = multi_head_attention(g, x, x, mask, &Self::attn(leaves, &layer.attn), self.cfg.num_heads)?;
            x = self.add_norm(g, leaves, x, a, &layer.norm1, rng.as_deref_mut())?;
            let f = ffn(g, x, &Self::ffn_weights(leaves, &layer.ffn))?;
            x = self.add_norm(g, leaves, x, f, &layer.norm2, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Decoder stack and output head; returns `n_dec × |V|` logits.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_graph<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        leaves: &[NodeId],
        dec_input: &TokenSequence,
        causal: &Mask,
        cross: &Mask,
        memory: NodeId,
        mut rng: Option<&mut R>,
    ) -> Result<NodeId> {
        // padded query rows attend to themselves so no row is empty; they are
        // never attended to by real rows and never scored
        let mut self_mask = causal.clone();
        for (i, &real) in dec_input.pad_mask.iter().enumerate() {
            if !real {
                self_mask.set(i, i, true);
            }
        }
        let positions = decoder_positions(&dec_input.day_offsets);
        let mut y = self.embed(g, leaves, dec_input, &positions, rng.as_deref_mut())?;
        for layer in &self.layout.decoder {
            let s = multi_head_attention(
                g,
                y,
                y,
                &self_mask,
                &Self::attn(leaves, &layer.self_attn),
                self.cfg.num_heads,
            )?;
            y = self.add_norm(g, leaves, y, s, &layer.norm1, rng.as_deref_mut())?;
            let c = multi_head_attention(
                g,
                y,
                memory,
                cross,
                &Self::attn(leaves, &layer.cross_attn),
                self.cfg.num_heads,
            )?;
            y = self.add_norm(g, leaves, y, c, &layer.norm2, rng.as_deref_mut())?;
            let f = ffn(g, y, &Self::ffn_weights(leaves, &layer.ffn))?;
            y = self.add_norm(g, leaves, y, f, &layer.norm3, rng.as_deref_mut())?;
        }
        let out = g.matmul(y, leaves[self.layout.out_w])?;
        g.add_row(out, leaves[self.layout.out_b])
    }

    pub fn forward_graph<R: Rng>(
        &self,
        g: &mut Graph<'_>,
        leaves: &[NodeId],
        sample: &TrainingSample,
        masks: &SampleMasks,
        mut rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let memory = self.encode_graph(g, leaves, &sample.enc, &masks.encoder, rng.as_deref_mut())?;
        self.decode_graph(g, leaves, &sample.dec_input, &masks.causal, &masks.cross, memory, rng)
    }

    /// Eval-mode encoder output.
    pub fn encode(&self, params: &Parameters, sample: &TrainingSample) -> Result<Matrix> {
        let masks = SampleMasks::new(sample);
        let mut g = Graph::new();
        let leaves = self.register(&mut g, params)?;
        let m = self.encode_graph::<NoRng>(&mut g, &leaves, &sample.enc, &masks.encoder, None)?;
        Ok(g.value(m).clone())
    }

    /// Eval-mode decoder logits against a precomputed encoder output.
    pub fn decode(&self, params: &Parameters, sample: &TrainingSample, memory: &Matrix) -> Result<Matrix> {
        let masks = SampleMasks::new(sample);
        let mut g = Graph::new();
        let leaves = self.register(&mut g, params)?;
        let mem = g.constant(memory.clone());
        let out = self.decode_graph::<NoRng>(
            &mut g,
            &leaves,
            &sample.dec_input,
            &masks.causal,
            &masks.cross,
            mem,
            None,
        )?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode logits for one sample.
    pub fn logits(&self, params: &Parameters, sample: &TrainingSample) -> Result<Matrix> {
        let masks = SampleMasks::new(sample);
        let mut g = Graph::new();
        let leaves = self.register(&mut g, params)?;
        let out = self.forward_graph::<NoRng>(&mut g, &leaves, sample, &masks, None)?;
        Ok(g.value(out).clone())
    }

    fn batch_graph<'p, R: Rng>(
        &self,
        g: &mut Graph<'p>,
        params: &'p Parameters,
        batch: &Batch,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let leaves = self.register(g, params)?;
        let n_tokens = batch.target_tokens(self.pad());
        if n_tokens == 0 {
            return Err(Error::AllPadded);
        }
        let mut total: Option<NodeId> = None;
        for (sample, masks) in batch.samples.iter().zip(&batch.masks) {
            let logits = self.forward_graph(g, &leaves, sample, masks, rng.as_deref_mut())?;
            let ce = g.cross_entropy(logits, &sample.loss_targets(self.pad()), Reduction::Sum)?;
            total = Some(match total {
                Some(t) => g.add(t, ce)?,
                None => ce,
            });
        }
        let total = total.ok_or(Error::AllPadded)?;
        Ok((leaves, g.scale(total, 1.0 / n_tokens as f64)))
    }

    /// Mean cross-entropy over every non-PAD target in the batch, eval mode.
    pub fn batch_loss(&self, params: &Parameters, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let (_, loss) = self.batch_graph::<NoRng>(&mut g, params, batch, None)?;
        Ok(g.scalar(loss))
    }

    /// Batch loss and its gradient for every parameter tensor. Dropout is
    /// active iff `rng` is given.
    pub fn batch_gradients<R: Rng>(
        &self,
        params: &Parameters,
        batch: &Batch,
        rng: Option<&mut R>,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let (leaves, loss) = self.batch_graph(&mut g, params, batch, rng)?;
        let grads = g.backward(loss)?;
        let out = leaves
            .iter()
            .zip(&params.tensors)
            .map(|(&id, t)| grads.get_or_zeros(id, t.shape()))
            .collect();
        Ok((g.scalar(loss), out))
    }
}

/// Mean cross-entropy of `logits` rows against targets; `None` rows skipped.
pub fn sequence_loss(logits: &Matrix, targets: &[Option<usize>]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = g.cross_entropy(l, targets, Reduction::Mean)?;
    Ok(g.scalar(loss))
}

/// Placeholder RNG type for eval-mode calls that pass `None`.
pub type NoRng = rand_chacha::ChaCha8Rng;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CategoryVocab, CustomerHistory, Session};
    use crate::sampler::{split_at_pivot, SamplerConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(strategy: PositionalStrategy) -> Model {
        Model::new(ModelConfig {
            vocab_size: 7,
            embed_dim: 8,
            num_heads: 2,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            ffn_dim: 12,
            dropout: 0.1,
            positional: strategy,
            clip_days: 30,
            n_enc: 6,
            n_dec: 4,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn sample(model: &Model) -> TrainingSample {
        let vocab = CategoryVocab::numbered(5).unwrap();
        let h = CustomerHistory::new(
            "c",
            vec![
                Session::new(0, [0, 1]).unwrap(),
                Session::new(4, [2]).unwrap(),
                Session::new(9, [3, 4]).unwrap(),
            ],
        );
        let cfg = SamplerConfig {
            n_enc: model.config().n_enc,
            n_dec: model.config().n_dec,
            shuffle_within_session: false,
        };
        split_at_pivot(&h, 4, &cfg, &vocab, None).unwrap()
    }

    #[test]
    fn shapes_for_every_strategy() {
        for s in PositionalStrategy::ALL {
            let m = tiny(s);
            let p = m.init_params(1);
            let smp = sample(&m);
            assert_eq!(m.encode(&p, &smp).unwrap().shape(), (6, 8), "{s}");
            assert_eq!(m.logits(&p, &smp).unwrap().shape(), (4, 7), "{s}");
        }
    }

    #[test]
    fn zero_layers_memory_is_embedding() {
        let m = Model::new(ModelConfig {
            num_encoder_layers: 0,
            ..tiny(PositionalStrategy::RelativeDays).config().clone()
        })
        .unwrap();
        let p = m.init_params(2);
        let smp = sample(&m);
        let memory = m.encode(&p, &smp).unwrap();
        let emb = p.get("category_embedding").unwrap();
        let table = p.get("positional_table").unwrap();
        for (i, (&t, &d)) in smp.enc.tokens.iter().zip(&smp.enc.day_offsets).enumerate() {
            let row = (d.clamp(-30, 30) + 30) as usize;
            for c in 0..8 {
                assert_eq!(memory.get(i, c), emb.get(t, c) + table.get(row, c));
            }
        }
    }

    #[test]
    fn pad_row_plus_position() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let mut p = m.init_params(3);
        let pad = m.pad();
        p.get_mut("category_embedding").unwrap().row_mut(pad).fill(0.0);
        let seq = TokenSequence {
            tokens: vec![pad],
            day_offsets: vec![0],
            pad_mask: vec![false],
        };
        let mut g = Graph::new();
        let leaves = m.register(&mut g, &p).unwrap();
        let e = m.embed::<NoRng>(&mut g, &leaves, &seq, &decoder_positions(&[0]), None).unwrap();
        assert_eq!(g.value(e).row(0), p.get("positional_table").unwrap().row(30));
    }

    #[test]
    fn single_token_zero_positions() {
        let m = tiny(PositionalStrategy::LearnedAbs);
        let mut p = m.init_params(3);
        p.get_mut("positional_table").unwrap().data_mut().fill(0.0);
        let seq = TokenSequence {
            tokens: vec![2],
            day_offsets: vec![-3],
            pad_mask: vec![true],
        };
        let mut g = Graph::new();
        let leaves = m.register(&mut g, &p).unwrap();
        let e = m.embed::<NoRng>(&mut g, &leaves, &seq, &encoder_positions(&[-3], 1), None).unwrap();
        assert_eq!(g.value(e).row(0), p.get("category_embedding").unwrap().row(2));
    }

    #[test]
    fn invalid_token_rejected() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let p = m.init_params(0);
        let mut smp = sample(&m);
        smp.enc.tokens[0] = 99;
        assert!(matches!(m.logits(&p, &smp), Err(Error::InvalidToken { id: 99, .. })));
    }

    #[test]
    fn eval_is_deterministic_and_training_is_not() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let p = m.init_params(4);
        let smp = sample(&m);
        assert_eq!(m.logits(&p, &smp).unwrap(), m.logits(&p, &smp).unwrap());
        let batch = Batch::new(vec![smp]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = m.batch_gradients(&p, &batch, Some(&mut rng)).unwrap();
        let (b, _) = m.batch_gradients(&p, &batch, Some(&mut rng)).unwrap();
        assert_ne!(a, b);
        let (c, _) = m.batch_gradients::<NoRng>(&p, &batch, None).unwrap();
        assert_eq!(c, m.batch_loss(&p, &batch).unwrap());
    }

    #[test]
    fn decoder_causality() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let p = m.init_params(5);
        let smp = sample(&m);
        let base = m.logits(&p, &smp).unwrap();
        let mut other = smp.clone();
        other.dec_input.tokens[2] = 0;
        other.dec_input.day_offsets[2] = 17;
        let changed = m.logits(&p, &other).unwrap();
        for i in 0..2 {
            assert_eq!(base.row(i), changed.row(i));
        }
        assert_ne!(base.row(2), changed.row(2));
    }

    #[test]
    fn memory_is_live() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let p = m.init_params(6);
        let smp = sample(&m);
        let memory = m.encode(&p, &smp).unwrap();
        let base = m.decode(&p, &smp, &memory).unwrap();
        assert_eq!(base, m.logits(&p, &smp).unwrap());
        let bumped = memory.map(|v| v + 0.5 * v.sin());
        assert!(m.decode(&p, &smp, &bumped).unwrap().max_abs_diff(&base) > 0.0);
    }

    #[test]
    fn loss_examples() {
        let uniform = Matrix::filled(1, 7, 0.3);
        assert!((sequence_loss(&uniform, &[Some(4)]).unwrap() - 7f64.ln()).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 80.0] {
            let mut l = Matrix::zeros(1, 5);
            l.set(0, 2, margin);
            let v = sequence_loss(&l, &[Some(2)]).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-30);

        let l = Matrix::from_rows(&[&[0.1, 2.0, -1.0], &[3.0, 0.0, 0.5]]);
        let both = sequence_loss(&l, &[Some(1), None]).unwrap();
        let single = sequence_loss(&Matrix::from_rows(&[&[0.1, 2.0, -1.0]]), &[Some(1)]).unwrap();
        assert_eq!(both, single);
        assert!(matches!(sequence_loss(&l, &[None, None]), Err(Error::AllPadded)));
    }

    #[test]
    fn pad_suffix_never_reaches_real_rows() {
        let m = tiny(PositionalStrategy::RelativeDays);
        let p = m.init_params(7);
        let short = sample(&m);
        let real = short.enc.real_len();
        let mut long = short.clone();
        for i in real..long.enc.len() {
            long.enc.day_offsets[i] = -(i as i64) * 5;
        }
        let a = m.encode(&p, &short).unwrap();
        let b = m.encode(&p, &long).unwrap();
        for i in 0..real {
            assert_eq!(a.row(i), b.row(i));
        }
        assert_eq!(m.logits(&p, &short).unwrap(), m.logits(&p, &long).unwrap());
    }

    #[test]
    fn every_tensor_receives_gradient() {
        let m = Model::new(ModelConfig {
            n_enc: 8,
            n_dec: 4,
            ..ModelConfig::default()
        })
        .unwrap();
        let p = m.init_params(8);
        let smp = sample(&m);
        let mut other = smp.clone();
        other.enc.day_offsets.iter_mut().for_each(|d| *d = (*d - 3).min(-1));
        let batch = Batch::new(vec![smp, other]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, grads) = m.batch_gradients(&p, &batch, Some(&mut rng)).unwrap();
        for (name, g) in p.names.iter().zip(&grads) {
            assert!(g.data().iter().any(|&v| v != 0.0), "{name}");
        }
    }

    #[test]
    fn tiny_config_matches_finite_differences() {
        let m = Model::new(ModelConfig {
            vocab_size: 5,
            embed_dim: 4,
            num_heads: 2,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            ffn_dim: 6,
            dropout: 0.0,
            clip_days: 10,
            n_enc: 4,
            n_dec: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let vocab = CategoryVocab::numbered(3).unwrap();
        let h = CustomerHistory::new(
            "c",
            vec![
                Session::new(0, [0, 2]).unwrap(),
                Session::new(3, [1]).unwrap(),
                Session::new(5, [0, 1]).unwrap(),
            ],
        );
        let cfg = SamplerConfig {
            n_enc: 4,
            n_dec: 3,
            shuffle_within_session: false,
        };
        let batch = Batch::new(vec![split_at_pivot(&h, 3, &cfg, &vocab, None).unwrap()]);
        let mut p = m.init_params(9);
        // random norm and bias values so no tensor sits at a symmetric point
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in &mut p.tensors {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
        let (_, grads) = m.batch_gradients::<NoRng>(&p, &batch, None).unwrap();
        let h = 1e-5;
        for ti in 0..p.tensors.len() {
            let mut numeric = vec![0.0; p.tensors[ti].len()];
            for (k, slot) in numeric.iter_mut().enumerate() {
                let orig = p.tensors[ti].data()[k];
                p.tensors[ti].data_mut()[k] = orig + h;
                let up = m.batch_loss(&p, &batch).unwrap();
                p.tensors[ti].data_mut()[k] = orig - h;
                let down = m.batch_loss(&p, &batch).unwrap();
                p.tensors[ti].data_mut()[k] = orig;
                *slot = (up - down) / (2.0 * h);
            }
            let diff: f64 = numeric.iter().zip(grads[ti].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = numeric.iter().map(|a| a * a).sum::<f64>().sqrt().max(grads[ti].squared_norm().sqrt());
            if scale > 1e-9 {
                assert!(diff / scale < 1e-4, "{} rel err {}", p.names[ti], diff / scale);
            }
        }
    }
}

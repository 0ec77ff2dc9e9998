use super::config::{ModelConfig, PositionalStrategy};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Where a token sits, in every coordinate system a strategy might use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    /// Days relative to the pivot day.
    pub day_offset: i64,
    /// Absolute index within its sequence.
    pub index: usize,
    /// Sequence index counted from the pivot: the last encoder token is −1,
    /// the first decoder token is 0.
    pub relative_index: i64,
}

/// A position resolves either to a row of the learned table or to a fixed
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionRow {
    Table(usize),
    Fixed(Vec<f64>),
}

fn week_clip(cfg: &ModelConfig) -> i64 {
    (cfg.clip_days + 6) / 7
}

/// Rows in the learned positional table, zero for fixed strategies.
pub fn table_rows(cfg: &ModelConfig) -> usize {
    match cfg.positional {
        PositionalStrategy::RelativeDays => (2 * cfg.clip_days + 1) as usize,
        PositionalStrategy::LearnedAbs => cfg.n_enc.max(cfg.n_dec),
        PositionalStrategy::Weekly => (2 * week_clip(cfg) + 1) as usize,
        PositionalStrategy::SequentialRel => cfg.n_enc + cfg.n_dec,
        PositionalStrategy::SinusoidalAbs | PositionalStrategy::SigmoidAbs => 0,
    }
}

/// `[sin(p/10000^(0/d)), cos(p/10000^(0/d)), sin(p/10000^(2/d)), ...]`
pub fn sinusoid(p: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let pair = (k / 2) * 2;
            let angle = p / 10000f64.powf(pair as f64 / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

pub fn position_row(pos: Position, cfg: &ModelConfig) -> PositionRow {
    let clip = |v: i64, c: i64| v.clamp(-c, c) + c;
    match cfg.positional {
        PositionalStrategy::RelativeDays => PositionRow::Table(clip(pos.day_offset, cfg.clip_days) as usize),
        PositionalStrategy::Weekly => {
            let c = week_clip(cfg);
            PositionRow::Table(clip(pos.day_offset.div_euclid(7), c) as usize)
        }
        PositionalStrategy::LearnedAbs => PositionRow::Table(pos.index.min(table_rows(cfg) - 1)),
        PositionalStrategy::SequentialRel => {
            let max = (cfg.n_enc + cfg.n_dec - 1) as i64;
            PositionRow::Table((pos.relative_index + cfg.n_enc as i64).clamp(0, max) as usize)
        }
        PositionalStrategy::SinusoidalAbs => PositionRow::Fixed(sinusoid(pos.index as f64, cfg.embed_dim)),
        PositionalStrategy::SigmoidAbs => {
            let s = 1.0 / (1.0 + (-(pos.day_offset as f64) / cfg.sigmoid_tau).exp());
            PositionRow::Fixed(sinusoid(2.0 * s * cfg.sigmoid_scale, cfg.embed_dim))
        }
    }
}

/// Position vector for one token. Learned strategies read from `table`.
pub fn positional_encoding(pos: Position, cfg: &ModelConfig, table: Option<&Matrix>) -> Result<Vec<f64>> {
    match position_row(pos, cfg) {
        PositionRow::Fixed(v) => Ok(v),
        PositionRow::Table(i) => {
            let t = table.ok_or_else(|| {
                Error::InvalidConfig(format!("{} needs a learned position table", cfg.positional))
            })?;
            if i >= t.rows() {
                return Err(Error::InvalidToken {
                    id: i,
                    vocab_size: t.rows(),
                });
            }
            Ok(t.row(i).to_vec())
        }
    }
}

/// Positions of a padded encoder sequence with `real_len` leading real tokens.
pub fn encoder_positions(day_offsets: &[i64], real_len: usize) -> Vec<Position> {
    day_offsets
        .iter()
        .enumerate()
        .map(|(i, &d)| Position {
            day_offset: d,
            index: i,
            relative_index: if i < real_len { i as i64 - real_len as i64 } else { 0 },
        })
        .collect()
}

pub fn decoder_positions(day_offsets: &[i64]) -> Vec<Position> {
    day_offsets
        .iter()
        .enumerate()
        .map(|(i, &d)| Position {
            day_offset: d,
            index: i,
            relative_index: i as i64,
        })
        .collect()
}

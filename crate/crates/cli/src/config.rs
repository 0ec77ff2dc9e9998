//! Flat run configuration: defaults < `--config` JSON < command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use trex::data::{ArchetypeMix, SyntheticConfig};
use trex::evalkit::{EvalConfig, GenerationMode};
use trex::model::{ModelConfig, PositionalStrategy};
use trex::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    pub customers: usize,
    pub categories: usize,
    pub min_sessions: usize,
    pub max_sessions: usize,
    pub min_gap_days: i64,
    pub max_gap_days: i64,
    pub archetype: String,
    pub bundle_size: usize,
    pub favorites: usize,
    pub min_favorite_prob: f64,
    pub max_favorite_prob: f64,
    pub background_prob: f64,
    pub min_period: usize,
    pub max_period: usize,
    pub pairs: usize,
    pub pair_prob: f64,

    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub positional: String,
    pub clip_days: i64,
    pub n_enc: usize,
    pub n_dec: usize,
    pub sigmoid_tau: f64,
    pub sigmoid_scale: f64,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub samples_per_customer: usize,
    /// Customers with fewer sessions are dropped before splitting.
    pub eligible_sessions: usize,
    pub val_frac: f64,

    pub system: String,
    pub compare: bool,
    pub ks: Vec<usize>,
    pub rank_r: usize,
    pub mode: String,
    pub threads: usize,

    pub history: Option<String>,
    pub partial: Vec<String>,
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let e = EvalConfig::default();
        Self {
            seed: 0,
            data: None,
            vocab: None,
            out: None,
            checkpoint: None,
            customers: s.customers,
            categories: s.categories,
            min_sessions: s.min_sessions,
            max_sessions: s.max_sessions,
            min_gap_days: s.min_gap_days,
            max_gap_days: s.max_gap_days,
            archetype: s.mix.to_string(),
            bundle_size: s.bundle_size,
            favorites: s.favorites,
            min_favorite_prob: s.min_favorite_prob,
            max_favorite_prob: s.max_favorite_prob,
            background_prob: s.background_prob,
            min_period: s.min_period,
            max_period: s.max_period,
            pairs: s.pairs,
            pair_prob: s.pair_prob,
            embed_dim: m.embed_dim,
            num_heads: m.num_heads,
            num_encoder_layers: m.num_encoder_layers,
            num_decoder_layers: m.num_decoder_layers,
            ffn_dim: m.ffn_dim,
            dropout: m.dropout,
            positional: m.positional.to_string(),
            clip_days: m.clip_days,
            n_enc: m.n_enc,
            n_dec: m.n_dec,
            sigmoid_tau: m.sigmoid_tau,
            sigmoid_scale: m.sigmoid_scale,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            samples_per_customer: t.samples_per_customer,
            eligible_sessions: 3,
            val_frac: 0.1,
            system: "trex".into(),
            compare: false,
            ks: e.ks,
            rank_r: e.rank_r,
            mode: GenerationMode::default().to_string(),
            threads: e.threads,
            history: None,
            partial: Vec::new(),
            k: 10,
        }
    }
}

impl RunConfig {
    pub fn load(config: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = config else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn synthetic(&self) -> Result<SyntheticConfig, CliError> {
        let mix: ArchetypeMix = self.archetype.parse().map_err(CliError::from)?;
        let cfg = SyntheticConfig {
            customers: self.customers,
            categories: self.categories,
            min_sessions: self.min_sessions,
            max_sessions: self.max_sessions,
            min_gap_days: self.min_gap_days,
            max_gap_days: self.max_gap_days,
            mix,
            bundle_size: self.bundle_size,
            favorites: self.favorites,
            min_favorite_prob: self.min_favorite_prob,
            max_favorite_prob: self.max_favorite_prob,
            background_prob: self.background_prob,
            min_period: self.min_period,
            max_period: self.max_period,
            pairs: self.pairs,
            pair_prob: self.pair_prob,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self, vocab_size: usize) -> Result<ModelConfig, CliError> {
        let positional: PositionalStrategy = self.positional.parse().map_err(CliError::from)?;
        let cfg = ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            num_encoder_layers: self.num_encoder_layers,
            num_decoder_layers: self.num_decoder_layers,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            positional,
            clip_days: self.clip_days,
            n_enc: self.n_enc,
            n_dec: self.n_dec,
            sigmoid_tau: self.sigmoid_tau,
            sigmoid_scale: self.sigmoid_scale,
            ..ModelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            samples_per_customer: self.samples_per_customer,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval(&self) -> Result<EvalConfig, CliError> {
        let cfg = EvalConfig {
            ks: self.ks.clone(),
            rank_r: self.rank_r,
            threads: self.threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn generation_mode(&self) -> Result<GenerationMode, CliError> {
        self.mode.parse().map_err(CliError::from)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn input_file<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        let p = path
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--{flag} is required")))?;
        if !p.is_file() {
            return Err(CliError::Usage(format!("{} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Writes the effective configuration as `config.json`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(dir.join("config.json"), json + "\n")?;
        Ok(())
    }
}

macro_rules! apply_flags {
    ($src:expr, $dst:expr; $($f:ident),* $(,)?) => {
        $( if let Some(v) = &$src.$f { $dst.$f = v.clone(); } )*
    };
}

macro_rules! apply_paths {
    ($src:expr, $dst:expr; $($f:ident),* $(,)?) => {
        $( if let Some(v) = &$src.$f { $dst.$f = Some(v.clone()); } )*
    };
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file with the same keys as the flags, in snake_case.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset JSONL.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Vocabulary JSON.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub customers: Option<usize>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub min_sessions: Option<usize>,
    #[arg(long)]
    pub max_sessions: Option<usize>,
    #[arg(long)]
    pub min_gap_days: Option<i64>,
    #[arg(long)]
    pub max_gap_days: Option<i64>,
    /// Weighted archetype mix, e.g. `frequency:1,alternating:2`.
    #[arg(long)]
    pub archetype: Option<String>,
    #[arg(long)]
    pub bundle_size: Option<usize>,
    #[arg(long)]
    pub favorites: Option<usize>,
    #[arg(long)]
    pub min_favorite_prob: Option<f64>,
    #[arg(long)]
    pub max_favorite_prob: Option<f64>,
    #[arg(long)]
    pub background_prob: Option<f64>,
    #[arg(long)]
    pub min_period: Option<usize>,
    #[arg(long)]
    pub max_period: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub pair_prob: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub num_encoder_layers: Option<usize>,
    #[arg(long)]
    pub num_decoder_layers: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub positional: Option<String>,
    #[arg(long)]
    pub clip_days: Option<i64>,
    #[arg(long)]
    pub n_enc: Option<usize>,
    #[arg(long)]
    pub n_dec: Option<usize>,
    #[arg(long)]
    pub sigmoid_tau: Option<f64>,
    #[arg(long)]
    pub sigmoid_scale: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub samples_per_customer: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub eligible_sessions: Option<usize>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// `trex` or `ptop`.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also evaluate the other system on the same test pairs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub compare: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub rank_r: Option<usize>,
    /// `autoregressive` or `one_shot`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// History file or inline JSON object.
    #[arg(long)]
    pub history: Option<String>,
    /// Categories already in the basket.
    #[arg(long, value_delimiter = ',')]
    pub partial: Option<Vec<String>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        apply_flags!(self, cfg; seed);
        apply_paths!(self, cfg; out);
        Ok(cfg)
    }
}

impl DataArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_paths!(self, cfg; data, vocab);
    }
}

impl SyntheticArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; customers, categories, min_sessions, max_sessions, min_gap_days,
            max_gap_days, archetype, bundle_size, favorites, min_favorite_prob, max_favorite_prob,
            background_prob, min_period, max_period, pairs, pair_prob);
    }
}

impl ModelArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; embed_dim, num_heads, num_encoder_layers, num_decoder_layers,
            ffn_dim, dropout, positional, clip_days, n_enc, n_dec, sigmoid_tau, sigmoid_scale);
    }
}

impl TrainArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; learning_rate, weight_decay, clip_norm, batch_size, max_epochs,
            patience, samples_per_customer);
    }
}

impl SplitArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; eligible_sessions, val_frac);
    }
}

impl EvalArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; system, compare, ks, rank_r, mode, threads);
        apply_paths!(self, cfg; checkpoint);
    }
}

impl PredictArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        apply_flags!(self, cfg; partial, k, mode);
        apply_paths!(self, cfg; checkpoint, history);
    }
}

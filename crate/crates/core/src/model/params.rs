use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::positional::table_rows;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub attn: AttentionIdx,
    pub norm1: NormIdx,
    pub ffn: FfnIdx,
    pub norm2: NormIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub self_attn: AttentionIdx,
    pub norm1: NormIdx,
    pub cross_attn: AttentionIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
    pub norm3: NormIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±√(6/(fan_in+fan_out)).
    Xavier,
    /// N(0, 0.02).
    Embedding,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// Declared order of every tensor, and where each role lives in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<TensorSpec>,
    pub embedding: usize,
    pub positional: Option<usize>,
    pub encoder: Vec<EncoderLayerIdx>,
    pub decoder: Vec<DecoderLayerIdx>,
    pub out_w: usize,
    pub out_b: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, init: Init| {
            specs.push(TensorSpec { name, rows, cols, init });
            specs.len() - 1
        };
        let (d, f, v) = (cfg.embed_dim, cfg.ffn_dim, cfg.vocab_size);

        let embedding = add("category_embedding".into(), v, d, Init::Embedding);
        let positional = cfg
            .positional
            .is_learned()
            .then(|| add("positional_table".into(), table_rows(cfg), d, Init::Embedding));

        let attention = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| AttentionIdx {
            wq: add(format!("{p}.wq"), d, d, Init::Xavier),
            wk: add(format!("{p}.wk"), d, d, Init::Xavier),
            wv: add(format!("{p}.wv"), d, d, Init::Xavier),
            wo: add(format!("{p}.wo"), d, d, Init::Xavier),
        };
        let norm = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| NormIdx {
            gamma: add(format!("{p}.gamma"), 1, d, Init::Ones),
            beta: add(format!("{p}.beta"), 1, d, Init::Zeros),
        };
        let ffn = |add: &mut dyn FnMut(String, usize, usize, Init) -> usize, p: &str| FfnIdx {
            w1: add(format!("{p}.w1"), d, f, Init::Xavier),
            b1: add(format!("{p}.b1"), 1, f, Init::Zeros),
            w2: add(format!("{p}.w2"), f, d, Init::Xavier),
            b2: add(format!("{p}.b2"), 1, d, Init::Zeros),
        };

        let encoder = (0..cfg.num_encoder_layers)
            .map(|l| EncoderLayerIdx {
                attn: attention(&mut add, &format!("encoder.{l}.self_attn")),
                norm1: norm(&mut add, &format!("encoder.{l}.norm1")),
                ffn: ffn(&mut add, &format!("encoder.{l}.ffn")),
                norm2: norm(&mut add, &format!("encoder.{l}.norm2")),
            })
            .collect();
        let decoder = (0..cfg.num_decoder_layers)
            .map(|l| DecoderLayerIdx {
                self_attn: attention(&mut add, &format!("decoder.{l}.self_attn")),
                norm1: norm(&mut add, &format!("decoder.{l}.norm1")),
                cross_attn: attention(&mut add, &format!("decoder.{l}.cross_attn")),
                norm2: norm(&mut add, &format!("decoder.{l}.norm2")),
                ffn: ffn(&mut add, &format!("decoder.{l}.ffn")),
                norm3: norm(&mut add, &format!("decoder.{l}.norm3")),
            })
            .collect();
        let out_w = add("output.w".into(), d, v, Init::Xavier);
        let out_b = add("output.b".into(), 1, v, Init::Zeros);

        Self {
            specs,
            embedding,
            positional,
            encoder,
            decoder,
            out_w,
            out_b,
        }
    }
}

/// Every learnable tensor, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl Parameters {
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        let tensors = layout
            .specs
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data: Vec<f64> = match s.init {
                    Init::Xavier => {
                        let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..=a)).collect()
                    }
                    Init::Embedding => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Matrix::from_vec(s.rows, s.cols, data).expect("spec shape")
            })
            .collect();
        Self {
            names: layout.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Checks names and shapes against a layout.
    pub fn check(&self, layout: &Layout) -> Result<()> {
        if self.tensors.len() != layout.specs.len() || self.names.len() != layout.specs.len() {
            return Err(Error::InvalidConfig(format!(
                "{} tensors supplied, layout declares {}",
                self.tensors.len(),
                layout.specs.len()
            )));
        }
        for ((t, n), s) in self.tensors.iter().zip(&self.names).zip(&layout.specs) {
            if *n != s.name || t.shape() != (s.rows, s.cols) {
                return Err(Error::InvalidConfig(format!(
                    "tensor {n} {:?} does not match {} {:?}",
                    t.shape(),
                    s.name,
                    (s.rows, s.cols)
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let cfg = ModelConfig::default();
        let layout = Layout::new(&cfg);
        // embedding + positional + 2·12 encoder + 2·18 decoder + 2 output
        assert_eq!(layout.specs.len(), 2 + 24 + 36 + 2);
        assert_eq!(layout.specs[layout.out_w].cols, 37);
    }

    #[test]
    fn full_scale_parameter_count() {
        // the full configuration lands near the fifty-million mark
        let layout = Layout::new(&ModelConfig::full_scale(37));
        let n: usize = layout.specs.iter().map(|s| s.rows * s.cols).sum();
        assert!((40_000_000..60_000_000).contains(&n), "{n}");
    }

    #[test]
    fn init_conventions() {
        let cfg = ModelConfig::default();
        let layout = Layout::new(&cfg);
        let p = Parameters::init(&layout, 0);
        p.check(&layout).unwrap();
        assert!(p.get("encoder.0.norm1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("decoder.1.ffn.b1").unwrap().data().iter().all(|&v| v == 0.0));
        let wq = p.get("encoder.0.self_attn.wq").unwrap();
        let a = (6.0f64 / 64.0).sqrt();
        assert!(wq.data().iter().all(|v| v.abs() <= a));
        let emb = p.get("category_embedding").unwrap();
        let sd = (emb.squared_norm() / emb.len() as f64).sqrt();
        assert!((0.015..0.025).contains(&sd), "{sd}");
        assert_eq!(p, Parameters::init(&layout, 0));
        assert_ne!(p, Parameters::init(&layout, 1));
    }
}

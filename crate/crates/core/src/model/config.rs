use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    /// Embedding dimension `D`.
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads_temporal: usize,
    pub heads_spatial: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Measurement features `P`.
    pub features: usize,
    pub use_positional_encoding: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            enc_layers: 3,
            dec_layers: 3,
            heads_temporal: 4,
            heads_spatial: 2,
            ff_dim: 256,
            dropout: 0.3,
            features: 1,
            use_positional_encoding: false,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.d_model;
        if d == 0 || self.features == 0 || self.ff_dim == 0 {
            bail!(Config, "d_model, features and ff_dim must be positive");
        }
        if self.heads_temporal == 0 || d % self.heads_temporal != 0 {
            bail!(Config, "d_model {d} not divisible by temporal heads {}", self.heads_temporal);
        }
        if self.heads_spatial == 0 || d % self.heads_spatial != 0 {
            bail!(Config, "d_model {d} not divisible by spatial heads {}", self.heads_spatial);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout {} outside [0, 1)", self.dropout);
        }
        if self.use_positional_encoding && d % 2 != 0 {
            bail!(Config, "positional encoding needs an even d_model, got {d}");
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use super::LvlmError;
use crate::corpus::{Symbol, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Image side length in patches; an image contributes `patch_grid²` tokens.
    pub patch_grid: usize,
    pub d_vision: usize,
    /// Output head shares the token embedding table when set.
    pub tied_head: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 8,
            n_heads: 4,
            vocab_size: Vocab::get().len(),
            max_positions: 512,
            patch_grid: 4,
            d_vision: 32,
            tied_head: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Micro configuration used for gradient checks.
    pub fn micro(vocab_size: usize) -> Self {
        Self {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            vocab_size,
            max_positions: 32,
            patch_grid: 2,
            d_vision: 6,
            tied_head: false,
            seed: 1,
        }
    }

    pub fn n_visual(&self) -> usize {
        self.patch_grid * self.patch_grid
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<(), LvlmError> {
        let fail = |m: String| Err(LvlmError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers < 2 {
            return fail(format!("n_layers must be at least 2, got {}", self.n_layers));
        }
        if self.vocab_size < 4 {
            return fail(format!("vocab_size {} is smaller than the special-token count", self.vocab_size));
        }
        if self.patch_grid == 0 || self.d_vision == 0 {
            return fail("patch_grid and d_vision must be positive".into());
        }
        if self.max_positions <= self.n_visual() {
            return fail(format!(
                "max_positions {} leaves no room for text after {} image tokens",
                self.max_positions,
                self.n_visual()
            ));
        }
        Ok(())
    }

    pub fn n_symbols(&self) -> usize {
        Symbol::COUNT
    }
}

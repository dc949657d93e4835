use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
///
/// Defaults are the desk-scale setting (hidden size 64). [`ModelConfig::paper`]
/// gives the full-size network: hidden size 512, two heads, 768-dimensional
/// upstream features. Smoother count and the feed-forward expansion ratio are
/// assumptions (3 and 2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub upstream_dim: usize,
    pub n_mel: usize,
    pub n_extractors: usize,
    pub n_smoothers: usize,
    /// Kernel of the first convolution in each feed-forward block.
    pub ffn_kernel: usize,
    /// Hidden width of the feed-forward block as a multiple of `d_model`.
    pub ffn_expansion: usize,
    pub tgt_kernel: usize,
    pub postnet_layers: usize,
    pub postnet_kernel: usize,
    pub layer_norm_eps: f64,
    /// Reserved; only 0 is accepted.
    pub dropout: f64,
    /// Replace cross-attention memory by one mean-pooled target embedding.
    pub no_cross_attention: bool,
    /// Keep the residual connection around Extractor 1's cross-attention.
    pub keep_extractor1_residual: bool,
    /// Every extractor attends the last target-encoder layer.
    pub flat_wiring: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 2,
            upstream_dim: 768,
            n_mel: 80,
            n_extractors: 3,
            n_smoothers: 3,
            ffn_kernel: 9,
            ffn_expansion: 2,
            tgt_kernel: 5,
            postnet_layers: 5,
            postnet_kernel: 5,
            layer_norm_eps: 1e-5,
            dropout: 0.0,
            no_cross_attention: false,
            keep_extractor1_residual: false,
            flat_wiring: false,
        }
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            d_model: 512,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("upstream_dim", self.upstream_dim),
            ("n_mel", self.n_mel),
            ("n_extractors", self.n_extractors),
            ("ffn_expansion", self.ffn_expansion),
            ("postnet_layers", self.postnet_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        for (name, k) in [
            ("ffn_kernel", self.ffn_kernel),
            ("tgt_kernel", self.tgt_kernel),
            ("postnet_kernel", self.postnet_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.unet_wiring() && self.n_extractors != 3 {
            return Err(Error::config(format!(
                "U-Net wiring pairs exactly three extractors with three encoder taps, got {}",
                self.n_extractors
            )));
        }
        if self.dropout != 0.0 {
            return Err(Error::config("dropout is not supported; set it to 0"));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::config("layer_norm_eps must be positive"));
        }
        Ok(())
    }

    /// Whether extractors are paired with distinct target-encoder taps.
    pub fn unet_wiring(&self) -> bool {
        !self.flat_wiring && !self.no_cross_attention
    }

    /// Number of trainable scalars.
    ///
    /// With `d = d_model`, `M = n_mel`, `D = upstream_dim`, `e = ffn_expansion`:
    ///
    /// ```text
    /// source encoder   D·d + d + d·d + d
    /// target encoder   k_t·M·d + d + 2·(k_t·d·d + d)
    /// attention        4·d·d + 3·d   (no key bias)
    /// layer norm       2·d
    /// feed-forward     k_f·d·e·d + e·d + e·d·d + d
    /// extractor        2·attention + 3·layer norm + feed-forward
    /// smoother         attention + 2·layer norm + feed-forward
    /// projection       d·M + M
    /// postnet          k_p·M·d + d + (L-2)·(k_p·d·d + d) + k_p·d·M + M
    /// ```
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let m = self.n_mel;
        let e = self.ffn_expansion;
        let source = self.upstream_dim * d + d + d * d + d;
        let target = self.tgt_kernel * m * d + d + 2 * (self.tgt_kernel * d * d + d);
        let attention = 4 * d * d + 3 * d;
        let norm = 2 * d;
        let ffn = self.ffn_kernel * d * e * d + e * d + e * d * d + d;
        let extractor = 2 * attention + 3 * norm + ffn;
        let smoother = attention + 2 * norm + ffn;
        let projection = d * m + m;
        let k = self.postnet_kernel;
        let postnet = if self.postnet_layers == 1 {
            k * m * m + m
        } else {
            k * m * d + d + (self.postnet_layers - 2) * (k * d * d + d) + k * d * m + m
        };
        source
            + target
            + self.n_extractors * extractor
            + self.n_smoothers * smoother
            + projection
            + postnet
    }
}

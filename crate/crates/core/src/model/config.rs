use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural hyperparameters. Each backbone stage halves the resolution
/// and each head stage doubles it back, so `backbone_widths.len()` must equal
/// `upsample_stages`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub backbone_widths: Vec<usize>,
    pub neck_channels: usize,
    pub num_mobilevit_blocks: usize,
    /// Token depth inside each MobileViT block.
    pub transformer_dim: usize,
    pub transformer_depth: usize,
    pub attention_heads: usize,
    pub patch_size: usize,
    /// Hidden width of the transformer feed-forward layer, as a multiple of `transformer_dim`.
    pub mlp_ratio: usize,
    pub head_channels: usize,
    pub upsample_stages: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-friendly profile: 96 px input, 12×12 neck.
    pub fn desk() -> Self {
        ModelConfig {
            input_size: 96,
            backbone_widths: vec![16, 32, 64],
            neck_channels: 64,
            num_mobilevit_blocks: 2,
            transformer_dim: 64,
            transformer_depth: 2,
            attention_heads: 4,
            patch_size: 2,
            mlp_ratio: 2,
            head_channels: 32,
            upsample_stages: 3,
        }
    }

    /// Full-resolution profile: 384 px input, 48×48 neck.
    pub fn paper_scale() -> Self {
        ModelConfig {
            input_size: 384,
            backbone_widths: vec![24, 48, 64],
            neck_channels: 96,
            num_mobilevit_blocks: 2,
            transformer_dim: 96,
            transformer_depth: 2,
            attention_heads: 4,
            patch_size: 2,
            mlp_ratio: 2,
            head_channels: 32,
            upsample_stages: 3,
        }
    }

    /// A tiny profile for fast tests.
    pub fn tiny(input_size: usize) -> Self {
        ModelConfig {
            input_size,
            backbone_widths: vec![4, 6, 8],
            neck_channels: 8,
            num_mobilevit_blocks: 1,
            transformer_dim: 8,
            transformer_depth: 1,
            attention_heads: 2,
            patch_size: 2,
            mlp_ratio: 2,
            head_channels: 4,
            upsample_stages: 3,
        }
    }

    /// Total downsampling factor of the backbone.
    pub fn stride(&self) -> usize {
        1 << self.backbone_widths.len()
    }

    /// Side length of the neck feature plane.
    pub fn neck_size(&self) -> usize {
        self.input_size / self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("input_size", self.input_size),
            ("neck_channels", self.neck_channels),
            ("transformer_dim", self.transformer_dim),
            ("attention_heads", self.attention_heads),
            ("patch_size", self.patch_size),
            ("mlp_ratio", self.mlp_ratio),
            ("head_channels", self.head_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.backbone_widths.is_empty() || self.backbone_widths.contains(&0) {
            return bad(format!("backbone_widths must be non-empty and positive, got {:?}", self.backbone_widths));
        }
        if self.upsample_stages != self.backbone_widths.len() {
            return bad(format!(
                "upsample_stages ({}) must equal the number of backbone stages ({}) for output stride 1",
                self.upsample_stages,
                self.backbone_widths.len()
            ));
        }
        let stride = self.stride();
        if self.input_size % stride != 0 {
            return bad(format!("input_size {} is not divisible by the backbone stride {stride}", self.input_size));
        }
        if self.neck_size() % self.patch_size != 0 {
            return bad(format!(
                "input_size {} is not divisible by patch_size x stride = {}",
                self.input_size,
                self.patch_size * stride
            ));
        }
        if self.transformer_dim % self.attention_heads != 0 {
            return bad(format!(
                "attention_heads {} does not divide transformer_dim {}",
                self.attention_heads, self.transformer_dim
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

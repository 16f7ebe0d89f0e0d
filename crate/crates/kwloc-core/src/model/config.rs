//! Architecture descriptions for the four model variants.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Deep non-pooling conv trunk + query attention + MLP detector.
    CnnAttend,
    /// Pooled conv trunk + query attention + MLP detector.
    CnnPoolAttend,
    /// Non-pooling trunk whose last layer emits per-keyword frame scores,
    /// pooled over time by log-sum-exp aggregation.
    Psc,
    /// Pooled trunk + global max pooling + dense head; localisation via
    /// gradient-weighted class activation maps.
    CnnPool,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::CnnAttend => "cnn-attend",
            ModelVariant::CnnPoolAttend => "cnn-poolattend",
            ModelVariant::Psc => "psc",
            ModelVariant::CnnPool => "cnn-pool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cnn-attend" => Ok(ModelVariant::CnnAttend),
            "cnn-poolattend" => Ok(ModelVariant::CnnPoolAttend),
            "psc" => Ok(ModelVariant::Psc),
            "cnn-pool" => Ok(ModelVariant::CnnPool),
            other => Err(CoreError::invalid(format!(
                "unknown model variant '{other}' (expected cnn-attend | cnn-poolattend | psc | cnn-pool)"
            ))),
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, ModelVariant::CnnAttend | ModelVariant::CnnPoolAttend)
    }

    pub fn uses_pooling(self) -> bool {
        matches!(self, ModelVariant::CnnPoolAttend | ModelVariant::CnnPool)
    }
}

/// One convolutional layer: `filters` output channels, odd `width`, and an
/// optional non-overlapping max-pool (`pool` = 1 means none) applied after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub width: usize,
    pub pool: usize,
}

impl ConvSpec {
    pub fn new(filters: usize, width: usize) -> Self {
        ConvSpec {
            filters,
            width,
            pool: 1,
        }
    }

    pub fn pooled(filters: usize, width: usize, pool: usize) -> Self {
        ConvSpec {
            filters,
            width,
            pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    /// Number of feature columns per frame.
    pub input_dim: usize,
    pub conv: Vec<ConvSpec>,
    /// Query embedding dimension; must match the last conv layer's filter
    /// count for attention variants.
    pub embed_dim: usize,
    /// Hidden units of the post-attention MLP detector.
    pub mlp_hidden: usize,
    /// Hidden units of the dense head after global max pooling (cnn-pool).
    pub head_hidden: usize,
    /// When set, the final supervised layer is built this wide and only the
    /// first W outputs are read; when None it is built at exactly W.
    pub wide_final: Option<usize>,
    /// Sharpness r of the log-sum-exp aggregation (psc).
    pub sharpness: f64,
}

/// Named architecture scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size layers as published.
    Paper,
    /// Small layers of the same shape, sized for single-core experiments.
    Desk,
}

impl ModelConfig {
    /// Full-size architecture for a variant. `keyword_count` sizes the
    /// supervised output layer of psc / cnn-pool.
    pub fn paper(variant: ModelVariant, input_dim: usize, keyword_count: usize) -> Self {
        let cfg = match variant {
            ModelVariant::CnnAttend => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::new(96, 9),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(1000, 11),
                ],
                embed_dim: 1000,
                mlp_hidden: 4096,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::Psc => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::new(96, 9),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(96, 11),
                    ConvSpec::new(keyword_count, 11),
                ],
                embed_dim: 0,
                mlp_hidden: 0,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::CnnPoolAttend => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::pooled(64, 9, 3),
                    ConvSpec::pooled(256, 11, 3),
                    ConvSpec::new(1024, 11),
                ],
                embed_dim: 1024,
                mlp_hidden: 4096,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::CnnPool => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::pooled(64, 9, 3),
                    ConvSpec::pooled(256, 11, 3),
                    ConvSpec::new(1024, 11),
                ],
                embed_dim: 0,
                mlp_hidden: 0,
                head_hidden: 4096,
                wide_final: None,
                sharpness: 1.0,
            },
        };
        cfg
    }

    /// Same layer shapes at a fraction of the width; fits a single-core
    /// training budget on the synthetic corpus.
    pub fn desk(variant: ModelVariant, input_dim: usize, keyword_count: usize) -> Self {
        match variant {
            ModelVariant::CnnAttend => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::new(24, 9),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(40, 7),
                ],
                embed_dim: 40,
                mlp_hidden: 64,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::Psc => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::new(24, 9),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(24, 7),
                    ConvSpec::new(keyword_count, 7),
                ],
                embed_dim: 0,
                mlp_hidden: 0,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::CnnPoolAttend => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::pooled(20, 9, 3),
                    ConvSpec::pooled(32, 7, 3),
                    ConvSpec::new(40, 7),
                ],
                embed_dim: 40,
                mlp_hidden: 64,
                head_hidden: 0,
                wide_final: None,
                sharpness: 1.0,
            },
            ModelVariant::CnnPool => ModelConfig {
                variant,
                input_dim,
                conv: vec![
                    ConvSpec::pooled(20, 9, 3),
                    ConvSpec::pooled(32, 7, 3),
                    ConvSpec::new(40, 7),
                ],
                embed_dim: 0,
                mlp_hidden: 0,
                head_hidden: 64,
                wide_final: None,
                sharpness: 1.0,
            },
        }
    }

    pub fn preset(preset: Preset, variant: ModelVariant, input_dim: usize, w: usize) -> Self {
        match preset {
            Preset::Paper => Self::paper(variant, input_dim, w),
            Preset::Desk => Self::desk(variant, input_dim, w),
        }
    }

    /// Width of the supervised final layer (psc last conv / cnn-pool head out).
    pub fn final_width(&self, keyword_count: usize) -> usize {
        self.wide_final.unwrap_or(keyword_count)
    }

    pub fn validate(&self, keyword_count: usize) -> Result<()> {
        if keyword_count == 0 {
            return Err(CoreError::invalid("keyword count must be >= 1"));
        }
        if self.input_dim == 0 {
            return Err(CoreError::invalid("input_dim must be >= 1"));
        }
        if self.conv.is_empty() {
            return Err(CoreError::invalid("at least one conv layer required"));
        }
        for (i, spec) in self.conv.iter().enumerate() {
            if spec.filters == 0 || spec.width == 0 || spec.pool == 0 {
                return Err(CoreError::invalid(format!(
                    "conv layer {i}: filters/width/pool must be positive"
                )));
            }
            if spec.width % 2 == 0 {
                return Err(CoreError::invalid(format!(
                    "conv layer {i}: width must be odd for same padding"
                )));
            }
        }
        if self.sharpness <= 0.0 {
            return Err(CoreError::invalid("sharpness r must be > 0"));
        }
        let last = self.conv.last().unwrap().filters;
        match self.variant {
            ModelVariant::CnnAttend | ModelVariant::CnnPoolAttend => {
                if self.embed_dim != last {
                    return Err(CoreError::invalid(format!(
                        "embed_dim {} must equal last conv filters {last}",
                        self.embed_dim
                    )));
                }
                if self.mlp_hidden == 0 {
                    return Err(CoreError::invalid("mlp_hidden must be >= 1"));
                }
            }
            ModelVariant::Psc => {
                let want = self.final_width(keyword_count);
                if last != want {
                    return Err(CoreError::invalid(format!(
                        "psc last conv layer must have {want} filters, has {last}"
                    )));
                }
                if want < keyword_count {
                    return Err(CoreError::invalid(format!(
                        "wide_final {want} smaller than keyword count {keyword_count}"
                    )));
                }
            }
            ModelVariant::CnnPool => {
                if self.head_hidden == 0 {
                    return Err(CoreError::invalid("head_hidden must be >= 1"));
                }
                if self.final_width(keyword_count) < keyword_count {
                    return Err(CoreError::invalid(
                        "wide_final smaller than keyword count",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Output length of the trunk for an input of `t` frames.
    pub fn trunk_len(&self, t: usize) -> usize {
        let mut len = t;
        for spec in &self.conv {
            if spec.pool > 1 {
                len = len.div_ceil(spec.pool);
            }
        }
        len
    }

    /// Input frames covered by one trunk frame step (product of pool windows).
    pub fn frame_scale(&self) -> usize {
        self.conv.iter().map(|s| s.pool).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_shapes() {
        let a = ModelConfig::paper(ModelVariant::CnnAttend, 13, 67);
        assert_eq!(a.conv.len(), 6);
        assert_eq!(a.conv[0].filters, 96);
        assert_eq!(a.conv[0].width, 9);
        assert_eq!(a.conv[5].filters, 1000);
        assert_eq!(a.embed_dim, 1000);
        assert_eq!(a.mlp_hidden, 4096);
        a.validate(67).unwrap();

        let p = ModelConfig::paper(ModelVariant::CnnPoolAttend, 13, 67);
        assert_eq!(p.conv.len(), 3);
        assert_eq!(p.conv[0].pool, 3);
        assert_eq!(p.conv[1].pool, 3);
        assert_eq!(p.embed_dim, 1024);
        p.validate(67).unwrap();

        let c = ModelConfig::paper(ModelVariant::CnnPool, 13, 67);
        assert_eq!(c.head_hidden, 4096);
        c.validate(67).unwrap();

        let s = ModelConfig::paper(ModelVariant::Psc, 13, 67);
        assert_eq!(s.conv[5].filters, 67);
        s.validate(67).unwrap();
    }

    #[test]
    fn trunk_len_pooling() {
        let c = ModelConfig::paper(ModelVariant::CnnPool, 13, 20);
        assert_eq!(c.trunk_len(27), 3);
        assert_eq!(c.trunk_len(19), 3);
        assert_eq!(c.frame_scale(), 9);
        let a = ModelConfig::paper(ModelVariant::CnnAttend, 13, 20);
        assert_eq!(a.trunk_len(30), 30);
        assert_eq!(a.frame_scale(), 1);
    }

    #[test]
    fn validate_catches_mismatches() {
        let mut a = ModelConfig::desk(ModelVariant::CnnAttend, 13, 20);
        a.embed_dim = 17;
        assert!(a.validate(20).is_err());

        let mut p = ModelConfig::desk(ModelVariant::Psc, 13, 20);
        p.sharpness = 0.0;
        assert!(p.validate(20).is_err());

        let mut even = ModelConfig::desk(ModelVariant::Psc, 13, 20);
        even.conv[0].width = 8;
        assert!(even.validate(20).is_err());
    }

    #[test]
    fn variant_parse_round_trip() {
        for v in [
            ModelVariant::CnnAttend,
            ModelVariant::CnnPoolAttend,
            ModelVariant::Psc,
            ModelVariant::CnnPool,
        ] {
            assert_eq!(ModelVariant::parse(v.as_str()).unwrap(), v);
        }
        assert!(ModelVariant::parse("transformer").is_err());
    }
}

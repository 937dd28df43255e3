//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use crate::tensor::DType;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// The hyperparameter tuple spanning every model variant: `hypotheses` (M),
/// `frames` (N, the receptive field), `joints` (J), `channels` (C, the
/// temporal embedding dim), and the per-stage layer counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of pose hypotheses (M).
    pub hypotheses: usize,
    /// Input window length in frames (N). Must be odd for center-frame use.
    pub frames: usize,
    /// Joints per pose (J).
    pub joints: usize,
    /// Temporal embedding dimension (C).
    pub channels: usize,
    /// Encoder layers per spatial hypothesis stack (L1).
    pub mhg_layers: usize,
    /// Self-refinement layers (L2).
    pub shr_layers: usize,
    /// Cross-interaction layers (L3).
    pub chi_layers: usize,
    /// Attention heads in the spatial stage; must divide `frames`.
    pub spatial_heads: usize,
    /// Attention heads in the temporal stages; must divide `channels`.
    pub temporal_heads: usize,
    /// Hidden-dim multiplier for every MLP.
    pub mlp_ratio: usize,
    pub ln_eps: f64,
    /// Attention-probability dropout rate, applied only during training.
    pub dropout: f64,
    pub dtype: DType,
    /// Cascaded hypothesis stacks (hypothesis m seeded by stack m-1's
    /// output). `false` gives the parallel-stack variant where every stack
    /// reads the raw input.
    pub cascade_mhg: bool,
    /// Allow cross-hypothesis interaction for any M via the cyclic
    /// query/key assignment; without it only M == 3 is accepted.
    pub cyclic_cross_hypotheses: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hypotheses: 3,
            frames: 27,
            joints: 17,
            channels: 512,
            mhg_layers: 4,
            shr_layers: 2,
            chi_layers: 1,
            spatial_heads: 9,
            temporal_heads: 8,
            mlp_ratio: 2,
            ln_eps: 1e-5,
            dropout: 0.0,
            dtype: DType::F32,
            cascade_mhg: true,
            cyclic_cross_hypotheses: false,
        }
    }
}

impl ModelConfig {
    /// The reference configuration: M=3, N=27, J=17, C=512, L1=4, L2=2, L3=1.
    pub fn reference() -> Self {
        ModelConfig::default()
    }

    /// Minimal configuration used by gradient checks and fast tests.
    pub fn tiny(hypotheses: usize) -> Self {
        ModelConfig {
            hypotheses,
            frames: 9,
            joints: 2,
            channels: 8,
            mhg_layers: 1,
            shr_layers: 1,
            chi_layers: 1,
            spatial_heads: 3,
            temporal_heads: 2,
            dtype: DType::F64,
            cyclic_cross_hypotheses: true,
            ..ModelConfig::default()
        }
    }

    pub fn input_rows(&self) -> usize {
        self.joints * 2
    }

    pub fn concat_channels(&self) -> usize {
        self.channels * self.hypotheses
    }

    /// Index of the frame whose 3D pose is the model's prediction.
    pub fn center_frame(&self) -> usize {
        self.frames / 2
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.hypotheses == 0 {
            return fail("hypotheses must be >= 1".into());
        }
        if self.joints == 0 || self.channels == 0 || self.frames == 0 {
            return fail("joints, channels, and frames must be >= 1".into());
        }
        if self.frames % 2 == 0 {
            return fail(format!(
                "frames must be odd for a well-defined center frame, got {}",
                self.frames
            ));
        }
        if self.mhg_layers == 0 || self.chi_layers == 0 {
            return fail("mhg_layers and chi_layers must be >= 1".into());
        }
        if self.spatial_heads == 0 || self.frames % self.spatial_heads != 0 {
            return fail(format!(
                "spatial_heads ({}) must divide frames ({})",
                self.spatial_heads, self.frames
            ));
        }
        if self.temporal_heads == 0 || self.channels % self.temporal_heads != 0 {
            return fail(format!(
                "temporal_heads ({}) must divide channels ({})",
                self.temporal_heads, self.channels
            ));
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be >= 1".into());
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.hypotheses != 3 && !self.cyclic_cross_hypotheses {
            return fail(format!(
                "cross-hypothesis interaction is defined for 3 hypotheses; got {} \
                 (set cyclic_cross_hypotheses to generalize)",
                self.hypotheses
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_valid() {
        ModelConfig::reference().validate().unwrap();
    }

    #[test]
    fn tiny_configs_are_valid() {
        ModelConfig::tiny(2).validate().unwrap();
        ModelConfig::tiny(3).validate().unwrap();
    }

    #[test]
    fn even_frames_rejected() {
        let cfg = ModelConfig { frames: 26, spatial_heads: 13, ..ModelConfig::reference() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_divisibility_enforced() {
        let cfg = ModelConfig { spatial_heads: 5, ..ModelConfig::reference() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { temporal_heads: 7, ..ModelConfig::reference() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_three_hypotheses_need_cyclic_flag() {
        let cfg = ModelConfig { hypotheses: 2, ..ModelConfig::reference() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            hypotheses: 2,
            cyclic_cross_hypotheses: true,
            ..ModelConfig::reference()
        };
        cfg.validate().unwrap();
    }

    #[test]
    fn center_frame_index() {
        assert_eq!(ModelConfig::reference().center_frame(), 13);
        assert_eq!(ModelConfig { frames: 1, ..ModelConfig::tiny(3) }.center_frame(), 0);
    }

    #[test]
    fn config_json_roundtrip_with_defaults() {
        let cfg: ModelConfig = serde_json::from_str("{\"channels\": 64}").unwrap();
        assert_eq!(cfg.channels, 64);
        assert_eq!(cfg.frames, 27);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}

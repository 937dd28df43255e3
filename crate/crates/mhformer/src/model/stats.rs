//! Analytic parameter counts and forward-pass FLOP estimates.
//!
//! The per-stage breakdown matters: published model-size tables for this
//! architecture family report the hypothesis refinement/interaction core
//! (attention blocks, mixing MLPs, their norms and biases), which
//! [`ParamBreakdown::hypothesis_core`] reproduces, while
//! [`ParamBreakdown::total`] counts every scalar in the parameter store.

use serde::Serialize;

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ParamBreakdown {
    /// Spatial hypothesis-generation stacks, position embeddings included.
    pub spatial: usize,
    /// Temporal embedding linears and frame position embeddings.
    pub embedding: usize,
    /// Self-hypothesis refinement layers.
    pub refinement: usize,
    /// Cross-hypothesis interaction layers.
    pub interaction: usize,
    /// Final regression head.
    pub head: usize,
}

impl ParamBreakdown {
    /// Every scalar in the parameter store (optional per-hypothesis decoders
    /// excluded).
    pub fn total(&self) -> usize {
        self.spatial + self.embedding + self.refinement + self.interaction + self.head
    }

    /// Parameters of the temporal hypothesis core (refinement plus
    /// interaction) — the model-size figure reported by the reference
    /// tables for this architecture.
    pub fn hypothesis_core(&self) -> usize {
        self.refinement + self.interaction
    }
}

/// Exact scalar counts per stage, matching `ModelParams` layouts.
pub fn count_params(cfg: &ModelConfig) -> ParamBreakdown {
    let (m, n, c, r) = (cfg.hypotheses, cfg.frames, cfg.channels, cfg.mlp_ratio);
    let rows = cfg.input_rows();
    let j3 = cfg.joints * 3;
    let cm = c * m;

    // One spatial encoder layer on token dim N.
    let ln_n = 2 * n;
    let attn_n = 4 * n * n + 4 * n;
    let mlp_n = n * (r * n) + r * n + (r * n) * n + n;
    let spatial_layer = ln_n + attn_n + ln_n + mlp_n;
    let spatial_stack = rows * n + ln_n + cfg.mhg_layers * spatial_layer + ln_n;

    // One temporal layer: M attention blocks on dim C plus the mixing MLP
    // over the concatenation, hidden dim r·C.
    let attn_c = 2 * c + 4 * c * c + 4 * c;
    let mix = 2 * cm + cm * (r * c) + r * c + (r * c) * cm + cm;
    let temporal_layer = m * attn_c + mix;

    ParamBreakdown {
        spatial: m * spatial_stack,
        embedding: m * (rows * c + c + n * c),
        refinement: cfg.shr_layers * temporal_layer,
        interaction: cfg.chi_layers * temporal_layer,
        head: cm * j3 + j3,
    }
}

/// Scalar count of the optional per-hypothesis decoders.
pub fn count_hypothesis_head_params(cfg: &ModelConfig) -> usize {
    cfg.hypotheses * (cfg.channels * cfg.joints * 3 + cfg.joints * 3)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FlopBreakdown {
    pub spatial: u64,
    pub embedding: u64,
    pub refinement: u64,
    pub interaction: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.spatial + self.embedding + self.refinement + self.interaction + self.head
    }

    pub fn hypothesis_core(&self) -> u64 {
        self.refinement + self.interaction
    }
}

/// Analytic FLOPs of one forward pass, counting matrix-multiply terms
/// (projections, attention scores and application, MLPs) at two FLOPs per
/// multiply-accumulate. Normalisation and softmax arithmetic is excluded.
pub fn estimate_flops(cfg: &ModelConfig) -> FlopBreakdown {
    let (m, n, c, r) = (
        cfg.hypotheses as u64,
        cfg.frames as u64,
        cfg.channels as u64,
        cfg.mlp_ratio as u64,
    );
    let t = cfg.input_rows() as u64;
    let j3 = cfg.joints as u64 * 3;
    let cm = c * m;

    // Spatial encoder layer: tokens T = J·2, feature dim N.
    let spatial_layer_macs = 4 * t * n * n + 2 * t * t * n + 2 * t * n * (r * n);
    let spatial_macs = m * cfg.mhg_layers as u64 * spatial_layer_macs;

    let embed_macs = m * n * t * c;

    // Temporal layer: M attention blocks on dim C plus the mixing MLP.
    let temporal_layer_macs = m * (4 * n * c * c + 2 * n * n * c) + 2 * n * cm * (r * c);

    let head_macs = n * cm * j3;

    FlopBreakdown {
        spatial: 2 * spatial_macs,
        embedding: 2 * embed_macs,
        refinement: 2 * cfg.shr_layers as u64 * temporal_layer_macs,
        interaction: 2 * cfg.chi_layers as u64 * temporal_layer_macs,
        head: 2 * head_macs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelParams;

    fn reference_with(hypotheses: usize, channels: usize) -> ModelConfig {
        ModelConfig {
            hypotheses,
            channels,
            temporal_heads: 8,
            cyclic_cross_hypotheses: true,
            ..ModelConfig::reference()
        }
    }

    #[test]
    fn analytic_count_matches_actual_store() {
        for cfg in [
            ModelConfig::tiny(2),
            ModelConfig::tiny(3),
            reference_with(3, 64),
            ModelConfig::reference(),
        ] {
            let params = ModelParams::zeros(&cfg);
            assert_eq!(
                count_params(&cfg).total(),
                params.num_scalars(),
                "analytic vs actual param count diverged for {cfg:?}"
            );
        }
    }

    #[test]
    fn hypothesis_head_count_matches_store() {
        let cfg = ModelConfig::tiny(3);
        let mut params = ModelParams::zeros(&cfg);
        let without = params.num_scalars();
        params.add_hypothesis_heads(&cfg, 0);
        assert_eq!(
            params.num_scalars() - without,
            count_hypothesis_head_params(&cfg)
        );
    }

    #[test]
    fn core_count_reproduces_reference_table() {
        // (M, C, published millions)
        let rows = [
            (1, 512, 6.32e6),
            (2, 512, 12.61e6),
            (3, 512, 18.92e6),
            (4, 512, 25.22e6),
            (3, 256, 4.72e6),
            (3, 384, 10.65e6),
            (3, 768, 42.50e6),
        ];
        for (m, c, published) in rows {
            let got = count_params(&reference_with(m, c)).hypothesis_core() as f64;
            let rel = (got - published).abs() / published;
            assert!(
                rel < 0.02,
                "M={m} C={c}: core {got} vs published {published} ({:.2}% off)",
                rel * 100.0
            );
        }
    }

    #[test]
    fn count_is_exactly_linear_in_hypotheses() {
        let count = |m| count_params(&reference_with(m, 512));
        let core: Vec<usize> = (1..=4).map(|m| count(m).hypothesis_core()).collect();
        let total: Vec<usize> = (1..=4).map(|m| count(m).total()).collect();
        for series in [&core, &total] {
            let step = series[1] - series[0];
            for w in series.windows(2) {
                assert_eq!(w[1] - w[0], step, "count not affine in hypothesis count");
            }
        }
    }

    #[test]
    fn flops_reproduce_reference_table() {
        let rows = [(1, 0.34e9), (2, 0.69e9), (3, 1.03e9), (4, 1.38e9)];
        for (m, published) in rows {
            let est = estimate_flops(&reference_with(m, 512));
            for (name, got) in [
                ("core", est.hypothesis_core() as f64),
                ("total", est.total() as f64),
            ] {
                let rel = (got - published).abs() / published;
                assert!(
                    rel < 0.15,
                    "M={m} {name}: flops {got} vs published {published} ({:.2}% off)",
                    rel * 100.0
                );
            }
        }
    }

    #[test]
    fn flops_scale_linearly_in_frames() {
        let base = ModelConfig::reference();
        let doubled = ModelConfig { frames: 54, ..base.clone() };
        let ratio = estimate_flops(&doubled).total() as f64 / estimate_flops(&base).total() as f64;
        assert!((ratio - 2.0).abs() < 0.1, "N-doubling ratio {ratio}");
    }
}

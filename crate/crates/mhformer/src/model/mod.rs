//! The multi-hypothesis lifting model: configuration, parameter store,
//! forward pass, attention export, and analytic size/cost accounting.

mod config;
mod export;
mod forward;
mod params;
mod stats;

pub use config::{ConfigError, ModelConfig};
pub use export::{export_attention, AttentionMap};
pub use forward::{
    center_pose, chi_forward, forward, forward_trace, hypothesis_decode, mhg_forward,
    predict_sequence, regress, shr_forward, temporal_embed, ForwardTrace,
};
pub use params::{
    HypothesisAttnBlock, MixingMlp, ModelParams, RegressionHead, SpatialStack, TemporalEmbed,
    TemporalLayer,
};
pub use stats::{
    count_hypothesis_head_params, count_params, estimate_flops, FlopBreakdown, ParamBreakdown,
};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockCtx;
    use crate::rng::{seeded, trunc_gauss};
    use crate::tensor::{grad_check_multi, DType, Tape, Tensor};

    fn random_input(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = seeded(seed);
        let data = (0..cfg.frames * cfg.joints * 2)
            .map(|_| trunc_gauss(&mut rng, 0.5))
            .collect();
        Tensor::from_vec(data, &[cfg.frames, cfg.joints, 2], cfg.dtype).unwrap()
    }

    fn xbar_of(x2d: &Tensor, cfg: &ModelConfig) -> Vec<f64> {
        // (J·2)×N flattening oracle: column n holds frame n's joint coords.
        let (n, rows) = (cfg.frames, cfg.input_rows());
        let mut out = vec![0.0; rows * n];
        for f in 0..n {
            for r in 0..rows {
                out[r * n + f] = x2d.data()[f * rows + r];
            }
        }
        out
    }

    #[test]
    fn mhg_zero_params_passes_input_through() {
        let cfg = ModelConfig::tiny(3);
        let params = ModelParams::zeros(&cfg);
        let x2d = random_input(&cfg, 1);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        let xbar = xbar_of(&x2d, &cfg);
        assert_eq!(hyps.len(), 3);
        for h in hyps {
            assert_eq!(tape.value(h).data(), xbar.as_slice());
        }
    }

    #[test]
    fn mhg_reference_shape_contract() {
        // Three 34×27 hypotheses for J=17, N=27.
        let cfg = ModelConfig { channels: 64, ..ModelConfig::reference() };
        let params = ModelParams::init(&cfg, 2);
        let x2d = random_input(&cfg, 3);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, maps) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        assert_eq!(hyps.len(), 3);
        for h in &hyps {
            assert_eq!(tape.value(*h).shape(), &[34, 27]);
        }
        assert_eq!(maps[0].len(), cfg.spatial_heads);
        assert_eq!(tape.value(maps[0][0]).shape(), &[34, 34]);
    }

    #[test]
    fn mhg_parallel_variant_feeds_every_stack_the_input() {
        // With zero parameters the cascaded and parallel variants coincide;
        // with random parameters the second hypothesis must differ.
        let base = ModelConfig::tiny(2);
        let cascade = ModelConfig { cascade_mhg: true, ..base.clone() };
        let parallel = ModelConfig { cascade_mhg: false, ..base };
        let params = ModelParams::init(&cascade, 9);
        let x2d = random_input(&cascade, 10);

        let run = |cfg: &ModelConfig| {
            let mut tape = Tape::new();
            let x = tape.constant(&x2d);
            let bound = params.bind(&mut tape);
            let mut ctx = BlockCtx::eval(cfg.ln_eps);
            let (hyps, _) = mhg_forward(&mut tape, x, &bound, cfg, &mut ctx).unwrap();
            hyps.iter().map(|&h| tape.value(h).data().to_vec()).collect::<Vec<_>>()
        };
        let a = run(&cascade);
        let b = run(&parallel);
        assert_eq!(a[0], b[0], "first hypothesis sees the raw input either way");
        assert_ne!(a[1], b[1], "cascade must change later hypotheses");
    }

    #[test]
    fn temporal_embed_zero_weights_yield_position_embedding() {
        let cfg = ModelConfig::tiny(2);
        let mut params = ModelParams::zeros(&cfg);
        // Give the position embeddings recognizable values.
        for e in params.embed.iter_mut() {
            for (i, v) in e.pos.data_mut().iter_mut().enumerate() {
                *v = i as f64 * 0.25 + 1.0;
            }
        }
        let x2d = random_input(&cfg, 4);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        let z = temporal_embed(&mut tape, &hyps, &bound, &cfg).unwrap();
        for (zm, e) in z.iter().zip(&params.embed) {
            assert_eq!(tape.value(*zm).shape(), &[cfg.frames, cfg.channels]);
            assert_eq!(tape.value(*zm).data(), e.pos.data());
        }
    }

    #[test]
    fn temporal_embed_orthonormal_rows_preserve_norms() {
        // Rows of W chosen orthonormal in R^C; with zero bias and zero
        // position embedding the per-frame row norms are preserved.
        let cfg = ModelConfig::tiny(2);
        let mut params = ModelParams::zeros(&cfg);
        let rows = cfg.input_rows();
        for e in params.embed.iter_mut() {
            let mut w = Tensor::zeros(&[rows, cfg.channels], DType::F64);
            for r in 0..rows {
                w.set(r * cfg.channels + r, 1.0); // distinct basis rows; rows ≤ C
            }
            e.w = w;
        }
        let x2d = random_input(&cfg, 5);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        let z = temporal_embed(&mut tape, &hyps, &bound, &cfg).unwrap();
        for (&zm, &hm) in z.iter().zip(&hyps) {
            let zt = tape.value(zm);
            let ht = tape.value(hm); // (J·2)×N, so frame f is column f
            for f in 0..cfg.frames {
                let out_norm: f64 =
                    (0..cfg.channels).map(|c| zt.at2(f, c).powi(2)).sum::<f64>().sqrt();
                let in_norm: f64 = (0..rows).map(|r| ht.at2(r, f).powi(2)).sum::<f64>().sqrt();
                assert!((out_norm - in_norm).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shr_zero_params_is_identity() {
        let cfg = ModelConfig::tiny(3);
        let params = ModelParams::zeros(&cfg);
        let x2d = random_input(&cfg, 6);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        let z = temporal_embed(&mut tape, &hyps, &bound, &cfg).unwrap();
        let before: Vec<Vec<f64>> = z.iter().map(|&v| tape.value(v).data().to_vec()).collect();
        let (after, _) = shr_forward(&mut tape, z, &bound, &cfg, &mut ctx).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert_eq!(tape.value(*a).data(), b.as_slice());
        }
    }

    #[test]
    fn chi_zero_params_is_concat() {
        let cfg = ModelConfig::tiny(3);
        let params = ModelParams::zeros(&cfg);
        let x2d = random_input(&cfg, 7);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        let z = temporal_embed(&mut tape, &hyps, &bound, &cfg).unwrap();
        let expect = {
            let cat = tape.concat_cols(&z).unwrap();
            tape.value(cat).data().to_vec()
        };
        let (out, taps) = chi_forward(&mut tape, z, &bound, &cfg, &mut ctx).unwrap();
        assert_eq!(tape.value(out).data(), expect.as_slice());
        assert_eq!(taps.len(), 3);
    }

    #[test]
    fn chi_identical_hypotheses_and_shared_weights_match_self_attention() {
        // With all three streams equal and the three cross blocks sharing
        // weights, each cross-attention residual equals the self-attention one.
        let cfg = ModelConfig::tiny(3);
        let mut params = ModelParams::init(&cfg, 8);
        let shared = params.chi[0].blocks[0].clone();
        for b in params.chi[0].blocks.iter_mut() {
            *b = shared.clone();
        }
        let mut rng = seeded(11);
        let zdata: Vec<f64> = (0..cfg.frames * cfg.channels)
            .map(|_| trunc_gauss(&mut rng, 0.5))
            .collect();
        let zt = Tensor::from_vec(zdata, &[cfg.frames, cfg.channels], DType::F64).unwrap();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let z: Vec<_> = (0..3).map(|_| tape.constant(&zt)).collect();
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (_, taps) = chi_forward(&mut tape, z.clone(), &bound, &cfg, &mut ctx).unwrap();

        // Reference: z + msa(LN(z)) with the shared block weights.
        let block = &bound.chi[0].blocks[0];
        let normed = tape
            .layer_norm(z[0], block.ln.gain, block.ln.bias, cfg.ln_eps)
            .unwrap();
        let attn = crate::blocks::msa(&mut tape, normed, &block.attn, &mut ctx).unwrap();
        let expect = tape.add(z[0], attn).unwrap();
        for t in taps {
            assert_eq!(tape.value(t).data(), tape.value(expect).data());
        }
    }

    #[test]
    fn regress_zero_head_outputs_zero_and_center_indexing_works() {
        let cfg = ModelConfig::tiny(3);
        let params = ModelParams::zeros(&cfg);
        let x2d = random_input(&cfg, 12);
        let seq = predict_sequence(&x2d, &params, &cfg).unwrap();
        assert_eq!(seq.shape(), &[cfg.frames, cfg.joints, 3]);
        assert!(seq.data().iter().all(|&v| v == 0.0));
        let center = center_pose(&seq, &cfg);
        assert_eq!(center.shape(), &[cfg.joints, 3]);

        let one = ModelConfig { frames: 1, spatial_heads: 1, ..cfg };
        assert_eq!(one.center_frame(), 0);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::tiny(2);
        let params = ModelParams::init(&cfg, 13);
        let x2d = random_input(&cfg, 14);
        let a = predict_sequence(&x2d, &params, &cfg).unwrap();
        let b = predict_sequence(&x2d, &params, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn shape_pipeline_stage_boundaries() {
        let cfg = ModelConfig::tiny(3);
        let params = ModelParams::init(&cfg, 15);
        let x2d = random_input(&cfg, 16);
        let mut tape = Tape::new();
        let x = tape.constant(&x2d);
        let bound = params.bind(&mut tape);
        let mut ctx = BlockCtx::eval(cfg.ln_eps);
        let (hyps, _) = mhg_forward(&mut tape, x, &bound, &cfg, &mut ctx).unwrap();
        for h in &hyps {
            assert_eq!(tape.value(*h).shape(), &[cfg.input_rows(), cfg.frames]);
        }
        let z = temporal_embed(&mut tape, &hyps, &bound, &cfg).unwrap();
        for v in &z {
            assert_eq!(tape.value(*v).shape(), &[cfg.frames, cfg.channels]);
        }
        let (z, _) = shr_forward(&mut tape, z, &bound, &cfg, &mut ctx).unwrap();
        for v in &z {
            assert_eq!(tape.value(*v).shape(), &[cfg.frames, cfg.channels]);
        }
        let (zf, taps) = chi_forward(&mut tape, z, &bound, &cfg, &mut ctx).unwrap();
        assert_eq!(tape.value(zf).shape(), &[cfg.frames, cfg.concat_channels()]);
        for t in &taps {
            assert_eq!(tape.value(*t).shape(), &[cfg.frames, cfg.channels]);
        }
        let seq = regress(&mut tape, zf, &bound, &cfg).unwrap();
        assert_eq!(tape.value(seq).shape(), &[cfg.frames, cfg.joints, 3]);
    }

    #[test]
    fn mhg_grad_check_tiny() {
        let cfg = ModelConfig::tiny(2);
        let params = ModelParams::init(&cfg, 17);
        let x2d = random_input(&cfg, 18);
        let err = grad_check_multi(
            |tape, vars| {
                let bound = params.bind(tape);
                let mut ctx = BlockCtx::eval(cfg.ln_eps);
                let (hyps, _) = mhg_forward(tape, vars[0], &bound, &cfg, &mut ctx)
                    .map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => crate::tensor::TensorError::Invalid(other.to_string()),
                    })?;
                let cat = tape.concat_cols(&hyps)?;
                let sq = tape.mul(cat, cat)?;
                tape.sum_all(sq)
            },
            &[x2d],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "mhg grad_check error {err}");
    }

    #[test]
    fn full_model_grad_check_tiny() {
        // Input plus one representative parameter tensor per stage.
        let cfg = ModelConfig::tiny(2);
        let params = ModelParams::init(&cfg, 19);
        let x2d = random_input(&cfg, 20);
        let wq = params.mhg[0].layers[0].attn.w_q.clone();
        let emb = params.embed[1].w.clone();
        let mixw = params.shr[0].mix.mlp.w1.clone();
        let headw = params.head.w.clone();
        let err = grad_check_multi(
            |tape, vars| {
                let mut bound = params.bind(tape);
                bound.mhg[0].layers[0].attn.w_q = vars[1];
                bound.embed[1].w = vars[2];
                bound.shr[0].mix.mlp.w1 = vars[3];
                bound.head.w = vars[4];
                let mut ctx = BlockCtx::eval(cfg.ln_eps);
                let seq = forward(tape, vars[0], &bound, &cfg, &mut ctx).map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => crate::tensor::TensorError::Invalid(other.to_string()),
                })?;
                let flat = tape.reshape(seq, &[cfg.frames, cfg.joints * 3])?;
                let sq = tape.mul(flat, flat)?;
                tape.sum_all(sq)
            },
            &[x2d, wq, emb, mixw, headw],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "full model grad_check error {err}");
    }

    #[test]
    fn hypothesis_decode_requires_heads_and_produces_m_outputs() {
        let cfg = ModelConfig::tiny(3);
        let mut params = ModelParams::init(&cfg, 21);
        let x2d = random_input(&cfg, 22);

        let run = |params: &ModelParams<Tensor>| -> Result<Vec<Tensor>, ModelError> {
            let mut tape = Tape::new();
            let x = tape.constant(&x2d);
            let bound = params.bind(&mut tape);
            let mut ctx = BlockCtx::eval(cfg.ln_eps);
            let trace = forward_trace(&mut tape, x, &bound, &cfg, &mut ctx)?;
            let decoded = hypothesis_decode(&mut tape, &trace.hyp_taps, &bound, &cfg)?;
            Ok(decoded.into_iter().map(|v| tape.value(v).clone()).collect())
        };

        assert!(run(&params).is_err(), "decode without heads must fail");
        params.add_hypothesis_heads(&cfg, 23);
        let decoded = run(&params).unwrap();
        assert_eq!(decoded.len(), 3);
        for d in decoded {
            assert_eq!(d.shape(), &[cfg.frames, cfg.joints, 3]);
        }

        // Zero heads decode to zero poses.
        if let Some(heads) = params.hyp_heads.as_mut() {
            for h in heads.iter_mut() {
                h.w = Tensor::zeros(h.w.shape(), h.w.dtype());
                h.b = Tensor::zeros(h.b.shape(), h.b.dtype());
            }
        }
        let decoded = run(&params).unwrap();
        for d in decoded {
            assert!(d.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn export_attention_rows_sum_to_one_and_counts_match() {
        let cfg = ModelConfig { channels: 64, ..ModelConfig::reference() };
        let params = ModelParams::init(&cfg, 24);
        let x2d = random_input(&cfg, 25);
        let maps = export_attention(&x2d, &params, &cfg).unwrap();
        let spatial: Vec<_> = maps.iter().filter(|m| m.stage == "mhg").collect();
        let temporal: Vec<_> = maps.iter().filter(|m| m.stage == "shr").collect();
        assert_eq!(spatial.len(), cfg.hypotheses * cfg.spatial_heads);
        assert_eq!(temporal.len(), cfg.hypotheses * cfg.temporal_heads);
        for m in &maps {
            let expected = if m.stage == "mhg" {
                vec![cfg.input_rows(), cfg.input_rows()]
            } else {
                vec![cfg.frames, cfg.frames]
            };
            assert_eq!(m.shape, expected);
            for row in &m.rows {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
            }
        }
    }
}

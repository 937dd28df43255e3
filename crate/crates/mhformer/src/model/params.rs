//! Named parameter store. Every tensor has a stable dotted path (e.g.
//! `mhg.h2.layer3.attn.w_q`) used by checkpoints and the optimizer.

use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    AttentionWeights, EncoderLayerWeights, LayerNormParams, MlpWeights,
};
use crate::rng::{seeded, trunc_gauss};
use crate::tensor::{Tape, Tensor, Var};

use super::config::ModelConfig;

/// One cascaded spatial encoder stack: position embedding, input norm,
/// encoder layers, and the output norm feeding the stack-level skip.
#[derive(Clone, Debug)]
pub struct SpatialStack<T> {
    pub pos: T,
    pub ln_in: LayerNormParams<T>,
    pub layers: Vec<EncoderLayerWeights<T>>,
    pub ln_out: LayerNormParams<T>,
}

/// Per-hypothesis linear embedding into the temporal domain plus the frame
/// position embedding.
#[derive(Clone, Debug)]
pub struct TemporalEmbed<T> {
    pub w: T,
    pub b: T,
    pub pos: T,
}

/// One attention block of a temporal layer: pre-norm plus projections.
#[derive(Clone, Debug)]
pub struct HypothesisAttnBlock<T> {
    pub ln: LayerNormParams<T>,
    pub attn: AttentionWeights<T>,
}

/// Residual MLP over the channel concatenation of all hypotheses.
#[derive(Clone, Debug)]
pub struct MixingMlp<T> {
    pub ln: LayerNormParams<T>,
    pub mlp: MlpWeights<T>,
}

/// One temporal layer: M parallel attention blocks followed by the
/// hypothesis-mixing MLP. Used for both the self-refinement and the
/// cross-interaction stages.
#[derive(Clone, Debug)]
pub struct TemporalLayer<T> {
    pub blocks: Vec<HypothesisAttnBlock<T>>,
    pub mix: MixingMlp<T>,
}

#[derive(Clone, Debug)]
pub struct RegressionHead<T> {
    pub w: T,
    pub b: T,
}

#[derive(Clone, Debug)]
pub struct ModelParams<T = Tensor> {
    pub mhg: Vec<SpatialStack<T>>,
    pub embed: Vec<TemporalEmbed<T>>,
    pub shr: Vec<TemporalLayer<T>>,
    pub chi: Vec<TemporalLayer<T>>,
    pub head: RegressionHead<T>,
    /// Per-hypothesis decoders used only for visualizing intermediate
    /// hypotheses; absent unless explicitly added.
    pub hyp_heads: Option<Vec<RegressionHead<T>>>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            mhg: self
                .mhg
                .iter()
                .map(|s| SpatialStack {
                    pos: f(&s.pos),
                    ln_in: s.ln_in.map(f),
                    layers: s.layers.iter().map(|l| l.map(f)).collect(),
                    ln_out: s.ln_out.map(f),
                })
                .collect(),
            embed: self
                .embed
                .iter()
                .map(|e| TemporalEmbed { w: f(&e.w), b: f(&e.b), pos: f(&e.pos) })
                .collect(),
            shr: self.shr.iter().map(|l| map_temporal_layer(l, f)).collect(),
            chi: self.chi.iter().map(|l| map_temporal_layer(l, f)).collect(),
            head: RegressionHead { w: f(&self.head.w), b: f(&self.head.b) },
            hyp_heads: self.hyp_heads.as_ref().map(|hs| {
                hs.iter().map(|h| RegressionHead { w: f(&h.w), b: f(&h.b) }).collect()
            }),
        }
    }

    /// Visit every tensor with its dotted path, in a fixed deterministic
    /// order. Hypothesis and layer indices are 1-based.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        for (m, stack) in self.mhg.iter().enumerate() {
            let p = format!("mhg.h{}", m + 1);
            f(format!("{p}.spos"), &stack.pos);
            stack.ln_in.visit(&mut |n, t| f(format!("{p}.ln_in.{n}"), t));
            for (l, layer) in stack.layers.iter().enumerate() {
                let lp = format!("{p}.layer{}", l + 1);
                layer.ln1.visit(&mut |n, t| f(format!("{lp}.ln1.{n}"), t));
                layer.attn.visit(&mut |n, t| f(format!("{lp}.attn.{n}"), t));
                layer.ln2.visit(&mut |n, t| f(format!("{lp}.ln2.{n}"), t));
                layer.mlp.visit(&mut |n, t| f(format!("{lp}.mlp.{n}"), t));
            }
            stack.ln_out.visit(&mut |n, t| f(format!("{p}.ln_out.{n}"), t));
        }
        for (m, e) in self.embed.iter().enumerate() {
            let p = format!("embed.h{}", m + 1);
            f(format!("{p}.w"), &e.w);
            f(format!("{p}.b"), &e.b);
            f(format!("{p}.tpos"), &e.pos);
        }
        for (stage, layers) in [("shr", &self.shr), ("chi", &self.chi)] {
            for (l, layer) in layers.iter().enumerate() {
                let lp = format!("{stage}.layer{}", l + 1);
                for (m, block) in layer.blocks.iter().enumerate() {
                    let bp = format!("{lp}.h{}", m + 1);
                    block.ln.visit(&mut |n, t| f(format!("{bp}.ln.{n}"), t));
                    block.attn.visit(&mut |n, t| f(format!("{bp}.attn.{n}"), t));
                }
                layer.mix.ln.visit(&mut |n, t| f(format!("{lp}.mix.ln.{n}"), t));
                layer.mix.mlp.visit(&mut |n, t| f(format!("{lp}.mix.mlp.{n}"), t));
            }
        }
        f("head.w".into(), &self.head.w);
        f("head.b".into(), &self.head.b);
        if let Some(heads) = &self.hyp_heads {
            for (m, h) in heads.iter().enumerate() {
                f(format!("hyp_head.h{}.w", m + 1), &h.w);
                f(format!("hyp_head.h{}.b", m + 1), &h.b);
            }
        }
    }

    /// Mutable variant of [`Self::visit`], same order and paths.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        for (m, stack) in self.mhg.iter_mut().enumerate() {
            let p = format!("mhg.h{}", m + 1);
            f(format!("{p}.spos"), &mut stack.pos);
            stack.ln_in.visit_mut(&mut |n, t| f(format!("{p}.ln_in.{n}"), t));
            for (l, layer) in stack.layers.iter_mut().enumerate() {
                let lp = format!("{p}.layer{}", l + 1);
                layer.ln1.visit_mut(&mut |n, t| f(format!("{lp}.ln1.{n}"), t));
                layer.attn.visit_mut(&mut |n, t| f(format!("{lp}.attn.{n}"), t));
                layer.ln2.visit_mut(&mut |n, t| f(format!("{lp}.ln2.{n}"), t));
                layer.mlp.visit_mut(&mut |n, t| f(format!("{lp}.mlp.{n}"), t));
            }
            stack.ln_out.visit_mut(&mut |n, t| f(format!("{p}.ln_out.{n}"), t));
        }
        for (m, e) in self.embed.iter_mut().enumerate() {
            let p = format!("embed.h{}", m + 1);
            f(format!("{p}.w"), &mut e.w);
            f(format!("{p}.b"), &mut e.b);
            f(format!("{p}.tpos"), &mut e.pos);
        }
        for (stage, layers) in [("shr", &mut self.shr), ("chi", &mut self.chi)] {
            for (l, layer) in layers.iter_mut().enumerate() {
                let lp = format!("{stage}.layer{}", l + 1);
                for (m, block) in layer.blocks.iter_mut().enumerate() {
                    let bp = format!("{lp}.h{}", m + 1);
                    block.ln.visit_mut(&mut |n, t| f(format!("{bp}.ln.{n}"), t));
                    block.attn.visit_mut(&mut |n, t| f(format!("{bp}.attn.{n}"), t));
                }
                layer.mix.ln.visit_mut(&mut |n, t| f(format!("{lp}.mix.ln.{n}"), t));
                layer.mix.mlp.visit_mut(&mut |n, t| f(format!("{lp}.mix.mlp.{n}"), t));
            }
        }
        f("head.w".into(), &mut self.head.w);
        f("head.b".into(), &mut self.head.b);
        if let Some(heads) = &mut self.hyp_heads {
            for (m, h) in heads.iter_mut().enumerate() {
                f(format!("hyp_head.h{}.w", m + 1), &mut h.w);
                f(format!("hyp_head.h{}.b", m + 1), &mut h.b);
            }
        }
    }
}

fn map_temporal_layer<T, U>(
    layer: &TemporalLayer<T>,
    f: &mut impl FnMut(&T) -> U,
) -> TemporalLayer<U> {
    TemporalLayer {
        blocks: layer
            .blocks
            .iter()
            .map(|b| HypothesisAttnBlock { ln: b.ln.map(f), attn: b.attn.map(f) })
            .collect(),
        mix: MixingMlp { ln: layer.mix.ln.map(f), mlp: layer.mix.mlp.map(f) },
    }
}

/// Builds one tensor per shape from an init rule.
struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    cfg: ModelConfig,
    zero: bool,
}

impl Builder<'_> {
    /// Weight matrices and position embeddings: truncated normal, std 0.02.
    fn weight(&mut self, shape: &[usize]) -> Tensor {
        if self.zero {
            return Tensor::zeros(shape, self.cfg.dtype);
        }
        let data = (0..shape.iter().product::<usize>())
            .map(|_| trunc_gauss(self.rng, 0.02))
            .collect();
        Tensor::from_vec(data, shape, self.cfg.dtype).expect("init produced non-finite values")
    }

    fn zeros(&mut self, shape: &[usize]) -> Tensor {
        Tensor::zeros(shape, self.cfg.dtype)
    }

    fn layer_norm(&mut self, d: usize) -> LayerNormParams<Tensor> {
        let gain = if self.zero {
            Tensor::zeros(&[d], self.cfg.dtype)
        } else {
            Tensor::full(&[d], 1.0, self.cfg.dtype)
        };
        LayerNormParams { gain, bias: self.zeros(&[d]) }
    }

    fn attention(&mut self, d: usize, heads: usize) -> AttentionWeights<Tensor> {
        AttentionWeights {
            w_q: self.weight(&[d, d]),
            w_k: self.weight(&[d, d]),
            w_v: self.weight(&[d, d]),
            w_o: self.weight(&[d, d]),
            b_q: self.zeros(&[d]),
            b_k: self.zeros(&[d]),
            b_v: self.zeros(&[d]),
            b_o: self.zeros(&[d]),
            heads,
        }
    }

    fn mlp(&mut self, d_in: usize, d_hidden: usize, d_out: usize) -> MlpWeights<Tensor> {
        MlpWeights {
            w1: self.weight(&[d_in, d_hidden]),
            b1: self.zeros(&[d_hidden]),
            w2: self.weight(&[d_hidden, d_out]),
            b2: self.zeros(&[d_out]),
        }
    }

    fn encoder_layer(&mut self, d: usize, heads: usize) -> EncoderLayerWeights<Tensor> {
        EncoderLayerWeights {
            ln1: self.layer_norm(d),
            attn: self.attention(d, heads),
            ln2: self.layer_norm(d),
            mlp: self.mlp(d, d * self.cfg.mlp_ratio, d),
        }
    }

    fn temporal_layer(&mut self) -> TemporalLayer<Tensor> {
        let c = self.cfg.channels;
        let cm = self.cfg.concat_channels();
        let blocks = (0..self.cfg.hypotheses)
            .map(|_| HypothesisAttnBlock {
                ln: self.layer_norm(c),
                attn: self.attention(c, self.cfg.temporal_heads),
            })
            .collect();
        TemporalLayer {
            blocks,
            mix: MixingMlp {
                ln: self.layer_norm(cm),
                mlp: self.mlp(cm, c * self.cfg.mlp_ratio, cm),
            },
        }
    }

    fn build(&mut self) -> ModelParams<Tensor> {
        let cfg = self.cfg.clone();
        let (rows, n, c) = (cfg.input_rows(), cfg.frames, cfg.channels);
        let mhg = (0..cfg.hypotheses)
            .map(|_| SpatialStack {
                pos: self.weight(&[rows, n]),
                ln_in: self.layer_norm(n),
                layers: (0..cfg.mhg_layers)
                    .map(|_| self.encoder_layer(n, cfg.spatial_heads))
                    .collect(),
                ln_out: self.layer_norm(n),
            })
            .collect();
        let embed = (0..cfg.hypotheses)
            .map(|_| TemporalEmbed {
                w: self.weight(&[rows, c]),
                b: self.zeros(&[c]),
                pos: self.weight(&[n, c]),
            })
            .collect();
        let shr = (0..cfg.shr_layers).map(|_| self.temporal_layer()).collect();
        let chi = (0..cfg.chi_layers).map(|_| self.temporal_layer()).collect();
        let head = RegressionHead {
            w: self.weight(&[cfg.concat_channels(), cfg.joints * 3]),
            b: self.zeros(&[cfg.joints * 3]),
        };
        ModelParams { mhg, embed, shr, chi, head, hyp_heads: None }
    }
}

impl ModelParams<Tensor> {
    /// Fresh parameters: truncated-normal weights (std 0.02), zero biases,
    /// unit LayerNorm gains. Deterministic in the seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = seeded(seed);
        Builder { rng: &mut rng, cfg: cfg.clone(), zero: false }.build()
    }

    /// All-zero parameters (including LayerNorm gains), which collapse the
    /// model to the zero map.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut rng = seeded(0);
        Builder { rng: &mut rng, cfg: cfg.clone(), zero: true }.build()
    }

    /// Attach freshly initialized per-hypothesis decoders.
    pub fn add_hypothesis_heads(&mut self, cfg: &ModelConfig, seed: u64) {
        let mut rng = seeded(seed);
        let mut b = Builder { rng: &mut rng, cfg: cfg.clone(), zero: false };
        self.hyp_heads = Some(
            (0..cfg.hypotheses)
                .map(|_| RegressionHead {
                    w: b.weight(&[cfg.channels, cfg.joints * 3]),
                    b: b.zeros(&[cfg.joints * 3]),
                })
                .collect(),
        );
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Flat name → tensor listing in visit order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    /// Mark every tensor as requiring gradients (used before a training step).
    pub fn set_requires_grad(&mut self, value: bool) {
        self.visit_mut(&mut |_, t| t.requires_grad = value);
    }

    /// Register every tensor on a tape, producing the `Var` mirror used by
    /// the forward pass.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t| tape.leaf(t))
    }
}

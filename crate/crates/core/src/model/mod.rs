//! Hybrid convolution/self-attention cell detector.
//!
//! ```text
//! image S×S×3
//!   └ backbone: [conv3×3/2 + BN + SiLU] × stages        → S/8 × S/8 × C_b
//!   └ neck: [MobileViT block, conv3×3 + LN] × blocks    → S/8 × S/8 × C_n
//!   ├ heatmap head:   [conv3×3 + BN + SiLU + ×2] × 3, conv1×1, sigmoid
//!   └ dimension head: [conv3×3 + BN + SiLU + ×2] × 3, two conv1×1, sigmoid
//! ```
//!
//! A MobileViT block runs a local 3×3 conv, projects to the token depth,
//! unfolds into sequences grouped by intra-patch offset, applies a pre-norm
//! transformer encoder, folds back, projects to the neck width, concatenates
//! with the block input and fuses with a 3×3 conv.

mod config;
mod params;

use std::collections::BTreeMap;

pub use config::ModelConfig;
pub use params::{init_params, param_count, param_specs, Init, ParamSpec, ParamStore, DIMENSION_PRIOR_BIAS, HEATMAP_PRIOR_BIAS};

use crate::error::{Error, Result};
use crate::grid::{LabelMaps, ModelOutputs, Plane};
use crate::metrics::{LossTerms, HEATMAP_WEIGHT, HEIGHT_WEIGHT, WIDTH_WEIGHT};
use crate::tensor::ops::BatchNormState;
use crate::tensor::{Graph, NormMode, Padding, Tensor, Var};

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NormUpdate {
    pub name: String,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Graph builder bound to a parameter store.
pub struct Layers<'a> {
    pub graph: Graph,
    params: &'a ParamStore,
    norms: &'a BTreeMap<String, BatchNormState>,
    mode: NormMode,
    pub norm_updates: Vec<NormUpdate>,
}

impl<'a> Layers<'a> {
    pub fn new(params: &'a ParamStore, norms: &'a BTreeMap<String, BatchNormState>, mode: NormMode) -> Self {
        Layers {
            graph: Graph::new(),
            params,
            norms,
            mode,
            norm_updates: Vec::new(),
        }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let t = self.params.get(name)?;
        Ok(self.graph.param(name, t))
    }

    fn has(&self, name: &str) -> bool {
        self.params.get(name).is_ok()
    }

    pub fn conv(&mut self, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let bias_name = format!("{prefix}.b");
        let b = if self.has(&bias_name) {
            self.param(&bias_name)?
        } else {
            let cout = self.graph.shape(w)[3];
            self.graph.constant(Tensor::zeros([cout]))
        };
        self.graph.conv2d(x, w, b, stride, Padding::Same)
    }

    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let y = self.graph.matmul(x, w)?;
        self.graph.add_bias(y, b)
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{prefix}.gain"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let axis = self.graph.shape(x).len() - 1;
        self.graph.layer_norm(x, axis, g, b)
    }

    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{prefix}.gain"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        match self.mode {
            NormMode::Train => {
                let (y, mean, var) = self.graph.batch_norm_train(x, g, b)?;
                self.norm_updates.push(NormUpdate {
                    name: prefix.to_string(),
                    mean,
                    var,
                });
                Ok(y)
            }
            NormMode::Infer => {
                let state = self
                    .norms
                    .get(prefix)
                    .ok_or_else(|| Error::invalid("batch_norm", format!("missing running statistics `{prefix}`")))?;
                self.graph.batch_norm_infer(
                    x,
                    g,
                    b,
                    state.running_mean.data(),
                    state.running_var.data(),
                )
            }
        }
    }

    /// Multi-head scaled dot-product self-attention over `x: [B, N, d]`.
    /// Returns the projected output and the attention weights `[B·h, N, N]`.
    pub fn self_attention(&mut self, prefix: &str, x: Var, heads: usize) -> Result<(Var, Var)> {
        let [b, n, d] = *self.graph.shape(x) else {
            return Err(Error::invalid("self_attention", format!("expected [B, N, d], got {:?}", self.graph.shape(x))));
        };
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid("self_attention", format!("{heads} heads do not divide depth {d}")));
        }
        let dh = d / heads;
        let q = self.linear(&format!("{prefix}.q"), x)?;
        let k = self.linear(&format!("{prefix}.k"), x)?;
        let v = self.linear(&format!("{prefix}.v"), x)?;
        let g = &mut self.graph;
        let split = |g: &mut Graph, t: Var, perm: &[usize], last: [usize; 2]| -> Result<Var> {
            let t = g.reshape(t, &[b, n, heads, dh])?;
            let t = g.permute(t, perm)?;
            g.reshape(t, &[b * heads, last[0], last[1]])
        };
        let q = split(g, q, &[0, 2, 1, 3], [n, dh])?;
        let kt = split(g, k, &[0, 2, 3, 1], [dh, n])?;
        let v = split(g, v, &[0, 2, 1, 3], [n, dh])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scalar_mul(scores, 1.0 / (dh as f32).sqrt());
        let weights = g.softmax(scores, 2)?;
        let ctx = g.matmul(weights, v)?;
        let ctx = g.reshape(ctx, &[b, heads, n, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, n, d])?;
        let out = self.linear(&format!("{prefix}.o"), ctx)?;
        Ok((out, weights))
    }

    /// Pre-norm encoder: `x + MHSA(LN(x))`, then `x + MLP(LN(x))`, `depth` times.
    pub fn transformer_encoder(&mut self, prefix: &str, seq: Var, depth: usize, heads: usize) -> Result<Var> {
        let mut x = seq;
        for l in 0..depth {
            let p = format!("{prefix}.{l}");
            let h = self.layer_norm(&format!("{p}.ln1"), x)?;
            let (a, _) = self.self_attention(&format!("{p}.attn"), h, heads)?;
            x = self.graph.add(x, a)?;
            let h = self.layer_norm(&format!("{p}.ln2"), x)?;
            let h = self.linear(&format!("{p}.mlp.fc1"), h)?;
            let h = self.graph.silu(h);
            let h = self.linear(&format!("{p}.mlp.fc2"), h)?;
            x = self.graph.add(x, h)?;
        }
        Ok(x)
    }

    /// One MobileViT block; output has `cfg.neck_channels` channels and the
    /// input's spatial size.
    pub fn mobilevit_block(&mut self, prefix: &str, x: Var, cfg: &ModelConfig) -> Result<Var> {
        let [n, h, w, _] = *self.graph.shape(x) else {
            return Err(Error::invalid("mobilevit_block", format!("expected NHWC, got {:?}", self.graph.shape(x))));
        };
        let local = self.conv(&format!("{prefix}.local"), x, 1)?;
        let local = self.graph.silu(local);
        let tokens = self.conv(&format!("{prefix}.proj_in"), local, 1)?;
        let seq = self.graph.unfold(tokens, cfg.patch_size)?;
        let seq = self.transformer_encoder(&format!("{prefix}.tf"), seq, cfg.transformer_depth, cfg.attention_heads)?;
        let seq = self.layer_norm(&format!("{prefix}.ln"), seq)?;
        let global = self.graph.fold(seq, cfg.patch_size, [n, h, w, cfg.transformer_dim])?;
        let global = self.conv(&format!("{prefix}.proj_out"), global, 1)?;
        let global = self.graph.silu(global);
        let cat = self.graph.concat(&[x, global], 3)?;
        let fused = self.conv(&format!("{prefix}.fuse"), cat, 1)?;
        Ok(self.graph.silu(fused))
    }

    pub fn backbone_lite(&mut self, image: Var, cfg: &ModelConfig) -> Result<Var> {
        let mut x = image;
        for i in 0..cfg.backbone_widths.len() {
            x = self.conv(&format!("backbone.{i}.conv"), x, 2)?;
            x = self.batch_norm(&format!("backbone.{i}.bn"), x)?;
            x = self.graph.silu(x);
        }
        Ok(x)
    }

    pub fn neck(&mut self, features: Var, cfg: &ModelConfig) -> Result<Var> {
        let mut x = features;
        for blk in 0..cfg.num_mobilevit_blocks {
            let p = format!("neck.{blk}");
            x = self.mobilevit_block(&p, x, cfg)?;
            x = self.conv(&format!("{p}.post"), x, 1)?;
            x = self.layer_norm(&format!("{p}.post_ln"), x)?;
        }
        Ok(x)
    }

    fn upsampling_trunk(&mut self, head: &str, x: Var, cfg: &ModelConfig) -> Result<Var> {
        let mut x = x;
        for s in 0..cfg.upsample_stages {
            x = self.conv(&format!("{head}.{s}.conv"), x, 1)?;
            x = self.batch_norm(&format!("{head}.{s}.bn"), x)?;
            x = self.graph.silu(x);
            x = self.graph.bilinear_upsample(x, 2)?;
        }
        Ok(x)
    }

    /// Returns `(heatmap, height, width)`, each `[n, S, S, 1]` in `(0, 1)`.
    pub fn heads(&mut self, neck: Var, cfg: &ModelConfig) -> Result<(Var, Var, Var)> {
        let t = self.upsampling_trunk("heat", neck, cfg)?;
        let heat = self.conv("heat.out", t, 1)?;
        let heat = self.graph.sigmoid(heat);
        let t = self.upsampling_trunk("dims", neck, cfg)?;
        let hgt = self.conv("dims.height", t, 1)?;
        let hgt = self.graph.sigmoid(hgt);
        let wid = self.conv("dims.width", t, 1)?;
        let wid = self.graph.sigmoid(wid);
        Ok((heat, hgt, wid))
    }
}

/// A recorded forward pass.
pub struct ForwardPass {
    pub graph: Graph,
    pub features: Var,
    pub neck: Var,
    pub heatmap: Var,
    pub height: Var,
    pub width: Var,
    pub norm_updates: Vec<NormUpdate>,
}

fn stack_channel(maps: &[&Plane]) -> Tensor {
    let (h, w) = maps[0].dims();
    let mut data = Vec::with_capacity(maps.len() * h * w);
    for m in maps {
        data.extend_from_slice(m.data());
    }
    Tensor::from_parts(vec![maps.len(), h, w, 1], data)
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.graph.shape(self.heatmap)[0]
    }

    /// Per-image prediction maps.
    pub fn outputs(&self) -> Result<Vec<ModelOutputs>> {
        let (heat, hgt, wid) = (
            self.graph.value(self.heatmap),
            self.graph.value(self.height),
            self.graph.value(self.width),
        );
        (0..self.batch_size())
            .map(|i| {
                Ok(ModelOutputs {
                    heatmap: Plane::from_tensor_channel(heat, i, 0)?,
                    height_map: Plane::from_tensor_channel(hgt, i, 0)?,
                    width_map: Plane::from_tensor_channel(wid, i, 0)?,
                })
            })
            .collect()
    }

    /// Appends the weighted Huber total to the graph and returns it with its terms.
    pub fn loss(&mut self, targets: &[LabelMaps]) -> Result<(Var, LossTerms)> {
        if targets.len() != self.batch_size() {
            return Err(Error::invalid(
                "loss",
                format!("{} targets for a batch of {}", targets.len(), self.batch_size()),
            ));
        }
        let mut terms = [0.0f64; 3];
        let mut vars = Vec::with_capacity(3);
        let pairs: [(Var, Vec<&Plane>); 3] = [
            (self.heatmap, targets.iter().map(|t| &t.heatmap).collect()),
            (self.height, targets.iter().map(|t| &t.height_map).collect()),
            (self.width, targets.iter().map(|t| &t.width_map).collect()),
        ];
        for (i, (pred, planes)) in pairs.into_iter().enumerate() {
            let target = stack_channel(&planes);
            if target.shape() != self.graph.shape(pred) {
                return Err(Error::shape("loss", self.graph.shape(pred), target.shape()));
            }
            let target = self.graph.constant(target);
            let term = self.graph.huber(pred, target)?;
            terms[i] = self.graph.value(term).data()[0] as f64;
            vars.push(term);
        }
        let g = &mut self.graph;
        let heat = g.scalar_mul(vars[0], HEATMAP_WEIGHT as f32);
        let hgt = g.scalar_mul(vars[1], HEIGHT_WEIGHT as f32);
        let wid = g.scalar_mul(vars[2], WIDTH_WEIGHT as f32);
        let total = g.add(heat, hgt)?;
        let total = g.add(total, wid)?;
        Ok((
            total,
            LossTerms {
                heatmap: terms[0],
                height: terms[1],
                width: terms[2],
            },
        ))
    }
}

/// Configuration, parameters and batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub norms: BTreeMap<String, BatchNormState>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, norms) = init_params(&config, seed);
        Ok(Model { config, params, norms })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        match images.shape() {
            [_, h, w, 3] if *h == s && *w == s => Ok(()),
            other => Err(Error::shape("forward", other, &[0, s, s, 3])),
        }
    }

    /// Records a forward pass over `images: [n, S, S, 3]`.
    pub fn forward(&self, images: &Tensor, mode: NormMode) -> Result<ForwardPass> {
        self.check_input(images)?;
        let cfg = &self.config;
        let mut l = Layers::new(&self.params, &self.norms, mode);
        let x = l.graph.constant(images.clone());
        let features = l.backbone_lite(x, cfg)?;
        let neck = l.neck(features, cfg)?;
        let (heatmap, height, width) = l.heads(neck, cfg)?;
        Ok(ForwardPass {
            graph: l.graph,
            features,
            neck,
            heatmap,
            height,
            width,
            norm_updates: l.norm_updates,
        })
    }

    /// Inference-mode predictions for each image in the batch.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<ModelOutputs>> {
        self.forward(images, NormMode::Infer)?.outputs()
    }

    /// Folds training-pass batch statistics into the running estimates.
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) -> Result<()> {
        for u in updates {
            let state = self
                .norms
                .get_mut(&u.name)
                .ok_or_else(|| Error::invalid("batch_norm", format!("unknown layer `{}`", u.name)))?;
            state.update(&u.mean, &u.var);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(cfg: &ModelConfig, n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform([n, cfg.input_size, cfg.input_size, 3], 0.0, 1.0, &mut rng)
    }

    #[test]
    fn tiny_forward_shapes() {
        let cfg = ModelConfig::tiny(32);
        let m = Model::new(cfg.clone(), 0).unwrap();
        let pass = m.forward(&image(&cfg, 2, 1), NormMode::Train).unwrap();
        assert_eq!(pass.graph.shape(pass.features), &[2, 4, 4, 8]);
        assert_eq!(pass.graph.shape(pass.neck), &[2, 4, 4, 8]);
        let outs = pass.outputs().unwrap();
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[0].dims(), (32, 32));
        assert!(outs.iter().all(|o| o.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn wrong_input_rejected() {
        let cfg = ModelConfig::tiny(32);
        let m = Model::new(cfg, 0).unwrap();
        assert!(m.forward(&Tensor::zeros([1, 16, 16, 3]), NormMode::Infer).is_err());
    }

    #[test]
    fn param_store_matches_specs() {
        let cfg = ModelConfig::desk();
        let m = Model::new(cfg.clone(), 3).unwrap();
        assert_eq!(m.param_count(), param_count(&cfg));
        assert_eq!(m.params.len(), param_specs(&cfg).0.len());
    }

    #[test]
    fn norm_updates_move_running_stats() {
        let cfg = ModelConfig::tiny(32);
        let mut m = Model::new(cfg.clone(), 0).unwrap();
        let before = m.norms.clone();
        let pass = m.forward(&image(&cfg, 2, 4), NormMode::Train).unwrap();
        assert_eq!(pass.norm_updates.len(), 3 + 2 * 3);
        m.apply_norm_updates(&pass.norm_updates).unwrap();
        assert_ne!(before, m.norms);
    }
}

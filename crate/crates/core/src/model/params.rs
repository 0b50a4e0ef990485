use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::ops::BatchNormState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(gain / fan_in)`.
    Normal { fan_in: usize, gain: f32 },
    Const(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid("params", format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
    norms: Vec<(String, usize)>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, prefix: &str, k: usize, cin: usize, cout: usize, bias: bool) {
        self.push(
            format!("{prefix}.w"),
            vec![k, k, cin, cout],
            Init::Normal {
                fan_in: k * k * cin,
                gain: 2.0,
            },
        );
        if bias {
            self.push(format!("{prefix}.b"), vec![cout], Init::Const(0.0));
        }
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        self.push(format!("{prefix}.w"), vec![din, dout], Init::Normal { fan_in: din, gain: 1.0 });
        self.push(format!("{prefix}.b"), vec![dout], Init::Const(0.0));
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gain"), vec![c], Init::Const(1.0));
        self.push(format!("{prefix}.bias"), vec![c], Init::Const(0.0));
    }

    fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.norm(prefix, c);
        self.norms.push((prefix.to_string(), c));
    }
}

/// Output-logit priors so initial predictions sit near the all-background value.
pub const HEATMAP_PRIOR_BIAS: f32 = -2.0;
pub const DIMENSION_PRIOR_BIAS: f32 = -4.0;

/// Every parameter implied by `cfg`, in initialization order, plus the
/// batch-norm layers as `(prefix, channels)`.
pub fn param_specs(cfg: &ModelConfig) -> (Vec<ParamSpec>, Vec<(String, usize)>) {
    let mut b = SpecBuilder {
        specs: Vec::new(),
        norms: Vec::new(),
    };
    let mut cin = 3;
    for (i, &w) in cfg.backbone_widths.iter().enumerate() {
        b.conv(&format!("backbone.{i}.conv"), 3, cin, w, false);
        b.batch_norm(&format!("backbone.{i}.bn"), w);
        cin = w;
    }
    let (c, d) = (cfg.neck_channels, cfg.transformer_dim);
    for blk in 0..cfg.num_mobilevit_blocks {
        let p = format!("neck.{blk}");
        b.conv(&format!("{p}.local"), 3, cin, c, true);
        b.conv(&format!("{p}.proj_in"), 1, c, d, true);
        for l in 0..cfg.transformer_depth {
            let t = format!("{p}.tf.{l}");
            b.norm(&format!("{t}.ln1"), d);
            for proj in ["q", "k", "v", "o"] {
                b.linear(&format!("{t}.attn.{proj}"), d, d);
            }
            b.norm(&format!("{t}.ln2"), d);
            b.linear(&format!("{t}.mlp.fc1"), d, d * cfg.mlp_ratio);
            b.linear(&format!("{t}.mlp.fc2"), d * cfg.mlp_ratio, d);
        }
        b.norm(&format!("{p}.ln"), d);
        b.conv(&format!("{p}.proj_out"), 1, d, c, true);
        b.conv(&format!("{p}.fuse"), 3, cin + c, c, true);
        b.conv(&format!("{p}.post"), 3, c, c, true);
        b.norm(&format!("{p}.post_ln"), c);
        cin = c;
    }
    let neck_out = cin;
    for head in ["heat", "dims"] {
        let mut hin = neck_out;
        for s in 0..cfg.upsample_stages {
            b.conv(&format!("{head}.{s}.conv"), 3, hin, cfg.head_channels, false);
            b.batch_norm(&format!("{head}.{s}.bn"), cfg.head_channels);
            hin = cfg.head_channels;
        }
    }
    let hc = cfg.head_channels;
    b.conv("heat.out", 1, hc, 1, false);
    b.push("heat.out.b".into(), vec![1], Init::Const(HEATMAP_PRIOR_BIAS));
    for name in ["dims.height", "dims.width"] {
        b.conv(name, 1, hc, 1, false);
        b.push(format!("{name}.b"), vec![1], Init::Const(DIMENSION_PRIOR_BIAS));
    }
    (b.specs, b.norms)
}

/// Closed-form parameter count.
pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).0.iter().map(ParamSpec::numel).sum()
}

/// Draws every parameter from its initializer with a seeded generator.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> (ParamStore, BTreeMap<String, BatchNormState>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (specs, norms) = param_specs(cfg);
    let mut store = ParamStore::new();
    for spec in specs {
        let t = match spec.init {
            Init::Normal { fan_in, gain } => Tensor::randn(spec.shape, (gain / fan_in as f32).sqrt(), &mut rng),
            Init::Const(v) => Tensor::full(spec.shape, v),
        };
        store.insert(spec.name, t);
    }
    let norms = norms.into_iter().map(|(name, c)| (name, BatchNormState::new(c))).collect();
    (store, norms)
}

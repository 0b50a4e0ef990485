//! Central finite-difference checks of the tape's analytic gradients.
//!
//! Each op is wrapped in a scalar probe `L = Σ op(inputs) ⊙ r` with a fixed
//! random projection `r`. The analytic gradient comes from
//! [`Graph::backward`]; the numeric one re-runs only the forward op with each
//! checked input element nudged by `±ε`, accumulating `L` in `f64`.
//!
//! Errors are reported norm-wise per input tensor:
//! `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)` over the checked
//! elements, which stays meaningful when individual entries are near zero.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::LabelMaps;
use crate::metrics::total_loss;
use crate::model::Model;
use crate::tensor::{Graph, NormMode, Padding, Tensor, Var};

/// Perturbation used for the central differences.
pub const FD_EPS: f32 = 1e-3;

/// Largest accepted relative error for a single op.
pub const OP_TOLERANCE: f64 = 1e-3;

/// At most this many elements per input are perturbed.
pub const MAX_CHECKED_ELEMENTS: usize = 48;

/// Largest accepted relative error for the full model loss.
pub const MODEL_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub variant: usize,
    pub seed: u64,
    pub max_rel_error: f64,
}

type Builder = fn(&mut Graph, &[Var], usize) -> Result<Var>;

struct Case {
    name: &'static str,
    shapes: [&'static [&'static [usize]]; 3],
    /// Keeps samples away from non-differentiable points.
    away_from_zero: bool,
    build: Builder,
}

fn conv_variant(v: usize) -> (usize, Padding) {
    match v {
        0 => (1, Padding::Same),
        1 => (2, Padding::Same),
        _ => (2, Padding::Valid),
    }
}

fn bn_fixed_stats(c: usize) -> (Vec<f32>, Vec<f32>) {
    let mean = (0..c).map(|i| 0.1 * i as f32 - 0.2).collect();
    let var = (0..c).map(|i| 0.5 + 0.25 * i as f32).collect();
    (mean, var)
}

const CASES: &[Case] = &[
    Case {
        name: "conv2d",
        shapes: [
            &[&[1, 5, 5, 2], &[3, 3, 2, 3], &[3]],
            &[&[2, 6, 5, 3], &[3, 3, 3, 2], &[2]],
            &[&[1, 6, 7, 2], &[2, 2, 2, 4], &[4]],
        ],
        away_from_zero: false,
        build: |g, x, v| {
            let (stride, pad) = conv_variant(v);
            g.conv2d(x[0], x[1], x[2], stride, pad)
        },
    },
    Case {
        name: "matmul",
        shapes: [&[&[2, 3], &[3, 4]], &[&[2, 3, 4], &[4, 2]], &[&[3, 2, 4], &[3, 4, 5]]],
        away_from_zero: false,
        build: |g, x, _| g.matmul(x[0], x[1]),
    },
    Case {
        name: "add",
        shapes: [&[&[5], &[5]], &[&[2, 3], &[2, 3]], &[&[1, 2, 2, 3], &[1, 2, 2, 3]]],
        away_from_zero: false,
        build: |g, x, _| g.add(x[0], x[1]),
    },
    Case {
        name: "mul",
        shapes: [&[&[5], &[5]], &[&[2, 3], &[2, 3]], &[&[1, 2, 2, 3], &[1, 2, 2, 3]]],
        away_from_zero: false,
        build: |g, x, _| g.mul(x[0], x[1]),
    },
    Case {
        name: "add_bias",
        shapes: [&[&[3, 4], &[4]], &[&[2, 2, 3], &[3]], &[&[1, 3, 3, 2], &[2]]],
        away_from_zero: false,
        build: |g, x, _| g.add_bias(x[0], x[1]),
    },
    Case {
        name: "scalar_mul",
        shapes: [&[&[4]], &[&[2, 3]], &[&[2, 2, 2]]],
        away_from_zero: false,
        build: |g, x, v| Ok(g.scalar_mul(x[0], [0.5, -1.7, 3.0][v])),
    },
    Case {
        name: "relu",
        shapes: [&[&[7]], &[&[2, 3, 4]], &[&[1, 3, 3, 2]]],
        away_from_zero: true,
        build: |g, x, _| Ok(g.relu(x[0])),
    },
    Case {
        name: "silu",
        shapes: [&[&[7]], &[&[2, 3, 4]], &[&[1, 3, 3, 2]]],
        away_from_zero: false,
        build: |g, x, _| Ok(g.silu(x[0])),
    },
    Case {
        name: "sigmoid",
        shapes: [&[&[7]], &[&[2, 3, 4]], &[&[1, 3, 3, 2]]],
        away_from_zero: false,
        build: |g, x, _| Ok(g.sigmoid(x[0])),
    },
    Case {
        name: "softmax",
        shapes: [&[&[5]], &[&[3, 4]], &[&[2, 3, 4]]],
        away_from_zero: false,
        build: |g, x, v| g.softmax(x[0], [0, 1, 1][v]),
    },
    Case {
        name: "layer_norm",
        shapes: [
            &[&[6], &[6], &[6]],
            &[&[3, 4], &[4], &[4]],
            &[&[2, 3, 4], &[3], &[3]],
        ],
        away_from_zero: false,
        build: |g, x, v| g.layer_norm(x[0], [0, 1, 1][v], x[1], x[2]),
    },
    Case {
        name: "batch_norm_train",
        shapes: [
            &[&[6, 2], &[2], &[2]],
            &[&[2, 3, 3, 4], &[4], &[4]],
            &[&[3, 2, 2, 3], &[3], &[3]],
        ],
        away_from_zero: false,
        build: |g, x, _| g.batch_norm_train(x[0], x[1], x[2]).map(|(y, _, _)| y),
    },
    Case {
        name: "batch_norm_infer",
        shapes: [
            &[&[6, 2], &[2], &[2]],
            &[&[2, 3, 3, 4], &[4], &[4]],
            &[&[3, 2, 2, 3], &[3], &[3]],
        ],
        away_from_zero: false,
        build: |g, x, _| {
            let c = *g.shape(x[0]).last().unwrap();
            let (mean, var) = bn_fixed_stats(c);
            g.batch_norm_infer(x[0], x[1], x[2], &mean, &var)
        },
    },
    Case {
        name: "concat",
        shapes: [
            &[&[2, 3], &[2, 1]],
            &[&[2, 2, 2], &[2, 1, 2], &[2, 3, 2]],
            &[&[1, 2, 2, 3], &[1, 2, 2, 2]],
        ],
        away_from_zero: false,
        build: |g, x, v| g.concat(x, [1, 1, 3][v]),
    },
    Case {
        name: "bilinear_upsample",
        shapes: [&[&[1, 2, 3, 2]], &[&[2, 3, 3, 1]], &[&[1, 4, 4, 3]]],
        away_from_zero: false,
        build: |g, x, v| g.bilinear_upsample(x[0], [2, 3, 2][v]),
    },
    Case {
        name: "unfold",
        shapes: [&[&[1, 4, 4, 2]], &[&[2, 4, 6, 1]], &[&[1, 6, 6, 2]]],
        away_from_zero: false,
        build: |g, x, v| g.unfold(x[0], [2, 2, 3][v]),
    },
    Case {
        name: "fold",
        shapes: [&[&[4, 4, 2]], &[&[8, 6, 1]], &[&[9, 4, 2]]],
        away_from_zero: false,
        build: |g, x, v| {
            let (patch, shape) = [(2, [1, 4, 4, 2]), (2, [2, 4, 6, 1]), (3, [1, 6, 6, 2])][v];
            g.fold(x[0], patch, shape)
        },
    },
    Case {
        name: "reshape",
        shapes: [&[&[6]], &[&[2, 3, 4]], &[&[1, 2, 2, 3]]],
        away_from_zero: false,
        build: |g, x, v| {
            let target: &[usize] = [&[3, 2][..], &[4, 6][..], &[12][..]][v];
            g.reshape(x[0], target)
        },
    },
    Case {
        name: "permute",
        shapes: [&[&[2, 3]], &[&[2, 3, 4]], &[&[1, 2, 3, 2]]],
        away_from_zero: false,
        build: |g, x, v| {
            let perm: &[usize] = [&[1, 0][..], &[2, 0, 1][..], &[0, 2, 1, 3][..]][v];
            g.permute(x[0], perm)
        },
    },
    Case {
        name: "huber",
        shapes: [&[&[6], &[6]], &[&[3, 4], &[3, 4]], &[&[1, 3, 3, 2], &[1, 3, 3, 2]]],
        away_from_zero: false,
        build: |g, x, _| g.huber(x[0], x[1]),
    },
    Case {
        name: "sum",
        shapes: [&[&[5]], &[&[2, 3]], &[&[2, 2, 3]]],
        away_from_zero: false,
        build: |g, x, _| Ok(g.sum(x[0])),
    },
    Case {
        name: "mean",
        shapes: [&[&[5]], &[&[2, 3]], &[&[2, 2, 3]]],
        away_from_zero: false,
        build: |g, x, _| Ok(g.mean(x[0])),
    },
];

/// Names of every op covered by [`check_op`].
pub fn op_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

fn sample_input(shape: &[usize], away_from_zero: bool, scale: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(shape.to_vec(), -scale, scale, rng);
    if away_from_zero {
        for v in t.data_mut() {
            if v.abs() < 0.05 {
                *v = if *v < 0.0 { -0.05 - v.abs() } else { 0.05 + *v };
            }
        }
    }
    t
}

fn probe(build: Builder, inputs: &[Tensor], variant: usize, proj: Option<&Tensor>) -> Result<(Graph, Var, Vec<Var>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(&format!("in{i}"), t))
        .collect();
    let out = build(&mut g, &vars, variant)?;
    let out = match proj {
        Some(r) => {
            let r = g.constant(r.clone());
            let p = g.mul(out, r)?;
            g.sum(p)
        }
        None => out,
    };
    Ok((g, out, vars))
}

/// `Σ out ⊙ r` accumulated in `f64`.
fn projected(build: Builder, inputs: &[Tensor], variant: usize, r: &Tensor) -> Result<f64> {
    let (g, out, _) = probe(build, inputs, variant, None)?;
    Ok(g.value(out)
        .data()
        .iter()
        .zip(r.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum())
}

/// Norm-wise relative error between analytic and numeric gradient samples.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference of `f` at `x` along element `index`.
pub fn central_difference(f: &mut dyn FnMut(&Tensor) -> Result<f64>, x: &Tensor, index: usize, eps: f32) -> Result<f64> {
    let mut probe = x.clone();
    let orig = probe.data()[index];
    probe.data_mut()[index] = orig + eps;
    let plus = f(&probe)?;
    probe.data_mut()[index] = orig - eps;
    let minus = f(&probe)?;
    // Use the step actually representable in f32.
    let h = (orig + eps) as f64 - (orig - eps) as f64;
    Ok((plus - minus) / h)
}

fn check_case(case: &Case, variant: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(variant as u64));
    let scale = if case.name == "huber" { 1.5 } else { 1.0 };
    let inputs: Vec<Tensor> = case.shapes[variant]
        .iter()
        .map(|s| sample_input(s, case.away_from_zero, scale, &mut rng))
        .collect();
    let (g0, out0, _) = probe(case.build, &inputs, variant, None)?;
    let r = Tensor::uniform(g0.shape(out0).to_vec(), -1.0, 1.0, &mut rng);
    drop(g0);

    let (g, loss, vars) = probe(case.build, &inputs, variant, Some(&r))?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("parameter gradient");
        let n = inputs[i].len();
        let picks: Vec<usize> = if n <= MAX_CHECKED_ELEMENTS {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, MAX_CHECKED_ELEMENTS).into_vec();
            v.sort_unstable();
            v
        };
        let mut a = Vec::with_capacity(picks.len());
        let mut num = Vec::with_capacity(picks.len());
        for &idx in &picks {
            let mut f = |t: &Tensor| {
                let mut perturbed = inputs.clone();
                perturbed[i] = t.clone();
                projected(case.build, &perturbed, variant, &r)
            };
            num.push(central_difference(&mut f, &inputs[i], idx, FD_EPS)?);
            a.push(analytic.data()[idx] as f64);
        }
        worst = worst.max(relative_error(&a, &num));
    }
    Ok(GradCheckReport {
        op: case.name,
        variant,
        seed,
        max_rel_error: worst,
    })
}

/// Checks one op (all three shape variants) for a seed.
pub fn check_op(name: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
    let case = CASES
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::invalid("gradcheck", format!("unknown op '{name}'; known: {}", op_names().join(", "))))?;
    (0..3).map(|v| check_case(case, v, seed)).collect()
}

/// Checks every op for a seed.
pub fn check_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for case in CASES {
        for v in 0..3 {
            out.push(check_case(case, v, seed)?);
        }
    }
    Ok(out)
}

/// One sampled model parameter entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamProbe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradCheck {
    pub probes: Vec<ParamProbe>,
    pub rel_error: f64,
}

/// Checks `count` distinct, uniformly chosen parameter entries of `model` against the
/// training loss on `(images, targets)`. Batch norm runs in training mode.
pub fn check_model(model: &Model, images: &Tensor, targets: &[LabelMaps], count: usize, seed: u64) -> Result<ModelGradCheck> {
    let mut pass = model.forward(images, NormMode::Train)?;
    let (loss, _) = pass.loss(targets)?;
    let grads = pass.graph.backward(loss)?.into_named();

    // Distinct scalar entries, uniform over the whole parameter vector.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<(&str, usize)> = model.params.iter().map(|(n, t)| (n, t.len())).collect();
    let total: usize = entries.iter().map(|e| e.1).sum();
    let mut picks = sample(&mut rng, total, count.min(total)).into_vec();
    picks.sort_unstable();
    let mut probes = Vec::with_capacity(picks.len());
    for flat in picks {
        let (mut name, mut index) = (entries[0].0, flat);
        for &(n, len) in &entries {
            if index < len {
                name = n;
                break;
            }
            index -= len;
        }
        let value = model.params.get(name)?;
        let mut f = |t: &Tensor| -> Result<f64> {
            let mut m = model.clone();
            *m.params.get_mut(name).expect("sampled name") = t.clone();
            let outputs = m.forward(images, NormMode::Train)?.outputs()?;
            let mut sum = 0.0;
            for (o, t) in outputs.iter().zip(targets) {
                sum += total_loss(o, t)?.total();
            }
            Ok(sum / outputs.len() as f64)
        };
        let numeric = central_difference(&mut f, value, index, FD_EPS)?;
        let analytic = grads.get(name).map_or(0.0, |g| g.data()[index] as f64);
        probes.push(ParamProbe {
            name: name.to_string(),
            index,
            analytic,
            numeric,
        });
    }
    let a: Vec<f64> = probes.iter().map(|p| p.analytic).collect();
    let n: Vec<f64> = probes.iter().map(|p| p.numeric).collect();
    Ok(ModelGradCheck {
        rel_error: relative_error(&a, &n),
        probes,
    })
}

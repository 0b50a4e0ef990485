use std::collections::BTreeMap;

use celldet::model::{param_count, Layers, Model, ModelConfig, ParamStore};
use celldet::tensor::{NormMode, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parameter count written out layer by layer.
fn count_by_hand(c: &ModelConfig) -> usize {
    let mut n = 0;
    let mut cin = 3;
    for &w in &c.backbone_widths {
        n += 9 * cin * w + 2 * w;
        cin = w;
    }
    let (ch, d, hid) = (c.neck_channels, c.transformer_dim, c.transformer_dim * c.mlp_ratio);
    for _ in 0..c.num_mobilevit_blocks {
        n += 9 * cin * ch + ch;
        n += ch * d + d;
        n += c.transformer_depth * (2 * d + 4 * (d * d + d) + 2 * d + (d * hid + hid) + (hid * d + d));
        n += 2 * d;
        n += d * ch + ch;
        n += 9 * (cin + ch) * ch + ch;
        n += 9 * ch * ch + ch + 2 * ch;
        cin = ch;
    }
    let hc = c.head_channels;
    let trunk: usize = (0..c.upsample_stages)
        .map(|s| 9 * if s == 0 { cin } else { hc } * hc + 2 * hc)
        .sum();
    n + 2 * trunk + 3 * (hc + 1)
}

#[test]
fn parameter_count_matches_hand_formula() {
    for cfg in [ModelConfig::tiny(32), ModelConfig::desk(), ModelConfig::paper_scale()] {
        let model = Model::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.param_count(), count_by_hand(&cfg));
        assert_eq!(param_count(&cfg), count_by_hand(&cfg));
    }
}

fn attention_params(d: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for name in ["q", "k", "v", "o"] {
        p.insert(format!("a.{name}.w"), Tensor::uniform([d, d], -0.8, 0.8, &mut rng));
        p.insert(format!("a.{name}.b"), Tensor::uniform([d], -0.2, 0.2, &mut rng));
    }
    p
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (din, dout) = (w.dim(0), w.dim(1));
    (0..dout)
        .map(|j| b.data()[j] as f64 + (0..din).map(|i| x[i] * w.data()[i * dout + j] as f64).sum::<f64>())
        .collect()
}

#[test]
fn attention_matches_hand_computation() {
    let (n, d, heads) = (5, 6, 2);
    let dh = d / heads;
    let params = attention_params(d, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::uniform([1, n, d], -1.0, 1.0, &mut rng);
    let norms = BTreeMap::new();
    let mut l = Layers::new(&params, &norms, NormMode::Infer);
    let xv = l.graph.constant(x.clone());
    let (out, weights) = l.self_attention("a", xv, heads).unwrap();

    let get = |s: &str| params.get(s).unwrap();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.data()[i * d..(i + 1) * d].iter().map(|&v| v as f64).collect()).collect();
    let q: Vec<_> = rows.iter().map(|r| affine(r, get("a.q.w"), get("a.q.b"))).collect();
    let k: Vec<_> = rows.iter().map(|r| affine(r, get("a.k.w"), get("a.k.b"))).collect();
    let v: Vec<_> = rows.iter().map(|r| affine(r, get("a.v.w"), get("a.v.b"))).collect();
    let mut ctx = vec![vec![0.0f64; d]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..n {
                let a = e[j] / z;
                let got = l.graph.value(weights).data()[(h * n + i) * n + j] as f64;
                assert!((got - a).abs() < 1e-5, "weight h{h} {i}->{j}: {got} vs {a}");
                for c in cols.clone() {
                    ctx[i][c] += a * v[j][c];
                }
            }
        }
    }
    for i in 0..n {
        let want = affine(&ctx[i], get("a.o.w"), get("a.o.b"));
        for c in 0..d {
            let got = l.graph.value(out).data()[i * d + c] as f64;
            assert!((got - want[c]).abs() < 1e-4, "out[{i},{c}]: {got} vs {}", want[c]);
        }
    }
}

#[test]
fn encoder_with_silent_branches_is_identity() {
    let cfg = ModelConfig::tiny(32);
    let mut model = Model::new(cfg.clone(), 1).unwrap();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in names {
        if name.contains(".attn.o.") || name.contains(".mlp.fc2.") {
            let t = model.params.get_mut(&name).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = Tensor::uniform([4, 16, cfg.transformer_dim], -1.0, 1.0, &mut rng);
    let mut l = Layers::new(&model.params, &model.norms, NormMode::Infer);
    let s = l.graph.constant(seq.clone());
    let out = l.transformer_encoder("neck.0.tf", s, cfg.transformer_depth, cfg.attention_heads).unwrap();
    assert_eq!(l.graph.value(out), &seq);
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = ModelConfig::tiny(32);
    let model = Model::new(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform([2, 32, 32, 3], 0.0, 1.0, &mut rng);
    let mut pass = model.forward(&x, NormMode::Train).unwrap();
    let targets: Vec<_> = pass.outputs().unwrap().iter().map(|o| {
        let mut t = o.clone();
        t.heatmap.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        t.height_map.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        t.width_map.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        t
    }).collect();
    let (loss, _) = pass.loss(&targets).unwrap();
    let grads = pass.graph.backward(loss).unwrap().into_named();
    for (name, value) in model.params.iter() {
        let g = grads.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        assert_eq!(g.shape(), value.shape());
        assert!(g.is_finite(), "{name}");
        assert!(g.data().iter().any(|&v| v != 0.0), "zero gradient for {name}");
    }
}

#[test]
fn batch_norm_statistics_are_recorded_per_layer() {
    let cfg = ModelConfig::tiny(32);
    let mut model = Model::new(cfg, 0).unwrap();
    let x = Tensor::full([1, 32, 32, 3], 0.3);
    let pass = model.forward(&x, NormMode::Train).unwrap();
    assert_eq!(pass.norm_updates.len(), model.norms.len());
    let before = model.norms.clone();
    model.apply_norm_updates(&pass.norm_updates).unwrap();
    assert_ne!(before, model.norms);
}

#[test]
fn forward_rejects_wrong_input() {
    let model = Model::new(ModelConfig::tiny(32), 0).unwrap();
    assert!(model.predict(&Tensor::zeros([1, 16, 16, 3])).is_err());
    assert!(model.predict(&Tensor::zeros([1, 32, 32, 1])).is_err());
}

#[test]
fn initialization_is_seeded() {
    let cfg = ModelConfig::tiny(16);
    assert_eq!(Model::new(cfg.clone(), 8).unwrap(), Model::new(cfg.clone(), 8).unwrap());
    assert_ne!(Model::new(cfg.clone(), 8).unwrap(), Model::new(cfg, 9).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn output_stride_is_one(k in 1usize..5) {
        let size = 16 * k;
        let model = Model::new(ModelConfig::tiny(size), 0).unwrap();
        let pass = model.forward(&Tensor::zeros([1, size, size, 3]), NormMode::Infer).unwrap();
        prop_assert_eq!(pass.graph.shape(pass.features), &[1, size / 8, size / 8, 8][..]);
        for v in [pass.heatmap, pass.height, pass.width] {
            prop_assert_eq!(pass.graph.shape(v), &[1, size, size, 1][..]);
            prop_assert!(pass.graph.value(v).data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}

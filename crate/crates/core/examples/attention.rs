//! Runs one self-attention layer on a patch sequence and prints the attention
//! rows, which sum to one.
//!
//! cargo run --example attention

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use celldet::model::{Layers, ParamStore};
use celldet::tensor::{NormMode, Tensor};

fn main() -> celldet::Result<()> {
    let (n, d, heads) = (6, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamStore::new();
    for p in ["q", "k", "v", "o"] {
        params.insert(format!("attn.{p}.w"), Tensor::randn([d, d], 0.5, &mut rng));
        params.insert(format!("attn.{p}.b"), Tensor::zeros([d]));
    }
    let norms = BTreeMap::new();
    let mut layers = Layers::new(&params, &norms, NormMode::Infer);
    let x = layers.graph.constant(Tensor::randn([1, n, d], 1.0, &mut rng));
    let (out, weights) = layers.self_attention("attn", x, heads)?;
    println!("output {:?}, weights {:?}", layers.graph.shape(out), layers.graph.shape(weights));
    let w = layers.graph.value(weights).data();
    for (r, row) in w.chunks(n).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("head {} query {}: [{}] sum {:.4}", r / n, r % n, cells.join(" "), row.iter().sum::<f32>());
    }
    Ok(())
}

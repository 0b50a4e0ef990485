//! Prints parameter counts and tensor shapes through the detector for the
//! desk and full-resolution profiles.
//!
//! cargo run --example model_shapes

use std::time::Instant;

use celldet::model::{Model, ModelConfig};
use celldet::tensor::{NormMode, Tensor};

fn main() -> celldet::Result<()> {
    for (label, cfg) in [("desk", ModelConfig::desk()), ("full", ModelConfig::paper_scale())] {
        let model = Model::new(cfg.clone(), 0)?;
        let s = cfg.input_size;
        let t0 = Instant::now();
        let pass = model.forward(&Tensor::zeros([1, s, s, 3]), NormMode::Infer)?;
        let g = &pass.graph;
        println!("{label}: {} parameters, forward {:.2?}", model.param_count(), t0.elapsed());
        println!("  features {:?}", g.shape(pass.features));
        println!("  neck     {:?}", g.shape(pass.neck));
        println!("  heatmap  {:?}", g.shape(pass.heatmap));
        println!("  height   {:?}", g.shape(pass.height));
        println!("  width    {:?}", g.shape(pass.width));
    }
    Ok(())
}

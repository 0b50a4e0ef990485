//! Finite-difference gradient checks for every tensor op, then for a handful
//! of parameters of a small end-to-end model.
//!
//! cargo run --example gradcheck_ops -- [seed]

use celldet::codec::{encode, EncodeParams};
use celldet::data::{model_input, synth_generate, SynthConfig};
use celldet::gradcheck::{check_all, check_model, MODEL_TOLERANCE, OP_TOLERANCE};
use celldet::model::{Model, ModelConfig};

fn main() -> celldet::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let reports = check_all(seed)?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    for r in &reports {
        println!("{:<18} shape {}  {:.2e}", r.op, r.variant, r.max_rel_error);
    }
    println!("worst op error {worst:.2e} (tolerance {OP_TOLERANCE:e})");

    let cfg = ModelConfig::tiny(32);
    let model = Model::new(cfg.clone(), seed)?;
    let sample = synth_generate(&SynthConfig {
        image_size: 32,
        cell_count_range: [2, 3],
        cell_axis_range: [5.0, 9.0],
        seed,
        ..SynthConfig::default()
    })?;
    let anns: Vec<_> = sample.cells.iter().map(|c| c.annotation()).collect();
    let targets = encode(&anns, 32, 32, &EncodeParams::default())?;
    let check = check_model(&model, &model_input(&sample.image), &[targets], 12, seed)?;
    for p in &check.probes {
        println!("{:<28} [{:>4}]  analytic {:+.6e}  numeric {:+.6e}", p.name, p.index, p.analytic, p.numeric);
    }
    println!("model error {:.2e} (tolerance {MODEL_TOLERANCE:e})", check.rel_error);
    Ok(())
}

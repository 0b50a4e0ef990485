//! Attention versus convolution operation counts as the token count grows.
//!
//! cargo run --example flops

use celldet::tensor::complexity::{conv_flops, mhsa_flops, ComplexityParams};

fn main() -> celldet::Result<()> {
    let (d, h, k, f) = (96, 4, 9, 96);
    println!("{:>6} {:>16} {:>14} {:>8}", "n", "mhsa", "conv", "ratio");
    for side in [12u64, 24, 48, 96] {
        let p = ComplexityParams::new(side * side, d, h, k, f)?;
        let (m, c) = (mhsa_flops(&p), conv_flops(&p));
        println!("{:>6} {:>16} {:>14} {:>8.1}", p.n, m, c, m as f64 / c as f64);
    }
    Ok(())
}

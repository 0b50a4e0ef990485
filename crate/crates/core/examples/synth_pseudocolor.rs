//! Writes one synthetic image, its instance mask and the pseudocolored model
//! input as PNG files.
//!
//! cargo run --example synth_pseudocolor -- [out_dir] [seed]

use std::path::PathBuf;

use celldet::data::io::{write_gray, write_mask, write_rgb};
use celldet::data::{minmax_normalize, pseudocolor, synth_generate, SynthConfig};

fn main() -> celldet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_out".into()));
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    std::fs::create_dir_all(&out)?;

    let sample = synth_generate(&SynthConfig { seed, ..SynthConfig::default() })?;
    let (h, w) = sample.image.dims();
    write_gray(&out.join("image.png"), &sample.image)?;
    write_mask(&out.join("mask.png"), &sample.mask)?;
    write_rgb(&out.join("color.png"), h, w, &pseudocolor(&minmax_normalize(&sample.image)))?;
    for c in &sample.cells {
        println!(
            "cell {}: centre ({:.1}, {:.1}) semi-axes {:.1}/{:.1} angle {:.2} intensity {:.2}",
            c.id, c.cx, c.cy, c.a, c.b, c.angle, c.intensity
        );
    }
    println!("wrote image.png, mask.png and color.png to {}", out.display());
    Ok(())
}

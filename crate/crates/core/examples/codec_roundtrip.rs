//! Encodes planted cells into heatmap and dimension targets, decodes them
//! back and reports the recovery error.
//!
//! cargo run --example codec_roundtrip -- [seed]

use celldet::codec::{decode, encode, match_detections, EncodeParams, DEFAULT_THRESHOLD};
use celldet::data::{synth_generate, SynthConfig};

fn main() -> celldet::Result<()> {
    let seed = std::env::args().nth(1).map_or(7, |s| s.parse().expect("seed"));
    let cfg = SynthConfig { seed, ..SynthConfig::default() };
    let sample = synth_generate(&cfg)?;
    let anns: Vec<_> = sample.cells.iter().map(|c| c.annotation()).collect();
    let size = cfg.image_size;
    let maps = encode(&anns, size, size, &EncodeParams::default())?;
    let dets = decode(&maps, DEFAULT_THRESHOLD)?;
    println!("{} cells planted, {} decoded", anns.len(), dets.len());
    for (a, d, dist) in match_detections(&anns, &dets) {
        let (t, p) = (&anns[a], &dets[d]);
        println!(
            "cell {:>2}: centre ({:5.1},{:5.1}) -> ({:5.1},{:5.1})  off {:.2}px  size {:4.1}x{:4.1} -> {:4.1}x{:4.1}",
            t.id, t.cx, t.cy, p.cx, p.cy, dist, t.w, t.h, p.w, p.h
        );
    }
    Ok(())
}

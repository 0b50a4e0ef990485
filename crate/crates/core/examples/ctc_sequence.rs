//! Loads a Cell Tracking Challenge style sequence (`<root>/<seq>/tNNN.tif`
//! with masks in `<root>/<seq>_GT/SEG/man_segNNN.tif`) and prints the cells
//! found in each annotated frame.
//!
//! cargo run --example ctc_sequence -- <root> [sequence]

use std::path::PathBuf;

use celldet::codec::annotations_from_instance_mask;
use celldet::data::load_ctc_sequence;

fn main() -> celldet::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(root) = args.next().map(PathBuf::from) else {
        eprintln!("usage: ctc_sequence <root> [sequence]");
        std::process::exit(2);
    };
    let seq = args.next().unwrap_or_else(|| "01".into());
    for frame in load_ctc_sequence(&root, &seq)? {
        let (h, w) = frame.image.dims();
        match &frame.mask {
            Some(mask) => {
                let cells = annotations_from_instance_mask(mask);
                println!("t{} {w}x{h}: {} annotated cells", frame.frame, cells.len());
            }
            None => println!("t{} {w}x{h}: no mask", frame.frame),
        }
    }
    Ok(())
}

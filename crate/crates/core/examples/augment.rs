//! Applies each augmentation to a synthetic sample and checks that the label
//! set of the mask survives.
//!
//! cargo run --example augment -- [seed]

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use celldet::data::augment::AUGMENTATION_NAMES;
use celldet::data::{augment, synth_generate, AugmentConfig, Augmentation, SynthConfig};
use celldet::grid::LabelMask;

fn labels(mask: &LabelMask) -> BTreeSet<u32> {
    mask.data().iter().copied().filter(|&l| l != 0).collect()
}

fn main() -> celldet::Result<()> {
    let seed = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let sample = synth_generate(&SynthConfig { seed, ..SynthConfig::default() })?;
    let cfg = AugmentConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let before = labels(&sample.mask);
    for name in AUGMENTATION_NAMES {
        let aug = Augmentation::sample(name, &cfg, &mut rng)?;
        let (_, mask) = augment(&sample.image, &sample.mask, &aug, seed)?;
        let after = labels(&mask);
        println!("{aug:?}: {} of {} labels kept, none invented: {}", after.len(), before.len(), after.is_subset(&before));
    }
    Ok(())
}

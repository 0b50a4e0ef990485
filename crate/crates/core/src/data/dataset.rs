use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment, resize_to_input, AugmentConfig, Augmentation};
use super::color::{minmax_normalize, pseudocolor, pseudocolor_tensor};
use super::io::{read_gray, read_mask, write_gray, write_mask, write_rgb};
use super::synth::{synth_generate, SynthConfig};
use crate::codec::{annotations_from_instance_mask, encode, CellAnnotation, EncodeParams};
use crate::error::{Error, Result};
use crate::grid::{LabelMask, LabelMaps, Plane};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

const SYNTH_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

/// Dataset generation settings; `synth.seed` is the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub num_samples: usize,
    pub synth: SynthConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DataConfig {
    /// 250 samples: 200 / 25 / 25 after splitting.
    pub fn desk() -> Self {
        DataConfig {
            num_samples: 250,
            synth: SynthConfig::default(),
            augment: AugmentConfig::default(),
        }
    }

    /// The augmented dataset size used for the full-scale setup.
    pub fn paper_scale() -> Self {
        DataConfig {
            num_samples: 2150,
            ..Self::desk()
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.synth.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.augment.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (expected train, val or test)"))),
        }
    }
}

/// Seed for `(master, index)` on an independent stream.
pub fn derive_seed(master: u64, index: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 16);
    rng.next_u64()
}

/// Sizes `⌊0.8n⌋`, `⌊0.1n⌋` and the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Seeded shuffle of `0..n`, cut into train / validation / test.
pub fn split_indices(n: usize, seed: u64) -> [Vec<usize>; 3] {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let (tr, va, _) = split_sizes(n);
    let test = idx.split_off(tr + va);
    let val = idx.split_off(tr);
    [idx, val, test]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// Grayscale in `[0, 1]`.
    pub image: Plane,
    pub mask: LabelMask,
    pub augmentation: Option<Augmentation>,
}

/// Generates and optionally augments sample `index`. Depends only on
/// `(master seed, index)`.
pub fn build_sample(cfg: &DataConfig, index: usize) -> Result<Sample> {
    let master = cfg.master_seed();
    let synth = SynthConfig {
        seed: derive_seed(master, index as u64, SYNTH_STREAM),
        ..cfg.synth.clone()
    };
    let s = synth_generate(&synth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, index as u64, AUGMENT_STREAM));
    let aug_cfg = &cfg.augment;
    if aug_cfg.ops.is_empty() || rng.random::<f32>() >= aug_cfg.probability {
        return Ok(Sample {
            id: index,
            image: s.image,
            mask: s.mask,
            augmentation: None,
        });
    }
    let name = &aug_cfg.ops[rng.random_range(0..aug_cfg.ops.len())];
    let aug = Augmentation::sample(name, aug_cfg, &mut rng)?;
    let (image, mask) = augment(&s.image, &s.mask, &aug, rng.next_u64())?;
    Ok(Sample {
        id: index,
        image,
        mask,
        augmentation: Some(aug),
    })
}

/// Builds every sample in parallel; the result is independent of thread count.
pub fn build_dataset(cfg: &DataConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.num_samples).into_par_iter().map(|i| build_sample(cfg, i)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub split: Split,
    pub image: String,
    pub color: String,
    pub mask: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub augmentation: Option<Augmentation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DataConfig,
    pub samples: Vec<ManifestEntry>,
}

/// Generates the dataset and writes grayscale, pseudocolored and mask PNGs
/// plus `manifest.json` under `dir`.
pub fn write_dataset(cfg: &DataConfig, dir: &Path) -> Result<Manifest> {
    let samples = build_dataset(cfg)?;
    for sub in ["images", "color", "masks"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut split_of = vec![Split::Train; samples.len()];
    let [_, val, test] = split_indices(samples.len(), cfg.master_seed());
    for i in val {
        split_of[i] = Split::Val;
    }
    for i in test {
        split_of[i] = Split::Test;
    }
    let entries = samples
        .par_iter()
        .map(|s| {
            let stem = format!("{:05}.png", s.id);
            let entry = ManifestEntry {
                id: s.id,
                split: split_of[s.id],
                image: format!("images/{stem}"),
                color: format!("color/{stem}"),
                mask: format!("masks/{stem}"),
                augmentation: s.augmentation,
            };
            write_gray(&dir.join(&entry.image), &s.image)?;
            let (h, w) = s.image.dims();
            write_rgb(&dir.join(&entry.color), h, w, &pseudocolor(&minmax_normalize(&s.image)))?;
            write_mask(&dir.join(&entry.mask), &s.mask)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        samples: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Model input for a grayscale image: min-max scaled, then pseudocolored.
pub fn model_input(gray: &Plane) -> Tensor {
    pseudocolor_tensor(&minmax_normalize(gray))
}

/// A sample ready for the model: `[1, S, S, 3]` input and encoded targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: usize,
    pub input: Tensor,
    pub annotations: Vec<CellAnnotation>,
    pub targets: LabelMaps,
}

/// Annotations rescaled from an `h × w` image to `size × size`.
pub fn rescale_annotations(anns: &[CellAnnotation], height: usize, width: usize, size: usize) -> Vec<CellAnnotation> {
    let (sx, sy) = (size as f32 / width as f32, size as f32 / height as f32);
    let hi = (size - 1) as f32;
    anns.iter()
        .map(|a| {
            let mut s = a.scaled(sx, sy);
            s.cx = s.cx.clamp(0.0, hi);
            s.cy = s.cy.clamp(0.0, hi);
            s.w = s.w.max(1.0);
            s.h = s.h.max(1.0);
            s
        })
        .collect()
}

/// Resizes to the model input size and encodes the label targets.
pub fn prepare_example(id: usize, image: &Plane, mask: &LabelMask, size: usize, params: &EncodeParams) -> Result<Example> {
    let (h, w) = image.dims();
    let anns = rescale_annotations(&annotations_from_instance_mask(mask), h, w, size);
    let (resized, _) = resize_to_input(image, None, size);
    let targets = encode(&anns, size, size, params)?;
    Ok(Example {
        id,
        input: model_input(&resized),
        annotations: anns,
        targets,
    })
}

/// A dataset directory written by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.samples.iter().filter(move |e| e.split == split)
    }

    pub fn load_sample(&self, entry: &ManifestEntry) -> Result<(Plane, LabelMask)> {
        Ok((read_gray(&self.root.join(&entry.image))?, read_mask(&self.root.join(&entry.mask))?))
    }

    /// Loads and encodes every sample of `split`, in manifest order.
    pub fn examples(&self, split: Split, size: usize, params: &EncodeParams) -> Result<Vec<Example>> {
        let entries: Vec<&ManifestEntry> = self.entries(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let (img, mask) = self.load_sample(e)?;
                prepare_example(e.id, &img, &mask, size, params)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_partition() {
        for n in [0, 1, 9, 10, 250] {
            let [a, b, c] = split_indices(n, 7);
            assert_eq!((a.len(), b.len(), c.len()), split_sizes(n));
            let mut all: Vec<usize> = a.iter().chain(&b).chain(&c).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        assert_eq!(split_sizes(250), (200, 25, 25));
    }

    #[test]
    fn split_parse() {
        assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
        assert!("holdout".parse::<Split>().is_err());
    }

    #[test]
    fn seeds_differ_by_index_and_stream() {
        let a = derive_seed(1, 0, SYNTH_STREAM);
        assert_ne!(a, derive_seed(1, 1, SYNTH_STREAM));
        assert_ne!(a, derive_seed(1, 0, AUGMENT_STREAM));
        assert_eq!(a, derive_seed(1, 0, SYNTH_STREAM));
    }
}

//! PASCAL VOC tooling: annotation parsing, the slice (classification-only)
//! dataset, class balancing and train/validation splitting.

mod ppm;
mod slices;
mod voc;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use ppm::{read_ppm, write_ppm};
pub(crate) use slices::load_image;
pub use slices::{
    build_slices, load_slices, read_manifest, write_manifest, write_slices, ClassHistogram, CropFormat, DirImageSource,
    ImageSource, ManifestEntry, SliceSample,
};
pub use voc::{parse_voc, read_voc_dir, serialize_voc, PixelBox, VocAnnotation, VocObject};

/// Ordered class names with human-readable display names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    names: Vec<String>,
    display: Vec<String>,
}

impl LabelCatalog {
    pub fn new(names: Vec<String>, display: Vec<String>) -> Result<Self> {
        if names.len() != display.len() {
            return Err(Error::config("every class needs exactly one display name"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names, display })
    }

    /// The three face-mask classes with their canonical ids.
    pub fn mask() -> Self {
        Self {
            names: ["with_mask", "without_mask", "mask_weared_incorrect"]
                .map(String::from)
                .to_vec(),
            display: ["With mask", "Without mask", "Mask worn incorrectly"]
                .map(String::from)
                .to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn display_name(&self, id: usize) -> Option<&str> {
        self.display.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn display_names(&self) -> &[String] {
        &self.display
    }
}

impl Default for LabelCatalog {
    fn default() -> Self {
        Self::mask()
    }
}

/// Anything carrying a class id.
pub trait Labeled {
    fn class_id(&self) -> usize;
}

impl Labeled for usize {
    fn class_id(&self) -> usize {
        *self
    }
}

/// Caps every class at `cap` samples, choosing uniformly without
/// replacement. Survivors keep their original relative order.
pub fn undersample<L: Labeled + Clone>(samples: &[L], cap: usize, seed: u64) -> Result<Vec<L>> {
    if cap == 0 {
        return Err(Error::config("undersampling cap must be at least 1"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.class_id()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(samples.len());
    for indices in by_class.values() {
        if indices.len() <= cap {
            keep.extend_from_slice(indices);
        } else {
            keep.extend(
                rand::seq::index::sample(&mut rng, indices.len(), cap)
                    .into_iter()
                    .map(|j| indices[j]),
            );
        }
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

/// Validation share of a 4:1 split, rounded to nearest.
pub fn validation_size(n: usize) -> usize {
    // n/5 never ends in exactly .5, so round-half-up is unambiguous.
    (n + 2) / 5
}

/// Seeded 4:1 train/validation partition. Both halves keep input order.
pub fn split_4to1<I: Clone>(items: &[I], seed: u64) -> (Vec<I>, Vec<I>) {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val, train) = order.split_at(validation_size(n));
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    (
        train.into_iter().map(|i| items[i].clone()).collect(),
        val.into_iter().map(|i| items[i].clone()).collect(),
    )
}

/// 4:1 split over groups (for slices: their source image), so no group
/// straddles the two halves.
pub fn split_grouped<I: Clone, K: Ord + Clone>(items: &[I], key: impl Fn(&I) -> K, seed: u64) -> (Vec<I>, Vec<I>) {
    let mut groups: Vec<K> = Vec::new();
    let mut seen = BTreeMap::new();
    for it in items {
        let k = key(it);
        if !seen.contains_key(&k) {
            seen.insert(k.clone(), groups.len());
            groups.push(k);
        }
    }
    let (_, val_groups) = split_4to1(&(0..groups.len()).collect::<Vec<_>>(), seed);
    let mut in_val = vec![false; groups.len()];
    for g in val_groups {
        in_val[g] = true;
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for it in items {
        if in_val[seen[&key(it)]] {
            val.push(it.clone());
        } else {
            train.push(it.clone());
        }
    }
    (train, val)
}

//! Class-labeled image sets, the class-disjoint split, contrastive pair
//! sampling and synthetic degradation.

pub mod degrade;
pub mod raster;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use degrade::{degrade_image, synthesize_handwriting, DegradationConfig, HandwritingOverlay};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    samples: Vec<(ImageTensor, u32)>,
    class_index: BTreeMap<u32, Vec<usize>>,
    class_names: BTreeMap<u32, String>,
}

impl LabeledImageSet {
    pub fn new(samples: Vec<(ImageTensor, u32)>) -> Result<Self> {
        let mut class_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, (_, class)) in samples.iter().enumerate() {
            class_index.entry(*class).or_default().push(i);
        }
        let class_names = class_index
            .keys()
            .map(|c| (*c, format!("class_{c:03}")))
            .collect();
        Ok(Self {
            samples,
            class_index,
            class_names,
        })
    }

    pub fn with_class_names(mut self, names: BTreeMap<u32, String>) -> Self {
        for (id, name) in names {
            if self.class_index.contains_key(&id) {
                self.class_names.insert(id, name);
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(ImageTensor, u32)] {
        &self.samples
    }

    pub fn image(&self, index: usize) -> &ImageTensor {
        &self.samples[index].0
    }

    pub fn class_of(&self, index: usize) -> u32 {
        self.samples[index].1
    }

    pub fn classes(&self) -> Vec<u32> {
        self.class_index.keys().copied().collect()
    }

    pub fn class_count(&self) -> usize {
        self.class_index.len()
    }

    /// Sample positions belonging to `class`, empty when absent.
    pub fn indices_of(&self, class: u32) -> &[usize] {
        self.class_index.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn class_name(&self, class: u32) -> Option<&str> {
        self.class_names.get(&class).map(String::as_str)
    }

    /// Subset holding only the given classes, keeping their ids and names.
    pub fn restrict_to(&self, classes: &[u32]) -> Result<Self> {
        let mut samples = Vec::new();
        for class in classes {
            for &i in self.indices_of(*class) {
                samples.push(self.samples[i].clone());
            }
        }
        Ok(Self::new(samples)?.with_class_names(self.class_names.clone()))
    }
}

/// Aligned (noisy input, clean target) pair for the translation network.
#[derive(Debug, Clone)]
pub struct GanPair {
    pub noisy: ImageTensor,
    pub clean: ImageTensor,
    pub class_id: u32,
}

impl GanPair {
    pub fn new(noisy: ImageTensor, clean: ImageTensor, class_id: u32) -> Result<Self> {
        noisy.ensure_same_layout(&clean)?;
        Ok(Self {
            noisy,
            clean,
            class_id,
        })
    }
}

/// Contrastive training pair; `label` is 0 for same class, 1 otherwise.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub x1: ImageTensor,
    pub x2: ImageTensor,
    pub label: u8,
    pub classes: (u32, u32),
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

/// Image files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect())
}

/// Loads `root/<class_name>/<image>` into a byte-range labeled set. Classes
/// are numbered in sorted directory-name order.
pub fn load_class_dataset(root: &Path, expected_size: (usize, usize)) -> Result<LabeledImageSet> {
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(Error::validation(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    let mut samples = Vec::new();
    let mut names = BTreeMap::new();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        let files = list_images(dir)?;
        if files.is_empty() {
            return Err(Error::validation(format!(
                "class directory {} holds no images",
                dir.display()
            )));
        }
        for file in files {
            let img = ImageTensor::load_resized(&file, expected_size.0, expected_size.1)?;
            samples.push((img, class_id as u32));
        }
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        names.insert(class_id as u32, name);
    }
    Ok(LabeledImageSet::new(samples)?.with_class_names(names))
}

/// Pairs `noisy_root/<rel>` with `clean_root/<rel>` for every image under the
/// noisy tree (one class subdirectory level, or flat).
pub fn load_pair_dataset(
    noisy_root: &Path,
    clean_root: &Path,
    expected_size: (usize, usize),
) -> Result<Vec<GanPair>> {
    for root in [noisy_root, clean_root] {
        if !root.is_dir() {
            return Err(Error::NotFound(root.to_path_buf()));
        }
    }
    let mut rels: Vec<(PathBuf, u32)> = list_images(noisy_root)?
        .into_iter()
        .filter_map(|p| p.file_name().map(|n| (PathBuf::from(n), 0)))
        .collect();
    let class_dirs: Vec<PathBuf> = sorted_entries(noisy_root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    for (class_id, dir) in class_dirs.iter().enumerate() {
        let class_name = dir.file_name().unwrap_or_default();
        for f in list_images(dir)? {
            rels.push((
                Path::new(class_name).join(f.file_name().unwrap_or_default()),
                class_id as u32,
            ));
        }
    }
    if rels.is_empty() {
        return Err(Error::validation(format!(
            "{} holds no images",
            noisy_root.display()
        )));
    }
    rels.into_iter()
        .map(|(rel, class)| {
            let (h, w) = expected_size;
            let noisy = ImageTensor::load_resized(&noisy_root.join(&rel), h, w)?;
            let clean = ImageTensor::load_resized(&clean_root.join(&rel), h, w)?
                .to_colorspace(noisy.color());
            GanPair::new(noisy, clean, class)
        })
        .collect()
}

/// Class-disjoint split: `round(train_fraction × classes)` classes go to the
/// training side, chosen by a seeded shuffle.
pub fn split_by_class(
    set: &LabeledImageSet,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = set.class_count();
    if n < 2 {
        return Err(Error::validation("split needs at least two classes"));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::validation(format!(
            "fraction {train_fraction} of {n} classes leaves one side empty"
        )));
    }
    let mut classes = set.classes();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, eval) = classes.split_at(n_train);
    let (mut train, mut eval) = (train.to_vec(), eval.to_vec());
    train.sort_unstable();
    eval.sort_unstable();
    Ok((set.restrict_to(&train)?, set.restrict_to(&eval)?))
}

/// Draws a similar pair with probability `p_similar`, otherwise a pair from
/// two distinct classes.
pub fn sample_pair<R: Rng + ?Sized>(
    train: &LabeledImageSet,
    rng: &mut R,
    p_similar: f64,
) -> Result<PairSample> {
    if !(0.0..=1.0).contains(&p_similar) {
        return Err(Error::validation("p_similar must lie in [0, 1]"));
    }
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(Error::validation(
            "pair sampling needs at least two classes",
        ));
    }
    let similar = rng.random_bool(p_similar);
    if similar {
        let eligible: Vec<u32> = classes
            .iter()
            .copied()
            .filter(|c| train.indices_of(*c).len() >= 2)
            .collect();
        let class = *eligible
            .choose(rng)
            .ok_or_else(|| Error::validation("no class holds two images for a similar pair"))?;
        let picks: Vec<usize> = train
            .indices_of(class)
            .choose_multiple(rng, 2)
            .copied()
            .collect();
        Ok(PairSample {
            x1: train.image(picks[0]).clone(),
            x2: train.image(picks[1]).clone(),
            label: 0,
            classes: (class, class),
        })
    } else {
        let picked: Vec<u32> = classes.choose_multiple(rng, 2).copied().collect();
        let (a, b) = (picked[0], picked[1]);
        let i = *train.indices_of(a).choose(rng).expect("class has samples");
        let j = *train.indices_of(b).choose(rng).expect("class has samples");
        Ok(PairSample {
            x1: train.image(i).clone(),
            x2: train.image(j).clone(),
            label: 1,
            classes: (a, b),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ColorSpace, ValueRange};

    fn set(classes: u32, per_class: u32) -> LabeledImageSet {
        let mut samples = Vec::new();
        for c in 0..classes {
            for k in 0..per_class {
                let v = ((c * 7 + k) % 255) as f32;
                samples.push((
                    ImageTensor::filled(16, 16, ColorSpace::Gray, ValueRange::Byte, v).unwrap(),
                    c,
                ));
            }
        }
        LabeledImageSet::new(samples).unwrap()
    }

    #[test]
    fn paper_scale_split_is_60_40() {
        let s = set(100, 1);
        let (train, eval) = split_by_class(&s, 0.6, 3).unwrap();
        assert_eq!(train.class_count(), 60);
        assert_eq!(eval.class_count(), 40);
        let tc = train.classes();
        assert!(eval.classes().iter().all(|c| !tc.contains(c)));
    }

    #[test]
    fn smallest_split_and_empty_side() {
        let s = set(2, 2);
        let (a, b) = split_by_class(&s, 0.5, 0).unwrap();
        assert_eq!((a.class_count(), b.class_count()), (1, 1));
        assert!(split_by_class(&s, 0.1, 0).is_err());
        assert!(split_by_class(&s, 1.0, 0).is_err());
        assert!(split_by_class(&set(1, 3), 0.5, 0).is_err());
    }

    #[test]
    fn split_is_seed_deterministic() {
        let s = set(20, 1);
        let (a, _) = split_by_class(&s, 0.6, 42).unwrap();
        let (b, _) = split_by_class(&s, 0.6, 42).unwrap();
        assert_eq!(a.classes(), b.classes());
    }

    #[test]
    fn forced_branches() {
        let s = set(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p = sample_pair(&s, &mut rng, 1.0).unwrap();
            assert_eq!(p.label, 0);
            assert_eq!(p.classes.0, p.classes.1);
            let q = sample_pair(&s, &mut rng, 0.0).unwrap();
            assert_eq!(q.label, 1);
            assert_ne!(q.classes.0, q.classes.1);
        }
    }

    #[test]
    fn similar_pair_skips_singleton_classes() {
        let mut samples = set(3, 1).samples().to_vec();
        samples.push((samples[0].0.clone(), 0));
        let s = LabeledImageSet::new(samples).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(sample_pair(&s, &mut rng, 1.0).unwrap().classes, (0, 0));
        }
        let none = set(3, 1);
        assert!(sample_pair(&none, &mut rng, 1.0).is_err());
    }

    #[test]
    fn similar_fraction_concentrates() {
        let s = set(60, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10_000;
        let mut similar = 0;
        for _ in 0..n {
            let p = sample_pair(&s, &mut rng, 0.5).unwrap();
            assert_eq!(p.label == 0, p.classes.0 == p.classes.1);
            similar += usize::from(p.label == 0);
        }
        let frac = similar as f64 / n as f64;
        // 4 standard deviations of Binomial(10^4, 0.5) is 0.02
        assert!((frac - 0.5).abs() <= 0.02, "similar fraction {frac}");
    }

    #[test]
    fn load_layout_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::filled(20, 24, ColorSpace::Rgb, ValueRange::Byte, 90.0).unwrap();
        for class in ["a", "b"] {
            for k in 0..3 {
                img.save_png(&dir.path().join(class).join(format!("{k}.png")))
                    .unwrap();
            }
        }
        let set = load_class_dataset(dir.path(), (32, 32)).unwrap();
        assert_eq!(set.len(), 6);
        assert_eq!(set.class_count(), 2);
        assert_eq!(set.image(0).shape(), (32, 32, 3));
        assert_eq!(set.class_name(1), Some("b"));

        std::fs::create_dir(dir.path().join("c")).unwrap();
        assert!(matches!(
            load_class_dataset(dir.path(), (32, 32)),
            Err(Error::Validation(_))
        ));
        std::fs::write(dir.path().join("c").join("bad.png"), b"not a png").unwrap();
        match load_class_dataset(dir.path(), (32, 32)) {
            Err(Error::Decode { path, .. }) => assert!(path.ends_with("bad.png")),
            other => panic!("expected decode error, got {other:?}"),
        }
        assert!(matches!(
            load_class_dataset(&dir.path().join("missing"), (32, 32)),
            Err(Error::NotFound(_))
        ));
    }
}

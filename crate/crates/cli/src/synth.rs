//! Procedural dataset generator writing the exact on-disk formats the
//! loaders read (IDX files, CIFAR-style binary batches).
//!
//! Classes are weighted combinations of a small shared dictionary of local
//! patterns ("atoms"). Every atom is reused by several classes across task
//! boundaries with conflicting signs, so sequential training on a class
//! split exhibits genuine interference, while early-layer features (the
//! atom detectors themselves) stay useful for every task.

use std::path::Path;

use lightcl_core::rng::substream;
use lightcl_core::stream::DatasetName;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{mnist_paths, write};
use crate::error::{CliError, Result};

/// 3 shared identity atoms plus a private cue pair per task pair.
const NUM_ATOMS: usize = 13;
/// Atom placements per image: 3 task-identity + 2 cue + 1 distractor.
const SLOTS: usize = 6;
/// Distinct sign pattern over the identity atoms announcing the task.
const ID_SIGNS: [[f32; 3]; 5] = [
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, -1.0],
];
/// Amplitude of the within-task cue relative to the identity atoms.
const CUE_AMP: f32 = 1.0;
/// Amplitude of the label-irrelevant distractor atom.
const DISTRACT_AMP: f32 = 0.5;
const CONTRAST: f32 = 60.0;
const NOISE: i32 = 12;

#[derive(Debug, Clone, Serialize)]
pub struct SynthManifest {
    pub dataset: DatasetName,
    pub seed: u64,
    pub classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub side: usize,
    pub channels: usize,
    pub atoms: usize,
}

struct Palette {
    side: usize,
    channels: usize,
    atom_side: usize,
    /// NUM_ATOMS patterns, each atom_side*atom_side cells in [-1, 1].
    patterns: Vec<Vec<f32>>,
    /// Per-atom channel mix, max-abs-normalized.
    colors: Vec<[f32; 3]>,
}

impl Palette {
    fn new(seed: u64, side: usize, channels: usize, atom_side: usize) -> Self {
        let mut patterns = Vec::with_capacity(NUM_ATOMS);
        let mut colors = Vec::with_capacity(NUM_ATOMS);
        for a in 0..NUM_ATOMS {
            let mut rng = substream(seed, "atom", &[a as u64]);
            let cells = (0..atom_side * atom_side)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            patterns.push(cells);
            let mut mix = [0.0f32; 3];
            for m in mix.iter_mut() {
                *m = rng.random_range(-1.0f32..1.0);
            }
            let peak = mix.iter().fold(0.0f32, |acc, v| acc.max(v.abs())).max(1e-6);
            for m in mix.iter_mut() {
                *m /= peak;
            }
            colors.push(mix);
        }
        Palette { side, channels, atom_side, patterns, colors }
    }

    /// Class identity is a polarity pattern over atoms. Atoms 0-2 are
    /// shared by all classes and carry a per-task sign pattern (distinct
    /// across tasks, so classes never collide). Atoms 3+2t and 4+2t are
    /// private to the classes of task t (classes 2t and 2t+1) and carry a
    /// weaker cue whose polarity flips between the two: within-task
    /// discrimination rides on low-amplitude features no later task ever
    /// refreshes, while sequential training keeps competing for the trunk
    /// capacity those features occupy.
    fn class_atoms(class: usize) -> [(usize, f32); SLOTS - 1] {
        let task = class / 2;
        let flip = if class % 2 == 1 { -1.0 } else { 1.0 };
        let ids = ID_SIGNS[task % ID_SIGNS.len()];
        [
            (0, ids[0]),
            (1, ids[1]),
            (2, ids[2]),
            (3 + 2 * task, CUE_AMP * flip),
            (4 + 2 * task, -CUE_AMP * flip),
        ]
    }

    /// Atoms land on randomly chosen distinct grid cells, so atom
    /// detection cannot hide in position-specific readout weights: the
    /// convolution trunk must learn translation-invariant detectors, which
    /// is what makes a trunk frozen after the first task transfer to later
    /// ones. Distinct cells keep atoms from overlapping into clutter.
    fn render(&self, class: usize, rng: &mut ChaCha8Rng, out: &mut Vec<u8>) {
        let plane = self.side * self.side;
        let mut acc = vec![0.0f32; self.channels * plane];
        let distractor = (
            rng.random_range(0..NUM_ATOMS),
            if rng.random_range(0..2) == 0 { DISTRACT_AMP } else { -DISTRACT_AMP },
        );
        let mut atoms = Self::class_atoms(class).to_vec();
        atoms.push(distractor);
        let grid = self.side / self.atom_side;
        let slack = (self.side - grid * self.atom_side) as i32;
        let mut cells: Vec<usize> = (0..grid * grid).collect();
        for i in 0..SLOTS {
            let j = rng.random_range(i..cells.len());
            cells.swap(i, j);
        }
        for (slot, (atom, weight)) in atoms.into_iter().enumerate() {
            let y0 = (cells[slot] / grid) * self.atom_side
                + rng.random_range(0..=slack) as usize;
            let x0 = (cells[slot] % grid) * self.atom_side
                + rng.random_range(0..=slack) as usize;
            let pattern = &self.patterns[atom];
            let color = self.colors[atom];
            for py in 0..self.atom_side {
                for px in 0..self.atom_side {
                    let v = weight * pattern[py * self.atom_side + px];
                    let at = (y0 + py) * self.side + (x0 + px);
                    for ch in 0..self.channels {
                        let tint = if self.channels == 1 { 1.0 } else { color[ch] };
                        acc[ch * plane + at] += v * tint;
                    }
                }
            }
        }
        for v in acc {
            let noise = rng.random_range(-NOISE..=NOISE);
            let pixel = (128.0 + CONTRAST * v).round() as i32 + noise;
            out.push(pixel.clamp(0, 255) as u8);
        }
    }
}

fn generate(
    palette: &Palette,
    seed: u64,
    classes: usize,
    per_class: usize,
    split: u64,
) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(classes * per_class * palette.channels * palette.side * palette.side);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for index in 0..per_class {
            let mut rng = substream(seed, "synth", &[split, class as u64, index as u64]);
            palette.render(class, &mut rng, &mut images);
            labels.push(class as u8);
        }
    }
    (images, labels)
}

fn write_manifest(root: &Path, manifest: &SynthManifest) -> Result<()> {
    let path = root.join("synth_manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::format(&path, e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Ten-class single-channel dataset in IDX files. `side` must be divisible
/// by 4 so both conv/pool model families accept it.
pub fn synth_mnist(
    root: &Path,
    seed: u64,
    per_class_train: usize,
    per_class_test: usize,
    side: usize,
) -> Result<SynthManifest> {
    std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    let classes = 10;
    let palette = Palette::new(seed, side, 1, (side * 5) / 16);
    let (train_images, train_labels) = generate(&palette, seed, classes, per_class_train, 0);
    let (test_images, test_labels) = generate(&palette, seed, classes, per_class_test, 1);
    let [ti, tl, vi, vl] = mnist_paths(root);
    write::idx_images(&ti, side, &train_images)?;
    write::idx_labels(&tl, &train_labels)?;
    write::idx_images(&vi, side, &test_images)?;
    write::idx_labels(&vl, &test_labels)?;
    let manifest = SynthManifest {
        dataset: DatasetName::SplitMnist,
        seed,
        classes,
        per_class_train,
        per_class_test,
        side,
        channels: 1,
        atoms: NUM_ATOMS,
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

/// Ten-class RGB dataset in CIFAR-style binary batches (side fixed at 32
/// by the record format).
pub fn synth_cifar(
    root: &Path,
    seed: u64,
    per_class_train: usize,
    per_class_test: usize,
) -> Result<SynthManifest> {
    std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    let classes = 10;
    let palette = Palette::new(seed, 32, 3, 8);
    let (train_images, train_labels) = generate(&palette, seed, classes, per_class_train, 0);
    let (test_images, test_labels) = generate(&palette, seed, classes, per_class_test, 1);
    write::cifar_batch(&root.join("data_batch_1.bin"), &train_images, &train_labels)?;
    write::cifar_batch(&root.join("test_batch.bin"), &test_images, &test_labels)?;
    let manifest = SynthManifest {
        dataset: DatasetName::SplitCifar10,
        seed,
        classes,
        per_class_train,
        per_class_test,
        side: 32,
        channels: 3,
        atoms: NUM_ATOMS,
    };
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_raw;

    #[test]
    fn generated_files_load_back_and_are_seed_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        synth_mnist(&a, 7, 3, 2, 16).unwrap();
        synth_mnist(&b, 7, 3, 2, 16).unwrap();
        let ra = load_raw(&a, DatasetName::SplitMnist).unwrap();
        let rb = load_raw(&b, DatasetName::SplitMnist).unwrap();
        assert_eq!(ra.train_images, rb.train_images);
        assert_eq!(ra.num_classes, 10);
        assert_eq!(ra.n_train(), 30);
        assert_eq!(ra.n_test(), 20);

        let c = dir.path().join("c");
        synth_mnist(&c, 8, 3, 2, 16).unwrap();
        let rc = load_raw(&c, DatasetName::SplitMnist).unwrap();
        assert_ne!(ra.train_images, rc.train_images);
    }

    #[test]
    fn cifar_variant_loads_with_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        synth_cifar(dir.path(), 5, 4, 2).unwrap();
        let raw = load_raw(dir.path(), DatasetName::SplitCifar10).unwrap();
        assert_eq!((raw.channels, raw.side), (3, 32));
        assert_eq!(raw.n_train(), 40);
        let spread = raw
            .train_images
            .iter()
            .fold((255u8, 0u8), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        assert!(spread.0 < 100 && spread.1 > 156, "images should have contrast");
    }

    #[test]
    fn classes_share_atoms_with_conflicting_signs() {
        let mut sign_conflict = false;
        for c in 0..9usize {
            let a: Vec<_> = Palette::class_atoms(c).into_iter().collect();
            for d in c + 1..10 {
                for (atom, w1) in Palette::class_atoms(d) {
                    if let Some((_, w0)) = a.iter().find(|(x, _)| *x == atom) {
                        if w0.signum() != w1.signum() {
                            sign_conflict = true;
                        }
                    }
                }
            }
        }
        assert!(sign_conflict);
    }
}

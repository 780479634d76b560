//! Shared fixture: a small byte-level dataset with one bright block per
//! class plus pixel noise, separable enough to learn in a few steps.

use rand::Rng;

use lightcl_core::rng::substream;
use lightcl_core::stream::{DatasetName, RawDataset};

pub fn patterned_raw(
    classes: usize,
    per_class_train: usize,
    per_class_test: usize,
    side: usize,
    seed: u64,
) -> RawDataset {
    let mut rng = substream(seed, "fixture", &[]);
    let item = side * side;
    let block = side / 2;
    let mut fill = |per_class: usize, split: u64| -> (Vec<u8>, Vec<u8>) {
        let _ = split;
        let n = classes * per_class;
        let mut images = vec![0u8; n * item];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            let class = i % classes;
            labels[i] = class as u8;
            let (by, bx) = ((class / 2) % 2, class % 2);
            let bright = 150 + ((class * 37) % 80) as i32;
            let dark = 25 + ((class * 17) % 30) as i32;
            for y in 0..side {
                for x in 0..side {
                    let in_block =
                        y / block == by && x / block == bx && block > 0;
                    let base: i32 = if in_block { bright } else { dark };
                    let noise = rng.random_range(-25i32..=25);
                    images[i * item + y * side + x] = (base + noise).clamp(0, 255) as u8;
                }
            }
        }
        (images, labels)
    };
    let (train_images, train_labels) = fill(per_class_train, 0);
    let (test_images, test_labels) = fill(per_class_test, 1);
    RawDataset {
        name: DatasetName::SplitMnist,
        channels: 1,
        side,
        num_classes: classes,
        train_images,
        train_labels,
        test_images,
        test_labels,
    }
}

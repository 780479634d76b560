//! Dataset ingestion from standard on-disk formats: IDX image/label files
//! for the MNIST-style split and the fixed 3073-byte-record binary batches
//! for the CIFAR-10-style split. Errors always name the offending file.

use std::path::{Path, PathBuf};

use lightcl_core::stream::{DatasetName, RawDataset};

use crate::error::{CliError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

pub fn load_raw(data_root: &Path, dataset: DatasetName) -> Result<RawDataset> {
    match dataset {
        DatasetName::SplitMnist => load_idx_pairs(data_root),
        DatasetName::SplitCifar10 => load_cifar(data_root),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ])
}

/// One IDX image file: magic, count, rows, cols (big-endian), then pixels.
fn parse_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    if bytes.len() < 16 {
        return Err(CliError::format(path, "truncated IDX image header"));
    }
    if be_u32(&bytes, 0) != IDX_IMAGES_MAGIC {
        return Err(CliError::format(
            path,
            format!("bad IDX image magic {:#010x}", be_u32(&bytes, 0)),
        ));
    }
    let n = be_u32(&bytes, 4) as usize;
    let rows = be_u32(&bytes, 8) as usize;
    let cols = be_u32(&bytes, 12) as usize;
    if rows != cols {
        return Err(CliError::format(
            path,
            format!("non-square images {rows}x{cols} are not supported"),
        ));
    }
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(CliError::format(
            path,
            format!("expected {want} bytes for {n} images, found {}", bytes.len()),
        ));
    }
    Ok((n, rows, bytes[16..].to_vec()))
}

fn parse_idx_labels(path: &Path, expect_n: usize) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    if bytes.len() < 8 {
        return Err(CliError::format(path, "truncated IDX label header"));
    }
    if be_u32(&bytes, 0) != IDX_LABELS_MAGIC {
        return Err(CliError::format(
            path,
            format!("bad IDX label magic {:#010x}", be_u32(&bytes, 0)),
        ));
    }
    let n = be_u32(&bytes, 4) as usize;
    if n != expect_n {
        return Err(CliError::format(
            path,
            format!("{n} labels for {expect_n} images"),
        ));
    }
    if bytes.len() != 8 + n {
        return Err(CliError::format(
            path,
            format!("expected {} bytes, found {}", 8 + n, bytes.len()),
        ));
    }
    Ok(bytes[8..].to_vec())
}

fn load_idx_pairs(root: &Path) -> Result<RawDataset> {
    let (n_train, side, train_images) = parse_idx_images(&root.join("train-images-idx3-ubyte"))?;
    let train_labels = parse_idx_labels(&root.join("train-labels-idx1-ubyte"), n_train)?;
    let (n_test, test_side, test_images) = parse_idx_images(&root.join("t10k-images-idx3-ubyte"))?;
    let test_labels = parse_idx_labels(&root.join("t10k-labels-idx1-ubyte"), n_test)?;
    if test_side != side {
        return Err(CliError::format(
            root,
            format!("train images are {side}x{side} but test images are {test_side}x{test_side}"),
        ));
    }
    finish(
        DatasetName::SplitMnist,
        1,
        side,
        train_images,
        train_labels,
        test_images,
        test_labels,
        root,
    )
}

/// Concatenated 3073-byte records: one label byte then RGB planes.
fn parse_cifar_batch(path: &Path, images: &mut Vec<u8>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = read_file(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(CliError::format(
            path,
            format!("size {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(record[0]);
        images.extend_from_slice(&record[1..]);
    }
    Ok(())
}

fn load_cifar(root: &Path) -> Result<RawDataset> {
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    let mut found = 0;
    for i in 1..=5 {
        let path = root.join(format!("data_batch_{i}.bin"));
        if path.exists() {
            parse_cifar_batch(&path, &mut train_images, &mut train_labels)?;
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::format(
            &root.join("data_batch_1.bin"),
            "no training batches found",
        ));
    }
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    parse_cifar_batch(&root.join("test_batch.bin"), &mut test_images, &mut test_labels)?;
    finish(
        DatasetName::SplitCifar10,
        3,
        32,
        train_images,
        train_labels,
        test_images,
        test_labels,
        root,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    name: DatasetName,
    channels: usize,
    side: usize,
    train_images: Vec<u8>,
    train_labels: Vec<u8>,
    test_images: Vec<u8>,
    test_labels: Vec<u8>,
    root: &Path,
) -> Result<RawDataset> {
    let num_classes = train_labels
        .iter()
        .chain(&test_labels)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);
    let raw = RawDataset {
        name,
        channels,
        side,
        num_classes,
        train_images,
        train_labels,
        test_images,
        test_labels,
    };
    raw.validate()
        .map_err(|e| CliError::format(root, e.to_string()))?;
    Ok(raw)
}

/// Write helpers shared with the synthetic generator; kept here so formats
/// have exactly one reader and one writer.
pub mod write {
    use super::*;

    pub fn idx_images(path: &Path, side: usize, images: &[u8]) -> Result<()> {
        let n = images.len() / (side * side);
        let mut bytes = Vec::with_capacity(16 + images.len());
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(n as u32).to_be_bytes());
        bytes.extend_from_slice(&(side as u32).to_be_bytes());
        bytes.extend_from_slice(&(side as u32).to_be_bytes());
        bytes.extend_from_slice(images);
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + labels.len());
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn cifar_batch(path: &Path, images: &[u8], labels: &[u8]) -> Result<()> {
        assert_eq!(images.len(), labels.len() * (CIFAR_RECORD - 1));
        let mut bytes = Vec::with_capacity(labels.len() * CIFAR_RECORD);
        for (i, &label) in labels.iter().enumerate() {
            bytes.push(label);
            bytes.extend_from_slice(&images[i * (CIFAR_RECORD - 1)..(i + 1) * (CIFAR_RECORD - 1)]);
        }
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }
}

pub fn mnist_paths(root: &Path) -> [PathBuf; 4] {
    [
        root.join("train-images-idx3-ubyte"),
        root.join("train-labels-idx1-ubyte"),
        root.join("t10k-images-idx3-ubyte"),
        root.join("t10k-labels-idx1-ubyte"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_roundtrip_preserves_pixels_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let side = 4;
        let train: Vec<u8> = (0..2 * 16).map(|i| i as u8).collect();
        let test: Vec<u8> = (0..16).map(|i| 255 - i as u8).collect();
        let [ti, tl, vi, vl] = mnist_paths(root);
        write::idx_images(&ti, side, &train).unwrap();
        write::idx_labels(&tl, &[0, 1]).unwrap();
        write::idx_images(&vi, side, &test).unwrap();
        write::idx_labels(&vl, &[1]).unwrap();
        let raw = load_raw(root, DatasetName::SplitMnist).unwrap();
        assert_eq!(raw.side, 4);
        assert_eq!(raw.channels, 1);
        assert_eq!(raw.num_classes, 2);
        assert_eq!(raw.train_images, train);
        assert_eq!(raw.test_labels, vec![1]);
    }

    #[test]
    fn cifar_roundtrip_and_multi_batch_concatenation() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let item = 3 * 32 * 32;
        let a: Vec<u8> = (0..item).map(|i| (i % 251) as u8).collect();
        let b: Vec<u8> = (0..item).map(|i| (i % 13) as u8).collect();
        write::cifar_batch(&root.join("data_batch_1.bin"), &a, &[3]).unwrap();
        write::cifar_batch(&root.join("data_batch_2.bin"), &b, &[7]).unwrap();
        write::cifar_batch(&root.join("test_batch.bin"), &a, &[1]).unwrap();
        let raw = load_raw(root, DatasetName::SplitCifar10).unwrap();
        assert_eq!(raw.n_train(), 2);
        assert_eq!(raw.train_labels, vec![3, 7]);
        assert_eq!(&raw.train_images[item..], &b[..]);
        assert_eq!(raw.num_classes, 8);
    }

    #[test]
    fn missing_and_malformed_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let err = load_raw(root, DatasetName::SplitMnist).unwrap_err();
        assert!(err.to_string().contains("train-images-idx3-ubyte"));

        let [ti, ..] = mnist_paths(root);
        std::fs::write(&ti, b"garbage").unwrap();
        let err = load_raw(root, DatasetName::SplitMnist).unwrap_err();
        assert!(err.to_string().contains("truncated"));

        let err = load_raw(root, DatasetName::SplitCifar10).unwrap_err();
        assert!(err.to_string().contains("data_batch_1.bin"));
    }
}

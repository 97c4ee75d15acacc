//! Big-endian IDX files as distributed for MNIST and Fashion-MNIST.

use std::path::Path;

use super::{Label, LabeledDataset, Source};
use crate::autodiff::Tensor;
use crate::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxTruncated(format!("{what}: header ends at byte {}", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let found = read_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::IdxMagic { found, expected });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGE_MAGIC, "images")?;
    let count = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::IdxTruncated(format!(
            "images: expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..need].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABEL_MAGIC, "labels")?;
    let count = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::IdxTruncated(format!(
            "labels: expected {count} label bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

/// Images flattened row-major and scaled to [0, 1]; raw label `k` becomes
/// class `k + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let features = Tensor::from_vec(
        vec![images.count, images.rows * images.cols],
        images
            .pixels
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect(),
    )?;
    LabeledDataset::new(
        features,
        labels
            .iter()
            .map(|&l| Label::Class(l as usize + 1))
            .collect(),
        (0..images.count as u32).map(Source::Idx).collect(),
        n_classes,
    )
}

#[cfg(test)]
pub(crate) fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IDX_IMAGE_MAGIC, count, rows, cols] {
        out.extend(v.to_be_bytes());
    }
    out.extend(pixels);
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for v in [IDX_LABEL_MAGIC, labels.len() as u32] {
        out.extend(v.to_be_bytes());
    }
    out.extend(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_identify_images() {
        let bytes = encode_images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let img = parse_idx_images(&bytes).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (2, 2, 2));
        assert_eq!(img.pixels.len(), 8);
    }

    #[test]
    fn distinct_errors() {
        let labels = encode_labels(&[1, 2]);
        assert!(matches!(
            parse_idx_images(&labels),
            Err(Error::IdxMagic {
                found: 0x801,
                expected: 0x803
            })
        ));
        let short = encode_images(2, 2, 2, &[0; 7]);
        assert!(matches!(
            parse_idx_images(&short),
            Err(Error::IdxTruncated(_))
        ));
        assert!(matches!(
            parse_idx_images(&[0, 0, 8]),
            Err(Error::IdxTruncated(_))
        ));
        let mut cut = encode_labels(&[1, 2, 3]);
        cut.pop();
        assert!(matches!(
            parse_idx_labels(&cut),
            Err(Error::IdxTruncated(_))
        ));
    }

    #[test]
    fn load_scales_and_shifts_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        std::fs::write(&ip, encode_images(2, 1, 2, &[0, 255, 51, 102])).unwrap();
        std::fs::write(&lp, encode_labels(&[0, 9])).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.features().data(), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.labels(), &[Label::Class(1), Label::Class(10)]);
        assert_eq!(d.n_classes(), 10);

        std::fs::write(&lp, encode_labels(&[0, 1, 2])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::IdxCountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }
}

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::dataset::{DataKind, Dataset};

/// Magic number of IDX files holding one unsigned byte per entry, by rank.
pub const IDX_VECTOR_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Pixels at or above this fraction of full scale become 1.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

/// A parsed IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::IdxTruncated {
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parse an IDX byte buffer (`0x801` vectors or `0x803` image stacks).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        IDX_VECTOR_MAGIC => 1,
        IDX_IMAGES_MAGIC => 3,
        found => return Err(Error::IdxBadMagic { offset: 0, found }),
    };
    let raw: Vec<u32> = (0..rank).map(|d| be_u32(bytes, 4 + 4 * d)).collect::<Result<_>>()?;
    let header = 4 + 4 * rank;
    let size = raw
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::IdxDimensionOverflow { dims: raw.clone() })?;
    if bytes.len() < size {
        return Err(Error::IdxTruncated {
            expected: size,
            found: bytes.len(),
        });
    }
    Ok(IdxArray {
        dims: raw.iter().map(|&d| d as usize).collect(),
        data: bytes[header..size].to_vec(),
    })
}

/// Serialize bytes as an IDX file of the given dimensions (rank 1 or 3).
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    let magic = match dims.len() {
        1 => IDX_VECTOR_MAGIC,
        3 => IDX_IMAGES_MAGIC,
        r => return Err(Error::Contract(format!("IDX rank {r} is not supported"))),
    };
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::Contract("IDX dimensions do not match the data length".into()));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Contract("IDX dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Images as rows of pixels scaled to `[0, 1]`, not binarized.
pub fn idx_images(array: &IdxArray) -> Result<Matrix> {
    if array.dims.len() != 3 {
        return Err(Error::Data(format!("expected an image stack, got rank {}", array.dims.len())));
    }
    let (n, cols) = (array.dims[0], array.dims[1] * array.dims[2]);
    Matrix::from_vec(n, cols, array.data.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Load an IDX image file as binary data: pixels scaled to `[0, 1]`, set
/// to 1 at or above [`BINARIZE_THRESHOLD`], images flattened row-major.
/// Labels come from an optional IDX vector file.
pub fn load_idx(path: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let images = idx_images(&parse_idx(&read(path)?)?)?;
    let binary = images.map(|x| if x >= BINARIZE_THRESHOLD { 1.0 } else { 0.0 });
    let labels = labels.map(load_idx_labels).transpose()?;
    Dataset::new(DataKind::Binary, binary, labels, format!("idx:{}", path.display()))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let array = parse_idx(&read(path)?)?;
    if array.dims.len() != 1 {
        return Err(Error::Data(format!("{} is not an IDX label vector", path.display())));
    }
    Ok(array.data.into_iter().map(usize::from).collect())
}

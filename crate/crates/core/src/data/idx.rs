//! IDX (MNIST-style) containers: `0x00000803` images (n, rows, cols),
//! `0x00000804` images with a trailing channel dim, `0x00000801` labels.
//! Header integers are big-endian; pixel bytes map to `[0, 1]` by `/255`.

use std::fs;
use std::path::Path;

use shiftgate_nn::Tensor;

use super::{quantize, DataError, Dataset, Labels, Result};

const IMAGES_3D: u32 = 0x0000_0803;
const IMAGES_4D: u32 = 0x0000_0804;
const LABELS: u32 = 0x0000_0801;

fn format_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, "truncated header"))
}

pub fn read_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    let rank = match magic {
        IMAGES_3D => 3,
        IMAGES_4D => 4,
        other => return Err(format_err(path, format!("bad image magic {other:#010x}"))),
    };
    let dims = (0..rank)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let c = if rank == 4 { dims[3] } else { 1 };
    let per = h * w * c;
    let header = 4 + 4 * rank;
    let payload = &bytes[header..];
    if payload.len() != n * per {
        return Err(format_err(
            path,
            format!("expected {} pixel bytes, found {}", n * per, payload.len()),
        ));
    }
    Ok(payload
        .chunks_exact(per.max(1))
        .take(n)
        .map(|px| {
            Tensor::new(vec![h, w, c], px.iter().map(|&b| b as f64 / 255.0).collect())
                .expect("chunk matches image size")
        })
        .collect())
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS {
        return Err(format_err(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(format_err(
            path,
            format!("expected {n} label bytes, found {}", payload.len()),
        ));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. Without `class_names`, classes are named
/// by their index up to the largest label present.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    name: &str,
    class_names: Option<&[String]>,
) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    let class_names = match class_names {
        Some(names) => names.to_vec(),
        None => {
            let max = labels.iter().max().map_or(0, |m| m + 1);
            (0..max).map(|i| i.to_string()).collect()
        }
    };
    let ds = Dataset {
        name: name.to_string(),
        sample_ids: (0..images.len()).map(|i| format!("{name}-{i:05}")).collect(),
        images,
        labels: Labels::Single(labels),
        class_names,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a single-label dataset as an IDX pair, quantizing pixels to bytes.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let labels = ds.single_labels()?;
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| DataError::Invalid(format!("label {l} does not fit a byte")))?;
        lab.push(b);
    }
    write_idx_images(&ds.images, images_path)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

pub fn write_idx_images(images: &[Tensor], path: &Path) -> Result<()> {
    let shape = images.first().map_or(vec![0, 0, 1], |t| t.shape().to_vec());
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let mut img = Vec::with_capacity(20 + images.len() * h * w * c);
    let dims: Vec<usize> = if c == 1 {
        img.extend_from_slice(&IMAGES_3D.to_be_bytes());
        vec![images.len(), h, w]
    } else {
        img.extend_from_slice(&IMAGES_4D.to_be_bytes());
        vec![images.len(), h, w, c]
    };
    for d in dims {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for t in images {
        img.extend(t.data().iter().map(|&v| quantize(v)));
    }
    fs::write(path, img)?;
    Ok(())
}

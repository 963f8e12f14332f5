//! MNIST IDX file loading (plain or gzipped).

use flate2::read::GzDecoder;
use ndarray::Array3;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::dataset::LabeledDataset;
use crate::error::{AgnError, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Environment variable pointing at a directory with the four IDX files.
pub const MNIST_DIR_ENV: &str = "AGN_MNIST_DIR";

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let gz = PathBuf::from(format!("{}.gz", path.display()));
    let mut buf = Vec::new();
    if path.exists() {
        File::open(path)?.read_to_end(&mut buf)?;
    } else if gz.exists() {
        GzDecoder::new(File::open(&gz)?).read_to_end(&mut buf)?;
    } else {
        return Err(AgnError::MissingArtifact(format!(
            "{} (or .gz) not found",
            path.display()
        )));
    }
    Ok(buf)
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes(b[..4].try_into().unwrap())
}

fn load_images<F: Scalar>(path: &Path) -> Result<Vec<Image<F>>> {
    let buf = read_maybe_gz(path)?;
    if buf.len() < 16 || be_u32(&buf) != 2051 {
        return Err(AgnError::InvalidValue(format!(
            "{} is not an IDX image file",
            path.display()
        )));
    }
    let n = be_u32(&buf[4..]) as usize;
    let rows = be_u32(&buf[8..]) as usize;
    let cols = be_u32(&buf[12..]) as usize;
    if buf.len() != 16 + n * rows * cols {
        return Err(AgnError::InvalidValue("truncated IDX image file".into()));
    }
    let scale = F::from_f64(1.0 / 255.0);
    Ok((0..n)
        .map(|i| {
            let off = 16 + i * rows * cols;
            let data = Array3::from_shape_fn((rows, cols, 1), |(r, c, _)| {
                F::from_f64(buf[off + r * cols + c] as f64) * scale
            });
            Image::from_data_unchecked(data)
        })
        .collect())
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let buf = read_maybe_gz(path)?;
    if buf.len() < 8 || be_u32(&buf) != 2049 {
        return Err(AgnError::InvalidValue(format!(
            "{} is not an IDX label file",
            path.display()
        )));
    }
    let n = be_u32(&buf[4..]) as usize;
    if buf.len() != 8 + n {
        return Err(AgnError::InvalidValue("truncated IDX label file".into()));
    }
    Ok(buf[8..].iter().map(|&b| b as usize).collect())
}

pub struct Mnist<F: Scalar> {
    pub train: LabeledDataset<F>,
    pub test: LabeledDataset<F>,
}

/// Load the four standard IDX files from `dir`, accepting gzipped copies.
pub fn load_mnist<F: Scalar>(dir: impl AsRef<Path>) -> Result<Mnist<F>> {
    let dir = dir.as_ref();
    let pair = |imgs: &str, labels: &str| -> Result<LabeledDataset<F>> {
        let images = load_images::<F>(&dir.join(imgs))?;
        let labels = load_labels(&dir.join(labels))?;
        if images.len() != labels.len() {
            return Err(AgnError::DimensionMismatch(
                "image/label counts differ".into(),
            ));
        }
        LabeledDataset::new(images.into_iter().zip(labels).collect(), 10)
    };
    Ok(Mnist {
        train: pair("train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        test: pair("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    })
}

/// MNIST directory resolution: `$AGN_MNIST_DIR`, else `<repo>/data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(MNIST_DIR_ENV) {
        return PathBuf::from(dir);
    }
    // Relative to the crate during development, else the working directory.
    let dev = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if dev.exists() {
        return dev;
    }
    PathBuf::from("data/mnist")
}

//! Model, weight and dataset files.
//!
//! * model description: JSON, see [`ModelDesc`]
//! * weights: little-endian `f64`, per layer weight (row-major) then bias
//! * datasets: IDX (`0x00000803` u8 images, `0x00000801` u8 labels) or CSV
//!   with one sample per row and the label in the last column
//!
//! IDX pixels are scaled to `[0, 1]` by dividing by 255. CSV features are
//! taken as-is.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Dataset, Model, ModelDesc, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model_desc(path: &Path) -> Result<ModelDesc> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_model_desc(path: &Path, desc: &ModelDesc) -> Result<()> {
    let mut s = serde_json::to_string_pretty(desc).expect("model desc serializes");
    s.push('\n');
    write(path, s.as_bytes())
}

pub fn decode_f64_le(path: &Path, bytes: &[u8], count: usize) -> Result<Vec<f64>> {
    let needed = count * 8;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - needed,
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn encode_f64_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Loads model description + weights into a validated model.
pub fn load_model(model_path: &Path, weights_path: &Path) -> Result<Model> {
    let desc = load_model_desc(model_path)?;
    let bytes = read(weights_path)?;
    let params = decode_f64_le(weights_path, &bytes, desc.param_count())?;
    Model::from_desc(&desc, &params)
}

pub fn save_model(model: &Model, model_path: &Path, weights_path: &Path) -> Result<()> {
    save_model_desc(model_path, &model.desc())?;
    write(weights_path, &encode_f64_le(&model.params()))
}

fn be_u32(path: &Path, bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(path, bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn exact_payload<'a>(path: &Path, bytes: &'a [u8], header: usize, len: usize) -> Result<&'a [u8]> {
    let needed = header + len;
    match bytes.len().cmp(&needed) {
        std::cmp::Ordering::Less => Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        }),
        std::cmp::Ordering::Greater => Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: bytes.len() - needed,
        }),
        std::cmp::Ordering::Equal => Ok(&bytes[header..]),
    }
}

/// Parses an IDX u8 image file into `[1, rows, cols]` tensors.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<Vec<Tensor>> {
    check_magic(path, bytes, IDX_IMAGES_MAGIC)?;
    let n = be_u32(path, bytes, 4)? as usize;
    let rows = be_u32(path, bytes, 8)? as usize;
    let cols = be_u32(path, bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Dataset(format!(
            "{}: zero image dimension",
            path.display()
        )));
    }
    let px = rows * cols;
    let payload = exact_payload(path, bytes, 16, n * px)?;
    payload
        .chunks_exact(px)
        .map(|img| {
            Tensor::new(
                vec![1, rows, cols],
                img.iter().map(|&b| f64::from(b) / 255.0).collect(),
            )
        })
        .collect()
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(path, bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(path, bytes, 4)? as usize;
    let payload = exact_payload(path, bytes, 8, n)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [
        IDX_IMAGES_MAGIC,
        images.len() as u32,
        rows as u32,
        cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Companion labels file for an IDX images file, following the MNIST naming
/// convention (`...images-idx3-ubyte` -> `...labels-idx1-ubyte`).
pub fn idx_labels_path(images: &Path) -> Result<PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Dataset(format!("bad dataset path {}", images.display())))?;
    if !name.contains("images-idx3") {
        return Err(Error::Dataset(format!(
            "{}: IDX image files must be named *images-idx3* so the labels file can be found",
            images.display()
        )));
    }
    Ok(images.with_file_name(name.replacen("images-idx3", "labels-idx1", 1)))
}

pub fn load_idx_dataset(images_path: &Path) -> Result<Dataset> {
    let labels_path = idx_labels_path(images_path)?;
    let images = parse_idx_images(images_path, &read(images_path)?)?;
    let labels = parse_idx_labels(&labels_path, &read(&labels_path)?)?;
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, images, labels)
}

pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 2 {
            return Err(Error::Dataset(format!(
                "{} row {row}: need at least one feature and a label",
                path.display()
            )));
        }
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Shape(format!(
                "{} row {row}: {} columns, expected {}",
                path.display(),
                rec.len(),
                width.unwrap()
            )));
        }
        let parse_err = |col: usize, v: &str| {
            Error::Dataset(format!(
                "{} row {row} col {col}: cannot parse {v:?}",
                path.display()
            ))
        };
        let features = rec
            .iter()
            .take(rec.len() - 1)
            .enumerate()
            .map(|(c, v)| v.parse::<f64>().map_err(|_| parse_err(c, v)))
            .collect::<Result<Vec<_>>>()?;
        let last = &rec[rec.len() - 1];
        let label = last
            .parse::<usize>()
            .map_err(|_| parse_err(rec.len() - 1, last))?;
        inputs.push(Tensor::vector(features)?);
        labels.push(label);
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, inputs, labels)
}

/// Dispatches on extension: `.csv` is CSV, anything else IDX.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        load_csv_dataset(path)
    } else {
        load_idx_dataset(path)
    }
}

/// Loads and cross-validates a model, its weights and a dataset.
pub fn load_bundle(
    model_path: &Path,
    weights_path: &Path,
    dataset_path: &Path,
) -> Result<(Model, Dataset)> {
    let model = load_model(model_path, weights_path)?;
    let dataset = load_dataset(dataset_path)?;
    dataset.check_classes(model.num_classes())?;
    if let Some(first) = dataset.inputs().first() {
        let want: usize = model.input_shape().iter().product();
        if first.len() != want {
            return Err(Error::Shape(format!(
                "dataset samples have {} values, model expects {want}",
                first.len()
            )));
        }
    }
    Ok((model, dataset))
}

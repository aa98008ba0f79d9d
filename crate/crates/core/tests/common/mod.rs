#![allow(dead_code)]

use std::path::PathBuf;

use qnnguard::io::load_bundle;
use qnnguard::{Dataset, Model};

/// Held-out accuracy of the pinned float desk MLP (485 / 500).
pub const DESK_FLOAT_ACCURACY: f64 = 0.97;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits")
}

pub fn desk_bundle() -> (Model, Dataset) {
    let d = data_dir();
    load_bundle(
        &d.join("model.json"),
        &d.join("weights.bin"),
        &d.join("digits-test-images-idx3-ubyte"),
    )
    .expect("pinned desk bundle loads")
}

//! Packing a quantized value and redundant copies of its top bits into one
//! memory word.
//!
//! Bit layout of a `W`-bit word for value width `b`, `J` protected bits and
//! `R` copies:
//!
//! ```text
//!  W-1 ........ b+R*J | b+(R-1)*J .. b+R*J-1 | ... | b .. b+J-1 | b-1 .. 0
//!  zero padding       | copy R-1 of top J    | ... | copy 0     | value (two's complement)
//! ```
//!
//! Copy `r` holds value bits `[b-J, b)` in the same order, so copy bit
//! `b + r*J + t` mirrors value bit `b - J + t`. Padding is ignored on decode.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{skeleton_from, QuantizedModel};
use crate::tensor::{Model, ModelDesc};

pub const WORD_WIDTHS: [u32; 3] = [8, 16, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtectionPolicy {
    /// No copies stored.
    None,
    /// Majority vote of the value bit and an even number of copies.
    Majority,
    /// One copy; any disagreement zeroes the parameter.
    DetectZero,
    /// One copy; on disagreement the copy's bit wins.
    DetectTrustCopy,
}

impl ProtectionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionPolicy::None => "none",
            ProtectionPolicy::Majority => "majority",
            ProtectionPolicy::DetectZero => "detect_zero",
            ProtectionPolicy::DetectTrustCopy => "detect_trust_copy",
        }
    }
}

impl fmt::Display for ProtectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProtectedWord(pub u32);

impl ProtectedWord {
    pub fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn flip(&mut self, bit: u32) {
        self.0 ^= 1 << bit;
    }
}

/// Decoded value and whether any protected bit group disagreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub value: i64,
    pub corrected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct WordLayout {
    word_width: u32,
    value_bits: u32,
    protected_bits: u32,
    copies: u32,
    policy: ProtectionPolicy,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    word_width: u32,
    value_bits: u32,
    protected_bits: u32,
    copies: u32,
    policy: ProtectionPolicy,
}

impl TryFrom<RawLayout> for WordLayout {
    type Error = Error;
    fn try_from(r: RawLayout) -> Result<Self> {
        WordLayout::new(
            r.word_width,
            r.value_bits,
            r.protected_bits,
            r.copies,
            r.policy,
        )
    }
}

impl From<WordLayout> for RawLayout {
    fn from(l: WordLayout) -> Self {
        RawLayout {
            word_width: l.word_width,
            value_bits: l.value_bits,
            protected_bits: l.protected_bits,
            copies: l.copies,
            policy: l.policy,
        }
    }
}

#[inline]
fn low_mask(bits: u32) -> u32 {
    ((1u64 << bits) - 1) as u32
}

impl WordLayout {
    pub fn new(
        word_width: u32,
        value_bits: u32,
        protected_bits: u32,
        copies: u32,
        policy: ProtectionPolicy,
    ) -> Result<Self> {
        let err = |m: String| Err(Error::Layout(m));
        if !WORD_WIDTHS.contains(&word_width) {
            return err(format!("word width {word_width} not in {WORD_WIDTHS:?}"));
        }
        if value_bits == 0 || value_bits > word_width {
            return err(format!(
                "value bits {value_bits} must be in [1, {word_width}]"
            ));
        }
        if protected_bits > value_bits {
            return err(format!(
                "protected bits {protected_bits} exceed value bits {value_bits}"
            ));
        }
        if copies > 0 && protected_bits == 0 {
            return err(format!("{copies} copies of zero protected bits"));
        }
        let used = u64::from(value_bits) + u64::from(protected_bits) * u64::from(copies);
        if used > u64::from(word_width) {
            return err(format!(
                "{value_bits} + {protected_bits}*{copies} = {used} bits do not fit in {word_width}"
            ));
        }
        match policy {
            ProtectionPolicy::None if copies != 0 => {
                return err(format!("policy none with {copies} copies"));
            }
            ProtectionPolicy::Majority if copies == 0 || !copies.is_multiple_of(2) => {
                return err(format!(
                    "majority needs an even, non-zero copy count, got {copies}"
                ));
            }
            ProtectionPolicy::DetectZero | ProtectionPolicy::DetectTrustCopy if copies != 1 => {
                return err(format!("{policy} needs exactly one copy, got {copies}"));
            }
            _ => {}
        }
        Ok(Self {
            word_width,
            value_bits,
            protected_bits,
            copies,
            policy,
        })
    }

    /// Plain value in a word, no copies.
    pub fn unprotected(word_width: u32, value_bits: u32) -> Result<Self> {
        Self::new(word_width, value_bits, 0, 0, ProtectionPolicy::None)
    }

    /// Smallest standard word that fits `b + J*R` bits.
    pub fn smallest_word(
        value_bits: u32,
        protected_bits: u32,
        copies: u32,
        policy: ProtectionPolicy,
    ) -> Result<Self> {
        let need = value_bits + protected_bits * copies;
        let w = WORD_WIDTHS
            .iter()
            .copied()
            .find(|&w| w >= need)
            .ok_or_else(|| Error::Layout(format!("{need} bits exceed the widest word")))?;
        Self::new(w, value_bits, protected_bits, copies, policy)
    }

    pub fn word_width(&self) -> u32 {
        self.word_width
    }

    pub fn value_bits(&self) -> u32 {
        self.value_bits
    }

    pub fn protected_bits(&self) -> u32 {
        self.protected_bits
    }

    pub fn copies(&self) -> u32 {
        self.copies
    }

    pub fn policy(&self) -> ProtectionPolicy {
        self.policy
    }

    /// Bits actually used per parameter, `b + J*R`.
    pub fn used_bits(&self) -> u32 {
        self.value_bits + self.protected_bits * self.copies
    }

    /// Size of each vote group (value bit plus its copies).
    pub fn votes(&self) -> u32 {
        self.copies + 1
    }

    pub fn is_protected(&self) -> bool {
        self.copies > 0
    }

    pub fn word_mask(&self) -> u32 {
        low_mask(self.word_width)
    }

    pub fn value_mask(&self) -> u32 {
        low_mask(self.value_bits)
    }

    /// Top `J` value bits, the ones that get copies.
    pub fn protected_value_mask(&self) -> u32 {
        low_mask(self.protected_bits) << (self.value_bits - self.protected_bits)
    }

    /// All copy bits.
    pub fn copy_mask(&self) -> u32 {
        low_mask(self.protected_bits * self.copies) << self.value_bits
    }

    /// Protected value bits together with their copies.
    pub fn vote_group_mask(&self) -> u32 {
        if self.copies == 0 {
            0
        } else {
            self.protected_value_mask() | self.copy_mask()
        }
    }

    pub fn padding_mask(&self) -> u32 {
        self.word_mask() & !low_mask(self.used_bits())
    }

    fn value_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.value_bits - 1);
        (-half, half - 1)
    }

    fn sign_extend(&self, raw_value: u32) -> i64 {
        let shift = 64 - self.value_bits;
        ((u64::from(raw_value) << shift) as i64) >> shift
    }

    /// Packs a `b`-bit two's-complement value and its copies.
    pub fn encode(&self, value: i64) -> Result<ProtectedWord> {
        let (lo, hi) = self.value_range();
        if value < lo || value > hi {
            return Err(Error::Layout(format!(
                "value {value} does not fit in {} bits",
                self.value_bits
            )));
        }
        let v = (value as u64 as u32) & self.value_mask();
        let top = v >> (self.value_bits - self.protected_bits) & low_mask(self.protected_bits);
        let mut raw = v;
        for r in 0..self.copies {
            raw |= top << (self.value_bits + r * self.protected_bits);
        }
        Ok(ProtectedWord(raw))
    }

    /// Recovers the value, correcting protected bits per the policy.
    pub fn decode(&self, word: ProtectedWord) -> Decoded {
        let raw = word.0;
        let mut v = raw & self.value_mask();
        if self.copies == 0 {
            return Decoded {
                value: self.sign_extend(v),
                corrected: false,
            };
        }
        let base = self.value_bits - self.protected_bits;
        let mut disagreed = false;
        for t in 0..self.protected_bits {
            let pos = base + t;
            let bit = (raw >> pos) & 1;
            let copy_bit = |r: u32| (raw >> (self.value_bits + r * self.protected_bits + t)) & 1;
            match self.policy {
                ProtectionPolicy::Majority => {
                    let ones = bit + (0..self.copies).map(copy_bit).sum::<u32>();
                    let votes = self.copies + 1;
                    if ones != 0 && ones != votes {
                        disagreed = true;
                        let winner = u32::from(2 * ones > votes);
                        v = (v & !(1 << pos)) | (winner << pos);
                    }
                }
                ProtectionPolicy::DetectZero => {
                    if copy_bit(0) != bit {
                        disagreed = true;
                    }
                }
                ProtectionPolicy::DetectTrustCopy => {
                    let c = copy_bit(0);
                    if c != bit {
                        disagreed = true;
                        v = (v & !(1 << pos)) | (c << pos);
                    }
                }
                ProtectionPolicy::None => unreachable!("validated: none has no copies"),
            }
        }
        if disagreed && self.policy == ProtectionPolicy::DetectZero {
            v = 0;
        }
        Decoded {
            value: self.sign_extend(v),
            corrected: disagreed,
        }
    }
}

impl fmt::Display for WordLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "W{}/b{}/J{}/R{}/{}",
            self.word_width, self.value_bits, self.protected_bits, self.copies, self.policy
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub bits_per_param: u32,
    /// Stored footprint, `n_params * W`.
    pub total_bits: u64,
    /// `(bits_per_param - baseline) / baseline`; negative means smaller than
    /// the baseline.
    pub overhead_fraction: f64,
}

pub const BASELINE_BITS: u32 = 32;

pub fn footprint(layout: &WordLayout, n_params: usize, baseline_bits: u32) -> Footprint {
    let bits = layout.used_bits();
    Footprint {
        bits_per_param: bits,
        total_bits: n_params as u64 * u64::from(layout.word_width),
        overhead_fraction: (f64::from(bits) - f64::from(baseline_bits)) / f64::from(baseline_bits),
    }
}

/// Abstract decode-cost proxy: one value extract, one extract per stored
/// copy bit, and one vote per protected bit when copies exist.
pub fn decode_cost(layout: &WordLayout) -> u32 {
    let j = layout.protected_bits;
    let r = layout.copies;
    1 + r * j + if r > 0 { j } else { 0 }
}

/// How decoded word values become weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueCoding {
    /// Quantized integers, weight = value * scale of its tensor.
    Integer { scales: Vec<f64> },
    /// Unquantized baseline: the 32 value bits are an IEEE-754 `f32`.
    Float32,
}

/// The on-"memory" form of a model's weights: one protected word per weight,
/// tensors concatenated in layer order, plus everything needed to turn
/// (possibly faulted) words back into a runnable model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedImage {
    layout: WordLayout,
    coding: ValueCoding,
    counts: Vec<usize>,
    words: Vec<ProtectedWord>,
    skeleton: Model,
}

impl ProtectedImage {
    pub fn from_quantized(qmodel: &QuantizedModel, layout: WordLayout) -> Result<Self> {
        if layout.value_bits() != qmodel.spec().bitwidth() {
            return Err(Error::Layout(format!(
                "layout has {} value bits, model is quantized to {}",
                layout.value_bits(),
                qmodel.spec().bitwidth()
            )));
        }
        let mut words = Vec::with_capacity(qmodel.param_count());
        for t in qmodel.tensors() {
            for &q in &t.values {
                words.push(layout.encode(i64::from(q))?);
            }
        }
        Ok(Self {
            layout,
            coding: ValueCoding::Integer {
                scales: qmodel.scales(),
            },
            counts: qmodel.tensors().iter().map(|t| t.values.len()).collect(),
            words,
            skeleton: qmodel.dequantized().clone(),
        })
    }

    /// Unquantized baseline: weights rounded to `f32` in plain 32-bit words.
    pub fn from_float32(model: &Model) -> Result<Self> {
        let layout = WordLayout::unprotected(32, 32)?;
        let mut words = Vec::new();
        let mut counts = Vec::new();
        let mut rounded = Vec::new();
        for t in model.weight_tensors() {
            counts.push(t.len());
            let r: Vec<f64> = t.data().iter().map(|&w| f64::from(w as f32)).collect();
            words.extend(
                t.data()
                    .iter()
                    .map(|&w| ProtectedWord((w as f32).to_bits())),
            );
            rounded.push(r);
        }
        Ok(Self {
            layout,
            coding: ValueCoding::Float32,
            counts,
            words,
            skeleton: model.with_weights(rounded)?,
        })
    }

    pub fn layout(&self) -> &WordLayout {
        &self.layout
    }

    pub fn coding(&self) -> &ValueCoding {
        &self.coding
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn words(&self) -> &[ProtectedWord] {
        &self.words
    }

    pub fn param_count(&self) -> usize {
        self.words.len()
    }

    /// The fault-free model this image decodes to.
    pub fn clean_model(&self) -> &Model {
        &self.skeleton
    }

    /// Decodes `words` (same length as the image) into per-tensor weights,
    /// returning the number of words whose decode flagged a disagreement.
    pub fn decode_weights(&self, words: &[ProtectedWord]) -> Result<(Vec<Vec<f64>>, usize)> {
        if words.len() != self.words.len() {
            return Err(Error::Shape(format!(
                "{} words for an image of {}",
                words.len(),
                self.words.len()
            )));
        }
        let mut corrections = 0;
        let mut out = Vec::with_capacity(self.counts.len());
        let mut offset = 0;
        for (i, &n) in self.counts.iter().enumerate() {
            let mut tensor = Vec::with_capacity(n);
            for w in &words[offset..offset + n] {
                let d = self.layout.decode(*w);
                corrections += usize::from(d.corrected);
                tensor.push(match &self.coding {
                    ValueCoding::Integer { scales } => d.value as f64 * scales[i],
                    ValueCoding::Float32 => f64::from(f32::from_bits(d.value as u32)),
                });
            }
            offset += n;
            out.push(tensor);
        }
        Ok((out, corrections))
    }

    pub fn model_from_words(&self, words: &[ProtectedWord]) -> Result<(Model, usize)> {
        let (weights, corrections) = self.decode_weights(words)?;
        Ok((self.skeleton.with_weights(weights)?, corrections))
    }
}

pub const PROTECTED_FORMAT: &str = "qnnguard-protected-v1";

/// JSON header of a protected parameter image. The blob holds each word as
/// `W/8` little-endian bytes in weight-declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectedHeader {
    pub format: String,
    #[serde(rename = "W")]
    pub word_width: u32,
    pub b: u32,
    #[serde(rename = "J")]
    pub protected_bits: u32,
    #[serde(rename = "R")]
    pub copies: u32,
    pub policy: ProtectionPolicy,
    pub coding: ValueCoding,
    pub counts: Vec<usize>,
    pub model: ModelDesc,
    pub biases: Vec<Vec<f64>>,
}

impl ProtectedImage {
    pub fn header(&self) -> ProtectedHeader {
        ProtectedHeader {
            format: PROTECTED_FORMAT.into(),
            word_width: self.layout.word_width,
            b: self.layout.value_bits,
            protected_bits: self.layout.protected_bits,
            copies: self.layout.copies,
            policy: self.layout.policy,
            coding: self.coding.clone(),
            counts: self.counts.clone(),
            model: self.skeleton.desc(),
            biases: self
                .skeleton
                .layers()
                .iter()
                .map(|l| l.bias().data().to_vec())
                .collect(),
        }
    }

    pub fn words_to_blob(layout: &WordLayout, words: &[ProtectedWord]) -> Vec<u8> {
        let n = (layout.word_width / 8) as usize;
        let mut out = Vec::with_capacity(words.len() * n);
        for w in words {
            out.extend_from_slice(&w.0.to_le_bytes()[..n]);
        }
        out
    }

    pub fn blob(&self) -> Vec<u8> {
        Self::words_to_blob(&self.layout, &self.words)
    }

    pub fn from_header_blob(
        header: &ProtectedHeader,
        blob: &[u8],
        blob_path: &Path,
    ) -> Result<Self> {
        if header.format != PROTECTED_FORMAT {
            return Err(Error::Layout(format!("unknown format {:?}", header.format)));
        }
        let layout = WordLayout::new(
            header.word_width,
            header.b,
            header.protected_bits,
            header.copies,
            header.policy,
        )?;
        let n = (layout.word_width / 8) as usize;
        let total: usize = header.counts.iter().sum();
        if blob.len() < total * n {
            return Err(Error::Truncated {
                path: blob_path.to_path_buf(),
                needed: total * n,
                found: blob.len(),
            });
        }
        if blob.len() > total * n {
            return Err(Error::TrailingBytes {
                path: blob_path.to_path_buf(),
                extra: blob.len() - total * n,
            });
        }
        let words: Vec<ProtectedWord> = blob
            .chunks_exact(n)
            .map(|c| {
                let mut b = [0u8; 4];
                b[..n].copy_from_slice(c);
                ProtectedWord(u32::from_le_bytes(b))
            })
            .collect();
        match &header.coding {
            ValueCoding::Integer { scales } if scales.len() != header.counts.len() => {
                return Err(Error::Shape("one scale per tensor required".into()));
            }
            ValueCoding::Float32 if layout != WordLayout::unprotected(32, 32)? => {
                return Err(Error::Layout(
                    "float32 coding needs an unprotected 32-bit layout".into(),
                ));
            }
            _ => {}
        }
        let zero = skeleton_from(&header.model, &header.biases)?;
        let counts: Vec<usize> = zero.weight_tensors().map(|t| t.len()).collect();
        if counts != header.counts {
            return Err(Error::Shape(format!(
                "header counts {:?} disagree with model {counts:?}",
                header.counts
            )));
        }
        let mut image = Self {
            layout,
            coding: header.coding.clone(),
            counts,
            words,
            skeleton: zero,
        };
        let (clean, _) = image.model_from_words(&image.words)?;
        image.skeleton = clean;
        Ok(image)
    }

    pub fn save(&self, header_path: &Path, blob_path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.header()).expect("header serializes");
        s.push('\n');
        fs::write(header_path, s).map_err(|e| Error::io(header_path, e))?;
        fs::write(blob_path, self.blob()).map_err(|e| Error::io(blob_path, e))
    }

    pub fn load(header_path: &Path, blob_path: &Path) -> Result<Self> {
        let hb = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: ProtectedHeader =
            serde_json::from_slice(&hb).map_err(|source| Error::Json {
                path: header_path.to_path_buf(),
                source,
            })?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::from_header_blob(&header, &blob, blob_path)
    }
}

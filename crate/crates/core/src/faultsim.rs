//! Seeded bit-flip injection into protected words and fault campaigns.
//!
//! Each run draws from its own ChaCha8 stream seeded by a counter hash of
//! `(master_seed, run_index)`, so a run's faults do not depend on which
//! worker executes it or in what order. Runs are aggregated strictly by run
//! index.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::quantizer::QuantizedModel;
use crate::tensor::{evaluate_with, Dataset};
use crate::wordpack::{ProtectedImage, ProtectedWord, WordLayout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FaultMode {
    /// Every targeted bit flips independently with probability `p`.
    Bernoulli { p: f64 },
    /// Exactly `k` distinct targeted bits flip, uniformly chosen.
    ExactK { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMask {
    /// Every stored bit, including copies and padding.
    #[default]
    WholeWord,
    ValueBitsOnly,
    /// Copy bits only.
    ProtectionBitsOnly,
    /// Protected value bits and their copies. For a layout with no protected
    /// bits this is the value's most significant bit.
    MsbGroupOnly,
}

impl TargetMask {
    pub fn bits(self, layout: &WordLayout) -> u32 {
        match self {
            TargetMask::WholeWord => layout.word_mask(),
            TargetMask::ValueBitsOnly => layout.value_mask(),
            TargetMask::ProtectionBitsOnly => layout.copy_mask(),
            TargetMask::MsbGroupOnly => {
                if layout.protected_bits() == 0 {
                    1 << (layout.value_bits() - 1)
                } else {
                    layout.protected_value_mask() | layout.copy_mask()
                }
            }
        }
    }

    pub fn positions(self, layout: &WordLayout) -> Vec<u32> {
        let m = self.bits(layout);
        (0..32).filter(|b| m >> b & 1 == 1).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    #[serde(flatten)]
    pub mode: FaultMode,
    #[serde(default)]
    pub target_mask: TargetMask,
    pub master_seed: u64,
}

impl FaultModel {
    pub fn bernoulli(p: f64, target_mask: TargetMask, master_seed: u64) -> Self {
        Self {
            mode: FaultMode::Bernoulli { p },
            target_mask,
            master_seed,
        }
    }

    pub fn exact_k(k: usize, target_mask: TargetMask, master_seed: u64) -> Self {
        Self {
            mode: FaultMode::ExactK { k },
            target_mask,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FaultMode::Bernoulli { p } = self.mode {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Fault(format!("bit error rate {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the independent stream for one run.
pub fn run_seed(master_seed: u64, run_index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(run_index))
}

/// Stream used to pick the evaluation subset; disjoint from run streams in
/// practice since run indices never reach `u64::MAX`.
fn subset_seed(master_seed: u64) -> u64 {
    run_seed(master_seed, u64::MAX)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub words: Vec<ProtectedWord>,
    pub flips: usize,
}

/// Returns a faulted copy of `words`; the input is untouched.
pub fn inject(
    words: &[ProtectedWord],
    layout: &WordLayout,
    fm: &FaultModel,
    run_index: u64,
) -> Result<Injection> {
    fm.validate()?;
    let positions = fm.target_mask.positions(layout);
    let mut out = words.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed(fm.master_seed, run_index));
    let mut flips = 0;
    match fm.mode {
        FaultMode::Bernoulli { p } => {
            if p > 0.0 {
                for w in &mut out {
                    for &bit in &positions {
                        if rng.gen::<f64>() < p {
                            w.flip(bit);
                            flips += 1;
                        }
                    }
                }
            }
        }
        FaultMode::ExactK { k } => {
            let total = out.len() * positions.len();
            if k > total {
                return Err(Error::Fault(format!(
                    "cannot flip {k} distinct bits out of {total} targeted"
                )));
            }
            for i in index::sample(&mut rng, total, k) {
                out[i / positions.len()].flip(positions[i % positions.len()]);
            }
            flips = k;
        }
    }
    Ok(Injection { words: out, flips })
}

pub const DEFAULT_SDC_DELTA: f64 = 0.005;

fn default_sdc_delta() -> f64 {
    DEFAULT_SDC_DELTA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    #[serde(flatten)]
    pub fault: FaultModel,
    pub n_runs: usize,
    /// Images evaluated per run; `None` means the whole dataset.
    #[serde(default)]
    pub eval_subset_size: Option<usize>,
    #[serde(default = "default_true")]
    pub record_per_run: bool,
    /// A run is counted as silent data corruption when its accuracy falls
    /// below `clean - sdc_delta`.
    #[serde(default = "default_sdc_delta")]
    pub sdc_delta: f64,
}

impl Campaign {
    pub fn new(fault: FaultModel, n_runs: usize) -> Self {
        Self {
            fault,
            n_runs,
            eval_subset_size: None,
            record_per_run: true,
            sdc_delta: DEFAULT_SDC_DELTA,
        }
    }

    pub fn with_subset(mut self, size: usize) -> Self {
        self.eval_subset_size = Some(size);
        self
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.fault.validate()?;
        if self.n_runs == 0 {
            return Err(Error::Campaign("n_runs must be at least 1".into()));
        }
        if let Some(n) = self.eval_subset_size {
            if n == 0 || n > dataset_len {
                return Err(Error::Campaign(format!(
                    "eval_subset_size {n} must be in [1, {dataset_len}]"
                )));
            }
        }
        if !(self.sdc_delta >= 0.0 && self.sdc_delta.is_finite()) {
            return Err(Error::Campaign(format!(
                "sdc_delta {} must be >= 0",
                self.sdc_delta
            )));
        }
        Ok(())
    }
}

/// Sorted sample indices evaluated in every run of a campaign with this seed.
pub fn eval_subset_indices(
    master_seed: u64,
    dataset_len: usize,
    size: Option<usize>,
) -> Vec<usize> {
    match size {
        Some(n) if n < dataset_len => {
            let mut rng = ChaCha8Rng::seed_from_u64(subset_seed(master_seed));
            let mut idx = index::sample(&mut rng, dataset_len, n).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..dataset_len).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u64,
    pub accuracy: f64,
    pub flips: usize,
    pub corrections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub layout: WordLayout,
    pub fault: FaultModel,
    pub n_runs: usize,
    pub eval_subset_size: usize,
    pub clean_accuracy: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// `1.96 * std / sqrt(n_runs)`.
    pub ci_half_width: f64,
    pub correction_events: u64,
    pub total_flips: u64,
    pub sdc_delta: f64,
    pub sdc_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<RunRecord>>,
}

impl CampaignResult {
    pub fn ci_low(&self) -> f64 {
        self.mean - self.ci_half_width
    }

    pub fn ci_high(&self) -> f64 {
        self.mean + self.ci_half_width
    }

    /// Per-run CSV: `run_index,accuracy,flips,corrections`.
    pub fn runs_csv(&self, records: &[RunRecord]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run_index", "accuracy", "flips", "corrections"])
            .expect("in-memory write");
        for r in records {
            w.write_record([
                r.run_index.to_string(),
                r.accuracy.to_string(),
                r.flips.to_string(),
                r.corrections.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Mean, sample standard deviation and 95% normal-approximation half-width.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    (mean, std, 1.96 * std / n.sqrt())
}

pub fn run_campaign(
    qmodel: &QuantizedModel,
    layout: &WordLayout,
    campaign: &Campaign,
    dataset: &Dataset,
) -> Result<CampaignResult> {
    let image = ProtectedImage::from_quantized(qmodel, *layout)?;
    run_image_campaign(&image, campaign, dataset, Execution::default())
}

/// Runs a campaign against an already-encoded image.
pub fn run_image_campaign(
    image: &ProtectedImage,
    campaign: &Campaign,
    dataset: &Dataset,
    exec: Execution,
) -> Result<CampaignResult> {
    campaign.validate(dataset.len())?;
    let indices = eval_subset_indices(
        campaign.fault.master_seed,
        dataset.len(),
        campaign.eval_subset_size,
    );
    let subset = dataset.subset(&indices)?;
    let clean_accuracy = evaluate_with(image.clean_model(), &subset, exec)?;

    let layout = *image.layout();
    let records = map_indexed(exec, campaign.n_runs, |i| -> Result<RunRecord> {
        let run_index = i as u64;
        let inj = inject(image.words(), &layout, &campaign.fault, run_index)?;
        let (model, corrections) = image.model_from_words(&inj.words)?;
        let accuracy = evaluate_with(&model, &subset, Execution::Sequential)?;
        Ok(RunRecord {
            run_index,
            accuracy,
            flips: inj.flips,
            corrections,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let accuracies: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    let (mean, std, ci_half_width) = summarize(&accuracies);
    let floor = clean_accuracy - campaign.sdc_delta;
    let sdc = accuracies.iter().filter(|&&a| a < floor).count();
    Ok(CampaignResult {
        layout,
        fault: campaign.fault,
        n_runs: campaign.n_runs,
        eval_subset_size: subset.len(),
        clean_accuracy,
        mean,
        std,
        ci_half_width,
        correction_events: records.iter().map(|r| r.corrections as u64).sum(),
        total_flips: records.iter().map(|r| r.flips as u64).sum(),
        sdc_delta: campaign.sdc_delta,
        sdc_rate: sdc as f64 / campaign.n_runs as f64,
        accuracies,
        runs: campaign.record_per_run.then_some(records),
    })
}

/// Probability that a majority vote over `votes` independent copies of a
/// bit, each flipped with probability `p`, returns the wrong value.
pub fn analytic_msb_error_prob(p: f64, votes: u32) -> Result<f64> {
    if votes.is_multiple_of(2) {
        return Err(Error::Invalid(format!("vote count {votes} must be odd")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut total = 0.0;
    let mut binom = 1.0f64; // C(votes, j), built up from C(votes, 0)
    for j in 0..=votes {
        if j > 0 {
            binom = binom * f64::from(votes - j + 1) / f64::from(j);
        }
        if 2 * j > votes {
            total += binom * p.powi(j as i32) * (1.0 - p).powi((votes - j) as i32);
        }
    }
    Ok(total)
}

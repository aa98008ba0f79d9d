//! Grid exploration of (bit-width, protected bits, copies, policy) with
//! threshold filtering and a Pareto front.
//!
//! Every design point runs one campaign per bit-error rate, all with the same
//! master seed, so points are compared on paired fault draws. With a common
//! word width the value bits of two layouts even see identical uniforms, and
//! the protected point differs only in its copy bits.
//!
//! `b = 32` denotes the unquantized baseline: weights stored as `f32` in
//! plain 32-bit words.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::faultsim::{
    eval_subset_indices, run_image_campaign, Campaign, FaultModel, TargetMask, DEFAULT_SDC_DELTA,
};
use crate::quantizer::{quantize_model, QuantSpec, QuantizedModel, MAX_BITWIDTH, MIN_BITWIDTH};
use crate::tensor::{evaluate_with, Dataset, Model};
use crate::wordpack::{
    decode_cost, footprint, ProtectedImage, ProtectionPolicy, WordLayout, BASELINE_BITS,
};

pub const FLOAT_BITS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DesignPoint {
    pub b: u32,
    #[serde(rename = "J")]
    pub j: u32,
    #[serde(rename = "R")]
    pub r: u32,
    pub policy: ProtectionPolicy,
    #[serde(rename = "W")]
    pub w: u32,
}

impl DesignPoint {
    pub fn new(b: u32, j: u32, r: u32, policy: ProtectionPolicy, w: u32) -> Self {
        Self { b, j, r, policy, w }
    }

    pub fn is_float_baseline(&self) -> bool {
        self.b == FLOAT_BITS
    }

    /// Word layout of this point, validating both the layout invariants and
    /// the value width (quantized `[2, 16]`, or the unprotected float
    /// baseline).
    pub fn layout(&self) -> Result<WordLayout> {
        if self.is_float_baseline() {
            if self.j != 0 || self.r != 0 || self.w != FLOAT_BITS {
                return Err(Error::Layout(
                    "the float baseline is an unprotected 32-bit word".into(),
                ));
            }
        } else if !(MIN_BITWIDTH..=MAX_BITWIDTH).contains(&self.b) {
            return Err(Error::Layout(format!(
                "bit-width {} is neither quantized [{MIN_BITWIDTH}, {MAX_BITWIDTH}] nor float {FLOAT_BITS}",
                self.b
            )));
        }
        WordLayout::new(self.w, self.b, self.j, self.r, self.policy)
    }

    /// Stable short tag, usable in file names.
    pub fn tag(&self) -> String {
        format!(
            "b{}_j{}_r{}_{}_w{}",
            self.b, self.j, self.r, self.policy, self.w
        )
    }
}

impl fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{},W{})",
            self.b, self.j, self.r, self.policy, self.w
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub points: Vec<DesignPoint>,
    pub warning: Option<String>,
}

/// All valid design points, lexicographically ordered by `(b, J, R, policy)`.
///
/// Unprotected storage appears once per `b` as `(b, 0, 0, none)`, whatever
/// policies were requested; mixed cases (`J = 0` xor `R = 0`) are dropped.
pub fn enumerate_grid(
    b_range: &[u32],
    j_range: &[u32],
    r_range: &[u32],
    policies: &[ProtectionPolicy],
    w: u32,
) -> Result<Grid> {
    if b_range.is_empty() || j_range.is_empty() || r_range.is_empty() || policies.is_empty() {
        return Err(Error::Invalid("every grid range must be non-empty".into()));
    }
    let mut points = Vec::new();
    for &b in b_range {
        for &j in j_range {
            for &r in r_range {
                for &policy in policies {
                    let dp = match (j, r) {
                        (0, 0) => DesignPoint::new(b, 0, 0, ProtectionPolicy::None, w),
                        (0, _) | (_, 0) => continue,
                        _ if policy == ProtectionPolicy::None => continue,
                        _ => DesignPoint::new(b, j, r, policy, w),
                    };
                    if dp.layout().is_ok() {
                        points.push(dp);
                    }
                }
            }
        }
    }
    points.sort();
    points.dedup();
    let warning = points.is_empty().then(|| {
        format!("no valid design point for b={b_range:?} J={j_range:?} R={r_range:?} W={w}")
    });
    Ok(Grid { points, warning })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFloor {
    pub bit_error_rate: f64,
    pub min_mean_faulty_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub min_clean_accuracy: f64,
    #[serde(default)]
    pub rate_floors: Vec<RateFloor>,
    #[serde(default)]
    pub max_bits_per_param: Option<u32>,
    #[serde(default)]
    pub max_decode_cost: Option<u32>,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.min_clean_accuracy) {
            return Err(Error::Invalid(format!(
                "min_clean_accuracy {} outside [0, 1]",
                self.min_clean_accuracy
            )));
        }
        for f in &self.rate_floors {
            if !unit(f.bit_error_rate) || !unit(f.min_mean_faulty_accuracy) {
                return Err(Error::Invalid(format!("rate floor {f:?} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Rates that carry a floor, in declaration order.
    pub fn rates(&self) -> Vec<f64> {
        self.rate_floors.iter().map(|f| f.bit_error_rate).collect()
    }

    /// The acceptance predicate for one point.
    pub fn admits(&self, p: &EvaluatedPoint) -> bool {
        if !p.status.is_ok() || p.clean_accuracy < self.min_clean_accuracy {
            return false;
        }
        let floors_ok = self.rate_floors.iter().all(|f| {
            p.rate(f.bit_error_rate)
                .is_some_and(|r| r.mean >= f.min_mean_faulty_accuracy)
        });
        floors_ok
            && self
                .max_bits_per_param
                .is_none_or(|m| p.bits_per_param <= m)
            && self.max_decode_cost.is_none_or(|m| p.decode_cost <= m)
    }
}

/// Campaign settings shared by every point; the rate is filled per campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignTemplate {
    #[serde(default)]
    pub target_mask: TargetMask,
    pub master_seed: u64,
    pub n_runs: usize,
    #[serde(default)]
    pub eval_subset_size: Option<usize>,
    #[serde(default = "default_sdc_delta")]
    pub sdc_delta: f64,
}

fn default_sdc_delta() -> f64 {
    DEFAULT_SDC_DELTA
}

impl CampaignTemplate {
    pub fn at_rate(&self, p: f64) -> Campaign {
        Campaign {
            fault: FaultModel::bernoulli(p, self.target_mask, self.master_seed),
            n_runs: self.n_runs,
            eval_subset_size: self.eval_subset_size,
            record_per_run: false,
            sdc_delta: self.sdc_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Invalid { reason: String },
}

impl PointStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PointStatus::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub bit_error_rate: f64,
    pub mean: f64,
    pub std: f64,
    pub ci_half_width: f64,
    pub sdc_rate: f64,
    pub correction_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub grid_index: usize,
    pub point: DesignPoint,
    pub status: PointStatus,
    pub clean_accuracy: f64,
    pub rates: Vec<RateResult>,
    /// Reliability objective: lowest mean faulty accuracy over the
    /// thresholded rates (over all rates if none carry a floor, clean
    /// accuracy if no rates were run).
    pub worst_faulty_accuracy: f64,
    pub bits_per_param: u32,
    pub overhead_fraction: f64,
    pub total_bits: u64,
    pub decode_cost: u32,
    pub master_seed: u64,
    pub n_runs: usize,
    pub eval_subset_size: usize,
}

impl EvaluatedPoint {
    pub fn rate(&self, p: f64) -> Option<&RateResult> {
        self.rates.iter().find(|r| r.bit_error_rate == p)
    }
}

/// Union of thresholded and extra rates, ascending, without duplicates.
pub fn campaign_rates(thresholds: &Thresholds, extra: &[f64]) -> Vec<f64> {
    let mut rates: Vec<f64> = thresholds
        .rates()
        .into_iter()
        .chain(extra.iter().copied())
        .collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    rates
}

fn protected_image(
    dp: &DesignPoint,
    model: &Model,
    quantized: Option<&QuantizedModel>,
) -> Result<ProtectedImage> {
    let layout = dp.layout()?;
    if dp.is_float_baseline() {
        return ProtectedImage::from_float32(model);
    }
    match quantized {
        Some(q) => ProtectedImage::from_quantized(q, layout),
        None => {
            ProtectedImage::from_quantized(&quantize_model(model, QuantSpec::new(dp.b)?)?, layout)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_point_inner(
    grid_index: usize,
    dp: &DesignPoint,
    model: &Model,
    quantized: Option<&QuantizedModel>,
    dataset: &Dataset,
    thresholds: &Thresholds,
    template: &CampaignTemplate,
    rates: &[f64],
    exec: Execution,
) -> EvaluatedPoint {
    let (bits_per_param, overhead_fraction, total_bits, cost) = match dp.layout() {
        Ok(l) => {
            let f = footprint(
                &l,
                model.weight_tensors().map(|t| t.len()).sum(),
                BASELINE_BITS,
            );
            (
                f.bits_per_param,
                f.overhead_fraction,
                f.total_bits,
                decode_cost(&l),
            )
        }
        // invalid layout: report the nominal figures, the status carries the reason
        Err(_) => {
            let bits = dp.b + dp.j * dp.r;
            let overhead = (f64::from(bits) - f64::from(BASELINE_BITS)) / f64::from(BASELINE_BITS);
            (
                bits,
                overhead,
                0,
                1 + dp.r * dp.j + if dp.r > 0 { dp.j } else { 0 },
            )
        }
    };
    let subset_size = template
        .eval_subset_size
        .unwrap_or(dataset.len())
        .min(dataset.len());
    let mut ep = EvaluatedPoint {
        grid_index,
        point: *dp,
        status: PointStatus::Ok,
        clean_accuracy: 0.0,
        rates: Vec::new(),
        worst_faulty_accuracy: 0.0,
        bits_per_param,
        overhead_fraction,
        total_bits,
        decode_cost: cost,
        master_seed: template.master_seed,
        n_runs: template.n_runs,
        eval_subset_size: subset_size,
    };
    let outcome = (|| -> Result<()> {
        template.at_rate(0.0).validate(dataset.len())?;
        let image = protected_image(dp, model, quantized)?;
        let idx = eval_subset_indices(
            template.master_seed,
            dataset.len(),
            template.eval_subset_size,
        );
        ep.clean_accuracy = evaluate_with(image.clean_model(), &dataset.subset(&idx)?, exec)?;
        for &p in rates {
            let res = run_image_campaign(&image, &template.at_rate(p), dataset, exec)?;
            ep.rates.push(RateResult {
                bit_error_rate: p,
                mean: res.mean,
                std: res.std,
                ci_half_width: res.ci_half_width,
                sdc_rate: res.sdc_rate,
                correction_events: res.correction_events,
            });
        }
        let floor_rates = thresholds.rates();
        let considered: Vec<f64> = ep
            .rates
            .iter()
            .filter(|r| floor_rates.is_empty() || floor_rates.contains(&r.bit_error_rate))
            .map(|r| r.mean)
            .collect();
        ep.worst_faulty_accuracy = if considered.is_empty() {
            ep.clean_accuracy
        } else {
            considered.into_iter().fold(f64::INFINITY, f64::min)
        };
        Ok(())
    })();
    if let Err(e) = outcome {
        ep.status = PointStatus::Invalid {
            reason: e.to_string(),
        };
        ep.rates.clear();
        ep.clean_accuracy = 0.0;
        ep.worst_faulty_accuracy = 0.0;
    }
    ep
}

/// Evaluates one point: quantize, encode, clean accuracy, then one campaign
/// per thresholded rate. Failures mark the point invalid with the reason.
pub fn evaluate_point(
    dp: &DesignPoint,
    model: &Model,
    dataset: &Dataset,
    thresholds: &Thresholds,
    template: &CampaignTemplate,
) -> EvaluatedPoint {
    evaluate_point_inner(
        0,
        dp,
        model,
        None,
        dataset,
        thresholds,
        template,
        &thresholds.rates(),
        Execution::default(),
    )
}

/// Points that satisfy every threshold, in input order.
pub fn filter_thresholds(
    points: &[EvaluatedPoint],
    thresholds: &Thresholds,
) -> Vec<EvaluatedPoint> {
    points
        .iter()
        .filter(|p| thresholds.admits(p))
        .cloned()
        .collect()
}

/// `a` dominates `b`: no worse on reliability, bits and cost, strictly
/// better on at least one.
pub fn dominates(a: &EvaluatedPoint, b: &EvaluatedPoint) -> bool {
    let no_worse = a.worst_faulty_accuracy >= b.worst_faulty_accuracy
        && a.bits_per_param <= b.bits_per_param
        && a.decode_cost <= b.decode_cost;
    let better = a.worst_faulty_accuracy > b.worst_faulty_accuracy
        || a.bits_per_param < b.bits_per_param
        || a.decode_cost < b.decode_cost;
    no_worse && better
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub members: Vec<EvaluatedPoint>,
}

fn front_order(a: &EvaluatedPoint, b: &EvaluatedPoint) -> std::cmp::Ordering {
    a.bits_per_param
        .cmp(&b.bits_per_param)
        .then(b.worst_faulty_accuracy.total_cmp(&a.worst_faulty_accuracy))
        .then(a.decode_cost.cmp(&b.decode_cost))
        .then(a.grid_index.cmp(&b.grid_index))
}

/// Non-dominated subset, sorted by bits ascending then accuracy descending.
/// Points with identical objectives are all kept.
///
/// After sorting by (bits, -accuracy, cost) any dominator of a point sorts
/// before it, and by transitivity some front member dominates it too, so
/// each candidate is only compared against the front built so far.
pub fn pareto_front(points: &[EvaluatedPoint]) -> ParetoSet {
    let mut sorted: Vec<&EvaluatedPoint> = points.iter().collect();
    sorted.sort_by(|a, b| front_order(a, b));
    let mut members: Vec<EvaluatedPoint> = Vec::new();
    for p in sorted {
        if !members.iter().any(|m| dominates(m, p)) {
            members.push(p.clone());
        }
    }
    ParetoSet { members }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreConfig {
    pub bitwidths: Vec<u32>,
    pub protected_bits: Vec<u32>,
    pub copies: Vec<u32>,
    pub policies: Vec<ProtectionPolicy>,
    pub word_width: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Rates evaluated in addition to the thresholded ones (for curves).
    #[serde(default)]
    pub extra_rates: Vec<f64>,
    pub campaign: CampaignTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub rates: Vec<f64>,
    pub points: Vec<EvaluatedPoint>,
    /// Grid indices of the points passing the thresholds.
    pub survivors: Vec<usize>,
    pub front: ParetoSet,
    pub warnings: Vec<String>,
}

/// Full grid-evaluate-filter-front pass. Points are evaluated in parallel
/// (per `exec`) and collected by grid index, so the output depends only on
/// the model, dataset and config.
pub fn explore(
    model: &Model,
    dataset: &Dataset,
    config: &ExploreConfig,
    exec: Execution,
) -> Result<Exploration> {
    config.thresholds.validate()?;
    let extra_bad = config
        .extra_rates
        .iter()
        .find(|p| !(0.0..=1.0).contains(*p));
    if let Some(p) = extra_bad {
        return Err(Error::Invalid(format!("extra rate {p} outside [0, 1]")));
    }
    let grid = enumerate_grid(
        &config.bitwidths,
        &config.protected_bits,
        &config.copies,
        &config.policies,
        config.word_width,
    )?;
    let mut warnings: Vec<String> = grid.warning.into_iter().collect();
    let rates = campaign_rates(&config.thresholds, &config.extra_rates);

    let mut widths: Vec<u32> = grid
        .points
        .iter()
        .filter(|p| !p.is_float_baseline())
        .map(|p| p.b)
        .collect();
    widths.dedup();
    let quantized: BTreeMap<u32, QuantizedModel> = map_indexed(exec, widths.len(), |i| {
        quantize_model(model, QuantSpec::new(widths[i])?).map(|q| (widths[i], q))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let points = map_indexed(exec, grid.points.len(), |i| {
        let dp = &grid.points[i];
        evaluate_point_inner(
            i,
            dp,
            model,
            quantized.get(&dp.b),
            dataset,
            &config.thresholds,
            &config.campaign,
            &rates,
            exec,
        )
    });
    for p in points.iter() {
        if let PointStatus::Invalid { reason } = &p.status {
            warnings.push(format!("point {} invalid: {reason}", p.point));
        }
    }
    let survivors_pts = filter_thresholds(&points, &config.thresholds);
    if survivors_pts.is_empty() && !points.is_empty() {
        warnings.push("no design point satisfies the thresholds".into());
    }
    let front = pareto_front(&survivors_pts);
    Ok(Exploration {
        rates,
        survivors: survivors_pts.iter().map(|p| p.grid_index).collect(),
        points,
        front,
        warnings,
    })
}

pub const REPORT_FIXED_COLUMNS: [&str; 17] = [
    "grid_index",
    "b",
    "J",
    "R",
    "policy",
    "W",
    "status",
    "clean_accuracy",
    "worst_faulty_accuracy",
    "bits_per_param",
    "overhead_fraction",
    "total_bits",
    "decode_cost",
    "master_seed",
    "n_runs",
    "passes_thresholds",
    "on_front",
];

impl Exploration {
    /// One row per evaluated point: the fixed columns of
    /// [`REPORT_FIXED_COLUMNS`], then `mean@<rate>` and `ci@<rate>` for each
    /// campaign rate in ascending order.
    pub fn report_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = REPORT_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for p in &self.rates {
            header.push(format!("mean@{p}"));
            header.push(format!("ci@{p}"));
        }
        w.write_record(&header).expect("in-memory write");
        let on_front: Vec<usize> = self.front.members.iter().map(|m| m.grid_index).collect();
        for p in &self.points {
            let status = match &p.status {
                PointStatus::Ok => "ok".to_string(),
                PointStatus::Invalid { reason } => format!("invalid: {reason}"),
            };
            let mut row = vec![
                p.grid_index.to_string(),
                p.point.b.to_string(),
                p.point.j.to_string(),
                p.point.r.to_string(),
                p.point.policy.to_string(),
                p.point.w.to_string(),
                status,
                p.clean_accuracy.to_string(),
                p.worst_faulty_accuracy.to_string(),
                p.bits_per_param.to_string(),
                p.overhead_fraction.to_string(),
                p.total_bits.to_string(),
                p.decode_cost.to_string(),
                p.master_seed.to_string(),
                p.n_runs.to_string(),
                self.survivors.contains(&p.grid_index).to_string(),
                on_front.contains(&p.grid_index).to_string(),
            ];
            for &rate in &self.rates {
                match p.rate(rate) {
                    Some(r) => {
                        row.push(r.mean.to_string());
                        row.push(r.ci_half_width.to_string());
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProtectionPolicy::*;

    fn point(i: usize, acc: f64, bits: u32, cost: u32) -> EvaluatedPoint {
        EvaluatedPoint {
            grid_index: i,
            point: DesignPoint::new(8, 0, 0, None, 32),
            status: PointStatus::Ok,
            clean_accuracy: acc,
            rates: vec![RateResult {
                bit_error_rate: 1e-3,
                mean: acc,
                std: 0.0,
                ci_half_width: 0.0,
                sdc_rate: 0.0,
                correction_events: 0,
            }],
            worst_faulty_accuracy: acc,
            bits_per_param: bits,
            overhead_fraction: 0.0,
            total_bits: 0,
            decode_cost: cost,
            master_seed: 0,
            n_runs: 1,
            eval_subset_size: 1,
        }
    }

    #[test]
    fn grid_filters_mixed_and_invalid() {
        let g = enumerate_grid(&[8], &[0, 1], &[0, 2], &[Majority], 32).unwrap();
        assert_eq!(
            g.points,
            vec![
                DesignPoint::new(8, 0, 0, None, 32),
                DesignPoint::new(8, 1, 2, Majority, 32)
            ]
        );
        assert!(g.warning.is_none());
        let empty = enumerate_grid(&[30], &[2], &[2], &[Majority], 32).unwrap();
        assert!(empty.points.is_empty());
        assert!(empty.warning.is_some());
        assert!(enumerate_grid(&[], &[0], &[0], &[None], 8).is_err());
    }

    #[test]
    fn grid_policy_copy_compatibility() {
        let g = enumerate_grid(
            &[4],
            &[1],
            &[1, 2],
            &[Majority, DetectZero, DetectTrustCopy, None],
            8,
        )
        .unwrap();
        assert_eq!(
            g.points,
            vec![
                DesignPoint::new(4, 1, 1, DetectZero, 8),
                DesignPoint::new(4, 1, 1, DetectTrustCopy, 8),
                DesignPoint::new(4, 1, 2, Majority, 8),
            ]
        );
    }

    #[test]
    fn float_baseline_only_unprotected_32() {
        let g = enumerate_grid(&[32], &[0, 1], &[0, 2], &[Majority], 32).unwrap();
        assert_eq!(g.points, vec![DesignPoint::new(32, 0, 0, None, 32)]);
        assert!(enumerate_grid(&[32], &[0], &[0], &[None], 16)
            .unwrap()
            .points
            .is_empty());
        assert!(enumerate_grid(&[1, 17], &[0], &[0], &[None], 32)
            .unwrap()
            .points
            .is_empty());
    }

    #[test]
    fn threshold_predicate() {
        let t = Thresholds {
            rate_floors: vec![RateFloor {
                bit_error_rate: 1e-3,
                min_mean_faulty_accuracy: 0.8,
            }],
            ..Default::default()
        };
        assert!(filter_thresholds(&[point(0, 0.75, 10, 4)], &t).is_empty());
        assert_eq!(filter_thresholds(&[point(0, 0.85, 10, 4)], &t).len(), 1);
        let pts = [point(0, 0.1, 40, 9), point(1, 0.0, 1, 1)];
        assert_eq!(filter_thresholds(&pts, &Thresholds::default()).len(), 2);
        let capped = Thresholds {
            max_bits_per_param: Some(10),
            max_decode_cost: Some(4),
            ..Default::default()
        };
        let kept = filter_thresholds(
            &[
                point(0, 1.0, 10, 4),
                point(1, 1.0, 11, 1),
                point(2, 1.0, 9, 5),
            ],
            &capped,
        );
        assert_eq!(
            kept.iter().map(|p| p.grid_index).collect::<Vec<_>>(),
            vec![0]
        );
    }

    #[test]
    fn missing_rate_fails_floor_and_invalid_never_passes() {
        let t = Thresholds {
            rate_floors: vec![RateFloor {
                bit_error_rate: 1e-2,
                min_mean_faulty_accuracy: 0.0,
            }],
            ..Default::default()
        };
        assert!(!t.admits(&point(0, 1.0, 8, 1)));
        let mut bad = point(0, 1.0, 8, 1);
        bad.status = PointStatus::Invalid { reason: "x".into() };
        assert!(!Thresholds::default().admits(&bad));
    }

    #[test]
    fn front_example() {
        let a = point(0, 0.90, 10, 4);
        let b = point(1, 0.90, 12, 4);
        let c = point(2, 0.85, 9, 1);
        let front = pareto_front(&[a.clone(), b, c.clone()]);
        assert_eq!(front.members, vec![c, a]);
        let single = point(5, 0.5, 8, 1);
        assert_eq!(
            pareto_front(std::slice::from_ref(&single)).members,
            vec![single]
        );
    }

    #[test]
    fn identical_objectives_are_both_kept() {
        let front = pareto_front(&[point(0, 0.9, 10, 4), point(1, 0.9, 10, 4)]);
        assert_eq!(front.members.len(), 2);
    }

    #[test]
    fn rates_union_sorted() {
        let t = Thresholds {
            rate_floors: vec![RateFloor {
                bit_error_rate: 1e-3,
                min_mean_faulty_accuracy: 0.5,
            }],
            ..Default::default()
        };
        assert_eq!(
            campaign_rates(&t, &[1e-2, 1e-3, 1e-4]),
            vec![1e-4, 1e-3, 1e-2]
        );
    }

    #[test]
    fn design_point_tag() {
        assert_eq!(
            DesignPoint::new(8, 1, 2, Majority, 16).tag(),
            "b8_j1_r2_majority_w16"
        );
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use qnnguard::explorer::{self, DesignPoint, Exploration, ParetoSet, PointStatus, Thresholds};
use qnnguard::faultsim::{self, CampaignResult, FaultMode};
use qnnguard::io;
use qnnguard::quantizer::{self, QuantizedModel};
use qnnguard::wordpack::{self, ProtectedImage, BASELINE_BITS};
use qnnguard::{Dataset, Execution, Model, QuantSpec};
use serde::Serialize;

use crate::config::{blob_path, required, LoadedConfig};
use crate::error::{CliError, CliResult};
use crate::output::OutputDir;
use crate::plot::{emit_plot_data, Curve};

/// Bit-width that selects the unquantized `f32` baseline.
pub const FLOAT_BITWIDTH: u32 = 32;

pub struct Ctx<'a> {
    pub lc: &'a LoadedConfig,
    pub out: &'a mut OutputDir,
    pub exec: Execution,
    pub warnings: Vec<String>,
}

fn load_model(lc: &LoadedConfig) -> CliResult<Model> {
    let model = lc.path("model", &lc.config.model)?;
    let weights = lc.path("weights", &lc.config.weights)?;
    Ok(io::load_model(&model, &weights)?)
}

fn load_dataset(lc: &LoadedConfig, model: &Model) -> CliResult<Dataset> {
    let path = lc.path("dataset", &lc.config.dataset)?;
    let ds = io::load_dataset(&path)?;
    ds.check_classes(model.num_classes())?;
    Ok(ds)
}

fn quantize_from_config(lc: &LoadedConfig, model: &Model) -> CliResult<QuantizedModel> {
    let b = *required("bitwidth", &lc.config.bitwidth)?;
    let spec = QuantSpec::new(b).map_err(|e| CliError::config("bitwidth", e))?;
    Ok(quantizer::quantize_model(model, spec)?)
}

/// The protected image named by the config: a saved one if `protected` is
/// set, otherwise built from the model, `bitwidth` and `layout`.
fn image_from_config(lc: &LoadedConfig) -> CliResult<ProtectedImage> {
    if let Some(p) = &lc.config.protected {
        let header = lc.resolve(p);
        return Ok(ProtectedImage::load(&header, &blob_path(&header))?);
    }
    let qmodel = match &lc.config.quantized {
        Some(p) => {
            let header = lc.resolve(p);
            Some(QuantizedModel::load(&header, &blob_path(&header))?)
        }
        None => None,
    };
    let layout = *required("layout", &lc.config.layout)?;
    match qmodel {
        Some(q) => {
            ProtectedImage::from_quantized(&q, layout).map_err(|e| CliError::config("layout", e))
        }
        None => {
            let model = load_model(lc)?;
            if lc.config.bitwidth == Some(FLOAT_BITWIDTH) {
                if layout != qnnguard::WordLayout::unprotected(32, 32)? {
                    return Err(CliError::config(
                        "layout",
                        "the float baseline is an unprotected 32-bit word",
                    ));
                }
                Ok(ProtectedImage::from_float32(&model)?)
            } else {
                let q = quantize_from_config(lc, &model)?;
                ProtectedImage::from_quantized(&q, layout)
                    .map_err(|e| CliError::config("layout", e))
            }
        }
    }
}

/// Dataset for an image: loaded and checked against the decoded model.
fn dataset_for_image(lc: &LoadedConfig, image: &ProtectedImage) -> CliResult<Dataset> {
    load_dataset(lc, image.clean_model())
}

#[derive(Serialize)]
struct QuantizeSummary {
    bitwidth: u32,
    scales: Vec<f64>,
    param_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    float_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quantized_accuracy: Option<f64>,
}

pub fn quantize(ctx: &mut Ctx) -> CliResult<()> {
    let model = load_model(ctx.lc)?;
    let q = quantize_from_config(ctx.lc, &model)?;
    let (float_accuracy, quantized_accuracy) = match ctx.lc.config.dataset {
        Some(_) => {
            let ds = load_dataset(ctx.lc, &model)?;
            (
                Some(qnnguard::tensor::evaluate_with(&model, &ds, ctx.exec)?),
                Some(quantizer::quantized_accuracy_with(&q, &ds, ctx.exec)?),
            )
        }
        None => (None, None),
    };
    ctx.out.write_json("quantized.json", &q.header())?;
    ctx.out.write(Path::new("quantized.bin"), &q.blob())?;
    ctx.out.write_json(
        "quantize_summary.json",
        &QuantizeSummary {
            bitwidth: q.spec().bitwidth(),
            scales: q.scales(),
            param_count: q.param_count(),
            float_accuracy,
            quantized_accuracy,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ProtectSummary {
    layout: qnnguard::WordLayout,
    param_count: usize,
    bits_per_param: u32,
    total_bits: u64,
    overhead_fraction: f64,
    decode_cost: u32,
}

pub fn protect(ctx: &mut Ctx) -> CliResult<()> {
    if ctx.lc.config.protected.is_some() {
        return Err(CliError::config(
            "protected",
            "protect builds an image; give a model or `quantized` instead",
        ));
    }
    let image = image_from_config(ctx.lc)?;
    let layout = *image.layout();
    let fp = wordpack::footprint(&layout, image.param_count(), BASELINE_BITS);
    ctx.out.write_json("protected.json", &image.header())?;
    ctx.out.write(Path::new("protected.bin"), &image.blob())?;
    ctx.out.write_json(
        "protect_summary.json",
        &ProtectSummary {
            layout,
            param_count: image.param_count(),
            bits_per_param: fp.bits_per_param,
            total_bits: fp.total_bits,
            overhead_fraction: fp.overhead_fraction,
            decode_cost: wordpack::decode_cost(&layout),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct InjectSummary {
    run_index: u64,
    flips: usize,
    words_changed: usize,
    corrections_on_decode: usize,
}

pub fn inject(ctx: &mut Ctx) -> CliResult<()> {
    let lc = ctx.lc;
    let header = lc.path("protected", &lc.config.protected)?;
    let image = ProtectedImage::load(&header, &blob_path(&header))?;
    let fault = match (&lc.config.fault, &lc.config.campaign) {
        (Some(f), _) => *f,
        (None, Some(c)) => c.fault,
        (None, None) => return Err(CliError::config("fault", "required for this subcommand")),
    };
    fault.validate().map_err(|e| CliError::config("fault", e))?;
    let run_index = lc.config.run_index.unwrap_or(0);
    let inj = faultsim::inject(image.words(), image.layout(), &fault, run_index)?;
    let (_, corrections) = image.decode_weights(&inj.words)?;
    let words_changed = inj
        .words
        .iter()
        .zip(image.words())
        .filter(|(a, b)| a != b)
        .count();
    ctx.out.write_json("faulted.json", &image.header())?;
    ctx.out.write(
        Path::new("faulted.bin"),
        &ProtectedImage::words_to_blob(image.layout(), &inj.words),
    )?;
    ctx.out.write_json(
        "inject_summary.json",
        &InjectSummary {
            run_index,
            flips: inj.flips,
            words_changed,
            corrections_on_decode: corrections,
        },
    )?;
    Ok(())
}

pub fn campaign(ctx: &mut Ctx) -> CliResult<()> {
    let lc = ctx.lc;
    let campaign = required("campaign", &lc.config.campaign)?;
    let image = image_from_config(lc)?;
    let ds = dataset_for_image(lc, &image)?;
    campaign
        .validate(ds.len())
        .map_err(|e| CliError::config("campaign", e))?;
    let result = faultsim::run_image_campaign(&image, campaign, &ds, ctx.exec)?;
    ctx.out.write_json("campaign.json", &result)?;
    let records = result.runs.clone().unwrap_or_default();
    ctx.out.write(
        Path::new("campaign.csv"),
        result.runs_csv(&records).as_bytes(),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct ParetoReport<'a> {
    thresholds: &'a Thresholds,
    survivors: usize,
    front: &'a ParetoSet,
}

pub fn explore(ctx: &mut Ctx) -> CliResult<()> {
    let lc = ctx.lc;
    let cfg = required("explore", &lc.config.explore)?;
    cfg.thresholds
        .validate()
        .map_err(|e| CliError::config("explore.thresholds", e))?;
    let model = load_model(lc)?;
    let ds = load_dataset(lc, &model)?;
    let ex = explorer::explore(&model, &ds, cfg, ctx.exec)?;
    ctx.warnings.extend(ex.warnings.iter().cloned());
    ctx.out
        .write(Path::new("report.csv"), ex.report_csv().as_bytes())?;
    ctx.out.write_json("points.json", &ex)?;
    ctx.out.write_json(
        "pareto.json",
        &ParetoReport {
            thresholds: &cfg.thresholds,
            survivors: ex.survivors.len(),
            front: &ex.front,
        },
    )?;
    let curves = ex
        .front
        .members
        .iter()
        .map(|p| Curve::from_point(p, &ex.rates))
        .collect::<CliResult<Vec<_>>>()?;
    let w = emit_plot_data(ctx.out, Path::new("plot"), &curves)?;
    ctx.warnings.extend(w);
    Ok(())
}

/// A result file accepted by `report`.
enum ReportInput {
    Exploration(Exploration),
    Campaign(CampaignResult),
}

fn read_report_input(path: &Path) -> CliResult<ReportInput> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(ex) = serde_json::from_slice::<Exploration>(&bytes) {
        return Ok(ReportInput::Exploration(ex));
    }
    serde_json::from_slice::<CampaignResult>(&bytes)
        .map(ReportInput::Campaign)
        .map_err(|e| {
            CliError::Other(format!(
                "{}: neither an exploration nor a campaign result: {e}",
                path.display()
            ))
        })
}

pub fn report(ctx: &mut Ctx) -> CliResult<()> {
    let lc = ctx.lc;
    if lc.config.inputs.is_empty() {
        return Err(CliError::config(
            "inputs",
            "report needs at least one result file",
        ));
    }
    let mut curves: Vec<Curve> = Vec::new();
    // campaign results for the same design point merge into one curve
    let mut from_exploration = std::collections::HashSet::new();
    for (i, p) in lc.config.inputs.iter().enumerate() {
        let path: PathBuf = lc.resolve(p);
        match read_report_input(&path)? {
            ReportInput::Exploration(ex) => {
                for point in ex.points.iter().filter(|p| p.status == PointStatus::Ok) {
                    let mut c = Curve::from_point(point, &ex.rates)?;
                    if curves.iter().any(|k| k.tag == c.tag) {
                        c.tag = format!("{}_input{i}", c.tag);
                    }
                    from_exploration.insert(c.tag.clone());
                    curves.push(c);
                }
            }
            ReportInput::Campaign(c) => {
                let rate = match c.fault.mode {
                    FaultMode::Bernoulli { p } => p,
                    FaultMode::ExactK { .. } => {
                        return Err(CliError::config(
                            format!("inputs[{i}]"),
                            "exact-k campaigns have no bit error rate to report",
                        ))
                    }
                };
                let l = c.layout;
                let tag = DesignPoint::new(
                    l.value_bits(),
                    l.protected_bits(),
                    l.copies(),
                    l.policy(),
                    l.word_width(),
                )
                .tag();
                let point = crate::plot::CurvePoint {
                    rate,
                    mean: c.mean,
                    ci_half_width: c.ci_half_width,
                };
                let tag = if from_exploration.contains(&tag) {
                    format!("{tag}_input{i}")
                } else {
                    tag
                };
                match curves.iter_mut().find(|c| c.tag == tag) {
                    Some(curve) => curve.points.push(point),
                    None => curves.push(Curve {
                        tag,
                        points: vec![point],
                    }),
                }
            }
        }
    }
    let mut w = csv_writer();
    w.write_record(["design_point", "rate", "mean", "ci_low", "ci_high"])
        .expect("in-memory write");
    for c in &curves {
        let mut pts = c.points.clone();
        pts.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        for p in pts {
            w.write_record([
                c.tag.clone(),
                p.rate.to_string(),
                p.mean.to_string(),
                (p.mean - p.ci_half_width).to_string(),
                (p.mean + p.ci_half_width).to_string(),
            ])
            .expect("in-memory write");
        }
    }
    let text = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
    ctx.out.write(Path::new("report.csv"), text.as_bytes())?;
    let warnings = emit_plot_data(ctx.out, Path::new("plot"), &curves)?;
    ctx.warnings.extend(warnings);
    Ok(())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

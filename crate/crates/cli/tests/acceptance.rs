//! End-to-end acceptance checks. Prints one PASS/FAIL line per check; the
//! test fails if any check fails.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use qnnguard::explorer::{
    self, CampaignTemplate, EvaluatedPoint, ExploreConfig, RateFloor, Thresholds,
};
use qnnguard::faultsim::{self, Campaign, FaultModel, TargetMask};
use qnnguard::io::load_bundle;
use qnnguard::quantizer::{quantize_model_bits, quantized_accuracy};
use qnnguard::wordpack::{footprint, ProtectedImage, BASELINE_BITS};
use qnnguard::{evaluate, Dataset, Execution, Model, ProtectedWord, ProtectionPolicy, WordLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROUNDTRIP_BUDGET: Duration = Duration::from_secs(10);
const RANDOM_ROUNDTRIPS: usize = 100_000;
const MC_WORDS: usize = 100_000;
const MC_SIGMAS: f64 = 3.0;
const CALIBRATION_BITS: usize = 1_000_000;
const CALIBRATION_TOL: f64 = 0.002;
const Q8_MAX_DROP: f64 = 0.01;
const COMPARISON_SEED: u64 = 2024;
const COMPARISON_RATE: f64 = 1e-3;
const COMPARISON_RUNS: usize = 30;
const COMPARISON_BUDGET: Duration = Duration::from_secs(300);
const MIN_GRID_POINTS: usize = 50;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits")
}

fn desk() -> (Model, Dataset) {
    let d = data_dir();
    load_bundle(
        &d.join("model.json"),
        &d.join("weights.bin"),
        &d.join("digits-test-images-idx3-ubyte"),
    )
    .expect("desk bundle loads")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const POLICIES: [ProtectionPolicy; 4] = [
    ProtectionPolicy::None,
    ProtectionPolicy::Majority,
    ProtectionPolicy::DetectZero,
    ProtectionPolicy::DetectTrustCopy,
];

fn all_layouts(b: u32) -> Vec<WordLayout> {
    let mut v = Vec::new();
    for w in [8, 16, 32] {
        for j in 0..=b {
            for r in 0..=8 {
                for policy in POLICIES {
                    if let Ok(l) = WordLayout::new(w, b, j, r, policy) {
                        v.push(l);
                    }
                }
            }
        }
    }
    v
}

fn roundtrip(l: &WordLayout, v: i64) -> Result<(), String> {
    let w = l.encode(v).map_err(|e| format!("{l:?} encode {v}: {e}"))?;
    check(w.raw().checked_shr(l.used_bits()).unwrap_or(0) == 0, || {
        format!("{l:?}: padding set for {v}")
    })?;
    let d = l.decode(w);
    check(d.value == v && !d.corrected, || {
        format!("{l:?}: {v} decoded as {d:?}")
    })
}

fn clean_roundtrip() -> Result<String, String> {
    let t0 = Instant::now();
    let mut layouts = 0;
    let mut values = 0u64;
    for b in 2..=6u32 {
        let half = 1i64 << (b - 1);
        for l in all_layouts(b) {
            layouts += 1;
            for v in -half..half {
                roundtrip(&l, v)?;
                values += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for b in [8u32, 16] {
        let layouts = all_layouts(b);
        let half = 1i64 << (b - 1);
        for _ in 0..RANDOM_ROUNDTRIPS {
            let l = &layouts[rng.gen_range(0..layouts.len())];
            roundtrip(l, rng.gen_range(-half..half))?;
        }
    }
    let dt = t0.elapsed();
    check(dt < ROUNDTRIP_BUDGET, || format!("took {dt:?}"))?;
    Ok(format!(
        "{values} exhaustive values over {layouts} layouts (b<=6), {} sampled for b=8,16, {dt:.2?}",
        2 * RANDOM_ROUNDTRIPS
    ))
}

fn single_fault_corrected() -> Result<String, String> {
    let l = WordLayout::new(16, 8, 1, 2, ProtectionPolicy::Majority).unwrap();
    // the value MSB and its two copies
    let positions = [7u32, 8, 9];
    let mut n = 0;
    for v in -127i64..=127 {
        for &bit in &positions {
            let mut w = l.encode(v).unwrap();
            w.flip(bit);
            let d = l.decode(w);
            check(d.value == v && d.corrected, || {
                format!("v={v} bit={bit}: {d:?}")
            })?;
            n += 1;
        }
    }
    Ok(format!("{n} single flips in the vote group all corrected"))
}

fn majority_matches_closed_form() -> Result<String, String> {
    let l = WordLayout::new(16, 8, 1, 2, ProtectionPolicy::Majority).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values: Vec<i64> = (0..MC_WORDS)
        .map(|_| rng.gen_range(-127i64..=127))
        .collect();
    let words: Vec<ProtectedWord> = values.iter().map(|&v| l.encode(v).unwrap()).collect();
    let mut parts = Vec::new();
    for p in [0.01, 0.05] {
        let fm = FaultModel::bernoulli(p, TargetMask::WholeWord, 77);
        let inj = faultsim::inject(&words, &l, &fm, 0).unwrap();
        let wrong = inj
            .words
            .iter()
            .zip(&values)
            .filter(|(w, &v)| (l.decode(**w).value >> 7) & 1 != (v >> 7) & 1)
            .count();
        let observed = wrong as f64 / MC_WORDS as f64;
        // two or three of three votes flipped
        let expected = 3.0 * p * p * (1.0 - p) + p * p * p;
        let sigma = (expected * (1.0 - expected) / MC_WORDS as f64).sqrt();
        check((observed - expected).abs() <= MC_SIGMAS * sigma, || {
            format!("p={p}: observed {observed}, expected {expected}, sigma {sigma}")
        })?;
        parts.push(format!(
            "p={p}: {observed:.5} vs {expected:.5} (3σ={:.5})",
            3.0 * sigma
        ));
    }
    Ok(parts.join("; "))
}

fn bernoulli_calibrated() -> Result<String, String> {
    let l = WordLayout::unprotected(32, 16).unwrap();
    let words = vec![ProtectedWord(0); CALIBRATION_BITS / 32];
    let fm = FaultModel::bernoulli(0.5, TargetMask::WholeWord, 3);
    let inj = faultsim::inject(&words, &l, &fm, 0).unwrap();
    let ones: u32 = inj.words.iter().map(|w| w.raw().count_ones()).sum();
    check(ones as usize == inj.flips, || {
        "flip count disagrees with set bits".into()
    })?;
    let frac = f64::from(ones) / CALIBRATION_BITS as f64;
    check((frac - 0.5).abs() <= CALIBRATION_TOL, || {
        format!("flip fraction {frac}")
    })?;
    Ok(format!(
        "flip fraction {frac:.5} over {CALIBRATION_BITS} bits"
    ))
}

fn quantization_accuracy() -> Result<String, String> {
    let (model, ds) = desk();
    let float = evaluate(&model, &ds).unwrap();
    let q8 = quantized_accuracy(&quantize_model_bits(&model, 8).unwrap(), &ds).unwrap();
    let q16 = quantized_accuracy(&quantize_model_bits(&model, 16).unwrap(), &ds).unwrap();
    check(float - q8 <= Q8_MAX_DROP, || {
        format!("q8 {q8} vs float {float}")
    })?;
    check(q16 == float, || format!("q16 {q16} vs float {float}"))?;
    Ok(format!("float {float}, q8 {q8}, q16 {q16}"))
}

fn protection_beats_unprotected() -> Result<String, String> {
    let t0 = Instant::now();
    let (model, ds) = desk();
    let q = quantize_model_bits(&model, 8).unwrap();
    let campaign = Campaign::new(
        FaultModel::bernoulli(COMPARISON_RATE, TargetMask::WholeWord, COMPARISON_SEED),
        COMPARISON_RUNS,
    );
    let run = |l: WordLayout| {
        let image = ProtectedImage::from_quantized(&q, l).unwrap();
        faultsim::run_image_campaign(&image, &campaign, &ds, Execution::default()).unwrap()
    };
    let plain = run(WordLayout::unprotected(16, 8).unwrap());
    let guarded = run(WordLayout::new(16, 8, 1, 2, ProtectionPolicy::Majority).unwrap());
    let gap = guarded.mean - plain.mean;
    let ci = guarded.ci_half_width + plain.ci_half_width;
    let dt = t0.elapsed();
    check(gap > ci, || format!("gap {gap} not above combined CI {ci}"))?;
    check(dt < COMPARISON_BUDGET, || format!("took {dt:?}"))?;
    Ok(format!(
        "protected {:.4}±{:.4} vs unprotected {:.4}±{:.4}, gap {gap:.4} > {ci:.4}, {dt:.2?}",
        guarded.mean, guarded.ci_half_width, plain.mean, plain.ci_half_width
    ))
}

fn footprint_below_float() -> Result<String, String> {
    let mut n = 0;
    for b in 2..=16u32 {
        for j in 1..=2u32 {
            let l = WordLayout::new(32, b, j, 2, ProtectionPolicy::Majority).unwrap();
            let fp = footprint(&l, 1000, BASELINE_BITS);
            check(fp.bits_per_param == b + 2 * j, || format!("{l:?}: {fp:?}"))?;
            check(fp.bits_per_param < 32 && fp.overhead_fraction < 0.0, || {
                format!("{l:?}: {fp:?}")
            })?;
            n += 1;
        }
    }
    let l = WordLayout::new(16, 8, 1, 2, ProtectionPolicy::Majority).unwrap();
    let fp = footprint(&l, 1000, BASELINE_BITS);
    check(
        fp.bits_per_param == 10 && fp.overhead_fraction == -0.6875,
        || format!("(8,1,2): {fp:?}"),
    )?;
    Ok(format!(
        "{n} protected points under 32 bits; (8,1,2) = 10 bits, -0.6875"
    ))
}

fn grid_config() -> ExploreConfig {
    ExploreConfig {
        bitwidths: (2..=16).collect(),
        protected_bits: vec![0, 1, 2],
        copies: vec![0, 1, 2],
        policies: POLICIES.to_vec(),
        word_width: 32,
        thresholds: Thresholds {
            min_clean_accuracy: 0.5,
            rate_floors: vec![RateFloor {
                bit_error_rate: 1e-3,
                min_mean_faulty_accuracy: 0.3,
            }],
            max_bits_per_param: None,
            max_decode_cost: None,
        },
        extra_rates: vec![],
        campaign: CampaignTemplate {
            target_mask: TargetMask::WholeWord,
            master_seed: 5,
            n_runs: 3,
            eval_subset_size: Some(100),
            sdc_delta: 0.005,
        },
    }
}

fn dominated_by(a: &EvaluatedPoint, b: &EvaluatedPoint) -> bool {
    let ge = b.worst_faulty_accuracy >= a.worst_faulty_accuracy
        && b.bits_per_param <= a.bits_per_param
        && b.decode_cost <= a.decode_cost;
    let gt = b.worst_faulty_accuracy > a.worst_faulty_accuracy
        || b.bits_per_param < a.bits_per_param
        || b.decode_cost < a.decode_cost;
    ge && gt
}

fn front_matches_brute_force() -> Result<String, String> {
    let (model, ds) = desk();
    let cfg = grid_config();
    let ex =
        explorer::explore(&model, &ds, &cfg, Execution::default()).map_err(|e| e.to_string())?;
    check(ex.points.len() >= MIN_GRID_POINTS, || {
        format!("grid has {} points", ex.points.len())
    })?;
    let survivors: Vec<&EvaluatedPoint> = ex
        .points
        .iter()
        .filter(|p| {
            p.status.is_ok()
                && p.clean_accuracy >= cfg.thresholds.min_clean_accuracy
                && p.rate(1e-3).is_some_and(|r| r.mean >= 0.3)
        })
        .collect();
    let mut brute: Vec<usize> = survivors
        .iter()
        .filter(|a| !survivors.iter().any(|b| dominated_by(a, b)))
        .map(|p| p.grid_index)
        .collect();
    brute.sort_unstable();
    let mut got: Vec<usize> = ex.front.members.iter().map(|m| m.grid_index).collect();
    got.sort_unstable();
    check(got == brute, || {
        format!("front {got:?} vs brute force {brute:?}")
    })?;
    for m in &ex.front.members {
        check(cfg.thresholds.admits(m), || {
            format!("front member {} fails thresholds", m.point)
        })?;
    }
    Ok(format!(
        "{} points, {} survivors, front of {} equals brute force",
        ex.points.len(),
        survivors.len(),
        got.len()
    ))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut m = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                m.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    m
}

fn explore_cli_is_deterministic() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let d = data_dir();
    let mut cfg = grid_config();
    cfg.bitwidths = vec![4, 8];
    cfg.extra_rates = vec![1e-2];
    let config = serde_json::json!({
        "model": d.join("model.json"),
        "weights": d.join("weights.bin"),
        "dataset": d.join("digits-test-images-idx3-ubyte"),
        "explore": cfg,
    });
    let cfg_path = tmp.path().join("explore.json");
    fs::write(&cfg_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    let mut trees = Vec::new();
    for jobs in ["1", "4"] {
        let out = tmp.path().join(format!("out{jobs}"));
        let o = Command::new(env!("CARGO_BIN_EXE_qnnguard"))
            .args(["explore", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .unwrap();
        check(o.status.success(), || {
            format!("jobs={jobs}: {}", String::from_utf8_lossy(&o.stderr))
        })?;
        trees.push(tree(&out));
    }
    check(trees[0].len() >= 4, || {
        format!("only {} outputs", trees[0].len())
    })?;
    let names: Vec<_> = trees[0].keys().collect();
    check(trees[0] == trees[1], || {
        format!("outputs differ among {names:?}")
    })?;
    Ok(format!(
        "{} files byte-identical across --jobs 1 and 4",
        trees[0].len()
    ))
}

#[test]
fn acceptance() {
    type Check = fn() -> Result<String, String>;
    let checks: [(&str, Check); 9] = [
        ("clean encode/decode round trip", clean_roundtrip),
        (
            "single fault in the vote group corrected",
            single_fault_corrected,
        ),
        (
            "majority error rate matches closed form",
            majority_matches_closed_form,
        ),
        (
            "bernoulli injector calibrated at p=0.5",
            bernoulli_calibrated,
        ),
        ("quantized accuracy vs float", quantization_accuracy),
        (
            "protection beats unprotected at p=1e-3",
            protection_beats_unprotected,
        ),
        ("protected footprint below 32 bits", footprint_below_float),
        (
            "explorer front equals brute force",
            front_matches_brute_force,
        ),
        (
            "explore output independent of --jobs",
            explore_cli_is_deterministic,
        ),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        // straight to the stdout handle so the lines survive output capture
        let mut stdout = std::io::stdout().lock();
        match outcome {
            Ok(detail) => writeln!(stdout, "[{}/9] PASS {name}: {detail}", i + 1).unwrap(),
            Err(why) => {
                writeln!(stdout, "[{}/9] FAIL {name}: {why}", i + 1).unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}

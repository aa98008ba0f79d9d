//! Prints, per master seed, how far the (8,1,2) majority layout's mean
//! faulty accuracy sits above the unprotected 8-bit layout, net of both
//! confidence intervals.
//!
//! cargo run --release -p qnnguard --example seed_margin [seed...]

use std::path::PathBuf;

use qnnguard::explorer::{evaluate_point, CampaignTemplate, DesignPoint, RateFloor, Thresholds};
use qnnguard::faultsim::TargetMask;
use qnnguard::io::load_bundle;
use qnnguard::ProtectionPolicy;

const RATE: f64 = 1e-3;

fn main() {
    let d = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/digits");
    let (model, ds) = load_bundle(
        &d.join("model.json"),
        &d.join("weights.bin"),
        &d.join("digits-test-images-idx3-ubyte"),
    )
    .expect("desk bundle");
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seed"))
        .collect();
    let seeds = if seeds.is_empty() {
        vec![2024, 1, 2, 3, 4]
    } else {
        seeds
    };
    let thresholds = Thresholds {
        rate_floors: vec![RateFloor {
            bit_error_rate: RATE,
            min_mean_faulty_accuracy: 0.0,
        }],
        ..Default::default()
    };
    let plain = DesignPoint::new(8, 0, 0, ProtectionPolicy::None, 16);
    let guarded = DesignPoint::new(8, 1, 2, ProtectionPolicy::Majority, 16);
    println!("seed,unprotected_mean,unprotected_ci,protected_mean,protected_ci,net_margin");
    for seed in seeds {
        let template = CampaignTemplate {
            target_mask: TargetMask::WholeWord,
            master_seed: seed,
            n_runs: 30,
            eval_subset_size: None,
            sdc_delta: 0.005,
        };
        let a = evaluate_point(&plain, &model, &ds, &thresholds, &template);
        let b = evaluate_point(&guarded, &model, &ds, &thresholds, &template);
        let (ra, rb) = (a.rate(RATE).unwrap(), b.rate(RATE).unwrap());
        let margin = rb.mean - ra.mean - ra.ci_half_width - rb.ci_half_width;
        println!(
            "{seed},{:.4},{:.4},{:.4},{:.4},{margin:.4}",
            ra.mean, ra.ci_half_width, rb.mean, rb.ci_half_width
        );
    }
}

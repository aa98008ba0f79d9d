use proptest::prelude::*;
use qnnguard::faultsim::analytic_msb_error_prob;
use qnnguard::wordpack::{Decoded, ProtectedWord, ProtectionPolicy, WordLayout, WORD_WIDTHS};

const POLICIES: [ProtectionPolicy; 4] = [
    ProtectionPolicy::None,
    ProtectionPolicy::Majority,
    ProtectionPolicy::DetectZero,
    ProtectionPolicy::DetectTrustCopy,
];

/// Every valid layout for value width `b`, found by trying all combinations
/// against the constructor.
fn layouts(b: u32) -> Vec<WordLayout> {
    let mut out = Vec::new();
    for w in WORD_WIDTHS {
        for j in 0..=b {
            for r in 0..=w {
                for p in POLICIES {
                    if let Ok(l) = WordLayout::new(w, b, j, r, p) {
                        out.push(l);
                    }
                }
            }
        }
    }
    out
}

fn quant_range(b: u32) -> std::ops::RangeInclusive<i64> {
    let m = (1i64 << (b - 1)) - 1;
    -m..=m
}

#[test]
fn exhaustive_b4_round_trip() {
    let l = WordLayout::new(8, 4, 1, 2, ProtectionPolicy::Majority).unwrap();
    let mut seen = 0;
    for q in quant_range(4) {
        let w = l.encode(q).unwrap();
        assert_eq!(w.raw() & l.padding_mask(), 0);
        assert_eq!(
            l.decode(w),
            Decoded {
                value: q,
                corrected: false
            }
        );
        seen += 1;
    }
    assert_eq!(seen, 15);
}

#[test]
fn unprotected_layouts_store_the_bare_value() {
    for b in 2..=8 {
        for l in layouts(b).into_iter().filter(|l| l.copies() == 0) {
            for q in quant_range(b) {
                assert_eq!(l.encode(q).unwrap().raw(), (q as u32) & l.value_mask());
            }
        }
    }
}

#[test]
fn every_single_flip_of_0x3d_in_its_vote_group_is_corrected() {
    let l = WordLayout::new(8, 4, 1, 2, ProtectionPolicy::Majority).unwrap();
    for bit in 0..8 {
        let d = l.decode(ProtectedWord(0x3D ^ (1 << bit)));
        let in_group = l.vote_group_mask() >> bit & 1 == 1;
        if in_group {
            assert_eq!(
                d,
                Decoded {
                    value: -3,
                    corrected: true
                },
                "bit {bit}"
            );
        } else if bit < 4 {
            // unprotected value bit: passes through uncorrected
            assert_ne!(d.value, -3);
            assert!(!d.corrected);
        } else {
            assert_eq!(
                d,
                Decoded {
                    value: -3,
                    corrected: false
                },
                "padding bit {bit}"
            );
        }
    }
}

#[test]
fn majority_single_fault_in_any_group_is_corrected() {
    for b in 2..=8 {
        for l in layouts(b)
            .into_iter()
            .filter(|l| l.policy() == ProtectionPolicy::Majority)
        {
            let group = l.vote_group_mask();
            for q in quant_range(b) {
                let w = l.encode(q).unwrap();
                for bit in (0..32).filter(|i| group >> i & 1 == 1) {
                    let d = l.decode(ProtectedWord(w.raw() ^ (1 << bit)));
                    assert_eq!(
                        d,
                        Decoded {
                            value: q,
                            corrected: true
                        },
                        "{l} q={q} bit={bit}"
                    );
                }
            }
        }
    }
}

/// With two flips inside one 3-member group the vote goes the wrong way,
/// exactly as the closed-form model counts: the voted bit is wrong iff at
/// least 2 of 3 members flipped.
#[test]
fn majority_two_faults_in_a_group_miscorrect() {
    let l = WordLayout::new(16, 8, 1, 2, ProtectionPolicy::Majority).unwrap();
    let members = [7u32, 8, 9];
    for q in quant_range(8) {
        let w = l.encode(q).unwrap();
        for mask in 0u32..8 {
            let mut raw = w.raw();
            for (i, &m) in members.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    raw ^= 1 << m;
                }
            }
            let d = l.decode(ProtectedWord(raw));
            let msb_wrong = (d.value as u32 ^ q as u32) >> 7 & 1 == 1;
            assert_eq!(msb_wrong, mask.count_ones() >= 2, "q={q} mask={mask:03b}");
            // everything below the MSB is untouched
            assert_eq!((d.value ^ q) & 0x7F, 0);
        }
    }
    // Enumerating all 8 flip patterns weighted by p^k (1-p)^(3-k) reproduces
    // the closed form.
    for p in [0.01f64, 0.1, 0.3] {
        let enumerated: f64 = (0u32..8)
            .filter(|m| m.count_ones() >= 2)
            .map(|m| p.powi(m.count_ones() as i32) * (1.0 - p).powi(3 - m.count_ones() as i32))
            .sum();
        assert!((enumerated - analytic_msb_error_prob(p, 3).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn detect_zero_on_any_group_mismatch() {
    let l = WordLayout::new(16, 6, 2, 1, ProtectionPolicy::DetectZero).unwrap();
    for q in quant_range(6) {
        let w = l.encode(q).unwrap();
        for bit in (0..16).filter(|i| l.vote_group_mask() >> i & 1 == 1) {
            assert_eq!(
                l.decode(ProtectedWord(w.raw() ^ (1 << bit))),
                Decoded {
                    value: 0,
                    corrected: true
                }
            );
        }
    }
}

#[test]
fn exhaustive_round_trip_small_widths() {
    let mut checked = 0u64;
    for b in 2..=6 {
        for l in layouts(b) {
            for q in quant_range(b) {
                assert_eq!(
                    l.decode(l.encode(q).unwrap()),
                    Decoded {
                        value: q,
                        corrected: false
                    }
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 10_000);
}

fn wide_layout() -> impl Strategy<Value = (WordLayout, i64)> {
    prop::sample::select(vec![8u32, 16]).prop_flat_map(|b| {
        let ls = layouts(b);
        (prop::sample::select(ls), quant_range(b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn random_round_trip_wide((l, q) in wide_layout()) {
        prop_assert_eq!(l.decode(l.encode(q).unwrap()), Decoded { value: q, corrected: false });
    }

    #[test]
    fn padding_never_matters((l, q) in wide_layout(), noise: u32) {
        let w = l.encode(q).unwrap();
        let d = l.decode(ProtectedWord(w.raw() | (noise & l.padding_mask())));
        prop_assert_eq!(d, Decoded { value: q, corrected: false });
    }

    #[test]
    fn protected_footprint_below_baseline(b in 2u32..=16, j in 1u32..=2) {
        if let Ok(l) = WordLayout::new(32, b, j, 2, ProtectionPolicy::Majority) {
            prop_assert!(qnnguard::wordpack::footprint(&l, 1, 32).bits_per_param < 32);
        }
    }
}

use std::collections::BTreeMap;

use proptest::prelude::*;

use homedetect::compare::{smc, SmcOptions};
use homedetect::geo::{CellTower, TowerNetwork};
use homedetect::hda::{detect_home, run_hda, score_towers, Candidate, DecisionRule, DetectionResult, HomeTable};
use homedetect::ingest::{ActivitySummary, NightWindow, Period, PeriodSet, TowerActivity};
use homedetect::spatial_stats::{classify, gi_star, Confidence, HotspotClass, SpatialWeights, WeightsSpec};
use homedetect::validate::csm_degrees;

fn table(rule: DecisionRule, homes: &BTreeMap<u16, u8>) -> HomeTable {
    let entries = homes
        .iter()
        .map(|(u, t)| DetectionResult {
            user_id: format!("u{u:05}"),
            ranked: vec![Candidate {
                tower_id: format!("t{t:03}"),
                score: 1,
            }],
        })
        .collect();
    HomeTable::new(rule, "p", entries).unwrap()
}

fn homes() -> impl Strategy<Value = BTreeMap<u16, u8>> {
    prop::collection::btree_map(0u16..300, 0u8..6, 1..120)
}

proptest! {
    #[test]
    fn smc_is_symmetric_and_bounded(a in homes(), b in homes(), missing in any::<bool>()) {
        let opts = SmcOptions { missing_as_mismatch: missing };
        let ta = table(DecisionRule::Activities, &a);
        let tb = table(DecisionRule::DistinctDays, &b);
        match (smc(&ta, &tb, opts), smc(&tb, &ta, opts)) {
            (Ok(x), Ok(y)) => {
                prop_assert_eq!(x.n_joint, y.n_joint);
                prop_assert_eq!(x.n_match, y.n_match);
                prop_assert_eq!(x.smc_pct, y.smc_pct);
                prop_assert!((0.0..=100.0).contains(&x.smc_pct));
            }
            (Err(_), Err(_)) => prop_assert!(!missing),
            _ => prop_assert!(false, "asymmetric definedness"),
        }
    }

    #[test]
    fn smc_identity_is_hundred(a in homes()) {
        let t = table(DecisionRule::Activities, &a);
        let r = smc(&t, &t, SmcOptions::default()).unwrap();
        prop_assert_eq!(r.smc_pct, 100.0);
        prop_assert_eq!(r.n_joint, a.len() as u64);
    }

    #[test]
    fn missing_as_mismatch_never_raises_agreement(a in homes(), b in homes()) {
        let ta = table(DecisionRule::Activities, &a);
        let tb = table(DecisionRule::DistinctDays, &b);
        let loose = smc(&ta, &tb, SmcOptions { missing_as_mismatch: true }).unwrap();
        if let Ok(strict) = smc(&ta, &tb, SmcOptions::default()) {
            prop_assert_eq!(strict.n_match, loose.n_match);
            prop_assert!(loose.smc_pct <= strict.smc_pct);
        }
    }
}

fn nonneg_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1e4f64], n)
        .prop_filter("not all zero", |v| v.iter().any(|&x| x > 0.0))
}

proptest! {
    #[test]
    fn csm_self_is_zero(x in nonneg_vec(40)) {
        prop_assert_eq!(csm_degrees(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn csm_symmetric_and_in_quadrant(x in nonneg_vec(40), y in nonneg_vec(40)) {
        let a = csm_degrees(&x, &y).unwrap();
        let b = csm_degrees(&y, &x).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=90.0).contains(&a));
    }

    #[test]
    fn csm_scale_invariant(x in nonneg_vec(40), y in nonneg_vec(40), k in prop::sample::select(vec![1e-6, 0.5, 3.0, 1e6])) {
        let scaled: Vec<f64> = y.iter().map(|v| v * k).collect();
        let a = csm_degrees(&x, &y).unwrap();
        let b = csm_degrees(&x, &scaled).unwrap();
        // acos amplifies rounding near zero angle
        let tol = if a < 1.0 { 1e-5 } else { 1e-9 };
        prop_assert!((a - b).abs() < tol, "{a} vs {b}");
    }
}

fn neighbour_lists() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (4usize..30).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(0..n, 0..4), n).prop_map(move |lists| {
            let mut sym = vec![Vec::new(); n];
            for (i, l) in lists.iter().enumerate() {
                for &j in l {
                    sym[i].push(j);
                    sym[j].push(i);
                }
            }
            sym
        })
    })
}

fn field_and_weights() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<usize>>)> {
    neighbour_lists().prop_flat_map(|nb| (prop::collection::vec(0.0..100.0f64, nb.len()), Just(nb)))
}

proptest! {
    #[test]
    fn gi_star_location_and_scale_invariant((x, nb) in field_and_weights(), shift in -50.0..50.0f64, scale in 0.01..100.0f64) {
        let w = SpatialWeights::from_neighbors(WeightsSpec::DistanceBand { d_m: 1.0 }, nb).unwrap();
        let Ok(z) = gi_star(&x, &w) else { return Ok(()) };
        let moved: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
        let z2 = gi_star(&moved, &w).unwrap();
        for (a, b) in z.iter().zip(&z2) {
            prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn stricter_confidence_flags_a_subset(z in prop::collection::vec(-4.0..4.0f64, 1..60)) {
        let levels = [Confidence::P90, Confidence::P95, Confidence::P99];
        let maps: Vec<_> = levels.iter().map(|&c| classify(&z, c)).collect();
        for pair in maps.windows(2) {
            for (loose, strict) in pair[0].class.iter().zip(&pair[1].class) {
                if *strict != HotspotClass::Neutral {
                    prop_assert_eq!(strict, loose);
                }
            }
        }
    }
}

/// 4×4 grid of towers about 700-1100 m apart.
fn grid_network() -> TowerNetwork {
    let towers = (0..16)
        .map(|i| CellTower::new(format!("t{i:02}"), 2.0 + 0.01 * (i % 4) as f64, 48.0 + 0.01 * (i / 4) as f64))
        .collect();
    TowerNetwork::build(towers, None).unwrap()
}

fn summary(user: u16) -> impl Strategy<Value = ActivitySummary> {
    prop::collection::btree_map(0u32..16, (1u32..30, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64), 1..8).prop_map(move |m| {
        let towers = m
            .into_iter()
            .map(|(tower, (n_total, fw, fd, fdw))| {
                let n_window = (n_total as f64 * fw).floor() as u32;
                let n_days_total = ((n_total as f64 * fd).ceil() as u32).clamp(1, n_total);
                let n_days_window = if n_window == 0 { 0 } else { ((n_window.min(n_days_total) as f64 * fdw).ceil() as u32).max(1) };
                TowerActivity { tower, n_total, n_window, n_days_total, n_days_window }
            })
            .collect();
        ActivitySummary { user_id: format!("u{user:04}"), period: 0, towers }
    })
}

fn population() -> impl Strategy<Value = Vec<ActivitySummary>> {
    (1usize..25).prop_flat_map(|n| (0..n as u16).map(summary).collect::<Vec<_>>())
}

fn all_rules(radius_m: f64) -> Vec<DecisionRule> {
    DecisionRule::parse_list("all", NightWindow::default(), radius_m).unwrap()
}

proptest! {
    #[test]
    fn restricted_rules_detect_subsets(pop in population(), radius in 0.0..3000.0f64) {
        let net = grid_network();
        let window = NightWindow::default();
        let pairs = [
            (DecisionRule::TimeWindow { window }, DecisionRule::Activities),
            (DecisionRule::TimeAndSpace { window, radius_m: radius }, DecisionRule::SpaceRadius { radius_m: radius }),
        ];
        for s in &pop {
            for (narrow, wide) in &pairs {
                if detect_home(narrow, s, &net).is_some() {
                    prop_assert!(detect_home(wide, s, &net).is_some());
                }
            }
        }
    }

    #[test]
    fn activity_scores_sum_to_records(s in summary(0)) {
        let net = grid_network();
        let total: u64 = score_towers(&DecisionRule::Activities, &s, &net).iter().map(|t| t.score).sum();
        prop_assert_eq!(total, s.total_records());
    }

    #[test]
    fn tiny_radius_reduces_to_plain_counts(s in summary(0)) {
        let net = grid_network();
        let plain = detect_home(&DecisionRule::Activities, &s, &net);
        let spatial = detect_home(&DecisionRule::SpaceRadius { radius_m: 1.0 }, &s, &net);
        prop_assert_eq!(plain.map(|d| d.ranked), spatial.map(|d| d.ranked));
    }

    #[test]
    fn rankings_are_ordered_and_distinct(s in summary(0), radius in 0.0..3000.0f64) {
        let net = grid_network();
        for rule in all_rules(radius) {
            if let Some(d) = detect_home(&rule, &s, &net) {
                prop_assert!((1..=3).contains(&d.ranked.len()));
                for w in d.ranked.windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                    prop_assert_ne!(&w[0].tower_id, &w[1].tower_id);
                }
            }
        }
    }

    #[test]
    fn input_order_does_not_matter(pop in population(), seed in any::<u64>()) {
        let net = grid_network();
        let periods = PeriodSet::new(vec![Period::new("p", 0, 86_400 * 30).unwrap()]).unwrap();
        let mut shuffled = pop.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        for rule in all_rules(1500.0) {
            prop_assert_eq!(run_hda(&rule, &pop, &periods, &net), run_hda(&rule, &shuffled, &periods, &net));
        }
    }
}

use facies_core::grid::CHANNEL;
use facies_core::obm::*;
use facies_core::stats::*;
use facies_core::{indicator_transform, FaciesCodebook, FaciesGrid, LabeledEnsemble};
use proptest::prelude::*;

fn grids_strategy(n: usize, h: usize, w: usize) -> impl Strategy<Value = Vec<FaciesGrid>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec![0u8, 1, 2, 4]), h * w),
        1..=n,
    )
    .prop_map(move |cells| {
        cells
            .into_iter()
            .map(|c| FaciesGrid::new(h, w, c).unwrap())
            .collect()
    })
}

/// Per-pixel loop, independent of the counting implementation.
fn brute_force_etype(grids: &[FaciesGrid], facies: u8) -> Vec<f64> {
    let (h, w) = grids[0].dims();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut hits = 0.0;
            for g in grids {
                if g.get(r, c) == facies {
                    hits += 1.0;
                }
            }
            out.push(hits / grids.len() as f64);
        }
    }
    out
}

proptest! {
    #[test]
    fn etype_matches_brute_force(grids in grids_strategy(12, 5, 6), facies in prop::sample::select(vec![0u8, 1, 2, 4])) {
        let e = LabeledEnsemble::new(grids.clone(), None, FaciesCodebook::four_facies()).unwrap();
        prop_assert_eq!(etype(&e, facies).unwrap().values(), brute_force_etype(&grids, facies));
    }

    #[test]
    fn etypes_partition_unity(grids in grids_strategy(12, 4, 4)) {
        let e = LabeledEnsemble::new(grids, None, FaciesCodebook::four_facies()).unwrap();
        let maps = etype_all(&e).unwrap();
        for i in 0..16 {
            let total: u32 = maps.iter().map(|m| m.counts()[i]).sum();
            prop_assert_eq!(total as usize, e.len());
        }
    }

    #[test]
    fn etype_is_order_invariant(grids in grids_strategy(10, 3, 3), rot in 0usize..10) {
        let cb = FaciesCodebook::four_facies();
        let mut shuffled = grids.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = LabeledEnsemble::new(grids, None, cb.clone()).unwrap();
        let b = LabeledEnsemble::new(shuffled, None, cb).unwrap();
        prop_assert_eq!(etype(&a, 1).unwrap(), etype(&b, 1).unwrap());
    }

    #[test]
    fn single_member_etype_is_its_indicator(grids in grids_strategy(1, 4, 5)) {
        let cb = FaciesCodebook::four_facies();
        let e = LabeledEnsemble::new(grids.clone(), None, cb.clone()).unwrap();
        let ind = indicator_transform(&grids[0], 2, &cb).unwrap();
        let expect: Vec<f64> = ind.cells().iter().map(|&c| c as f64).collect();
        prop_assert_eq!(etype(&e, 2).unwrap().values(), expect);
    }

    #[test]
    fn indicators_sum_to_ones(grids in grids_strategy(1, 6, 6)) {
        let cb = FaciesCodebook::four_facies();
        let mut total = vec![0u8; 36];
        for code in cb.codes() {
            let ind = indicator_transform(&grids[0], code, &cb).unwrap();
            for (t, c) in total.iter_mut().zip(ind.cells()) { *t += c; }
        }
        prop_assert!(total.iter().all(|&t| t == 1));
    }

    #[test]
    fn accuracy_is_one_minus_error_rate(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = ConfusionMatrix::from_predictions(&t, &p, 4).unwrap();
        let off: usize = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m.get(i, j)).sum();
        prop_assert!((m.accuracy() - (1.0 - off as f64 / m.total() as f64)).abs() < 1e-12);
        let mut per_class = [0usize; 4];
        for &x in &t { per_class[x] += 1; }
        prop_assert_eq!(m.row_sums(), per_class.to_vec());
    }
}

#[test]
fn fifteen_thousand_fluvial_images_average_a_quarter() {
    let d = build_dataset(DatasetCase::Fluvial, &[15000], (64, 64), &SynthSpecs::default(), 3).unwrap();
    let e = etype(&d, CHANNEL).unwrap();
    assert!((e.mean() - 0.25).abs() <= 0.02, "pixel mean {}", e.mean());
    let h = etype_histogram(&e, DEFAULT_BINS).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), 64 * 64);
    // tight: every pixel in the 0.2..0.32 window
    let occupied: Vec<usize> = (0..DEFAULT_BINS).filter(|&b| h.counts[b] > 0).collect();
    assert!(*occupied.first().unwrap() >= 10 && *occupied.last().unwrap() < 16, "{occupied:?}");
}

fn half_confined() -> SynthSpecs {
    SynthSpecs {
        channel: ChannelSpec {
            position_range: (0.0, 0.5),
            ..ChannelSpec::default()
        },
        ..SynthSpecs::default()
    }
}

#[test]
fn confined_surrogate_widens_histogram_and_fails_bias_check() {
    let unbiased = build_dataset(DatasetCase::Fluvial, &[1500], (64, 64), &SynthSpecs::default(), 8).unwrap();
    let biased = build_dataset(DatasetCase::Fluvial, &[1500], (64, 64), &half_confined(), 9).unwrap();
    let hu = etype_histogram(&etype(&unbiased, CHANNEL).unwrap(), DEFAULT_BINS).unwrap();
    let hb = etype_histogram(&etype(&biased, CHANNEL).unwrap(), DEFAULT_BINS).unwrap();
    assert!(hb.std > hu.std, "{} vs {}", hb.std, hu.std);

    let thresholds = BiasThresholds::default();
    let report = bias_report(&unbiased, &biased, &[0, 1], &thresholds).unwrap();
    assert!(!report.pass);
    assert!(report.facies.iter().all(|f| f.std_ratio > thresholds.max_std_ratio));

    let same = bias_report(&unbiased, &unbiased, &[0, 1], &thresholds).unwrap();
    assert!(same.pass);
}

#[test]
fn per_facies_etypes_sum_to_one_for_both_ensembles() {
    let specs = SynthSpecs::default();
    for seed in [1, 2] {
        let d = build_dataset(DatasetCase::Mixed3, &[30], (32, 32), &specs, seed).unwrap();
        let maps = etype_all(&d).unwrap();
        for i in 0..32 * 32 {
            let s: u32 = maps.iter().map(|m| m.counts()[i]).sum();
            assert_eq!(s as usize, d.len());
        }
    }
}

use super::*;
use crate::model::{employee_relation, ingest};
use proptest::prelude::*;

fn ints(xs: &[i64]) -> Vec<AttributeValue> {
    xs.iter().map(|&i| AttributeValue::Int(i)).collect()
}

fn strs(xs: &[&str]) -> Vec<AttributeValue> {
    xs.iter().map(|&s| AttributeValue::from(s)).collect()
}

fn bin(values: &[i64]) -> Vec<Option<AttributeValue>> {
    values.iter().map(|&i| Some(AttributeValue::Int(i))).collect()
}

/// Ten sensitive values 1..=10; the plaintext side shares 1, 2, 3, 5, 6
/// and adds 11..=15.
fn example3_meta() -> OwnerMetadata {
    OwnerMetadata::single_tuple(1..=10i64, [1i64, 2, 3, 5, 6, 11, 12, 13, 14, 15])
}

fn example3_layout() -> BinLayout {
    create_bins_base_with_order(
        &example3_meta(),
        &ints(&[5, 1, 2, 3, 4, 10, 6, 7, 8, 9]),
        &ints(&[11, 12, 13, 14, 15]),
    )
    .unwrap()
}

#[test]
fn factor_fixtures() {
    let f = |n| {
        let r = approx_square_factors(n).unwrap();
        (r.x, r.y)
    };
    assert_eq!(f(16), (4, 4));
    assert_eq!(f(82), (41, 2));
    assert_eq!(f(10), (5, 2));
    assert_eq!(f(1), (1, 1));
    assert_eq!(f(7), (7, 1));
    assert_eq!(f(12), (4, 3));
    assert!(approx_square_factors(0).is_err());
}

#[test]
fn nearest_roots() {
    assert_eq!(nearest_square_root(82), 9);
    assert_eq!(nearest_square_root(37), 6);
    assert_eq!(nearest_square_root(16), 4);
    assert_eq!(nearest_square_root(13), 4);
    assert_eq!(nearest_square_root(12), 3);
}

#[test]
fn shape_choice() {
    let s = choose_shape(82, 41).unwrap();
    assert!(s.near_square);
    assert_eq!((s.rows, s.cols), (9, 9));
    assert_eq!(s.cost(82), 19);
    assert_eq!(Shape::base(82).unwrap().cost(82), 43);

    let s = choose_shape(37, 36).unwrap();
    assert!(s.near_square);
    assert_eq!(s.rows, 6);
    assert_eq!(s.cost(37), 13);
    assert_eq!(Shape::base(37).unwrap().cost(37), 38);

    // A perfect square ties, and ties keep the exact factorization.
    assert!(!choose_shape(16, 4).unwrap().near_square);
}

#[test]
fn example3_bins() {
    let l = example3_layout();
    assert_eq!(l.sb_count(), 5);
    assert_eq!(l.nsb_count(), 2);
    assert_eq!(l.sensitive_bins[0], bin(&[5, 10]));
    assert_eq!(l.sensitive_bins[1], bin(&[1, 6]));
    assert_eq!(l.sensitive_bins[2], bin(&[2, 7]));
    assert_eq!(l.sensitive_bins[3], bin(&[3, 8]));
    assert_eq!(l.sensitive_bins[4], bin(&[4, 9]));
    assert_eq!(l.nonsensitive_bins[0], bin(&[5, 1, 2, 3, 11]));
    assert_eq!(l.nonsensitive_bins[1], bin(&[12, 6, 13, 14, 15]));
    l.check_invariants(&example3_meta()).unwrap();

    let idx = l.index();
    assert_eq!(idx.sensitive(&2.into()), Some((2, 0)));
    assert_eq!(idx.sensitive(&7.into()), Some((2, 1)));
    assert_eq!(idx.nonsensitive(&13.into()), Some((1, 2)));
}

#[test]
fn employee_bins() {
    let rel = ingest(employee_relation(), "EId").unwrap();
    let meta = OwnerMetadata::build(&rel);
    let l = create_bins_base_with_order(
        &meta,
        &strs(&["E101", "E152", "E259", "E159"]),
        &strs(&["E199", "E254"]),
    )
    .unwrap();
    let names = |b: &Vec<Option<AttributeValue>>| -> Vec<String> {
        b.iter().map(|v| v.as_ref().unwrap().to_string()).collect()
    };
    assert_eq!(names(&l.sensitive_bins[0]), ["E101", "E259"]);
    assert_eq!(names(&l.sensitive_bins[1]), ["E152", "E159"]);
    assert_eq!(names(&l.nonsensitive_bins[0]), ["E199", "E152"]);
    assert_eq!(names(&l.nonsensitive_bins[1]), ["E259", "E254"]);
    l.check_invariants(&meta).unwrap();
}

#[test]
fn bad_orders_rejected() {
    let meta = example3_meta();
    assert!(create_bins_base_with_order(&meta, &ints(&[1, 2, 3]), &ints(&[11, 12, 13, 14, 15])).is_err());
    assert!(create_bins_base_with_order(&meta, &ints(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]), &ints(&[11])).is_err());
}

#[test]
fn preconditions() {
    let few = OwnerMetadata::single_tuple(0..3i64, 100..116i64);
    assert!(matches!(
        create_bins_base(&few, Seed(1)),
        Err(QbError::TooFewSensitiveValues { sensitive: 3, bins: 4 })
    ));
    let many = OwnerMetadata::single_tuple(0..5i64, 100..104i64);
    assert!(matches!(create_bins_base(&many, Seed(1)), Err(QbError::UseReversed { .. })));
    assert!(matches!(
        create_bins_reversed(&few, Seed(1)),
        Err(QbError::NotReversed { .. })
    ));
}

#[test]
fn near_square_82() {
    let meta = OwnerMetadata::single_tuple(0..41i64, 100..182i64);
    let l = create_bins_near_square(&meta, Seed(3)).unwrap();
    assert_eq!(l.mode, LayoutMode::NearSquare);
    assert_eq!((l.sb_count(), l.nsb_count()), (9, 9));
    l.check_invariants(&meta).unwrap();
    let sizes: Vec<usize> = (0..9).map(|j| l.nonsensitive_values(j).len()).collect();
    assert_eq!(sizes.iter().sum::<usize>(), 82);
    assert!(sizes.iter().all(|&s| s == 9 || s == 10));
}

#[test]
fn near_square_37() {
    let meta = OwnerMetadata::single_tuple(0..36i64, 0..37i64);
    let l = create_bins_near_square(&meta, Seed(4)).unwrap();
    assert_eq!((l.sb_count(), l.nsb_count()), (6, 6));
    l.check_invariants(&meta).unwrap();
}

#[test]
fn near_square_on_perfect_square_is_base() {
    let meta = OwnerMetadata::single_tuple(0..8i64, 0..16i64);
    let a = create_bins_near_square(&meta, Seed(5)).unwrap();
    let b = create_bins_base(&meta, Seed(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn reversed_shapes() {
    let meta = OwnerMetadata::single_tuple(0..16i64, 100..104i64);
    let l = create_bins_reversed(&meta, Seed(6)).unwrap();
    assert_eq!(l.mode, LayoutMode::Reversed);
    assert_eq!(l.nsb_count(), 4);
    assert_eq!(l.sb_count(), 4);
    assert!((0..4).all(|i| l.sensitive_values(i).len() == 4));
    l.check_invariants(&meta).unwrap();

    let tiny = OwnerMetadata::single_tuple([1i64, 2], [1i64]);
    let l = create_bins_reversed(&tiny, Seed(7)).unwrap();
    assert_eq!(l.nsb_count(), 1);
    l.check_invariants(&tiny).unwrap();
}

#[test]
fn reversed_mirrors_near_square() {
    let fwd = OwnerMetadata::single_tuple(0..41i64, 100..182i64);
    let rev = OwnerMetadata::single_tuple(100..182i64, 0..41i64);
    let a = create_bins_near_square(&fwd, Seed(8)).unwrap();
    let b = create_bins_reversed(&rev, Seed(8)).unwrap();
    let sizes = |bins: &Vec<Vec<Option<AttributeValue>>>| {
        let mut v: Vec<usize> = bins.iter().map(|b| b.iter().flatten().count()).collect();
        v.sort();
        v
    };
    assert_eq!(sizes(&a.sensitive_bins), sizes(&b.nonsensitive_bins));
    assert_eq!(sizes(&a.nonsensitive_bins), sizes(&b.sensitive_bins));
    b.check_invariants(&rev).unwrap();
}

fn example5_meta() -> OwnerMetadata {
    OwnerMetadata::from_counts(
        (1..=9i64).map(|i| (AttributeValue::Int(i), 10 * i as u64)),
        (100..109i64).map(|i| (AttributeValue::Int(i), 1)),
    )
}

/// Smallest achievable maximum bin total over all splits of `counts` into
/// `k` bins of `cap` values.
fn brute_force_min_max(counts: &[u64], k: usize, cap: usize) -> u64 {
    fn go(i: usize, counts: &[u64], totals: &mut [u64], sizes: &mut [usize], cap: usize, best: &mut u64) {
        if i == counts.len() {
            *best = (*best).min(*totals.iter().max().unwrap());
            return;
        }
        for b in 0..totals.len() {
            if sizes[b] < cap {
                totals[b] += counts[i];
                sizes[b] += 1;
                go(i + 1, counts, totals, sizes, cap, best);
                totals[b] -= counts[i];
                sizes[b] -= 1;
            }
        }
    }
    let mut best = u64::MAX;
    go(0, counts, &mut vec![0; k], &mut vec![0; k], cap, &mut best);
    best
}

#[test]
fn example5_general() {
    let meta = example5_meta();
    let l = create_bins_general(&meta, Seed(9)).unwrap();
    l.check_invariants(&meta).unwrap();
    let mut totals: Vec<u64> = (0..3).map(|i| l.bin_total(i)).collect();
    totals.sort();
    assert_eq!(totals, [140, 150, 160]);
    assert_eq!(l.total_fakes(), 30);

    let naive = {
        let bins = [[90u64, 80, 70], [60, 50, 40], [30, 20, 10]];
        let t: Vec<u64> = bins.iter().map(|b| b.iter().sum()).collect();
        let max = *t.iter().max().unwrap();
        t.iter().map(|x| max - x).sum::<u64>()
    };
    assert_eq!(naive, 270);
    assert!(l.total_fakes() <= naive);

    let counts: Vec<u64> = (1..=9).map(|i| 10 * i).collect();
    let opt = brute_force_min_max(&counts, 3, 3);
    assert_eq!(opt, 150);
    assert_eq!(opt * 3 - 450, 0);
}

#[test]
fn greedy_ties_go_to_lowest_index() {
    let counts: Vec<(AttributeValue, u64)> = (0..4i64).map(|i| (AttributeValue::Int(i), 5)).collect();
    let bins = greedy_assign(&counts, 2, 2);
    assert_eq!(bins[0], ints(&[0, 2]));
    assert_eq!(bins[1], ints(&[1, 3]));
}

#[test]
fn no_sensitive_values() {
    let meta = OwnerMetadata::single_tuple(Vec::<i64>::new(), 0..5i64);
    let l = create_bins(&meta, Seed(1), BinStrategy::Base).unwrap();
    assert_eq!(l.sb_count(), 0);
    assert_eq!(l.nsb_count(), 5);
    l.check_invariants(&meta).unwrap();
}

#[test]
fn ndjson_roundtrip() {
    let meta = example5_meta();
    let l = create_bins_general(&meta, Seed(11)).unwrap();
    let mut buf = Vec::new();
    l.write_ndjson(&mut buf).unwrap();
    let back = BinLayout::read_ndjson(&buf[..]).unwrap();
    assert_eq!(back, l);

    let l = example3_layout();
    let mut buf = Vec::new();
    l.write_ndjson(&mut buf).unwrap();
    assert_eq!(BinLayout::read_ndjson(&buf[..]).unwrap(), l);
}

#[test]
fn same_seed_same_layout() {
    let meta = OwnerMetadata::single_tuple(0..20i64, 10..60i64);
    assert_eq!(
        create_bins_near_square(&meta, Seed(42)).unwrap(),
        create_bins_near_square(&meta, Seed(42)).unwrap()
    );
}

fn arb_meta() -> impl Strategy<Value = OwnerMetadata> {
    (1usize..40, 1usize..40, 0usize..40, proptest::collection::vec(1u64..6, 80)).prop_map(|(s, ns, k, counts)| {
        let k = k.min(s).min(ns);
        let sens = (0..s as i64).map(|i| (AttributeValue::Int(i), counts[i as usize]));
        let plain = (0..ns as i64).map(|i| {
            let v = if (i as usize) < k { i } else { 1000 + i };
            (AttributeValue::Int(v), counts[40 + i as usize])
        });
        OwnerMetadata::from_counts(sens, plain)
    })
}

proptest! {
    #[test]
    fn layouts_satisfy_invariants(meta in arb_meta(), seed in any::<u64>()) {
        for strategy in [BinStrategy::Base, BinStrategy::NearSquare, BinStrategy::General] {
            match create_bins(&meta, Seed(seed), strategy) {
                Ok(l) => prop_assert_eq!(l.check_invariants(&meta), Ok(())),
                Err(QbError::TooFewSensitiveValues { .. }) => prop_assert!(meta.s_len() <= meta.ns_len()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    #[test]
    fn reversed_always_builds(meta in arb_meta(), seed in any::<u64>()) {
        prop_assume!(meta.s_len() > meta.ns_len());
        let l = create_bins_reversed(&meta, Seed(seed)).unwrap();
        prop_assert_eq!(l.check_invariants(&meta), Ok(()));
    }

    #[test]
    fn general_fakes_never_exceed_naive_order(meta in arb_meta(), seed in any::<u64>()) {
        prop_assume!(meta.s_len() <= meta.ns_len());
        if let Ok(l) = create_bins_general(&meta, Seed(seed)) {
            let naive = {
                let mut c: Vec<u64> = meta.sensitive_values.iter().map(|v| v.count).collect();
                c.sort_by(|a, b| b.cmp(a));
                let rows = l.sb_count();
                let cap = c.len().div_ceil(rows);
                let t: Vec<u64> = c.chunks(cap).map(|ch| ch.iter().sum()).collect();
                let max = *t.iter().max().unwrap();
                t.iter().map(|x| max - x).sum::<u64>() + (rows - t.len()) as u64 * max
            };
            prop_assert!(l.total_fakes() <= naive);
        }
    }
}

fn shared_meta(s: i64, ns: i64, k: i64) -> OwnerMetadata {
    OwnerMetadata::single_tuple(0..s, (0..ns).map(|i| if i < k { i } else { 1000 + i }))
}

#[test]
fn holes_are_covered_before_spare_slots() {
    // 7 x 7 grid, 46 plaintext values: the three empty cells must sit
    // where a sensitive value already reaches.
    let meta = shared_meta(42, 46, 1);
    for seed in 0..20 {
        let l = create_bins_near_square(&meta, Seed(seed)).unwrap();
        assert_eq!(l.mode, LayoutMode::NearSquare);
        assert!(l.uncovered_cells().is_empty(), "seed {seed}");
    }
}

#[test]
fn uncoverable_grid_falls_back() {
    // 98 distinct values cannot reach 100 cells of a 10 x 10 grid, and 22
    // sensitive values cannot fill the 23 bins of the exact shape.
    let meta = shared_meta(22, 92, 16);
    let l = create_bins_general(&meta, Seed(3)).unwrap();
    assert!(l.uncovered_cells().is_empty());
    assert_ne!((l.sb_count(), l.nsb_count()), (10, 10));
    l.check_invariants(&meta).unwrap();
}

#[test]
fn covering_shape() {
    let s = Shape::covering(92, 22);
    assert_eq!((s.rows, s.cols), (8, 11));
    assert!(s.rows * s.cols <= 92);
    assert_eq!(Shape::covering(5, 1).rows, 1);
}

#[test]
fn reversed_falls_back_to_exact_grid() {
    for (s, ns, k) in [(34, 6, 2), (98, 26, 22), (62, 35, 0)] {
        let meta = shared_meta(s, ns, k);
        for seed in 0..10 {
            let l = create_bins(&meta, Seed(seed), BinStrategy::Base).unwrap();
            assert!(l.uncovered_cells().is_empty(), "{s} {ns} {k} seed {seed}");
        }
    }
}

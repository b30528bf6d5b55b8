use super::*;
use crate::binning::{create_bins, create_bins_base_with_order, BinStrategy};
use crate::error::QbError;
use crate::model::{employee_relation, ingest, OwnerMetadata};
use crate::seed::Seed;
use proptest::prelude::*;

fn vals(xs: &[&str]) -> Vec<AttributeValue> {
    xs.iter().map(|&s| AttributeValue::from(s)).collect()
}

fn employee() -> (PartitionedRelation, Client, Stores, Keys) {
    let rel = ingest(employee_relation(), "EId").unwrap();
    let meta = OwnerMetadata::build(&rel);
    let layout = create_bins_base_with_order(
        &meta,
        &vals(&["E101", "E152", "E259", "E159"]),
        &vals(&["E199", "E254"]),
    )
    .unwrap();
    let keys = Keys::derive(Seed(9));
    let stores = upload(&rel, &layout, &keys, Seed(9)).unwrap();
    (rel, Client::new(keys.clone(), layout, "EId"), stores, keys)
}

/// Row ids behind the encrypted tuples a query returned.
fn cipher_ids(stores: &Stores, keys: &Keys, obs: &StoreObservation) -> Vec<String> {
    let mut ids: Vec<String> = obs
        .cipher_refs
        .iter()
        .map(|r| {
            let t = stores.encrypted.tuples().iter().find(|t| &t.tuple_ref == r).unwrap();
            open_tuple(keys, t).unwrap().unwrap().row_id
        })
        .collect();
    ids.sort();
    ids
}

fn ids(rows: &[Row]) -> Vec<&str> {
    rows.iter().map(|r| r.row_id.as_str()).collect()
}

#[test]
fn employee_binned_queries() {
    let (_, client, mut stores, keys) = employee();

    let r = client.execute(&mut stores, &"E259".into()).unwrap();
    assert_eq!(ids(&r.rows), ["t2", "t4"]);
    let o = r.observation.unwrap();
    assert_eq!(cipher_ids(&stores, &keys, &o), ["t1", "t4"]);
    assert_eq!(o.plain_rows, ["t2", "t6"]);
    assert_eq!(o.plain_predicates, vals(&["E259", "E254"]));

    let r = client.execute(&mut stores, &"E199".into()).unwrap();
    assert_eq!(ids(&r.rows), ["t3"]);
    let o = r.observation.unwrap();
    assert_eq!(cipher_ids(&stores, &keys, &o), ["t1", "t4"]);
    assert_eq!(o.plain_rows, ["t3", "t8"]);
}

#[test]
fn employee_naive_queries() {
    let (_, client, mut stores, keys) = employee();
    let cases: [(&str, &[&str], &[&str]); 3] = [
        ("E259", &["t4"], &["t2"]),
        ("E101", &["t1"], &[]),
        ("E199", &[], &["t3"]),
    ];
    for (w, enc, plain) in cases {
        let r = client.execute_naive(&mut stores, &w.into()).unwrap();
        let o = r.observation.unwrap();
        assert_eq!(o.mechanism, Mechanism::Naive);
        assert_eq!(o.plain_predicates, vals(&[w]));
        assert_eq!(cipher_ids(&stores, &keys, &o), enc);
        assert_eq!(o.plain_rows, plain);
    }
}

#[test]
fn example3_plans() {
    let meta = OwnerMetadata::single_tuple(1..=10i64, [1i64, 2, 3, 5, 6, 11, 12, 13, 14, 15]);
    let ints = |xs: &[i64]| xs.iter().map(|&i| AttributeValue::Int(i)).collect::<Vec<_>>();
    let layout =
        create_bins_base_with_order(&meta, &ints(&[5, 1, 2, 3, 4, 10, 6, 7, 8, 9]), &ints(&[11, 12, 13, 14, 15])).unwrap();
    let idx = layout.index();
    let p = |w: i64| {
        let q = plan_query(&layout, &idx, &w.into());
        (q.sensitive_bin.unwrap(), q.nonsensitive_bin.unwrap())
    };
    assert_eq!(p(2), (2, 0));
    assert_eq!(p(7), (2, 1));
    assert_eq!(p(13), (2, 1));
    assert!(plan_query(&layout, &idx, &99.into()).is_empty());
}

#[test]
fn absent_value_touches_nothing() {
    let (_, client, mut stores, _) = employee();
    let r = client.execute(&mut stores, &"E999".into()).unwrap();
    assert!(r.rows.is_empty());
    assert!(r.observation.is_none());
    assert_eq!(stores.encrypted.counters().requests, 0);
    assert_eq!(stores.plaintext.counters().requests, 0);
}

#[test]
fn tampering_is_reported() {
    let (_, client, mut stores, _) = employee();
    for t in stores.encrypted.tuples_mut() {
        let mut b = t.blob.clone().into_bytes();
        b[20] = if b[20] == b'A' { b'B' } else { b'A' };
        t.blob = String::from_utf8(b).unwrap();
    }
    assert!(matches!(
        client.execute(&mut stores, &"E259".into()),
        Err(QbError::Integrity(_))
    ));
}

#[test]
fn random_pairing_keeps_associated_pairs() {
    let (_, client, mut stores, _) = employee();
    let mut rng = Seed(1).rng();
    for _ in 0..20 {
        let r = client.execute_random_pairing(&mut stores, &"E259".into(), &mut rng).unwrap();
        assert_eq!(ids(&r.rows), ["t2", "t4"]);
        assert_eq!(r.observation.unwrap().plain_predicates, vals(&["E259", "E254"]));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..40 {
        let r = client.execute_random_pairing(&mut stores, &"E101".into(), &mut rng).unwrap();
        assert_eq!(ids(&r.rows), ["t1"]);
        seen.insert(r.observation.unwrap().plain_predicates);
    }
    assert_eq!(seen.len(), 2);
}

fn arb_relation() -> impl Strategy<Value = PartitionedRelation> {
    proptest::collection::vec((0i64..30, any::<bool>()), 1..120).prop_map(|cells| {
        let rows = cells
            .into_iter()
            .enumerate()
            .map(|(n, (v, s))| Row::new(format!("r{n:04}"), s).with("a", v))
            .collect();
        ingest(rows, "a").unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binned_answers_match_plain_selection(rel in arb_relation(), seed in any::<u64>(), strat in 0usize..3) {
        let meta = OwnerMetadata::build(&rel);
        let strategy = [BinStrategy::Base, BinStrategy::NearSquare, BinStrategy::General][strat];
        let layout = match create_bins(&meta, Seed(seed), strategy) {
            Ok(l) => l,
            Err(QbError::TooFewSensitiveValues { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let keys = Keys::derive(Seed(seed));
        let mut stores = upload(&rel, &layout, &keys, Seed(seed)).unwrap();
        let client = Client::new(keys, layout, "a");
        for w in rel.domain().into_iter().chain([AttributeValue::Int(-1)]) {
            let got = client.execute(&mut stores, &w).unwrap();
            prop_assert_eq!(&got.rows, &rel.select(&w));
            let naive = client.execute_naive(&mut stores, &w).unwrap();
            prop_assert_eq!(&naive.rows, &rel.select(&w));
        }
    }

    #[test]
    fn associated_values_plan_identically_from_both_sides(rel in arb_relation(), seed in any::<u64>()) {
        let meta = OwnerMetadata::build(&rel);
        let Ok(layout) = create_bins(&meta, Seed(seed), BinStrategy::NearSquare) else { return Ok(()) };
        let idx = layout.index();
        for v in &meta.association {
            let (i, j) = idx.sensitive(v).unwrap();
            let (j2, i2) = idx.nonsensitive(v).unwrap();
            prop_assert_eq!((i, j), (i2, j2));
            let p = plan_query(&layout, &idx, v);
            prop_assert_eq!(p, QueryPlan { sensitive_bin: Some(i), nonsensitive_bin: Some(j) });
        }
    }
}

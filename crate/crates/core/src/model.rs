//! Relations, sensitivity labels and the owner-side value metadata.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{QbError, Result};

/// A searchable attribute value. Only equality matters for query semantics;
/// the ordering exists so every output is deterministic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Int(i64),
    Str(String),
}

impl AttributeValue {
    /// Stable byte encoding used for keyed token derivation.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        match self {
            AttributeValue::Int(i) => {
                let mut v = vec![b'i'];
                v.extend_from_slice(&i.to_be_bytes());
                v
            }
            AttributeValue::Str(s) => {
                let mut v = vec![b's'];
                v.extend_from_slice(s.as_bytes());
                v
            }
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Int(i) => write!(f, "{i}"),
            AttributeValue::Str(s) => f.write_str(s),
        }
    }
}

impl From<&str> for AttributeValue {
    fn from(s: &str) -> Self {
        AttributeValue::Str(s.to_string())
    }
}

impl From<String> for AttributeValue {
    fn from(s: String) -> Self {
        AttributeValue::Str(s)
    }
}

impl From<i64> for AttributeValue {
    fn from(i: i64) -> Self {
        AttributeValue::Int(i)
    }
}

/// One tuple. The sensitivity flag is fixed at ingestion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub row_id: String,
    pub sensitive: bool,
    #[serde(flatten)]
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl Row {
    pub fn new(row_id: impl Into<String>, sensitive: bool) -> Self {
        Row {
            row_id: row_id.into(),
            sensitive,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<AttributeValue>) -> Self {
        self.attributes.insert(name.to_string(), value.into());
        self
    }

    pub fn value(&self, attribute: &str) -> Option<&AttributeValue> {
        self.attributes.get(attribute)
    }

    /// Size of the row's JSON encoding, used for transfer accounting.
    pub fn encoded_len(&self) -> usize {
        serde_json::to_vec(self).map(|v| v.len()).unwrap_or(0)
    }
}

/// A relation split by row-level sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionedRelation {
    pub name: String,
    pub searchable_attribute: String,
    pub sensitive_rows: Vec<Row>,
    pub nonsensitive_rows: Vec<Row>,
}

impl PartitionedRelation {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.sensitive_rows.iter().chain(self.nonsensitive_rows.iter())
    }

    pub fn len(&self) -> usize {
        self.sensitive_rows.len() + self.nonsensitive_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key_of<'a>(&self, row: &'a Row) -> &'a AttributeValue {
        row.value(&self.searchable_attribute)
            .expect("ingested rows carry the searchable attribute")
    }

    /// Brute-force selection over both sides; the correctness oracle for
    /// every executor path.
    pub fn select(&self, w: &AttributeValue) -> Vec<Row> {
        let mut out: Vec<Row> = self
            .rows()
            .filter(|r| self.key_of(r) == w)
            .cloned()
            .collect();
        out.sort_by(|a, b| a.row_id.cmp(&b.row_id));
        out
    }

    /// All distinct searchable values across both sides, sorted.
    pub fn domain(&self) -> Vec<AttributeValue> {
        let set: BTreeSet<AttributeValue> = self.rows().map(|r| self.key_of(r).clone()).collect();
        set.into_iter().collect()
    }
}

/// Splits `rows` by their sensitivity flag.
pub fn ingest(rows: Vec<Row>, searchable_attribute: &str) -> Result<PartitionedRelation> {
    ingest_named("relation", rows, searchable_attribute)
}

pub fn ingest_named(
    name: &str,
    rows: Vec<Row>,
    searchable_attribute: &str,
) -> Result<PartitionedRelation> {
    if rows.is_empty() {
        return Err(QbError::EmptyRelation);
    }
    let mut seen = HashSet::with_capacity(rows.len());
    let mut sensitive_rows = Vec::new();
    let mut nonsensitive_rows = Vec::new();
    for row in rows {
        if row.value(searchable_attribute).is_none() {
            return Err(QbError::MissingAttribute {
                row_id: row.row_id,
                attribute: searchable_attribute.to_string(),
            });
        }
        if !seen.insert(row.row_id.clone()) {
            return Err(QbError::DuplicateRowId(row.row_id));
        }
        if row.sensitive {
            sensitive_rows.push(row);
        } else {
            nonsensitive_rows.push(row);
        }
    }
    Ok(PartitionedRelation {
        name: name.to_string(),
        searchable_attribute: searchable_attribute.to_string(),
        sensitive_rows,
        nonsensitive_rows,
    })
}

/// A relation realizing `meta` on attribute `a`: one row per counted tuple,
/// ids `s<n>` for sensitive rows and `p<n>` for plaintext rows.
pub fn relation_from_metadata(meta: &OwnerMetadata) -> PartitionedRelation {
    let rows = |side: &[ValueCount], sensitive: bool, prefix: char| {
        let mut out = Vec::new();
        for vc in side {
            for _ in 0..vc.count {
                out.push(Row::new(format!("{prefix}{:06}", out.len()), sensitive).with("a", vc.value.clone()));
            }
        }
        out
    };
    PartitionedRelation {
        name: "synthetic".into(),
        searchable_attribute: "a".into(),
        sensitive_rows: rows(&meta.sensitive_values, true, 's'),
        nonsensitive_rows: rows(&meta.nonsensitive_values, false, 'p'),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCount {
    pub value: AttributeValue,
    pub count: u64,
}

/// Distinct values per side with their tuple counts.
///
/// `|S|` and `|NS|` are counts of distinct values; multiplicities live in
/// the per-value counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerMetadata {
    pub sensitive_values: Vec<ValueCount>,
    pub nonsensitive_values: Vec<ValueCount>,
    /// Values present on both sides.
    pub association: BTreeSet<AttributeValue>,
}

impl OwnerMetadata {
    pub fn build(rel: &PartitionedRelation) -> Self {
        let count = |rows: &[Row]| {
            let mut m: BTreeMap<AttributeValue, u64> = BTreeMap::new();
            for r in rows {
                *m.entry(rel.key_of(r).clone()).or_default() += 1;
            }
            m
        };
        let s = count(&rel.sensitive_rows);
        let ns = count(&rel.nonsensitive_rows);
        Self::from_counts(s, ns)
    }

    /// Builds metadata straight from per-side counts. Zero counts are dropped.
    pub fn from_counts<I, J>(sensitive: I, nonsensitive: J) -> Self
    where
        I: IntoIterator<Item = (AttributeValue, u64)>,
        J: IntoIterator<Item = (AttributeValue, u64)>,
    {
        let collect = |it: &mut dyn Iterator<Item = (AttributeValue, u64)>| {
            let mut m: BTreeMap<AttributeValue, u64> = BTreeMap::new();
            for (v, c) in it {
                if c > 0 {
                    *m.entry(v).or_default() += c;
                }
            }
            m
        };
        let s = collect(&mut sensitive.into_iter());
        let ns = collect(&mut nonsensitive.into_iter());
        let association = s.keys().filter(|v| ns.contains_key(*v)).cloned().collect();
        let to_vec = |m: BTreeMap<AttributeValue, u64>| {
            m.into_iter()
                .map(|(value, count)| ValueCount { value, count })
                .collect()
        };
        OwnerMetadata {
            sensitive_values: to_vec(s),
            nonsensitive_values: to_vec(ns),
            association,
        }
    }

    /// Metadata where every listed value has exactly one tuple.
    pub fn single_tuple<S, N>(sensitive: S, nonsensitive: N) -> Self
    where
        S: IntoIterator,
        S::Item: Into<AttributeValue>,
        N: IntoIterator,
        N::Item: Into<AttributeValue>,
    {
        Self::from_counts(
            sensitive.into_iter().map(|v| (v.into(), 1)),
            nonsensitive.into_iter().map(|v| (v.into(), 1)),
        )
    }

    /// `|S|`
    pub fn s_len(&self) -> usize {
        self.sensitive_values.len()
    }

    /// `|NS|`
    pub fn ns_len(&self) -> usize {
        self.nonsensitive_values.len()
    }

    pub fn sensitive_count(&self, v: &AttributeValue) -> u64 {
        lookup(&self.sensitive_values, v)
    }

    pub fn nonsensitive_count(&self, v: &AttributeValue) -> u64 {
        lookup(&self.nonsensitive_values, v)
    }

    pub fn is_associated(&self, v: &AttributeValue) -> bool {
        self.association.contains(v)
    }

    pub fn sensitive_tuples(&self) -> u64 {
        self.sensitive_values.iter().map(|v| v.count).sum()
    }

    pub fn nonsensitive_tuples(&self) -> u64 {
        self.nonsensitive_values.iter().map(|v| v.count).sum()
    }
}

fn lookup(list: &[ValueCount], v: &AttributeValue) -> u64 {
    list.binary_search_by(|e| e.value.cmp(v))
        .map(|i| list[i].count)
        .unwrap_or(0)
}

/// The Employee relation used throughout the documentation: Dept = Defense
/// rows are sensitive, searchable on `EId`.
pub fn employee_relation() -> Vec<Row> {
    let rows = [
        ("t1", "E101", "Adam", "Smith", 111, 1, "Defense"),
        ("t2", "E259", "John", "Williams", 222, 2, "Design"),
        ("t3", "E199", "Eve", "Smith", 333, 2, "Design"),
        ("t4", "E259", "John", "Williams", 222, 6, "Defense"),
        ("t5", "E152", "Clark", "Cook", 444, 1, "Defense"),
        ("t6", "E254", "David", "Watts", 555, 4, "Design"),
        ("t7", "E159", "Lisa", "Ross", 666, 2, "Defense"),
        ("t8", "E152", "Clark", "Cook", 444, 3, "Design"),
    ];
    rows.iter()
        .map(|&(id, eid, first, last, ssn, office, dept)| {
            Row::new(id, dept == "Defense")
                .with("EId", eid)
                .with("FirstName", first)
                .with("LastName", last)
                .with("SSN", ssn as i64)
                .with("Office", office as i64)
                .with("Dept", dept)
        })
        .collect()
}

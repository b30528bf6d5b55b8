//! What the cloud learns: the adversarial view, surviving matches, an exact
//! inference oracle and attack simulators.

mod attacks;
mod oracle;

pub use attacks::*;
pub use oracle::*;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{QbError, Result};
use crate::executor::StoreObservation;
use crate::model::{AttributeValue, ValueCount};
use crate::stores::{PublicInfo, Stores};

/// Everything the two stores have seen: their own contents, the public
/// auxiliary information and the per-query requests and responses.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdversarialView {
    pub public: PublicInfo,
    /// Identifiers of every tuple in the encrypted store.
    pub stored_refs: Vec<String>,
    /// Distinct searchable values in the plaintext store with their counts.
    pub stored_plain_values: Vec<ValueCount>,
    pub observations: Vec<StoreObservation>,
}

impl AdversarialView {
    pub fn new(stores: &Stores) -> Self {
        let mut refs: Vec<String> = stores.encrypted.tuples().iter().map(|t| t.tuple_ref.clone()).collect();
        refs.sort();
        let attr = stores.plaintext.attribute();
        let mut values: BTreeMap<AttributeValue, u64> = BTreeMap::new();
        for v in stores.plaintext.rows().iter().filter_map(|r| r.value(attr)) {
            *values.entry(v.clone()).or_default() += 1;
        }
        AdversarialView {
            public: stores.public.clone(),
            stored_refs: refs,
            stored_plain_values: values
                .into_iter()
                .map(|(value, count)| ValueCount { value, count })
                .collect(),
            observations: Vec::new(),
        }
    }

    pub fn push(&mut self, obs: StoreObservation) {
        self.observations.push(obs);
    }

    /// A copy holding the same observations in another order.
    pub fn reordered(&self, order: &[usize]) -> Self {
        let mut v = self.clone();
        v.observations = order.iter().map(|&i| self.observations[i].clone()).collect();
        v
    }

    /// Header line with the static part, then one line per observation.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = ViewHeader {
            public: self.public.clone(),
            stored_refs: self.stored_refs.clone(),
            stored_plain_values: self.stored_plain_values.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for o in &self.observations {
            serde_json::to_writer(&mut w, o)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let parse_err = |line: usize, e: serde_json::Error| QbError::Parse {
            line: line + 1,
            message: e.to_string(),
        };
        let (n, first) = lines.next().ok_or(QbError::Parse {
            line: 1,
            message: "empty adversarial view".into(),
        })?;
        let header: ViewHeader = serde_json::from_str(&first?).map_err(|e| parse_err(n, e))?;
        let mut observations = Vec::new();
        for (n, line) in lines {
            observations.push(serde_json::from_str(&line?).map_err(|e| parse_err(n, e))?);
        }
        Ok(AdversarialView {
            public: header.public,
            stored_refs: header.stored_refs,
            stored_plain_values: header.stored_plain_values,
            observations,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ViewHeader {
    public: PublicInfo,
    stored_refs: Vec<String>,
    stored_plain_values: Vec<ValueCount>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Bins,
    Values,
}

/// Bipartite graph of associations still possible after the view.
///
/// At bin granularity a node is a set of tuples fetched together: the
/// encrypted tuple refs of a sensitive bin on the left, the predicate values
/// of a non-sensitive bin on the right.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivingGraph {
    pub granularity: Granularity,
    pub left: Vec<Vec<String>>,
    pub right: Vec<Vec<String>>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl SurvivingGraph {
    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.left.len() * self.right.len()
    }

    pub fn left_index(&self, node: &[String]) -> Option<usize> {
        self.left.iter().position(|n| n == node)
    }

    pub fn right_index(&self, node: &[String]) -> Option<usize> {
        self.right.iter().position(|n| n == node)
    }

    /// Right-hand neighbours of left node `i`.
    pub fn neighbours_of_left(&self, i: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    pub fn neighbours_of_right(&self, j: usize) -> BTreeSet<usize> {
        self.edges.iter().filter(|e| e.1 == j).map(|e| e.0).collect()
    }

    /// Edge list as CSV with `left,right` columns; set nodes are joined
    /// with `|`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["left", "right"])?;
        for &(l, r) in &self.edges {
            out.write_record([self.left[l].join("|"), self.right[r].join("|")])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn sorted_refs(o: &StoreObservation) -> Vec<String> {
    let mut v = o.cipher_refs.clone();
    v.sort();
    v
}

fn sorted_predicates(o: &StoreObservation) -> Vec<String> {
    let mut v: Vec<AttributeValue> = o.plain_predicates.clone();
    v.sort();
    v.into_iter().map(|v| v.to_string()).collect()
}

pub fn surviving_graph(av: &AdversarialView, granularity: Granularity) -> SurvivingGraph {
    // Observed bin pairs, nodes in first-seen order.
    let mut left: Vec<Vec<String>> = Vec::new();
    let mut right: Vec<Vec<String>> = Vec::new();
    let mut bin_edges = BTreeSet::new();
    let index = |nodes: &mut Vec<Vec<String>>, n: Vec<String>| match nodes.iter().position(|x| *x == n) {
        Some(i) => i,
        None => {
            nodes.push(n);
            nodes.len() - 1
        }
    };
    for o in &av.observations {
        let (c, p) = (sorted_refs(o), sorted_predicates(o));
        if c.is_empty() || p.is_empty() {
            continue;
        }
        let l = index(&mut left, c);
        let r = index(&mut right, p);
        bin_edges.insert((l, r));
    }
    match granularity {
        Granularity::Bins => SurvivingGraph {
            granularity,
            left,
            right,
            edges: bin_edges,
        },
        Granularity::Values => {
            let lv: Vec<String> = av.stored_refs.clone();
            let rv: Vec<String> = av.stored_plain_values.iter().map(|v| v.value.to_string()).collect();
            let mut l_bin: BTreeMap<&str, usize> = BTreeMap::new();
            for (i, bin) in left.iter().enumerate() {
                for e in bin {
                    l_bin.insert(e, i);
                }
            }
            let mut r_bin: BTreeMap<&str, usize> = BTreeMap::new();
            for (j, bin) in right.iter().enumerate() {
                for v in bin {
                    r_bin.insert(v, j);
                }
            }
            let mut edges = BTreeSet::new();
            for (a, e) in lv.iter().enumerate() {
                for (b, v) in rv.iter().enumerate() {
                    let keep = match (l_bin.get(e.as_str()), r_bin.get(v.as_str())) {
                        (Some(&i), Some(&j)) => bin_edges.contains(&(i, j)),
                        _ => true,
                    };
                    if keep {
                        edges.insert((a, b));
                    }
                }
            }
            SurvivingGraph {
                granularity,
                left: lv.into_iter().map(|v| vec![v]).collect(),
                right: rv.into_iter().map(|v| vec![v]).collect(),
                edges,
            }
        }
    }
}

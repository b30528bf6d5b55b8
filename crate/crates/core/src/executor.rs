//! Query planning and execution against the two stores.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binning::{BinLayout, LayoutIndex};
use crate::crypto::Keys;
use crate::error::Result;
use crate::model::{AttributeValue, PartitionedRelation, Row};
use crate::seed::Seed;
use crate::stores::{open_tuple, tokens_for, upload, Stores};

/// How a query was turned into store requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Query binning: one whole sensitive bin and one whole non-sensitive bin.
    Binned,
    /// The value itself is sent to the plaintext store and its own tokens
    /// to the encrypted store.
    Naive,
    /// Like binning, but a value without a partner on the other side is
    /// paired with a randomly chosen opposite bin.
    RandomPairing,
}

/// What the two stores see for one query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreObservation {
    pub mechanism: Mechanism,
    pub plain_predicates: Vec<AttributeValue>,
    pub cipher_tokens: Vec<String>,
    pub plain_rows: Vec<String>,
    pub cipher_refs: Vec<String>,
}

impl StoreObservation {
    pub fn plain_count(&self) -> usize {
        self.plain_rows.len()
    }

    pub fn cipher_count(&self) -> usize {
        self.cipher_refs.len()
    }
}

/// Bins retrieved for one value. Both are `None` when the value appears in
/// neither bin family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub sensitive_bin: Option<usize>,
    pub nonsensitive_bin: Option<usize>,
}

impl QueryPlan {
    pub fn is_empty(&self) -> bool {
        self.sensitive_bin.is_none() && self.nonsensitive_bin.is_none()
    }
}

/// Bin retrieval. A sensitive value at `SB_i[j]` fetches `SB_i` and
/// `NSB_j`; otherwise a non-sensitive value at `NSB_i[j]` fetches `SB_j`
/// and `NSB_i`. Positions beyond the opposite bin count wrap around.
pub fn plan_query(layout: &BinLayout, idx: &LayoutIndex, w: &AttributeValue) -> QueryPlan {
    let wrap = |j: usize, n: usize| (n > 0).then(|| j % n);
    if let Some((i, j)) = idx.sensitive(w) {
        return QueryPlan {
            sensitive_bin: Some(i),
            nonsensitive_bin: wrap(j, layout.nsb_count()),
        };
    }
    if let Some((i, j)) = idx.nonsensitive(w) {
        return QueryPlan {
            sensitive_bin: wrap(j, layout.sb_count()),
            nonsensitive_bin: Some(i),
        };
    }
    QueryPlan {
        sensitive_bin: None,
        nonsensitive_bin: None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    /// Matching tuples from both sides, sorted by row id.
    pub rows: Vec<Row>,
    /// `None` when neither store was contacted.
    pub observation: Option<StoreObservation>,
    pub fakes_discarded: usize,
}

/// Aggregate work counters for a batch of queries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecStats {
    pub queries: u64,
    pub cipher_fetched: u64,
    pub plain_fetched: u64,
    pub fakes_discarded: u64,
    pub rows_returned: u64,
    pub tokens_sent: u64,
    pub predicates_sent: u64,
}

impl ExecStats {
    pub fn record(&mut self, r: &QueryResult) {
        self.queries += 1;
        self.rows_returned += r.rows.len() as u64;
        self.fakes_discarded += r.fakes_discarded as u64;
        if let Some(o) = &r.observation {
            self.cipher_fetched += o.cipher_count() as u64;
            self.plain_fetched += o.plain_count() as u64;
            self.tokens_sent += o.cipher_tokens.len() as u64;
            self.predicates_sent += o.plain_predicates.len() as u64;
        }
    }
}

/// Trusted owner state: keys and the secret layout.
#[derive(Clone, Debug)]
pub struct Client {
    keys: Keys,
    layout: BinLayout,
    index: LayoutIndex,
    attribute: String,
}

impl Client {
    pub fn new(keys: Keys, layout: BinLayout, attribute: &str) -> Self {
        let index = layout.index();
        Client {
            keys,
            layout,
            index,
            attribute: attribute.to_string(),
        }
    }

    pub fn layout(&self) -> &BinLayout {
        &self.layout
    }

    pub fn plan(&self, w: &AttributeValue) -> QueryPlan {
        plan_query(&self.layout, &self.index, w)
    }

    /// Answers `attribute = w` with query binning.
    pub fn execute(&self, stores: &mut Stores, w: &AttributeValue) -> Result<QueryResult> {
        let plan = self.plan(w);
        self.execute_plan(stores, w, plan, Mechanism::Binned)
    }

    /// Answers `attribute = w` by asking for exactly `w` on both sides.
    pub fn execute_naive(&self, stores: &mut Stores, w: &AttributeValue) -> Result<QueryResult> {
        let n = self.layout.sensitive_count(w);
        let tokens: Vec<String> = (0..n).map(|o| self.keys.token(w, o)).collect();
        let predicates = vec![w.clone()];
        self.send(stores, w, tokens, predicates, Mechanism::Naive)
    }

    /// Binning where a value without a partner fetches its own bin plus a
    /// uniformly random bin of the other family.
    pub fn execute_random_pairing<R: Rng>(
        &self,
        stores: &mut Stores,
        w: &AttributeValue,
        rng: &mut R,
    ) -> Result<QueryResult> {
        let mut plan = self.plan(w);
        let s = self.index.sensitive(w).is_some();
        let ns = self.index.nonsensitive(w).is_some();
        if s && !ns && self.layout.nsb_count() > 0 {
            plan.nonsensitive_bin = Some(rng.random_range(0..self.layout.nsb_count()));
        } else if ns && !s && self.layout.sb_count() > 0 {
            plan.sensitive_bin = Some(rng.random_range(0..self.layout.sb_count()));
        }
        self.execute_plan(stores, w, plan, Mechanism::RandomPairing)
    }

    /// Fetches the bins named by `plan` and filters them for `w`. Exposed so
    /// deviations from the retrieval rules can be replayed exactly.
    pub fn execute_plan(
        &self,
        stores: &mut Stores,
        w: &AttributeValue,
        plan: QueryPlan,
        mech: Mechanism,
    ) -> Result<QueryResult> {
        if plan.is_empty() {
            return Ok(QueryResult {
                rows: Vec::new(),
                observation: None,
                fakes_discarded: 0,
            });
        }
        let tokens = match plan.sensitive_bin {
            Some(i) => self
                .layout
                .sensitive_values(i)
                .iter()
                .flat_map(|v| tokens_for(&self.keys, &self.layout, i, v))
                .collect(),
            None => Vec::new(),
        };
        let predicates = match plan.nonsensitive_bin {
            Some(j) => self.layout.nonsensitive_values(j),
            None => Vec::new(),
        };
        self.send(stores, w, tokens, predicates, mech)
    }

    fn send(
        &self,
        stores: &mut Stores,
        w: &AttributeValue,
        tokens: Vec<String>,
        predicates: Vec<AttributeValue>,
        mechanism: Mechanism,
    ) -> Result<QueryResult> {
        let cipher = stores.encrypted.fetch(&tokens);
        let plain = stores.plaintext.fetch(&predicates);
        let mut rows = Vec::new();
        let mut fakes = 0;
        for t in &cipher {
            match open_tuple(&self.keys, t)? {
                Some(r) if r.value(&self.attribute) == Some(w) => rows.push(r),
                Some(_) => {}
                None => fakes += 1,
            }
        }
        rows.extend(plain.iter().filter(|r| r.value(&self.attribute) == Some(w)).cloned());
        rows.sort_by(|a, b| a.row_id.cmp(&b.row_id));
        let mut plain_rows: Vec<String> = plain.into_iter().map(|r| r.row_id).collect();
        plain_rows.sort();
        Ok(QueryResult {
            rows,
            observation: Some(StoreObservation {
                mechanism,
                plain_predicates: predicates,
                cipher_tokens: tokens,
                plain_rows,
                cipher_refs: cipher.into_iter().map(|t| t.tuple_ref).collect(),
            }),
            fakes_discarded: fakes,
        })
    }
}

/// Uploads `rel` under `layout` with keys derived from `seed`.
pub fn deploy(rel: &PartitionedRelation, layout: BinLayout, seed: Seed) -> Result<(Client, Stores)> {
    let keys = Keys::derive(seed);
    let stores = upload(rel, &layout, &keys, seed)?;
    Ok((Client::new(keys, layout, &rel.searchable_attribute), stores))
}

#[cfg(test)]
mod tests;

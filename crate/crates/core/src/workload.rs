//! Synthetic datasets, query workloads and the end-to-end benchmark loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::AdversarialView;
use crate::binning::{create_bins, BinLayout, BinStrategy};
use crate::costmodel::CounterSample;
use crate::error::{QbError, Result};
use crate::executor::{deploy, Client, Mechanism, QueryResult};
use crate::model::{ingest_named, AttributeValue, OwnerMetadata, PartitionedRelation, Row};
use crate::seed::Seed;
use crate::stores::{ScanCharging, Stores};

/// Tuples per distinct value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Multiplicity {
    /// Value `i` gets `counts[i % len]`.
    Cycle { counts: Vec<u64> },
    /// Uniform on `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
    /// Zipf with the given exponent over `1..=max`.
    Zipf { exponent: f64, max: u64 },
}

impl Multiplicity {
    pub fn fixed(n: u64) -> Multiplicity {
        Multiplicity::Cycle { counts: vec![n] }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Multiplicity::Cycle { counts } => !counts.is_empty() && counts.iter().all(|&c| c >= 1),
            Multiplicity::Uniform { lo, hi } => 1 <= *lo && lo <= hi,
            Multiplicity::Zipf { exponent, max } => *exponent > 0.0 && *max >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(QbError::Infeasible(format!("bad multiplicity {self}")))
        }
    }

    fn sample<R: Rng>(&self, i: usize, rng: &mut R) -> u64 {
        match self {
            Multiplicity::Cycle { counts } => counts[i % counts.len()],
            Multiplicity::Uniform { lo, hi } => rng.random_range(*lo..=*hi),
            Multiplicity::Zipf { exponent, max } => {
                let z = Zipf::new(*max as f64, *exponent).expect("validated");
                z.sample(rng) as u64
            }
        }
    }
}

/// Accepted forms: `3`, `10..90:10` (range with step), `1,2,5`,
/// `uniform:1:10`, `zipf:1.2:100`.
impl FromStr for Multiplicity {
    type Err = QbError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || QbError::Infeasible(format!("cannot parse multiplicity `{s}`"));
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        let m = if let Some(rest) = s.strip_prefix("uniform:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            Multiplicity::Uniform { lo: num(lo)?, hi: num(hi)? }
        } else if let Some(rest) = s.strip_prefix("zipf:") {
            let (e, max) = rest.split_once(':').ok_or_else(bad)?;
            Multiplicity::Zipf {
                exponent: e.parse().map_err(|_| bad())?,
                max: num(max)?,
            }
        } else if let Some((lo, rest)) = s.split_once("..") {
            let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step == 0 || lo > hi {
                return Err(bad());
            }
            Multiplicity::Cycle {
                counts: (lo..=hi).step_by(step as usize).collect(),
            }
        } else {
            Multiplicity::Cycle {
                counts: s.split(',').map(num).collect::<Result<_>>()?,
            }
        };
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplicity::Cycle { counts } => {
                let parts: Vec<String> = counts.iter().map(u64::to_string).collect();
                f.write_str(&parts.join(","))
            }
            Multiplicity::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Multiplicity::Zipf { exponent, max } => write!(f, "zipf:{exponent}:{max}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Distinct values counted per side, so a shared value counts twice.
    pub values: usize,
    /// Fraction of `values` that are sensitive.
    pub alpha: f64,
    /// Values present on both sides.
    pub shared: usize,
    pub sensitive_multiplicity: Multiplicity,
    pub nonsensitive_multiplicity: Multiplicity,
    /// When set, multiplicities are rescaled to exactly this many rows.
    pub rows: Option<u64>,
    pub attribute: String,
    pub seed: Seed,
}

impl DatasetSpec {
    pub fn new(values: usize, alpha: f64, seed: Seed) -> DatasetSpec {
        DatasetSpec {
            values,
            alpha,
            shared: 0,
            sensitive_multiplicity: Multiplicity::fixed(1),
            nonsensitive_multiplicity: Multiplicity::fixed(1),
            rows: None,
            attribute: "c_custkey".into(),
            seed,
        }
    }

    /// `(|S|, |NS|)`.
    pub fn sides(&self) -> (usize, usize) {
        let s = (self.alpha * self.values as f64).round() as usize;
        (s, self.values - s)
    }
}

/// Scales `weights` to integers `>= 1` summing to `total` (largest
/// remainder).
fn apportion(weights: &[u64], total: u64) -> Vec<u64> {
    let n = weights.len() as u64;
    let spare = (total - n) as f64;
    let sum: f64 = weights.iter().map(|&w| w as f64).sum();
    let exact: Vec<f64> = weights.iter().map(|&w| spare * w as f64 / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|x| 1 + x.floor() as u64).collect();
    let mut left = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// A deterministic synthetic relation in the shape of a customer table.
///
/// Values are integers drawn from a seeded permutation so their magnitude
/// says nothing about which side they sit on. Row order is shuffled too.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Row>> {
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(QbError::Infeasible("alpha must lie in [0, 1]".into()));
    }
    spec.sensitive_multiplicity.validate()?;
    spec.nonsensitive_multiplicity.validate()?;
    let (s, ns) = spec.sides();
    if spec.shared > s.min(ns) {
        return Err(QbError::Infeasible(format!(
            "{} shared values but only {s} sensitive and {ns} plaintext values",
            spec.shared
        )));
    }
    if let Some(rows) = spec.rows {
        if spec.values as u64 > rows {
            return Err(QbError::Infeasible(format!("{} distinct values do not fit in {rows} rows", spec.values)));
        }
    }
    let mut rng = spec.seed.derive("generate").rng();
    let distinct = s + ns - spec.shared;
    let mut ids: Vec<i64> = (0..distinct as i64).collect();
    ids.shuffle(&mut rng);
    // Sensitive values take ids[0..s]. Plaintext values start `shared`
    // places earlier, reusing the last `shared` sensitive ids.
    let cells: Vec<(i64, bool)> = (0..s)
        .map(|i| (ids[i], true))
        .chain((0..ns).map(|i| (ids[s - spec.shared + i], false)))
        .collect();
    let mut weights = Vec::with_capacity(cells.len());
    for (i, &(_, sensitive)) in cells.iter().enumerate() {
        let m = if sensitive {
            spec.sensitive_multiplicity.sample(i, &mut rng)
        } else {
            spec.nonsensitive_multiplicity.sample(i - s, &mut rng)
        };
        weights.push(m);
    }
    let counts = match spec.rows {
        Some(total) if !cells.is_empty() => apportion(&weights, total),
        _ => weights,
    };

    let mut rows = Vec::new();
    for (&(v, sensitive), &c) in cells.iter().zip(&counts) {
        for _ in 0..c {
            rows.push((v, sensitive, rng.random_range(-99_999i64..=999_999)));
        }
    }
    rows.shuffle(&mut rng);
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(n, (v, sensitive, bal))| {
            Row::new(format!("r{n:07}"), sensitive)
                .with(&spec.attribute, v)
                .with("c_name", format!("Customer#{n:09}"))
                .with("c_acctbal", bal)
        })
        .collect())
}

/// How query values are drawn from the relation's domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryDistribution {
    Uniform,
    /// Zipf over the domain in a seed-shuffled order.
    Zipf { exponent: f64 },
    /// Exactly these values, in order.
    List { values: Vec<AttributeValue> },
    /// Every domain value once, in sorted order.
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub distribution: QueryDistribution,
    /// Ignored by `List` and `Sweep`.
    pub queries: usize,
    pub seed: Seed,
}

impl WorkloadSpec {
    /// Probability of each domain value under this workload; sums to 1.
    pub fn probabilities(&self, domain: &[AttributeValue]) -> Vec<f64> {
        let n = domain.len();
        if n == 0 {
            return Vec::new();
        }
        match &self.distribution {
            QueryDistribution::Uniform | QueryDistribution::Sweep => vec![1.0 / n as f64; n],
            QueryDistribution::Zipf { exponent } => {
                let order = self.zipf_order(n);
                let mut p = vec![0.0; n];
                let norm: f64 = (1..=n).map(|r| (r as f64).powf(-exponent)).sum();
                for (rank, &i) in order.iter().enumerate() {
                    p[i] = ((rank + 1) as f64).powf(-exponent) / norm;
                }
                p
            }
            QueryDistribution::List { values } => {
                let mut p = vec![0.0; n];
                for v in values {
                    if let Ok(i) = domain.binary_search(v) {
                        p[i] += 1.0;
                    }
                }
                let total: f64 = p.iter().sum();
                if total > 0.0 {
                    p.iter_mut().for_each(|x| *x /= total);
                }
                p
            }
        }
    }

    /// Domain indices from hottest to coldest.
    fn zipf_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.seed.derive("zipf-order").rng());
        order
    }

    /// The query sequence over `domain` (sorted, distinct).
    pub fn queries(&self, domain: &[AttributeValue]) -> Result<Vec<AttributeValue>> {
        let mut rng = self.seed.derive("workload").rng();
        match &self.distribution {
            QueryDistribution::Sweep => Ok(domain.to_vec()),
            QueryDistribution::List { values } => Ok(values.clone()),
            _ if domain.is_empty() => Ok(Vec::new()),
            QueryDistribution::Uniform => Ok((0..self.queries)
                .map(|_| domain[rng.random_range(0..domain.len())].clone())
                .collect()),
            QueryDistribution::Zipf { exponent } => {
                let order = self.zipf_order(domain.len());
                let z = Zipf::new(domain.len() as f64, *exponent)
                    .map_err(|e| QbError::Domain(format!("zipf workload: {e}")))?;
                Ok((0..self.queries)
                    .map(|_| {
                        let rank = z.sample(&mut rng) as usize - 1;
                        domain[order[rank]].clone()
                    })
                    .collect())
            }
        }
    }

    /// The most likely query value, if any.
    pub fn hottest(&self, domain: &[AttributeValue]) -> Option<AttributeValue> {
        let p = self.probabilities(domain);
        let (i, _) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
        Some(domain[i].clone())
    }
}

/// Work done for one query, as seen at the store boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounters {
    pub encrypted_rows_scanned: u64,
    pub plaintext_lookups: u64,
    pub plaintext_rows_fetched: u64,
    pub encrypted_tuples_fetched: u64,
    pub bytes_transferred: u64,
    /// Fetched tuples that were not answers: bin-mates plus fakes.
    pub tuples_discarded: u64,
    pub fakes_discarded: u64,
    pub matches: u64,
}

impl QueryCounters {
    fn add(&mut self, o: &QueryCounters) {
        self.encrypted_rows_scanned += o.encrypted_rows_scanned;
        self.plaintext_lookups += o.plaintext_lookups;
        self.plaintext_rows_fetched += o.plaintext_rows_fetched;
        self.encrypted_tuples_fetched += o.encrypted_tuples_fetched;
        self.bytes_transferred += o.bytes_transferred;
        self.tuples_discarded += o.tuples_discarded;
        self.fakes_discarded += o.fakes_discarded;
        self.matches += o.matches;
    }

    pub fn tuples_returned(&self) -> u64 {
        self.plaintext_rows_fetched + self.encrypted_tuples_fetched
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mechanism: Mechanism,
    pub per_query: Vec<QueryCounters>,
    pub aggregate: QueryCounters,
    /// Inputs for the cost model derived from this run.
    pub sample: CounterSample,
    pub mismatches: usize,
}

impl BenchReport {
    fn new(mechanism: Mechanism, per_query: Vec<QueryCounters>, rel: &PartitionedRelation, layout: &BinLayout) -> BenchReport {
        let mut aggregate = QueryCounters::default();
        per_query.iter().for_each(|q| aggregate.add(q));
        let widest = |bins: &[Vec<Option<AttributeValue>>]| {
            bins.iter().map(|b| b.iter().flatten().count()).max().unwrap_or(0) as u64
        };
        let sample = CounterSample {
            queries: per_query.len() as u64,
            total_tuples: rel.len() as u64,
            sensitive_tuples: rel.sensitive_rows.len() as u64,
            distinct_nonsensitive: layout.nonsensitive_bins.iter().flatten().flatten().count() as u64,
            sb_size: widest(&layout.sensitive_bins),
            nsb_size: widest(&layout.nonsensitive_bins),
            encrypted_rows_scanned: aggregate.encrypted_rows_scanned,
            plaintext_lookups: aggregate.plaintext_lookups,
            tuples_returned: aggregate.tuples_returned(),
            matches: aggregate.matches,
        };
        BenchReport {
            mechanism,
            per_query,
            aggregate,
            sample,
            mismatches: 0,
        }
    }
}

/// One answered query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub index: usize,
    pub value: AttributeValue,
    pub row_ids: Vec<String>,
    /// `Some(false)` when verification disagreed with the brute-force scan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub strategy: BinStrategy,
    pub mechanism: Mechanism,
    pub verify: bool,
    pub charging: ScanCharging,
    pub seed: Seed,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            strategy: BinStrategy::Base,
            mechanism: Mechanism::Binned,
            verify: false,
            charging: ScanCharging::PerQuery,
            seed: Seed(0),
        }
    }
}

pub struct WorkloadOutput {
    pub results: Vec<QueryRecord>,
    pub view: AdversarialView,
    pub report: BenchReport,
}

/// Bins `rel`, uploads it and runs `workload` against the stores.
pub fn run_workload(rel: &PartitionedRelation, workload: &WorkloadSpec, opts: &RunOptions) -> Result<WorkloadOutput> {
    let meta = OwnerMetadata::build(rel);
    let layout = create_bins(&meta, opts.seed, opts.strategy)?;
    let (client, mut stores) = deploy(rel, layout, opts.seed)?;
    stores.encrypted.charging = opts.charging;
    let queries = workload.queries(&rel.domain())?;
    run_queries(rel, &client, &mut stores, &queries, opts)
}

/// Runs `queries` against already uploaded stores.
pub fn run_queries(
    rel: &PartitionedRelation,
    client: &Client,
    stores: &mut Stores,
    queries: &[AttributeValue],
    opts: &RunOptions,
) -> Result<WorkloadOutput> {
    let mut view = AdversarialView::new(stores);
    let mut rng = opts.seed.derive("pairing").rng();
    let mut results = Vec::with_capacity(queries.len());
    let mut per_query = Vec::with_capacity(queries.len());
    for (index, w) in queries.iter().enumerate() {
        let (e0, p0) = (stores.encrypted.counters().clone(), stores.plaintext.counters().clone());
        let r: QueryResult = match opts.mechanism {
            Mechanism::Binned => client.execute(stores, w),
            Mechanism::Naive => client.execute_naive(stores, w),
            Mechanism::RandomPairing => client.execute_random_pairing(stores, w, &mut rng),
        }
        .map_err(|e| QbError::AtQuery {
            index,
            source: Box::new(e),
        })?;
        let (e1, p1) = (stores.encrypted.counters(), stores.plaintext.counters());
        let fetched = (e1.tuples_returned - e0.tuples_returned) + (p1.tuples_returned - p0.tuples_returned);
        per_query.push(QueryCounters {
            encrypted_rows_scanned: e1.rows_scanned - e0.rows_scanned,
            plaintext_lookups: p1.index_lookups - p0.index_lookups,
            plaintext_rows_fetched: p1.tuples_returned - p0.tuples_returned,
            encrypted_tuples_fetched: e1.tuples_returned - e0.tuples_returned,
            bytes_transferred: (e1.bytes_returned - e0.bytes_returned) + (p1.bytes_returned - p0.bytes_returned),
            tuples_discarded: fetched - r.rows.len() as u64,
            fakes_discarded: r.fakes_discarded as u64,
            matches: r.rows.len() as u64,
        });
        if let Some(o) = r.observation {
            view.push(o);
        }
        results.push(QueryRecord {
            index,
            value: w.clone(),
            row_ids: r.rows.into_iter().map(|row| row.row_id).collect(),
            verified: None,
        });
    }
    let mut report = BenchReport::new(opts.mechanism, per_query, rel, client.layout());
    if opts.verify {
        results.par_iter_mut().for_each(|rec| {
            let expect: Vec<String> = rel.select(&rec.value).into_iter().map(|r| r.row_id).collect();
            rec.verified = Some(expect == rec.row_ids);
        });
        report.mismatches = results.iter().filter(|r| r.verified == Some(false)).count();
    }
    Ok(WorkloadOutput { results, view, report })
}

/// Ingests generated rows under the spec's attribute name.
pub fn generate_relation(spec: &DatasetSpec) -> Result<PartitionedRelation> {
    ingest_named("customer", generate(spec)?, &spec.attribute)
}

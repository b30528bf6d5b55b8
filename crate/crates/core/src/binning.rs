//! Construction of the owner's secret bin layout.
//!
//! Values are arranged in a matrix whose rows are sensitive bins and whose
//! columns are non-sensitive bins: the sensitive value at position `j` of
//! sensitive bin `i` has its associated non-sensitive value (if any) at
//! position `i` of non-sensitive bin `j`. Retrieval then always fetches one
//! row and one column that intersect in the queried value.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{QbError, Result};
use crate::model::{AttributeValue, OwnerMetadata, ValueCount};
use crate::seed::Seed;

/// The exact factor pair of `n` with the smallest difference, `x >= y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factorization {
    pub n: usize,
    pub x: usize,
    pub y: usize,
}

pub fn approx_square_factors(n: usize) -> Result<Factorization> {
    if n == 0 {
        return Err(QbError::Domain("cannot factorize 0".into()));
    }
    let mut y = n.isqrt();
    while n % y != 0 {
        y -= 1;
    }
    Ok(Factorization { n, x: n / y, y })
}

/// Side length of the square number closest to `n`.
pub fn nearest_square_root(n: usize) -> usize {
    let r = n.isqrt();
    // n - r^2 and (r+1)^2 - n never tie for integers.
    if n - r * r <= (r + 1) * (r + 1) - n {
        r
    } else {
        r + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    Base,
    NearSquare,
    General,
    Reversed,
}

/// Which construction the dispatcher in [`create_bins`] should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    Base,
    NearSquare,
    General,
}

impl std::str::FromStr for BinStrategy {
    type Err = QbError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(BinStrategy::Base),
            "near-square" | "near_square" => Ok(BinStrategy::NearSquare),
            "general" => Ok(BinStrategy::General),
            other => Err(QbError::Domain(format!("unknown bin strategy `{other}`"))),
        }
    }
}

/// Matrix dimensions: `rows` bins on the factorized ("row") side holding at
/// most `row_cap` values, and `cols` bins on the other side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub row_cap: usize,
    pub cols: usize,
    pub near_square: bool,
}

impl Shape {
    pub fn base(n: usize) -> Result<Shape> {
        let f = approx_square_factors(n)?;
        Ok(Shape {
            rows: f.x,
            row_cap: f.y,
            cols: n.div_ceil(f.x),
            near_square: false,
        })
    }

    pub fn near_square(n: usize) -> Shape {
        let m = nearest_square_root(n).max(1);
        Shape {
            rows: m,
            row_cap: m,
            cols: m,
            near_square: true,
        }
    }

    /// The cheapest `rows x floor(n / rows)` grid that holds `row_values`
    /// row values. Column values alone fill every cell, so each bin pair is
    /// retrieved by some value. One row always qualifies.
    pub fn covering(n: usize, row_values: usize) -> Shape {
        (1..=row_values.min(n))
            .map(|rows| Shape {
                rows,
                row_cap: n / rows,
                cols: n / rows,
                near_square: true,
            })
            .filter(|s| s.admits(row_values))
            .min_by_key(|s| s.cost(n))
            .unwrap_or(Shape {
                rows: 1,
                row_cap: n.max(1),
                cols: n.max(1),
                near_square: true,
            })
    }

    /// Values retrieved per query: one row bin plus one column bin.
    pub fn cost(&self, n: usize) -> usize {
        self.rows + n.div_ceil(self.rows)
    }

    fn admits(&self, row_values: usize) -> bool {
        row_values >= self.rows && row_values <= self.rows * self.row_cap
    }
}

/// Admissible shapes for `n` column values and `row_values` row values,
/// cheapest first. Ties keep the exact factorization first. When a
/// non-exact shape is admissible, the covering grid follows as a last resort.
pub fn candidate_shapes(n: usize, row_values: usize) -> Result<Vec<Shape>> {
    let base = Shape::base(n)?;
    let mut out: Vec<Shape> = [base, Shape::near_square(n)]
        .into_iter()
        .filter(|s| s.admits(row_values))
        .collect();
    out.dedup_by_key(|s| (s.rows, s.row_cap, s.cols));
    out.sort_by_key(|s| (s.cost(n), s.near_square));
    if out.is_empty() {
        return Err(QbError::TooFewSensitiveValues {
            sensitive: row_values,
            bins: base.rows,
        });
    }
    if !out.contains(&base) {
        out.push(Shape::covering(n, row_values));
    }
    Ok(out)
}

/// Picks the cheaper of the exact and nearest-square shapes for `n` column
/// values and `row_values` row values. Ties keep the exact factorization.
pub fn choose_shape(n: usize, row_values: usize) -> Result<Shape> {
    Ok(candidate_shapes(n, row_values)?[0])
}

/// Builds each shape in turn and keeps the first layout in which every bin
/// pair is retrieved by some value. The exact factorization always is.
fn first_complete(shapes: &[Shape], mut build: impl FnMut(Shape) -> Result<BinLayout>) -> Result<BinLayout> {
    let mut first = None;
    for &shape in shapes {
        let layout = build(shape)?;
        if layout.uncovered_cells().is_empty() {
            return Ok(layout);
        }
        first.get_or_insert(layout);
    }
    Ok(first.expect("at least one candidate shape"))
}

/// The owner's secret bin assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinLayout {
    pub mode: LayoutMode,
    /// `sensitive_bins[i][j]` is the value at position `j` of bin `SB_i`.
    pub sensitive_bins: Vec<Vec<Option<AttributeValue>>>,
    /// `nonsensitive_bins[j][i]` is the value at position `i` of bin `NSB_j`.
    pub nonsensitive_bins: Vec<Vec<Option<AttributeValue>>>,
    /// Real sensitive tuple counts per value.
    pub sensitive_counts: Vec<ValueCount>,
    /// Fake tuples to add per sensitive bin.
    pub fake_counts: Vec<u64>,
    pub permutation_seed: Option<Seed>,
}

/// Owner-side lookup table from value to bin coordinates.
#[derive(Clone, Debug, Default)]
pub struct LayoutIndex {
    sensitive: HashMap<AttributeValue, (usize, usize)>,
    nonsensitive: HashMap<AttributeValue, (usize, usize)>,
}

impl LayoutIndex {
    pub fn sensitive(&self, v: &AttributeValue) -> Option<(usize, usize)> {
        self.sensitive.get(v).copied()
    }

    pub fn nonsensitive(&self, v: &AttributeValue) -> Option<(usize, usize)> {
        self.nonsensitive.get(v).copied()
    }
}

impl BinLayout {
    pub fn sb_count(&self) -> usize {
        self.sensitive_bins.len()
    }

    pub fn nsb_count(&self) -> usize {
        self.nonsensitive_bins.len()
    }

    pub fn index(&self) -> LayoutIndex {
        let mut idx = LayoutIndex::default();
        for (i, bin) in self.sensitive_bins.iter().enumerate() {
            for (j, v) in bin.iter().enumerate() {
                if let Some(v) = v {
                    idx.sensitive.insert(v.clone(), (i, j));
                }
            }
        }
        for (i, bin) in self.nonsensitive_bins.iter().enumerate() {
            for (j, v) in bin.iter().enumerate() {
                if let Some(v) = v {
                    idx.nonsensitive.insert(v.clone(), (i, j));
                }
            }
        }
        idx
    }

    pub fn sensitive_values(&self, i: usize) -> Vec<AttributeValue> {
        self.sensitive_bins[i].iter().flatten().cloned().collect()
    }

    pub fn nonsensitive_values(&self, j: usize) -> Vec<AttributeValue> {
        self.nonsensitive_bins[j].iter().flatten().cloned().collect()
    }

    pub fn sensitive_count(&self, v: &AttributeValue) -> u64 {
        self.sensitive_counts
            .binary_search_by(|e| e.value.cmp(v))
            .map(|i| self.sensitive_counts[i].count)
            .unwrap_or(0)
    }

    /// Real sensitive tuples in bin `i`.
    pub fn bin_total(&self, i: usize) -> u64 {
        self.sensitive_bins[i]
            .iter()
            .flatten()
            .map(|v| self.sensitive_count(v))
            .sum()
    }

    /// Real plus fake tuples in bin `i`.
    pub fn padded_total(&self, i: usize) -> u64 {
        self.bin_total(i) + self.fake_counts.get(i).copied().unwrap_or(0)
    }

    pub fn total_fakes(&self) -> u64 {
        self.fake_counts.iter().sum()
    }

    /// Bin pairs `(SB_i, NSB_j)` that no value's query retrieves. A full
    /// sweep leaves these edges out of the surviving graph.
    pub fn uncovered_cells(&self) -> Vec<(usize, usize)> {
        let (sb, nsb) = (self.sb_count(), self.nsb_count());
        if sb == 0 || nsb == 0 {
            return Vec::new();
        }
        let mut covered = vec![vec![false; nsb]; sb];
        for (i, bin) in self.sensitive_bins.iter().enumerate() {
            for (p, v) in bin.iter().enumerate() {
                if v.is_some() {
                    covered[i][p % nsb] = true;
                }
            }
        }
        for (j, bin) in self.nonsensitive_bins.iter().enumerate() {
            for (q, v) in bin.iter().enumerate() {
                if v.is_some() {
                    covered[q % sb][j] = true;
                }
            }
        }
        (0..sb)
            .flat_map(|i| (0..nsb).map(move |j| (i, j)))
            .filter(|&(i, j)| !covered[i][j])
            .collect()
    }

    /// Checks completeness, disjointness, positional association and (in
    /// general mode) equal padded totals against `meta`.
    pub fn check_invariants(&self, meta: &OwnerMetadata) -> std::result::Result<(), String> {
        let mut seen_s: BTreeMap<&AttributeValue, usize> = BTreeMap::new();
        for v in self.sensitive_bins.iter().flatten().flatten() {
            *seen_s.entry(v).or_default() += 1;
        }
        let mut seen_ns: BTreeMap<&AttributeValue, usize> = BTreeMap::new();
        for v in self.nonsensitive_bins.iter().flatten().flatten() {
            *seen_ns.entry(v).or_default() += 1;
        }
        for vc in &meta.sensitive_values {
            if seen_s.get(&vc.value) != Some(&1) {
                return Err(format!("sensitive value {} not placed exactly once", vc.value));
            }
        }
        for vc in &meta.nonsensitive_values {
            if seen_ns.get(&vc.value) != Some(&1) {
                return Err(format!("non-sensitive value {} not placed exactly once", vc.value));
            }
        }
        if seen_s.len() != meta.s_len() || seen_ns.len() != meta.ns_len() {
            return Err("layout holds values absent from metadata".into());
        }
        for (i, bin) in self.sensitive_bins.iter().enumerate() {
            for (j, v) in bin.iter().enumerate() {
                let Some(v) = v else { continue };
                if !meta.is_associated(v) {
                    continue;
                }
                let partner = self
                    .nonsensitive_bins
                    .get(j)
                    .and_then(|b| b.get(i))
                    .and_then(|p| p.as_ref());
                if partner != Some(v) {
                    return Err(format!("associated value {v} at SB_{i}[{j}] lacks partner at NSB_{j}[{i}]"));
                }
            }
        }
        if let Some((i, j)) = self.uncovered_cells().first() {
            return Err(format!("no value retrieves SB_{i} together with NSB_{j}"));
        }
        if self.fake_counts.len() != self.sb_count() {
            return Err("fake_counts length differs from sensitive bin count".into());
        }
        if self.mode == LayoutMode::General && self.sb_count() > 0 {
            let totals: Vec<u64> = (0..self.sb_count()).map(|i| self.padded_total(i)).collect();
            let (lo, hi) = (totals.iter().min().unwrap(), totals.iter().max().unwrap());
            if lo != hi {
                return Err(format!("padded totals differ: {totals:?}"));
            }
        }
        Ok(())
    }
}

fn shuffled(mut values: Vec<AttributeValue>, seed: Seed) -> Vec<AttributeValue> {
    values.shuffle(&mut seed.rng());
    values
}

/// Places column-side values: partners of row-side values go to the
/// positional cell, the rest fill empty cells in bin order and any overflow
/// is spread round-robin over the column bins.
fn place_columns(
    row_bins: &[Vec<AttributeValue>],
    cols: usize,
    is_partnered: impl Fn(&AttributeValue) -> bool,
    rest: Vec<AttributeValue>,
) -> Vec<Vec<Option<AttributeValue>>> {
    let cap = row_bins.len();
    let mut out = vec![vec![None; cap]; cols];
    for (i, bin) in row_bins.iter().enumerate() {
        for (j, v) in bin.iter().enumerate() {
            if is_partnered(v) {
                assert!(j < cols, "row bin position {j} exceeds column bin count {cols}");
                out[j][i] = Some(v.clone());
            }
        }
    }
    // Cells no row-side value reaches come first, so that every pair of
    // bins is fetched by some value whenever there are enough values.
    let mut covered = vec![vec![false; cols]; cap];
    if cols > 0 {
        for (i, bin) in row_bins.iter().enumerate() {
            for p in 0..bin.len() {
                covered[i][p % cols] = true;
            }
        }
    }
    let mut rest = rest.into_iter();
    for uncovered_only in [true, false] {
        for (j, bin) in out.iter_mut().enumerate() {
            for (i, slot) in bin.iter_mut().enumerate() {
                if slot.is_none() && !(uncovered_only && covered[i][j]) {
                    match rest.next() {
                        Some(v) => *slot = Some(v),
                        None => break,
                    }
                }
            }
        }
    }
    if cols > 0 {
        for (k, v) in rest.enumerate() {
            out[k % cols].push(Some(v));
        }
    }
    for bin in out.iter_mut() {
        while bin.last().is_some_and(|s| s.is_none()) {
            bin.pop();
        }
    }
    out
}

/// Row-major assignment: the `k`-th value goes to bin `k mod rows`.
fn round_robin_rows(order: &[AttributeValue], rows: usize) -> Vec<Vec<AttributeValue>> {
    let mut bins = vec![Vec::new(); rows];
    for (k, v) in order.iter().enumerate() {
        bins[k % rows].push(v.clone());
    }
    bins
}

fn unassociated_nonsensitive(meta: &OwnerMetadata) -> Vec<AttributeValue> {
    meta.nonsensitive_values
        .iter()
        .map(|v| v.value.clone())
        .filter(|v| !meta.is_associated(v))
        .collect()
}

fn check_order(expected: &[AttributeValue], given: &[AttributeValue], what: &str) -> Result<()> {
    let mut a = expected.to_vec();
    let mut b = given.to_vec();
    a.sort();
    b.sort();
    if a != b {
        return Err(QbError::Domain(format!("{what} is not a permutation of the expected values")));
    }
    Ok(())
}

fn standard_preconditions(meta: &OwnerMetadata) -> Result<()> {
    if meta.ns_len() == 0 {
        return Err(QbError::Domain("no non-sensitive values to factorize".into()));
    }
    if meta.s_len() > meta.ns_len() {
        return Err(QbError::UseReversed {
            sensitive: meta.s_len(),
            nonsensitive: meta.ns_len(),
        });
    }
    Ok(())
}

fn assemble(
    mode: LayoutMode,
    meta: &OwnerMetadata,
    sensitive_bins: Vec<Vec<AttributeValue>>,
    cols: usize,
    fill: Vec<AttributeValue>,
    seed: Option<Seed>,
) -> BinLayout {
    let nonsensitive_bins = place_columns(&sensitive_bins, cols, |v| meta.is_associated(v), fill);
    let sb = sensitive_bins.len();
    BinLayout {
        mode,
        sensitive_bins: sensitive_bins
            .into_iter()
            .map(|b| b.into_iter().map(Some).collect())
            .collect(),
        nonsensitive_bins,
        sensitive_counts: meta.sensitive_values.clone(),
        fake_counts: vec![0; sb],
        permutation_seed: seed,
    }
}

/// Base-case bin creation with a random secret permutation.
pub fn create_bins_base(meta: &OwnerMetadata, seed: Seed) -> Result<BinLayout> {
    let order = shuffled(
        meta.sensitive_values.iter().map(|v| v.value.clone()).collect(),
        seed.derive("permutation"),
    );
    let fill = shuffled(unassociated_nonsensitive(meta), seed.derive("fill"));
    let mut layout = create_bins_base_with_order(meta, &order, &fill)?;
    layout.permutation_seed = Some(seed);
    Ok(layout)
}

/// Base-case bin creation with an explicit sensitive permutation and fill
/// order for the unassociated non-sensitive values.
pub fn create_bins_base_with_order(
    meta: &OwnerMetadata,
    sensitive_order: &[AttributeValue],
    fill_order: &[AttributeValue],
) -> Result<BinLayout> {
    standard_preconditions(meta)?;
    let shape = Shape::base(meta.ns_len())?;
    if meta.s_len() < shape.rows {
        return Err(QbError::TooFewSensitiveValues {
            sensitive: meta.s_len(),
            bins: shape.rows,
        });
    }
    build_standard(LayoutMode::Base, meta, shape, sensitive_order, fill_order)
}

fn build_standard(
    mode: LayoutMode,
    meta: &OwnerMetadata,
    shape: Shape,
    sensitive_order: &[AttributeValue],
    fill_order: &[AttributeValue],
) -> Result<BinLayout> {
    let values: Vec<AttributeValue> = meta.sensitive_values.iter().map(|v| v.value.clone()).collect();
    check_order(&values, sensitive_order, "sensitive order")?;
    check_order(&unassociated_nonsensitive(meta), fill_order, "fill order")?;
    let bins = round_robin_rows(sensitive_order, shape.rows);
    Ok(assemble(mode, meta, bins, shape.cols, fill_order.to_vec(), None))
}

/// Base case, or the nearest-square shape when it retrieves fewer values
/// per query.
pub fn create_bins_near_square(meta: &OwnerMetadata, seed: Seed) -> Result<BinLayout> {
    standard_preconditions(meta)?;
    let shapes = candidate_shapes(meta.ns_len(), meta.s_len())?;
    let order = shuffled(
        meta.sensitive_values.iter().map(|v| v.value.clone()).collect(),
        seed.derive("permutation"),
    );
    let fill = shuffled(unassociated_nonsensitive(meta), seed.derive("fill"));
    let mut layout = first_complete(&shapes, |shape| {
        let mode = if shape.near_square {
            LayoutMode::NearSquare
        } else {
            LayoutMode::Base
        };
        build_standard(mode, meta, shape, &order, &fill)
    })?;
    layout.permutation_seed = Some(seed);
    Ok(layout)
}

/// Greedy balancing of sensitive tuple totals: values in decreasing count
/// order, one per bin first, then each into the lightest bin that still has
/// room (lowest index on ties).
pub fn greedy_assign(counts: &[(AttributeValue, u64)], rows: usize, row_cap: usize) -> Vec<Vec<AttributeValue>> {
    let mut sorted: Vec<&(AttributeValue, u64)> = counts.iter().collect();
    // Stable: equal counts keep the caller's (secretly permuted) order.
    sorted.sort_by(|a, b| b.1.cmp(&a.1));
    let mut bins: Vec<Vec<AttributeValue>> = vec![Vec::new(); rows];
    let mut totals = vec![0u64; rows];
    for (k, (v, c)) in sorted.into_iter().enumerate() {
        let target = if k < rows {
            k
        } else {
            (0..rows)
                .filter(|&b| bins[b].len() < row_cap)
                .min_by_key(|&b| (totals[b], b))
                .expect("capacity covers every value")
        };
        bins[target].push(v.clone());
        totals[target] += c;
    }
    bins
}

/// General case: balanced sensitive bins padded with fake tuples.
pub fn create_bins_general(meta: &OwnerMetadata, seed: Seed) -> Result<BinLayout> {
    standard_preconditions(meta)?;
    let shapes = candidate_shapes(meta.ns_len(), meta.s_len())?;
    let order = shuffled(
        meta.sensitive_values.iter().map(|v| v.value.clone()).collect(),
        seed.derive("permutation"),
    );
    let counts: Vec<(AttributeValue, u64)> = order
        .iter()
        .map(|v| (v.clone(), meta.sensitive_count(v)))
        .collect();
    let fill = shuffled(unassociated_nonsensitive(meta), seed.derive("fill"));
    let mut layout = first_complete(&shapes, |shape| {
        let bins = greedy_assign(&counts, shape.rows, shape.row_cap);
        Ok(assemble(LayoutMode::General, meta, bins, shape.cols, fill.clone(), Some(seed)))
    })?;
    let totals: Vec<u64> = (0..layout.sb_count()).map(|i| layout.bin_total(i)).collect();
    let max = totals.iter().copied().max().unwrap_or(0);
    layout.fake_counts = totals.iter().map(|t| max - t).collect();
    Ok(layout)
}

/// Shapes usable when `sensitive > nonsensitive`, cheapest first: the
/// sensitive count is factorized. A row-side shortfall is tolerated since
/// empty row bins are dropped.
pub fn reversed_shapes(sensitive: usize, nonsensitive: usize) -> Result<Vec<Shape>> {
    let (n, p) = (sensitive, nonsensitive);
    let base = Shape::base(n)?;
    let near = Shape::near_square(n);
    let fits = |s: &Shape| p <= s.rows * s.row_cap;
    // `p < n` always fits the exact factorization.
    Ok(match (fits(&base), fits(&near)) {
        (true, true) if near.cost(n) < base.cost(n) => vec![near, base],
        (true, _) => vec![base],
        _ => vec![near],
    })
}

/// The preferred reversed shape.
pub fn reversed_shape(sensitive: usize, nonsensitive: usize) -> Result<Shape> {
    Ok(reversed_shapes(sensitive, nonsensitive)?[0])
}

/// `|S| > |NS|`: the same construction with the two sides swapped, so the
/// sensitive count is factorized and non-sensitive values form the rows.
pub fn create_bins_reversed(meta: &OwnerMetadata, seed: Seed) -> Result<BinLayout> {
    if meta.s_len() <= meta.ns_len() {
        return Err(QbError::NotReversed {
            sensitive: meta.s_len(),
            nonsensitive: meta.ns_len(),
        });
    }
    let n = meta.s_len();
    let p = meta.ns_len();
    let shapes = reversed_shapes(n, p)?;
    let order = shuffled(
        meta.nonsensitive_values.iter().map(|v| v.value.clone()).collect(),
        seed.derive("permutation"),
    );
    let rest = shuffled(
        meta.sensitive_values
            .iter()
            .map(|v| v.value.clone())
            .filter(|v| !meta.is_associated(v))
            .collect(),
        seed.derive("fill"),
    );
    first_complete(&shapes, |shape| {
        let rows = shape.rows.min(p);
        let ns_bins = if rows == 0 {
            Vec::new()
        } else {
            round_robin_rows(&order, rows)
        };
        let sensitive_bins = place_columns(&ns_bins, shape.cols, |v| meta.is_associated(v), rest.clone());
        Ok(BinLayout {
            mode: LayoutMode::Reversed,
            fake_counts: vec![0; sensitive_bins.len()],
            sensitive_bins,
            nonsensitive_bins: ns_bins
                .into_iter()
                .map(|b| b.into_iter().map(Some).collect())
                .collect(),
            sensitive_counts: meta.sensitive_values.clone(),
            permutation_seed: Some(seed),
        })
    })
}

/// Dispatches to the construction for `strategy`, switching to the
/// reversed construction when `|S| > |NS|`. A relation without sensitive
/// values gets one non-sensitive bin per value and no sensitive bins.
pub fn create_bins(meta: &OwnerMetadata, seed: Seed, strategy: BinStrategy) -> Result<BinLayout> {
    if meta.s_len() == 0 {
        return Ok(BinLayout {
            mode: LayoutMode::Base,
            sensitive_bins: Vec::new(),
            nonsensitive_bins: meta
                .nonsensitive_values
                .iter()
                .map(|v| vec![Some(v.value.clone())])
                .collect(),
            sensitive_counts: Vec::new(),
            fake_counts: Vec::new(),
            permutation_seed: Some(seed),
        });
    }
    if meta.s_len() > meta.ns_len() {
        return create_bins_reversed(meta, seed);
    }
    match strategy {
        BinStrategy::Base => create_bins_base(meta, seed),
        BinStrategy::NearSquare => create_bins_near_square(meta, seed),
        BinStrategy::General => create_bins_general(meta, seed),
    }
}

/// Written into every saved layout.
pub const OWNER_WARNING: &str = "SECRET OWNER STATE: this layout reveals which values share bins. Never upload it.";

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayoutLine {
    Header {
        #[serde(default)]
        warning: String,
        mode: LayoutMode,
        permutation_seed: Option<Seed>,
        sensitive_bins: usize,
        nonsensitive_bins: usize,
    },
    SensitiveBin {
        index: usize,
        values: Vec<Option<AttributeValue>>,
        counts: Vec<u64>,
        fake_count: u64,
    },
    NonsensitiveBin {
        index: usize,
        values: Vec<Option<AttributeValue>>,
    },
}

impl BinLayout {
    /// Writes the layout as owner-side NDJSON. The file is secret owner
    /// state and must never be uploaded.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = LayoutLine::Header {
            warning: OWNER_WARNING.into(),
            mode: self.mode,
            permutation_seed: self.permutation_seed,
            sensitive_bins: self.sb_count(),
            nonsensitive_bins: self.nsb_count(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (i, bin) in self.sensitive_bins.iter().enumerate() {
            let line = LayoutLine::SensitiveBin {
                index: i,
                values: bin.clone(),
                counts: bin
                    .iter()
                    .map(|v| v.as_ref().map(|v| self.sensitive_count(v)).unwrap_or(0))
                    .collect(),
                fake_count: self.fake_counts[i],
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        for (j, bin) in self.nonsensitive_bins.iter().enumerate() {
            let line = LayoutLine::NonsensitiveBin {
                index: j,
                values: bin.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<BinLayout> {
        let mut header = None;
        let mut sbs: BTreeMap<usize, (Vec<Option<AttributeValue>>, Vec<u64>, u64)> = BTreeMap::new();
        let mut nsbs: BTreeMap<usize, Vec<Option<AttributeValue>>> = BTreeMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LayoutLine = serde_json::from_str(&line).map_err(|e| QbError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            match parsed {
                LayoutLine::Header {
                    warning: _,
                    mode,
                    permutation_seed,
                    sensitive_bins,
                    nonsensitive_bins,
                } => header = Some((mode, permutation_seed, sensitive_bins, nonsensitive_bins)),
                LayoutLine::SensitiveBin {
                    index,
                    values,
                    counts,
                    fake_count,
                } => {
                    sbs.insert(index, (values, counts, fake_count));
                }
                LayoutLine::NonsensitiveBin { index, values } => {
                    nsbs.insert(index, values);
                }
            }
        }
        let (mode, permutation_seed, sb, nsb) =
            header.ok_or_else(|| QbError::Parse { line: 1, message: "missing header".into() })?;
        if sbs.len() != sb || nsbs.len() != nsb || sbs.keys().copied().ne(0..sb) || nsbs.keys().copied().ne(0..nsb) {
            return Err(QbError::Parse {
                line: 0,
                message: "bin indices do not match header".into(),
            });
        }
        let mut counts = BTreeMap::new();
        let mut sensitive_bins = Vec::with_capacity(sb);
        let mut fake_counts = Vec::with_capacity(sb);
        for (_, (values, cs, fake)) in sbs {
            for (v, c) in values.iter().zip(cs) {
                if let Some(v) = v {
                    counts.insert(v.clone(), c);
                }
            }
            sensitive_bins.push(values);
            fake_counts.push(fake);
        }
        Ok(BinLayout {
            mode,
            sensitive_bins,
            nonsensitive_bins: nsbs.into_values().collect(),
            sensitive_counts: counts
                .into_iter()
                .map(|(value, count)| ValueCount { value, count })
                .collect(),
            fake_counts,
            permutation_seed,
        })
    }
}

#[cfg(test)]
mod tests;

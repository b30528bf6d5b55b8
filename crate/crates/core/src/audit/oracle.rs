//! Exact inference over small universes.
//!
//! A world fixes everything the owner chose at random: the positioned
//! layout of both bin families and which matrix cells hold associated
//! pairs. Worlds are equally likely a priori, so the adversary's posterior
//! is uniform over the worlds that reproduce the view. Comparing marginals
//! before and after conditioning decides both security conditions.
//!
//! The view is treated as a set: repeated observations and their order
//! carry no extra weight.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{approx_square_factors, reversed_shape, LayoutMode};
use crate::error::{QbError, Result};
use crate::executor::Mechanism;

use super::AdversarialView;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// The adversary knows every value was queried at least once.
    pub covers_domain: bool,
    /// Largest number of values per side the oracle accepts.
    pub max_side: usize,
    /// Largest number of worlds it is willing to enumerate.
    pub max_worlds: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            covers_domain: false,
            max_side: 10,
            max_worlds: 50_000_000,
        }
    }
}

/// An exact probability, kept reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prob {
    pub num: u128,
    pub den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Prob {
    pub fn new(num: u128, den: u128) -> Prob {
        assert!(den > 0, "zero denominator");
        let g = gcd(num, den).max(1);
        Prob {
            num: num / g,
            den: den / g,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Less,
    Equal,
    Greater,
}

const RELATIONS: [Relation; 3] = [Relation::Less, Relation::Equal, Relation::Greater];

fn rel_index(a: u64, b: u64) -> usize {
    match a.cmp(&b) {
        Ordering::Less => 0,
        Ordering::Equal => 1,
        Ordering::Greater => 2,
    }
}

/// A probability the view moved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Encrypted tuple `sensitive` shares its value with `nonsensitive`.
    Association {
        sensitive: String,
        nonsensitive: String,
        before: Prob,
        after: Prob,
    },
    /// Encrypted tuple `sensitive` shares its value with some plaintext tuple.
    SensitiveAssociated { sensitive: String, before: Prob, after: Prob },
    /// Plaintext value `nonsensitive` also occurs among the encrypted tuples.
    NonsensitiveAssociated {
        nonsensitive: String,
        before: Prob,
        after: Prob,
    },
    /// Relation between the sensitive tuple counts of two plaintext values.
    CountRelation {
        left: String,
        right: String,
        relation: Relation,
        before: Prob,
        after: Prob,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityVerdict {
    pub mechanism: Option<Mechanism>,
    /// Association probabilities unchanged.
    pub condition1_holds: bool,
    /// Count-relation probabilities unchanged.
    pub condition2_holds: bool,
    /// Some world reproduces the view. When false both conditions fail.
    pub explainable: bool,
    pub prior_worlds: u128,
    pub consistent_worlds: u128,
    pub witnesses: Vec<Witness>,
}

impl SecurityVerdict {
    pub fn holds(&self) -> bool {
        self.condition1_holds && self.condition2_holds
    }
}

struct Universe {
    s: usize,
    n: usize,
    k: usize,
    e_names: Vec<String>,
    ns_names: Vec<String>,
}

/// Counts over worlds, indexed by sensitive item `e` and plaintext value `v`.
#[derive(Clone)]
struct Tally {
    total: u128,
    pair: Vec<u128>,
    rel_ns: Vec<[u128; 3]>,
}

impl Tally {
    fn new(u: &Universe) -> Tally {
        Tally {
            total: 0,
            pair: vec![0; u.s * u.n],
            rel_ns: vec![[0; 3]; u.n * u.n],
        }
    }

    fn add(&mut self, u: &Universe, partner: &[Option<usize>]) {
        self.total += 1;
        let mut has = [false; 64];
        for (e, p) in partner.iter().enumerate() {
            if let Some(v) = *p {
                self.pair[e * u.n + v] += 1;
                has[v] = true;
            }
        }
        // Only sensitive-tuple counts matter: a plaintext value has one
        // sensitive tuple exactly when it is associated.
        for a in 0..u.n {
            for b in a + 1..u.n {
                self.rel_ns[a * u.n + b][rel_index(has[a] as u64, has[b] as u64)] += 1;
            }
        }
    }

    fn merge(mut self, o: Tally) -> Tally {
        self.total += o.total;
        for (a, b) in self.pair.iter_mut().zip(o.pair) {
            *a += b;
        }
        for (a, b) in self.rel_ns.iter_mut().zip(o.rel_ns) {
            for r in 0..3 {
                a[r] += b[r];
            }
        }
        self
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn falling(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128)
}

/// Calls `f` with every injection of exactly `k` sensitive items into the
/// plaintext values.
fn for_each_injection(s: usize, n: usize, k: usize, f: &mut dyn FnMut(&[Option<usize>])) {
    fn rec(
        e: usize,
        assigned: usize,
        used: u64,
        partner: &mut Vec<Option<usize>>,
        n: usize,
        k: usize,
        f: &mut dyn FnMut(&[Option<usize>]),
    ) {
        let s = partner.len();
        if e == s {
            if assigned == k {
                f(partner);
            }
            return;
        }
        if k - assigned < s - e {
            partner[e] = None;
            rec(e + 1, assigned, used, partner, n, k, f);
        }
        if assigned < k {
            for v in 0..n {
                if used & (1 << v) == 0 {
                    partner[e] = Some(v);
                    rec(e + 1, assigned + 1, used | (1 << v), partner, n, k, f);
                }
            }
            partner[e] = None;
        }
    }
    let mut partner = vec![None; s];
    rec(0, 0, 0, &mut partner, n, k, f);
}

/// Matrix geometry of the layout family the view was produced with.
struct Grid {
    /// Row bins come from the encrypted side (otherwise the plaintext side).
    row_is_cipher: bool,
    row_sizes: Vec<usize>,
    cols: usize,
    col_size: usize,
}

impl Grid {
    fn rows(&self) -> usize {
        self.row_sizes.len()
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (b, &sz) in self.row_sizes.iter().enumerate() {
            for p in 0..sz {
                out.push((b, p));
            }
        }
        out
    }

    fn pair_bit(&self, b: usize, j: usize) -> u128 {
        1u128 << (b * self.cols + j)
    }

    /// Bin pairs the retrieval rules can produce.
    fn producible(&self) -> u128 {
        let mut m = 0;
        for (b, p) in self.cells() {
            m |= self.pair_bit(b, p % self.cols);
        }
        for j in 0..self.cols {
            for i in 0..self.col_size {
                m |= self.pair_bit(i % self.rows(), j);
            }
        }
        m
    }
}

fn grid_for(av: &AdversarialView, s: usize, n: usize) -> Result<Grid> {
    let round_robin = |items: usize, rows: usize| (0..rows).map(|b| (items - b.min(items)).div_ceil(rows)).collect();
    match av.public.layout_mode {
        LayoutMode::Base if s <= n => {
            let f = approx_square_factors(n)?;
            if s < f.x {
                return Err(QbError::Unsupported(format!("{s} sensitive values cannot fill {} bins", f.x)));
            }
            Ok(Grid {
                row_is_cipher: true,
                row_sizes: round_robin(s, f.x),
                cols: f.y,
                col_size: f.x,
            })
        }
        LayoutMode::Reversed if s > n => {
            let shape = reversed_shape(s, n)?;
            if shape.near_square || n < shape.rows {
                return Err(QbError::Unsupported(
                    "the oracle covers reversed layouts only when they form an exact grid".into(),
                ));
            }
            Ok(Grid {
                row_is_cipher: false,
                row_sizes: round_robin(n, shape.rows),
                cols: shape.cols,
                col_size: shape.rows,
            })
        }
        mode => Err(QbError::Unsupported(format!(
            "the oracle covers base and reversed layouts, not {mode:?} with |S| = {s}, |NS| = {n}"
        ))),
    }
}

/// One side's bins in position order, plus each bin's item mask.
struct SideLayout {
    bins: Vec<Vec<u8>>,
    masks: Vec<u64>,
}

fn permutations(items: &[u8]) -> Vec<Vec<u8>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn combinations(items: &[u8], k: usize) -> Vec<Vec<u8>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    for mut c in combinations(&items[1..], k - 1) {
        c.insert(0, items[0]);
        out.push(c);
    }
    out.extend(combinations(&items[1..], k));
    out
}

fn bits(mask: u64) -> Vec<u8> {
    (0..64u8).filter(|i| mask & (1 << i) != 0).collect()
}

/// Every positioned layout of `items` into bins of the given sizes in
/// which each observed set is exactly one bin.
fn side_layouts(items: usize, sizes: &[usize], observed: &[u64], cap: u64) -> Result<Vec<SideLayout>> {
    let all = if items == 64 { u64::MAX } else { (1u64 << items) - 1 };
    let mut union = 0u64;
    for &m in observed {
        if union & m != 0 {
            return Ok(Vec::new());
        }
        union |= m;
    }
    let mut labelings: Vec<Vec<u64>> = Vec::new();
    fn rec(
        b: usize,
        sizes: &[usize],
        observed: &[u64],
        used: &mut Vec<bool>,
        free: u64,
        cur: &mut Vec<u64>,
        out: &mut Vec<Vec<u64>>,
    ) {
        if b == sizes.len() {
            if used.iter().all(|&u| u) && free == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for i in 0..observed.len() {
            if !used[i] && observed[i].count_ones() as usize == sizes[b] {
                used[i] = true;
                cur.push(observed[i]);
                rec(b + 1, sizes, observed, used, free, cur, out);
                cur.pop();
                used[i] = false;
            }
        }
        for c in combinations(&bits(free), sizes[b]) {
            let m = c.iter().fold(0u64, |m, &i| m | (1 << i));
            cur.push(m);
            rec(b + 1, sizes, observed, used, free & !m, cur, out);
            cur.pop();
        }
    }
    rec(
        0,
        sizes,
        observed,
        &mut vec![false; observed.len()],
        all & !union,
        &mut Vec::new(),
        &mut labelings,
    );
    let mut out = Vec::new();
    for masks in labelings {
        let per_bin: Vec<Vec<Vec<u8>>> = masks.iter().map(|&m| permutations(&bits(m))).collect();
        let mut idx = vec![0usize; per_bin.len()];
        loop {
            out.push(SideLayout {
                bins: per_bin.iter().zip(&idx).map(|(p, &i)| p[i].clone()).collect(),
                masks: masks.clone(),
            });
            if out.len() as u64 > cap {
                return Err(QbError::UniverseTooLarge(format!(
                    "more than {cap} bin layouts; shrink the instance or raise the world budget"
                )));
            }
            let mut d = 0;
            loop {
                if d == idx.len() {
                    break;
                }
                idx[d] += 1;
                if idx[d] < per_bin[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == idx.len() {
                break;
            }
        }
    }
    Ok(out)
}

/// Shape-level facts about one choice of associated cells.
struct CellChoice {
    cells: Vec<usize>,
    /// Pair bits of the associated cells.
    pair_mask: u128,
    row_has_free: Vec<bool>,
    col_has_free: Vec<bool>,
}

fn cell_choices(grid: &Grid, k: usize) -> Vec<CellChoice> {
    let cells = grid.cells();
    let idx: Vec<u8> = (0..cells.len() as u8).collect();
    combinations(&idx, k)
        .into_iter()
        .map(|chosen| {
            let chosen: Vec<usize> = chosen.into_iter().map(usize::from).collect();
            let in_k = |b: usize, p: usize| chosen.iter().any(|&c| cells[c] == (b, p));
            let pair_mask = chosen.iter().fold(0, |m, &c| m | grid.pair_bit(cells[c].0, cells[c].1));
            let row_has_free = (0..grid.rows())
                .map(|b| (0..grid.row_sizes[b]).any(|p| !in_k(b, p)))
                .collect();
            let col_has_free = (0..grid.cols)
                .map(|j| (0..grid.col_size).any(|i| !in_k(i, j)))
                .collect();
            CellChoice {
                cells: chosen,
                pair_mask,
                row_has_free,
                col_has_free,
            }
        })
        .collect()
}

/// Whether random pairing could have produced exactly the observed pairs.
fn random_pairing_consistent(grid: &Grid, obs: u128, kc: &CellChoice, covers: bool) -> bool {
    let row_seen = |b: usize| (0..grid.cols).any(|j| obs & grid.pair_bit(b, j) != 0);
    let col_seen = |j: usize| (0..grid.rows()).any(|b| obs & grid.pair_bit(b, j) != 0);
    for b in 0..grid.rows() {
        for j in 0..grid.cols {
            let bit = grid.pair_bit(b, j);
            if obs & bit != 0 && kc.pair_mask & bit == 0 && !kc.row_has_free[b] && !kc.col_has_free[j] {
                return false;
            }
        }
    }
    if covers {
        if kc.pair_mask & !obs != 0 {
            return false;
        }
        if (0..grid.rows()).any(|b| kc.row_has_free[b] && !row_seen(b)) {
            return false;
        }
        if (0..grid.cols).any(|j| kc.col_has_free[j] && !col_seen(j)) {
            return false;
        }
    }
    true
}

fn universe(av: &AdversarialView, opts: &OracleOptions) -> Result<Universe> {
    let s = av.stored_refs.len();
    let n = av.stored_plain_values.len();
    if av.public.sensitive_values != s {
        return Err(QbError::Unsupported(
            "the oracle needs exactly one encrypted tuple per sensitive value and no fakes".into(),
        ));
    }
    if s > opts.max_side || n > opts.max_side {
        return Err(QbError::UniverseTooLarge(format!(
            "|S| = {s}, |NS| = {n} exceeds the limit of {} per side",
            opts.max_side
        )));
    }
    let k = av.public.shared_values;
    if k > s.min(n) {
        return Err(QbError::Domain(format!("{k} shared values cannot fit |S| = {s}, |NS| = {n}")));
    }
    Ok(Universe {
        s,
        n,
        k,
        e_names: av.stored_refs.clone(),
        ns_names: av.stored_plain_values.iter().map(|v| v.value.to_string()).collect(),
    })
}

fn prior(u: &Universe, opts: &OracleOptions) -> Result<Tally> {
    let count = binomial(u.s, u.k) * falling(u.n, u.k);
    if count > opts.max_worlds as u128 {
        return Err(QbError::UniverseTooLarge(format!("{count} association patterns")));
    }
    let mut t = Tally::new(u);
    for_each_injection(u.s, u.n, u.k, &mut |p| t.add(u, p));
    Ok(t)
}

fn naive_posterior(av: &AdversarialView, u: &Universe) -> Result<Tally> {
    let mut forced: Vec<Option<Option<usize>>> = vec![None; u.s];
    let mut ns_free = vec![false; u.n];
    let mut contradiction = false;
    for o in &av.observations {
        let [w] = o.plain_predicates.as_slice() else {
            return Err(QbError::Unsupported("naive observation without a single predicate".into()));
        };
        let v = av.stored_plain_values.iter().position(|x| &x.value == w);
        match o.cipher_refs.as_slice() {
            [] => {
                if let Some(v) = v {
                    ns_free[v] = true;
                }
            }
            [r] => {
                let e = u.e_names.iter().position(|x| x == r).ok_or_else(|| {
                    QbError::Unsupported(format!("observation names unknown tuple {r}"))
                })?;
                match forced[e] {
                    Some(prev) if prev != v => contradiction = true,
                    _ => forced[e] = Some(v),
                }
            }
            _ => {
                return Err(QbError::Unsupported(
                    "naive observation returned several encrypted tuples".into(),
                ))
            }
        }
    }
    let mut t = Tally::new(u);
    if contradiction {
        return Ok(t);
    }
    for_each_injection(u.s, u.n, u.k, &mut |p| {
        let ok = p.iter().zip(&forced).all(|(got, want)| want.is_none_or(|w| *got == w))
            && p.iter().flatten().all(|&v| !ns_free[v]);
        if ok {
            t.add(u, p);
        }
    });
    Ok(t)
}

fn layout_posterior(
    av: &AdversarialView,
    u: &Universe,
    mech: Mechanism,
    opts: &OracleOptions,
) -> Result<Tally> {
    let grid = grid_for(av, u.s, u.n)?;
    let mut pairs: BTreeSet<(u64, u64)> = BTreeSet::new();
    for o in &av.observations {
        let mut c = 0u64;
        for r in &o.cipher_refs {
            let e = u
                .e_names
                .iter()
                .position(|x| x == r)
                .ok_or_else(|| QbError::Unsupported(format!("observation names unknown tuple {r}")))?;
            c |= 1 << e;
        }
        let mut p = 0u64;
        for w in &o.plain_predicates {
            let v = av
                .stored_plain_values
                .iter()
                .position(|x| &x.value == w)
                .ok_or_else(|| QbError::Unsupported(format!("predicate {w} is not a stored value")))?;
            p |= 1 << v;
        }
        if c == 0 || p == 0 {
            return Err(QbError::Unsupported("binned observation with an empty side".into()));
        }
        pairs.insert(if grid.row_is_cipher { (c, p) } else { (p, c) });
    }
    let row_obs: Vec<u64> = pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let col_obs: Vec<u64> = pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let (row_items, col_items) = if grid.row_is_cipher { (u.s, u.n) } else { (u.n, u.s) };
    let cap = opts.max_worlds;
    let rls = side_layouts(row_items, &grid.row_sizes, &row_obs, cap)?;
    let cls = side_layouts(col_items, &vec![grid.col_size; grid.cols], &col_obs, cap)?;
    let kcs = cell_choices(&grid, u.k);
    let worlds = rls.len() as u128 * cls.len() as u128 * kcs.len() as u128;
    if worlds > cap as u128 {
        return Err(QbError::UniverseTooLarge(format!(
            "{worlds} worlds exceed the budget of {cap}; shrink the instance or raise the budget"
        )));
    }
    let producible = grid.producible();
    let cells = grid.cells();
    let empty = Tally::new(u);
    let tally = rls
        .par_iter()
        .fold(
            || empty.clone(),
            |mut t, rl| {
                for cl in &cls {
                    let mut obs = 0u128;
                    for &(rm, cm) in &pairs {
                        let b = rl.masks.iter().position(|&m| m == rm).expect("observed rows are bins");
                        let j = cl.masks.iter().position(|&m| m == cm).expect("observed columns are bins");
                        obs |= grid.pair_bit(b, j);
                    }
                    let layout_ok = match mech {
                        Mechanism::Binned => obs & !producible == 0 && (!opts.covers_domain || obs == producible),
                        _ => true,
                    };
                    if !layout_ok {
                        continue;
                    }
                    for kc in &kcs {
                        if mech == Mechanism::RandomPairing
                            && !random_pairing_consistent(&grid, obs, kc, opts.covers_domain)
                        {
                            continue;
                        }
                        let mut partner = vec![None; u.s];
                        for &c in &kc.cells {
                            let (b, p) = cells[c];
                            let r = rl.bins[b][p] as usize;
                            let cc = cl.bins[p][b] as usize;
                            let (e, v) = if grid.row_is_cipher { (r, cc) } else { (cc, r) };
                            partner[e] = Some(v);
                        }
                        t.add(u, &partner);
                    }
                }
                t
            },
        )
        .reduce(|| empty.clone(), Tally::merge);
    Ok(tally)
}

fn same(a_num: u128, a_den: u128, b_num: u128, b_den: u128) -> bool {
    a_num * b_den == b_num * a_den
}

fn compare(u: &Universe, prior: &Tally, post: &Tally, mechanism: Option<Mechanism>) -> SecurityVerdict {
    let mut verdict = SecurityVerdict {
        mechanism,
        condition1_holds: true,
        condition2_holds: true,
        explainable: post.total > 0,
        prior_worlds: prior.total,
        consistent_worlds: post.total,
        witnesses: Vec::new(),
    };
    if post.total == 0 {
        verdict.condition1_holds = false;
        verdict.condition2_holds = false;
        return verdict;
    }
    let (pt, qt) = (prior.total, post.total);
    let moved = |a: u128, b: u128| !same(a, pt, b, qt);
    for e in 0..u.s {
        for v in 0..u.n {
            let (a, b) = (prior.pair[e * u.n + v], post.pair[e * u.n + v]);
            if moved(a, b) {
                verdict.condition1_holds = false;
                verdict.witnesses.push(Witness::Association {
                    sensitive: u.e_names[e].clone(),
                    nonsensitive: u.ns_names[v].clone(),
                    before: Prob::new(a, pt),
                    after: Prob::new(b, qt),
                });
            }
        }
    }
    for e in 0..u.s {
        let a: u128 = (0..u.n).map(|v| prior.pair[e * u.n + v]).sum();
        let b: u128 = (0..u.n).map(|v| post.pair[e * u.n + v]).sum();
        if moved(a, b) {
            verdict.condition1_holds = false;
            verdict.witnesses.push(Witness::SensitiveAssociated {
                sensitive: u.e_names[e].clone(),
                before: Prob::new(a, pt),
                after: Prob::new(b, qt),
            });
        }
    }
    for v in 0..u.n {
        let a: u128 = (0..u.s).map(|e| prior.pair[e * u.n + v]).sum();
        let b: u128 = (0..u.s).map(|e| post.pair[e * u.n + v]).sum();
        if moved(a, b) {
            verdict.condition1_holds = false;
            verdict.witnesses.push(Witness::NonsensitiveAssociated {
                nonsensitive: u.ns_names[v].clone(),
                before: Prob::new(a, pt),
                after: Prob::new(b, qt),
            });
        }
    }
    let mut relations = |names: &[String], pr: &[[u128; 3]], po: &[[u128; 3]], m: usize| {
        for a in 0..m {
            for b in a + 1..m {
                for (r, rel) in RELATIONS.iter().enumerate() {
                    let (x, y) = (pr[a * m + b][r], po[a * m + b][r]);
                    if moved(x, y) {
                        verdict.condition2_holds = false;
                        verdict.witnesses.push(Witness::CountRelation {
                            left: names[a].clone(),
                            right: names[b].clone(),
                            relation: *rel,
                            before: Prob::new(x, pt),
                            after: Prob::new(y, qt),
                        });
                    }
                }
            }
        }
    };
    relations(&u.ns_names, &prior.rel_ns, &post.rel_ns, u.n);
    verdict
}

/// Decides both security conditions for `av` by exhaustive enumeration.
///
/// Supported views come from one mechanism over a universe with one
/// encrypted tuple per sensitive value, laid out by the base construction
/// (or its reversed form when it forms an exact grid). The number of shared
/// values is taken as public knowledge.
pub fn check_partitioned_security(av: &AdversarialView, opts: &OracleOptions) -> Result<SecurityVerdict> {
    let (u, prior, post, mechanism) = tallies(av, opts)?;
    Ok(compare(&u, &prior, &post, mechanism))
}

fn tallies(av: &AdversarialView, opts: &OracleOptions) -> Result<(Universe, Tally, Tally, Option<Mechanism>)> {
    let u = universe(av, opts)?;
    let prior = prior(&u, opts)?;
    let mechs: BTreeSet<Mechanism> = av.observations.iter().map(|o| o.mechanism).collect();
    let mechanism = match mechs.len() {
        0 => return Ok((u, prior.clone(), prior, None)),
        1 => *mechs.iter().next().unwrap(),
        _ => return Err(QbError::Unsupported("view mixes retrieval mechanisms".into())),
    };
    let post = match mechanism {
        Mechanism::Naive => naive_posterior(av, &u)?,
        m => layout_posterior(av, &u, m, opts)?,
    };
    Ok((u, prior, post, Some(mechanism)))
}

/// Per-pair association probabilities before and after the view.
#[derive(Clone, Debug)]
pub struct AssociationMarginals {
    pub sensitive: Vec<String>,
    pub nonsensitive: Vec<String>,
    before: Vec<Prob>,
    after: Vec<Prob>,
}

impl AssociationMarginals {
    /// `Pr[e = v]` before and after, or `None` for unknown names.
    pub fn get(&self, e: &str, v: &str) -> Option<(Prob, Prob)> {
        let i = self.sensitive.iter().position(|x| x == e)?;
        let j = self.nonsensitive.iter().position(|x| x == v)?;
        let at = i * self.nonsensitive.len() + j;
        Some((self.before[at], self.after[at]))
    }
}

pub fn association_marginals(av: &AdversarialView, opts: &OracleOptions) -> Result<AssociationMarginals> {
    let (u, prior, post, _) = tallies(av, opts)?;
    let frac = |t: &Tally| -> Vec<Prob> { t.pair.iter().map(|&c| Prob::new(c, t.total.max(1))).collect() };
    Ok(AssociationMarginals {
        sensitive: u.e_names.clone(),
        nonsensitive: u.ns_names.clone(),
        before: frac(&prior),
        after: frac(&post),
    })
}

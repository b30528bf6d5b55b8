//! Inference attacks that work from result sizes and query frequencies.
//!
//! Each attack has an adversary half that sees only the view, and an owner
//! half that scores the guess against ground truth.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::AttributeValue;

use super::AdversarialView;

/// A sensitive bin as the cloud sees it: the sorted set of tuple refs.
pub type CipherGroup = Vec<String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTotal {
    pub sensitive: CipherGroup,
    pub predicates: Vec<AttributeValue>,
    pub encrypted: usize,
    pub plaintext: usize,
}

impl PairTotal {
    pub fn total(&self) -> usize {
        self.encrypted + self.plaintext
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeAttackReport {
    /// Encrypted result size per distinct sensitive group.
    pub group_sizes: Vec<(CipherGroup, usize)>,
    /// Distinct bin pairs with their result sizes.
    pub pairs: Vec<PairTotal>,
    /// Some sensitive groups return different numbers of tuples.
    pub distinguishable: bool,
    /// The pair with the largest combined result, when it is unique.
    pub flagged: Option<PairTotal>,
}

impl SizeAttackReport {
    pub fn succeeded(&self) -> bool {
        self.distinguishable
    }
}

fn sorted<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort();
    v
}

/// Compares result cardinalities across the observed bins.
pub fn size_attack(av: &AdversarialView) -> SizeAttackReport {
    let mut groups: BTreeMap<CipherGroup, usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(CipherGroup, Vec<AttributeValue>), PairTotal> = BTreeMap::new();
    for o in &av.observations {
        let g = sorted(&o.cipher_refs);
        let p = sorted(&o.plain_predicates);
        groups.insert(g.clone(), g.len());
        pairs.entry((g.clone(), p.clone())).or_insert(PairTotal {
            sensitive: g,
            predicates: p,
            encrypted: o.cipher_count(),
            plaintext: o.plain_count(),
        });
    }
    let sizes: Vec<usize> = groups.values().copied().collect();
    let distinguishable = sizes.windows(2).any(|w| w[0] != w[1]);
    let pairs: Vec<PairTotal> = pairs.into_values().collect();
    let max = pairs.iter().map(PairTotal::total).max();
    let top: Vec<&PairTotal> = pairs.iter().filter(|p| Some(p.total()) == max).collect();
    SizeAttackReport {
        group_sizes: groups.into_iter().collect(),
        flagged: (top.len() == 1).then(|| top[0].clone()),
        pairs,
        distinguishable,
    }
}

/// The adversary knows `heavy` is the most frequent value overall and
/// guesses which sensitive group holds its encrypted tuples: the largest
/// group among those fetched together with the plaintext bin containing
/// `heavy`, ties broken at random.
pub fn size_attack_guess<R: Rng>(av: &AdversarialView, heavy: &AttributeValue, rng: &mut R) -> Option<CipherGroup> {
    let mut candidates: BTreeMap<CipherGroup, usize> = BTreeMap::new();
    for o in &av.observations {
        if o.plain_predicates.contains(heavy) && !o.cipher_refs.is_empty() {
            candidates.insert(sorted(&o.cipher_refs), o.cipher_count());
        }
    }
    let max = candidates.values().copied().max()?;
    let top: Vec<CipherGroup> = candidates.into_iter().filter(|(_, n)| *n == max).map(|(g, _)| g).collect();
    Some(top[rng.random_range(0..top.len())].clone())
}

/// Accuracy against a uniform baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub trials: u64,
    pub accuracy: f64,
    pub baseline: f64,
}

impl AttackScore {
    pub fn advantage(&self) -> f64 {
        self.accuracy - self.baseline
    }
}

/// Running mean of per-trial success probabilities.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScoreAccumulator {
    trials: u64,
    hits: f64,
    baseline: f64,
}

impl ScoreAccumulator {
    pub fn record(&mut self, success: f64, baseline: f64) {
        self.trials += 1;
        self.hits += success;
        self.baseline += baseline;
    }

    pub fn score(&self) -> AttackScore {
        let n = self.trials.max(1) as f64;
        AttackScore {
            trials: self.trials,
            accuracy: self.hits / n,
            baseline: self.baseline / n,
        }
    }
}

/// One claim of the form "the queried value has `encrypted` sensitive
/// tuples", where the value is one of `candidates`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyClaim {
    pub candidates: Vec<AttributeValue>,
    pub encrypted: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub claims: Vec<FrequencyClaim>,
    /// Result sizes in decreasing order.
    pub ranking: Vec<usize>,
}

/// Reads each query's encrypted result size as the multiplicity of the
/// queried value.
pub fn frequency_count_attack(av: &AdversarialView) -> FrequencyReport {
    let mut claims: Vec<FrequencyClaim> = Vec::new();
    for o in &av.observations {
        let c = FrequencyClaim {
            candidates: sorted(&o.plain_predicates),
            encrypted: o.cipher_count(),
        };
        if !claims.contains(&c) {
            claims.push(c);
        }
    }
    let mut ranking: Vec<usize> = claims.iter().map(|c| c.encrypted).collect();
    ranking.sort_by(|a, b| b.cmp(a));
    FrequencyReport { claims, ranking }
}

/// Owner-side scoring: the adversary names a random candidate; it is right
/// when that value's true sensitive count equals the claimed size. The
/// baseline names a random value of the whole domain instead.
pub fn score_frequency(report: &FrequencyReport, truth: &BTreeMap<AttributeValue, u64>) -> AttackScore {
    let mut acc = ScoreAccumulator::default();
    let domain = truth.len().max(1) as f64;
    for c in &report.claims {
        if c.candidates.is_empty() {
            continue;
        }
        let count = |v: &AttributeValue| truth.get(v).copied().unwrap_or(0);
        let right = c.candidates.iter().filter(|v| count(v) == c.encrypted as u64).count();
        let base = truth.values().filter(|&&n| n == c.encrypted as u64).count();
        acc.record(right as f64 / c.candidates.len() as f64, base as f64 / domain);
    }
    acc.score()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewReport {
    /// The sensitive group fetched most often.
    pub hottest_group: CipherGroup,
    /// The plaintext predicate set sent most often.
    pub hottest_predicates: Vec<AttributeValue>,
    /// Share of queries that fetched the hottest predicate set.
    pub hottest_share: f64,
    /// Largest share of any group divided by the uniform share.
    pub lift: f64,
}

/// Looks for the bins a skewed workload hits most.
pub fn workload_skew_attack(av: &AdversarialView) -> Option<SkewReport> {
    let mut groups: BTreeMap<CipherGroup, u64> = BTreeMap::new();
    let mut preds: BTreeMap<Vec<AttributeValue>, u64> = BTreeMap::new();
    for o in &av.observations {
        *groups.entry(sorted(&o.cipher_refs)).or_default() += 1;
        *preds.entry(sorted(&o.plain_predicates)).or_default() += 1;
    }
    let total = av.observations.len() as f64;
    let (hg, _) = groups.iter().max_by_key(|(g, n)| (**n, std::cmp::Reverse((*g).clone())))?;
    let (hp, hn) = preds.iter().max_by_key(|(p, n)| (**n, std::cmp::Reverse((*p).clone())))?;
    let share = *hn as f64 / total;
    Some(SkewReport {
        hottest_group: hg.clone(),
        hottest_predicates: hp.clone(),
        hottest_share: share,
        lift: share * preds.len() as f64,
    })
}

/// Value-level accuracy of naming the hot value as a random member of the
/// hottest predicate set.
pub fn score_skew(report: &SkewReport, hot: &AttributeValue) -> f64 {
    if report.hottest_predicates.contains(hot) {
        1.0 / report.hottest_predicates.len() as f64
    } else {
        0.0
    }
}

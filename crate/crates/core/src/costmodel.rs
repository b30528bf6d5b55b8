//! Analytical cost of binned retrieval against a fully encrypted baseline.
//!
//! All costs are in abstract time units. `C_e` and `C_p` are the costs of one
//! selection over encrypted and plaintext data, `C_com` the cost of shipping
//! one tuple to the owner.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{QbError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Sensitive share of the dataset, `S / D`.
    pub alpha: f64,
    /// `C_e / C_p`.
    pub beta: f64,
    /// `C_e / C_com`.
    pub gamma: f64,
    /// Query selectivity.
    pub rho: f64,
    /// Total tuple count.
    pub d: f64,
    /// Distinct non-sensitive values.
    pub ns_values: u64,
    pub sb_size: u64,
    pub nsb_size: u64,
    pub c_com: f64,
    pub c_p: f64,
    pub c_e: f64,
}

/// Index depth for a lookup over `d` tuples. The model writes `log(D)`
/// without a base; an index is a binary search tree, so base 2.
pub fn index_depth(d: f64) -> f64 {
    d.log2()
}

impl CostParams {
    /// Parameters from ratios alone. Unit costs are normalised to `C_e = 1`
    /// so that `beta` and `gamma` stay consistent with them. Bin counts
    /// default to `ceil(sqrt(|NS|))`.
    pub fn from_ratios(alpha: f64, beta: f64, gamma: f64, rho: f64, d: f64, ns_values: u64) -> CostParams {
        let side = (ns_values as f64).sqrt().ceil() as u64;
        CostParams {
            alpha,
            beta,
            gamma,
            rho,
            d,
            ns_values,
            sb_size: side,
            nsb_size: side,
            c_e: 1.0,
            c_p: 1.0 / beta,
            c_com: 1.0 / gamma,
        }
    }

    /// Parameters from raw unit costs; `beta` and `gamma` are derived.
    /// `rho` defaults to `1 / |NS|`.
    pub fn from_costs(alpha: f64, rho: Option<f64>, d: f64, ns_values: u64, c_e: f64, c_p: f64, c_com: f64) -> CostParams {
        let mut p = CostParams::from_ratios(alpha, c_e / c_p, c_e / c_com, 0.0, d, ns_values);
        p.rho = rho.unwrap_or(1.0 / ns_values.max(1) as f64);
        p.c_e = c_e;
        p.c_p = c_p;
        p.c_com = c_com;
        p
    }

    pub fn with_bins(mut self, sb_size: u64, nsb_size: u64) -> CostParams {
        self.sb_size = sb_size;
        self.nsb_size = nsb_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(QbError::Domain(m.into()));
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.beta >= 1.0) {
            return bad("beta must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if !(self.d >= 1.0) {
            return bad("D must be at least 1");
        }
        if self.c_e < 0.0 || self.c_p < 0.0 || self.c_com < 0.0 {
            return bad("unit costs must be non-negative");
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        if self.c_p > 0.0 && !close(self.beta, self.c_e / self.c_p) {
            return bad("beta disagrees with C_e / C_p");
        }
        if self.c_com > 0.0 && !close(self.gamma, self.c_e / self.c_com) {
            return bad("gamma disagrees with C_e / C_com");
        }
        Ok(())
    }
}

/// `x` plaintext selections over `d` tuples, each an index lookup plus
/// shipping its matches.
pub fn cost_plain(x: f64, d: f64, p: &CostParams) -> f64 {
    x * (index_depth(d) * p.c_p + p.rho * d * p.c_com)
}

/// `x` encrypted selections over `d` tuples. One scan serves all `x`
/// predicates; only the shipped matches grow with `x`.
pub fn cost_crypt(x: f64, d: f64, p: &CostParams) -> f64 {
    p.c_e * d + p.rho * x * d * p.c_com
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaResult {
    pub eta_full: f64,
    pub eta_simplified: f64,
    /// The sensitive scan term, `alpha / (1 + rho/gamma)`.
    pub scan_term: f64,
    /// The plaintext lookup term dropped by the closed form.
    pub lookup_term: f64,
    /// The shipping term, `(rho/gamma)(|SB| + |NSB|) / (1 + rho/gamma)`.
    pub transfer_term: f64,
}

impl EtaResult {
    pub fn abs_diff(&self) -> f64 {
        (self.eta_full - self.eta_simplified).abs()
    }

    pub fn rel_diff(&self) -> f64 {
        self.abs_diff() / self.eta_full.abs().max(f64::MIN_POSITIVE)
    }

    pub fn qb_wins(&self) -> bool {
        self.eta_simplified < 1.0
    }
}

/// Cost of binned retrieval relative to the fully encrypted baseline.
///
/// The full value keeps every term of the ratio; both communication terms
/// ship `rho * D` tuples per predicate, as in the model's expansion. The
/// simplified value is `alpha + rho (|SB| + |NSB|) / gamma`.
pub fn eta(p: &CostParams) -> Result<EtaResult> {
    p.validate()?;
    let r = p.rho / p.gamma;
    let bins = (p.sb_size + p.nsb_size) as f64;
    let scan_term = p.alpha / (1.0 + r);
    let lookup_term = index_depth(p.d) / p.d * p.nsb_size as f64 / (p.beta * (1.0 + r));
    let transfer_term = r * bins / (1.0 + r);
    Ok(EtaResult {
        eta_full: scan_term + lookup_term + transfer_term,
        eta_simplified: p.alpha + p.rho * bins / p.gamma,
        scan_term,
        lookup_term,
        transfer_term,
    })
}

/// The closed-form break-even condition with `|SB| = |NSB| = sqrt(|NS|)`.
pub fn break_even(alpha: f64, rho: f64, ns_values: f64, gamma: f64) -> bool {
    alpha < 1.0 - 2.0 * rho * ns_values.sqrt() / gamma
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub gamma: f64,
    pub alpha: f64,
    pub eta: f64,
}

/// `eta_simplified` over every `(gamma, alpha)` pair, gamma-major.
pub fn eta_curve(rho: f64, ns_values: u64, alphas: &[f64], gammas: &[f64]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(alphas.len() * gammas.len());
    for &gamma in gammas {
        for &alpha in alphas {
            let p = CostParams::from_ratios(alpha, 1.0, gamma, rho, 1.0, ns_values);
            out.push(CurvePoint {
                gamma,
                alpha,
                eta: eta(&p)?.eta_simplified,
            });
        }
    }
    Ok(out)
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// `n` points from `lo` to `hi` inclusive, evenly spaced in log scale.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut xs: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
            xs[0] = lo;
            xs[n - 1] = hi;
            xs
        }
    }
}

/// Aggregate executor counters from a benchmark run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterSample {
    pub queries: u64,
    /// Tuples in both stores, fakes excluded.
    pub total_tuples: u64,
    pub sensitive_tuples: u64,
    pub distinct_nonsensitive: u64,
    /// Values per sensitive bin (the widest one).
    pub sb_size: u64,
    /// Values per non-sensitive bin (the widest one).
    pub nsb_size: u64,
    pub encrypted_rows_scanned: u64,
    pub plaintext_lookups: u64,
    /// Tuples shipped from both stores, fakes and bin-mates included.
    pub tuples_returned: u64,
    /// Tuples that actually answer the queries.
    pub matches: u64,
}

/// Per-unit costs used to turn counters into time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitCosts {
    /// Per encrypted tuple scanned.
    pub c_e: f64,
    /// Per plaintext index lookup.
    pub c_p: f64,
    /// Per tuple shipped.
    pub c_com: f64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        UnitCosts {
            c_e: 1.0,
            c_p: 1.0,
            c_com: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: CostParams,
    /// Measured cost of the binned run over the baseline's modelled cost.
    pub eta_empirical: f64,
    pub eta_simplified: f64,
    pub eta_full: f64,
}

/// Compares a measured run against the model.
///
/// The baseline is what full encryption would have cost for the same
/// queries: one scan of all tuples per query plus shipping the matches.
pub fn calibrate(s: &CounterSample, u: &UnitCosts) -> Result<Calibration> {
    if s.queries == 0 || s.total_tuples == 0 {
        return Err(QbError::Domain("calibration needs at least one query and one tuple".into()));
    }
    let d = s.total_tuples as f64;
    let q = s.queries as f64;
    let measured = u.c_e * s.encrypted_rows_scanned as f64
        + u.c_p * s.plaintext_lookups as f64 * index_depth(d)
        + u.c_com * s.tuples_returned as f64;
    let baseline = q * u.c_e * d + u.c_com * s.matches as f64;
    let rho = (s.matches as f64 / (q * d)).clamp(f64::MIN_POSITIVE, 1.0);
    let params = CostParams::from_costs(
        s.sensitive_tuples as f64 / d,
        Some(rho),
        d,
        s.distinct_nonsensitive,
        u.c_e,
        u.c_p,
        u.c_com,
    )
    .with_bins(s.sb_size, s.nsb_size);
    let e = eta(&params)?;
    Ok(Calibration {
        params,
        eta_empirical: measured / baseline,
        eta_simplified: e.eta_simplified,
        eta_full: e.eta_full,
    })
}

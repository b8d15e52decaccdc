use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Largest n tested by full permutation enumeration.
pub const EXACT_MAX_N: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationMethod {
    ExactPermutation,
    TApproximation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
    pub method: CorrelationMethod,
}

/// 1-based ranks; tied values share the average of their positions.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn ranked(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "sequences differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 pairs, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument(
            "non-finite value in correlation input".into(),
        ));
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::Degenerate("constant sequence has no ranking".into()));
    }
    Ok((mid_ranks(x), mid_ranks(y)))
}

/// Visits Σ rx_i · ry_π(i) for every permutation π (Heap's algorithm).
fn for_each_rank_product(rx: &[f64], ry: &[f64], mut visit: impl FnMut(f64)) {
    let n = ry.len();
    let mut p = ry.to_vec();
    let mut s: f64 = rx.iter().zip(&p).map(|(a, b)| a * b).sum();
    visit(s);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            let j = if i % 2 == 0 { 0 } else { c[i] };
            // ranks are multiples of 1/2, so this update is exact
            s += (rx[j] - rx[i]) * (p[i] - p[j]);
            p.swap(i, j);
            visit(s);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Exact null distribution of ρ under random pairing: `(rho, permutations)` pairs sorted by rho.
pub fn permutation_distribution(x: &[f64], y: &[f64]) -> Result<Vec<(f64, u64)>> {
    let (rx, ry) = ranked(x, y)?;
    if rx.len() > EXACT_MAX_N {
        return Err(Error::Argument(format!(
            "enumeration limited to n ≤ {EXACT_MAX_N}"
        )));
    }
    let (shift, denom) = centering(&rx, &ry);
    let mut counts = std::collections::BTreeMap::<i64, u64>::new();
    // keys are 4·S, which is an integer for half-integer ranks
    for_each_rank_product(&rx, &ry, |s| {
        *counts.entry((s * 4.0).round() as i64).or_default() += 1
    });
    Ok(counts
        .into_iter()
        .map(|(k, c)| (((k as f64 / 4.0) - shift) / denom, c))
        .collect())
}

/// ρ = (S - shift) / denom where S = Σ rx·ry.
fn centering(rx: &[f64], ry: &[f64]) -> (f64, f64) {
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let sxx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (n * mx * my, (sxx * syy).sqrt())
}

/// Spearman's ρ with a two-sided test of no correlation.
///
/// n ≤ 10 enumerates all n! pairings; larger n uses the t approximation with
/// n − 2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationReport> {
    let (rx, ry) = ranked(x, y)?;
    let n = rx.len();
    let rho = pearson(&rx, &ry);
    if n <= EXACT_MAX_N {
        let (shift, _) = centering(&rx, &ry);
        let observed: f64 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum::<f64>() - shift;
        let (mut hits, mut total) = (0u64, 0u64);
        for_each_rank_product(&rx, &ry, |s| {
            total += 1;
            if (s - shift).abs() >= observed.abs() - 1e-9 {
                hits += 1;
            }
        });
        return Ok(CorrelationReport {
            rho,
            p_value: hits as f64 / total as f64,
            n,
            method: CorrelationMethod::ExactPermutation,
        });
    }
    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        f64::MIN_POSITIVE
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Degenerate(e.to_string()))?;
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(f64::MIN_POSITIVE, 1.0)
    };
    Ok(CorrelationReport {
        rho,
        p_value: p,
        n,
        method: CorrelationMethod::TApproximation,
    })
}

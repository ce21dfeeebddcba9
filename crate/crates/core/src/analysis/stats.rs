//! Nonparametric and contingency tests used by the report.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    BinomialExact,
    PearsonChi2,
    MannWhitneyExact,
    MannWhitneyNormal,
    KruskalWallis,
    KolmogorovSmirnov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<u32>,
    pub method: TestMethod,
    /// Standardized statistic, where the test has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// The first sample tends to be smaller.
    Less,
    /// The first sample tends to be larger.
    Greater,
}

/// `P(X >= k)` for `X ~ Binomial(n, p0)`.
pub fn binom_test_geq(k: u64, n: u64, p0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Domain(format!("null proportion {p0} outside [0, 1]")));
    }
    if k > n {
        return Err(Error::Domain(format!("{k} successes out of {n} trials")));
    }
    if k == 0 || p0 == 1.0 {
        return Ok(1.0);
    }
    if p0 == 0.0 {
        return Ok(0.0);
    }
    let (lp, lq) = (p0.ln(), (-p0).ln_1p());
    let ln_n = ln_gamma(n as f64 + 1.0);
    let sum: f64 = (k..=n)
        .map(|j| {
            let jf = j as f64;
            let ln_c = ln_n - ln_gamma(jf + 1.0) - ln_gamma((n - j) as f64 + 1.0);
            (ln_c + jf * lp + (n - j) as f64 * lq).exp()
        })
        .sum();
    Ok(sum.clamp(0.0, 1.0))
}

/// Pearson chi-square for the table `[[a, b], [c, d]]`, no continuity
/// correction.
pub fn chi2_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<TestResult> {
    let margins = [a + b, c + d, a + c, b + d];
    if margins.contains(&0) {
        return Err(Error::DegenerateTable(format!("zero margin in [[{a}, {b}], [{c}, {d}]]")));
    }
    let n = (a + b + c + d) as f64;
    let det = a as f64 * d as f64 - b as f64 * c as f64;
    let denom: f64 = margins.iter().map(|&m| m as f64).product();
    let chi2 = n * det * det / denom;
    Ok(TestResult {
        statistic: chi2,
        p_value: erfc((chi2 / 2.0).sqrt()).clamp(0.0, 1.0),
        df: Some(1),
        method: TestMethod::PearsonChi2,
        z: None,
    })
}

/// Midranks (1-based) and the tie term `sum(t^3 - t)`.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &idx[start..end] {
            ranks[k] = rank;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

/// Largest group size for which [`mann_whitney`] uses the exact
/// permutation distribution.
pub const MW_EXACT_MAX: usize = 8;

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("both samples must be non-empty".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    Ok(())
}

/// Mann-Whitney U test. The statistic is `U` of the first sample: the
/// number of pairs with `a > b`, ties counting one half. The p-value is
/// exact when both groups have at most [`MW_EXACT_MAX`] observations and
/// normal-approximated otherwise; `z` is always the normal score.
pub fn mann_whitney(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    if a.len() <= MW_EXACT_MAX && b.len() <= MW_EXACT_MAX {
        mann_whitney_exact(a, b, alt)
    } else {
        mann_whitney_normal(a, b, alt)
    }
}

struct RankSums {
    u: f64,
    mean: f64,
    var: f64,
    doubled_ranks: Vec<u64>,
    doubled_sum_a: u64,
}

fn rank_sums(a: &[f64], b: &[f64]) -> RankSums {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let ra: f64 = ranks[..a.len()].iter().sum();
    let doubled_ranks: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
    let doubled_sum_a = doubled_ranks[..a.len()].iter().sum();
    RankSums {
        u: ra - na * (na + 1.0) / 2.0,
        mean: na * nb / 2.0,
        var: na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)).max(1.0)),
        doubled_ranks,
        doubled_sum_a,
    }
}

fn continuity_z(s: &RankSums) -> f64 {
    if s.var <= 0.0 {
        return 0.0;
    }
    let dev = s.u - s.mean;
    dev.signum() * (dev.abs() - 0.5).max(0.0) / s.var.sqrt()
}

fn one_sided_z(s: &RankSums, alt: Alternative) -> f64 {
    if s.var <= 0.0 {
        return 0.0;
    }
    match alt {
        Alternative::Greater => (s.u - s.mean - 0.5) / s.var.sqrt(),
        Alternative::Less => (s.u - s.mean + 0.5) / s.var.sqrt(),
        Alternative::TwoSided => continuity_z(s),
    }
}

pub fn mann_whitney_normal(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    check_samples(a, b)?;
    let s = rank_sums(a, b);
    let z = continuity_z(&s);
    let std = Normal::standard();
    let p = if s.var <= 0.0 {
        1.0
    } else {
        match alt {
            Alternative::TwoSided => 2.0 * std.sf(z.abs()),
            Alternative::Greater => std.sf(one_sided_z(&s, alt)),
            Alternative::Less => std.cdf(one_sided_z(&s, alt)),
        }
    };
    Ok(TestResult {
        statistic: s.u,
        p_value: p.clamp(0.0, 1.0),
        df: None,
        method: TestMethod::MannWhitneyNormal,
        z: Some(z),
    })
}

/// Exact permutation p-value over all ways of choosing the first group's
/// positions in the pooled sample, ties kept at their midranks.
pub fn mann_whitney_exact(a: &[f64], b: &[f64], alt: Alternative) -> Result<TestResult> {
    check_samples(a, b)?;
    let s = rank_sums(a, b);
    let na = a.len();
    let max_sum: u64 = s.doubled_ranks.iter().sum();
    // ways[k][w]: subsets of size k with doubled rank sum w
    let mut ways = vec![vec![0.0f64; max_sum as usize + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &s.doubled_ranks {
        for k in (1..=na).rev() {
            for w in (r as usize..=max_sum as usize).rev() {
                let add = ways[k - 1][w - r as usize];
                if add != 0.0 {
                    ways[k][w] += add;
                }
            }
        }
    }
    let dist = &ways[na];
    let total: f64 = dist.iter().sum();
    let n = s.doubled_ranks.len() as u64;
    let centre = na as u64 * (n + 1); // expected doubled rank sum
    let obs = s.doubled_sum_a;
    let dev = |w: u64| w.abs_diff(centre);
    let tail: f64 = dist
        .iter()
        .enumerate()
        .filter(|&(w, &c)| {
            let w = w as u64;
            c != 0.0
                && match alt {
                    Alternative::TwoSided => dev(w) >= dev(obs),
                    Alternative::Greater => w >= obs,
                    Alternative::Less => w <= obs,
                }
        })
        .map(|(_, &c)| c)
        .sum();
    Ok(TestResult {
        statistic: s.u,
        p_value: (tail / total).clamp(0.0, 1.0),
        df: None,
        method: TestMethod::MannWhitneyExact,
        z: Some(continuity_z(&s)),
    })
}

/// Kruskal-Wallis H with tie correction; identical observations give H = 0.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Domain("need at least two non-empty groups".into()));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if pooled.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    let (ranks, ties) = midranks(&pooled);
    let n = pooled.len() as f64;
    let correction = 1.0 - ties / (n * n * n - n);
    let df = groups.len() as u32 - 1;
    if correction <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            df: Some(df),
            method: TestMethod::KruskalWallis,
            z: None,
        });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    let chi = ChiSquared::new(f64::from(df)).expect("df >= 1");
    Ok(TestResult {
        statistic: h,
        p_value: chi.sf(h).clamp(0.0, 1.0),
        df: Some(df),
        method: TestMethod::KruskalWallis,
        z: None,
    })
}

/// Kolmogorov distribution tail `Q(lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    const EPS1: f64 = 1e-3;
    const EPS2: f64 = 1e-8;
    let a2 = -2.0 * lambda * lambda;
    let mut fac = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0f64;
    for j in 1..=100 {
        let jf = f64::from(j);
        let term = fac * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= EPS1 * prev || term.abs() <= EPS2 * sum {
            return sum;
        }
        fac = -fac;
        prev = term.abs();
    }
    1.0
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    check_samples(a, b)?;
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] == x {
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let p = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    Ok(TestResult {
        statistic: d,
        p_value: p.clamp(0.0, 1.0),
        df: None,
        method: TestMethod::KolmogorovSmirnov,
        z: None,
    })
}

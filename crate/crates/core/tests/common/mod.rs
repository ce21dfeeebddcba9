//! Independent brute-force oracles. Nothing here calls into the library's
//! evaluators; the ladder is spelled out by hand.

#![allow(dead_code)]

use std::collections::HashMap;

pub const LADDER: [u32; 9] = [0, 25, 50, 70, 80, 85, 90, 95, 100];

pub fn step(sigma: u32) -> u32 {
    let k = LADDER.iter().position(|&s| s == sigma).expect("on ladder");
    LADDER[(k + 1).min(LADDER.len() - 1)]
}

/// Value after a junction's rounds, given which later pictures (rounds
/// 2, 3, ...) raised the value. Round 1 always does.
pub fn value_after(later_increases: &[bool]) -> u32 {
    let mut s = step(0);
    for &inc in later_increases {
        if inc {
            s = step(s);
        }
    }
    s
}

fn bits(mask: u32, n: u32) -> Vec<bool> {
    (0..n).map(|k| mask >> k & 1 == 1).collect()
}

/// Crash-free closed-loop heuristic at one junction over every equally
/// likely sequence of the `rounds - 1` uncertain pictures (p = 1/2):
/// probability of reaching 70 and mean flights.
pub fn heuristic_junction_no_crash(rounds: u32) -> (f64, f64) {
    let n = rounds - 1;
    let total = 1u32 << n;
    let (mut reached, mut flights) = (0u32, 0u32);
    for mask in 0..total {
        let outcome = bits(mask, n);
        let mut sigma = 0;
        let mut flown = 0;
        while flown < rounds && sigma < 70 {
            sigma = if flown == 0 || outcome[flown as usize - 1] { step(sigma) } else { sigma };
            flown += 1;
        }
        reached += u32::from(sigma >= 70);
        flights += flown;
    }
    (f64::from(reached) / f64::from(total), f64::from(flights) / f64::from(total))
}

/// Crash-free mean junction information when flying `rounds` blind (p = 1/2).
pub fn blind_junction_no_crash(rounds: u32) -> f64 {
    let n = rounds - 1;
    let total = 1u32 << n;
    let sum: u32 = (0..total).map(|m| value_after(&bits(m, n))).sum();
    f64::from(sum) / f64::from(total)
}

#[derive(Clone, Copy)]
pub struct Params {
    pub d: f64,
    pub p: f64,
    pub r: f64,
    pub junctions: u32,
    pub rounds: u32,
}

impl Params {
    pub const DEFAULT: Params = Params { d: 400.0, p: 0.5, r: 0.02, junctions: 10, rounds: 8 };
}

/// Expected mission value of a stationary decision rule `fly(j, i, sigma)`,
/// by recursion over states. Crash keeps the current picture and loses the
/// drone; stopping banks the value and moves on.
pub fn rule_value(par: Params, fly: &dyn Fn(u32, u32, u32) -> bool) -> f64 {
    let mut memo = HashMap::new();
    rule_rec(par, fly, 1, 0, 0, &mut memo)
}

fn rule_rec(
    par: Params,
    fly: &dyn Fn(u32, u32, u32) -> bool,
    j: u32,
    i: u32,
    s: u32,
    memo: &mut HashMap<(u32, u32, u32), f64>,
) -> f64 {
    if j > par.junctions {
        return par.d;
    }
    if let Some(&v) = memo.get(&(j, i, s)) {
        return v;
    }
    let v = if i < par.rounds && s < 100 && fly(j, i, s) {
        let up = if i == 0 { 1.0 } else { par.p };
        let mut v = 0.0;
        for (prob, next) in [(up, step(s)), (1.0 - up, s)] {
            if prob > 0.0 {
                v += prob * (par.r * f64::from(next) + (1.0 - par.r) * rule_rec(par, fly, j, i + 1, next, memo));
            }
        }
        v
    } else {
        f64::from(s) + rule_rec(par, fly, j + 1, 0, 0, memo)
    };
    memo.insert((j, i, s), v);
    v
}

/// Expectimax over all decision rules; returns value and stop/fly values per
/// state.
pub struct Expectimax {
    pub par: Params,
    pub stop: HashMap<(u32, u32, u32), f64>,
    pub fly: HashMap<(u32, u32, u32), f64>,
}

impl Expectimax {
    pub fn solve(par: Params) -> Self {
        let mut e = Expectimax { par, stop: HashMap::new(), fly: HashMap::new() };
        e.value(1, 0, 0);
        e
    }

    pub fn value(&mut self, j: u32, i: u32, s: u32) -> f64 {
        if j > self.par.junctions {
            return self.par.d;
        }
        if let Some(&st) = self.stop.get(&(j, i, s)) {
            return st.max(self.fly.get(&(j, i, s)).copied().unwrap_or(f64::NEG_INFINITY));
        }
        let st = f64::from(s) + self.value(j + 1, 0, 0);
        let fl = if i < self.par.rounds && s < 100 {
            let up = if i == 0 { 1.0 } else { self.par.p };
            let mut v = 0.0;
            for (prob, next) in [(up, step(s)), (1.0 - up, s)] {
                if prob > 0.0 {
                    v += prob * (self.par.r * f64::from(next) + (1.0 - self.par.r) * self.value(j, i + 1, next));
                }
            }
            Some(v)
        } else {
            None
        };
        self.stop.insert((j, i, s), st);
        if let Some(fl) = fl {
            self.fly.insert((j, i, s), fl);
        }
        st.max(fl.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Two-sided permutation p-value of the Mann-Whitney U statistic by listing
/// every split of the pooled sample. `U` counts pairs `a > b`, ties one half.
pub fn mw_permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let u_of = |idx: &[usize]| -> f64 {
        let mut u = 0.0;
        for (k, x) in pooled.iter().enumerate() {
            if !idx.contains(&k) {
                continue;
            }
            for (m, y) in pooled.iter().enumerate() {
                if idx.contains(&m) {
                    continue;
                }
                u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
            }
        }
        u
    };
    let centre = na as f64 * (n - na) as f64 / 2.0;
    let obs: Vec<usize> = (0..na).collect();
    let obs_dev = (u_of(&obs) - centre).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut idx: Vec<usize> = (0..na).collect();
    loop {
        total += 1;
        if (u_of(&idx) - centre).abs() >= obs_dev - 1e-9 {
            hits += 1;
        }
        // next combination in lexicographic order
        let mut k = na;
        loop {
            if k == 0 {
                return hits as f64 / total as f64;
            }
            k -= 1;
            if idx[k] < n - na + k {
                break;
            }
        }
        idx[k] += 1;
        for m in k + 1..na {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)` in integer arithmetic (n <= 120).
pub fn binom_half_tail(k: u32, n: u32) -> f64 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for m in 1..row.len() {
            next[m] = row[m - 1] + row[m];
        }
        row = next;
    }
    let hits: u128 = row[k as usize..].iter().sum();
    hits as f64 / 2f64.powi(n as i32)
}

/// `P(X >= k)` by summing `C(n, j) p^j (1-p)^(n-j)` with the coefficient
/// built as a running product.
pub fn binom_tail_direct(k: u32, n: u32, p: f64) -> f64 {
    let mut total = 0.0;
    let mut c = 1.0f64;
    for j in 0..=n {
        if j >= k {
            total += c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32);
        }
        c = c * f64::from(n - j) / f64::from(j + 1);
    }
    total
}

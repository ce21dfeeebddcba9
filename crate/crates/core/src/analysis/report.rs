//! Per-treatment summary tables and the between-treatment tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mission::taler_to_euros;
use crate::session::{SessionLog, Treatment};

use super::labels::{
    categorize, confidence_degrees, session_labels, BehaviorCategory, HotHandTable, Label,
};
use super::risk::{classify_risk, Attitude};
use super::stats::{binom_test_geq, chi2_2x2, kruskal_wallis, ks_two_sample, mann_whitney, Alternative, TestResult};
use super::{AnalysisOptions, MwPooling};

/// Sample mean and standard deviation (n − 1 denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub sd: f64,
}

/// JSON has no NaN; an empty sample is written as null and read back as NaN.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, sd: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { n, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSummary {
    pub treatment: Treatment,
    pub sessions: usize,
    /// Subject means of flights per junction played.
    pub rounds_per_junction: MeanSd,
    pub total_info: MeanSd,
    pub total_value: MeanSd,
    /// Mission earnings in euros, without the price-list component.
    pub earnings: MeanSd,
    pub crash_rate: f64,
    pub oc_degree: MeanSd,
    pub uc_degree: MeanSd,
    pub opt_degree: MeanSd,
    pub categories: BTreeMap<BehaviorCategory, usize>,
    /// Rounds beyond the optimum over overconfident junctions.
    pub overflight: MeanSd,
    /// Upper-tail p of the count of (rather or strongly) overconfident
    /// subjects among categorized ones.
    pub overconfident_binomial: Option<f64>,
    pub underconfident_binomial: Option<f64>,
    /// Sessions with a price-list record, by attitude.
    pub risk: BTreeMap<Attitude, usize>,
    /// Overconfidence degree compared across risk attitudes.
    pub oc_by_risk: Option<TestResult>,
    pub uc_by_risk: Option<TestResult>,
}

impl TreatmentSummary {
    pub fn categorized(&self) -> usize {
        self.categories
            .iter()
            .filter(|(c, _)| **c != BehaviorCategory::Excluded)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn category_share(&self, c: BehaviorCategory) -> f64 {
        let n = self.categories.get(&c).copied().unwrap_or(0);
        n as f64 / self.categorized().max(1) as f64
    }

    pub fn risk_total(&self) -> usize {
        self.risk.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub options: AnalysisOptions,
    pub treatments: Vec<TreatmentSummary>,
    pub hot_hand: HotHandTable,
    pub hot_hand_chi2: Option<TestResult>,
    /// Upper-tail p of the fallacy count among hot-hand situations.
    pub hot_hand_binomial: Option<f64>,
    /// Over-flight rounds, closed against open.
    pub overflight_test: Option<TestResult>,
    /// Risk attitude codes, closed against open.
    pub risk_ks: Option<TestResult>,
}

struct SubjectRow {
    degrees: Option<(f64, f64, f64)>,
    category: BehaviorCategory,
    overflights: Vec<f64>,
    attitude: Option<Attitude>,
}

fn subject_row(s: &SessionLog, opts: &AnalysisOptions) -> SubjectRow {
    let degrees = confidence_degrees(s, opts).ok();
    let overflights = session_labels(s, opts)
        .into_iter()
        .filter(|(_, l)| l.label == Label::Overconfident)
        .map(|(_, l)| f64::from(l.rounds_beyond_optimum))
        .collect();
    let attitude = s
        .mpl
        .as_ref()
        .and_then(|m| classify_risk(&m.choices).ok())
        .map(|r| r.attitude);
    SubjectRow {
        degrees: degrees.map(|d| (d.oc_degree(), d.uc_degree(), d.opt_degree())),
        category: degrees.map_or(BehaviorCategory::Excluded, |d| categorize(&d)),
        overflights,
        attitude,
    }
}

fn degree_by_risk(rows: &[SubjectRow], pick: impl Fn(&(f64, f64, f64)) -> f64) -> Option<TestResult> {
    let mut groups: BTreeMap<Attitude, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let (Some(a), Some(d)) = (r.attitude, &r.degrees) {
            if a != Attitude::NotIdentifiable {
                groups.entry(a).or_default().push(pick(d));
            }
        }
    }
    let slices: Vec<&[f64]> = groups.values().map(Vec::as_slice).collect();
    kruskal_wallis(&slices).ok()
}

fn treatment_summary(
    t: Treatment,
    sessions: &[&SessionLog],
    opts: &AnalysisOptions,
) -> (TreatmentSummary, Vec<SubjectRow>) {
    let rows: Vec<SubjectRow> = sessions.iter().map(|s| subject_row(s, opts)).collect();
    let per_junction: Vec<f64> = sessions
        .iter()
        .filter(|s| !s.junctions.is_empty())
        .map(|s| s.total_flights() as f64 / s.junctions.len() as f64)
        .collect();
    let of = |f: &dyn Fn(&SessionLog) -> f64| MeanSd::of(&sessions.iter().map(|s| f(s)).collect::<Vec<_>>());
    let crashes = sessions.iter().filter(|s| s.crashed()).count();
    let degs: Vec<(f64, f64, f64)> = rows.iter().filter_map(|r| r.degrees).collect();
    let mut categories: BTreeMap<BehaviorCategory, usize> =
        BehaviorCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &rows {
        *categories.entry(r.category).or_default() += 1;
    }
    let mut risk: BTreeMap<Attitude, usize> = BTreeMap::new();
    if rows.iter().any(|r| r.attitude.is_some()) {
        risk = Attitude::ALL.iter().map(|&a| (a, 0)).collect();
        for a in rows.iter().filter_map(|r| r.attitude) {
            *risk.entry(a).or_default() += 1;
        }
    }
    let categorized = degs.len() as u64;
    let count = |pred: fn(BehaviorCategory) -> bool| rows.iter().filter(|r| pred(r.category)).count() as u64;
    let over = count(|c| c.is_overconfident());
    let under = count(|c| {
        matches!(c, BehaviorCategory::RatherUnderconfident | BehaviorCategory::StronglyUnderconfident)
    });
    let binom = |k| (categorized > 0).then(|| binom_test_geq(k, categorized, opts.binomial_null).ok()).flatten();
    let summary = TreatmentSummary {
        treatment: t,
        sessions: sessions.len(),
        rounds_per_junction: MeanSd::of(&per_junction),
        total_info: of(&|s| f64::from(s.total_info())),
        total_value: of(&|s| f64::from(s.total_value)),
        earnings: of(&|s| taler_to_euros(s.total_value, &s.config).as_f64()),
        crash_rate: if sessions.is_empty() { 0.0 } else { crashes as f64 / sessions.len() as f64 },
        oc_degree: MeanSd::of(&degs.iter().map(|d| d.0).collect::<Vec<_>>()),
        uc_degree: MeanSd::of(&degs.iter().map(|d| d.1).collect::<Vec<_>>()),
        opt_degree: MeanSd::of(&degs.iter().map(|d| d.2).collect::<Vec<_>>()),
        categories,
        overflight: MeanSd::of(&rows.iter().flat_map(|r| r.overflights.iter().copied()).collect::<Vec<_>>()),
        overconfident_binomial: binom(over),
        underconfident_binomial: binom(under),
        risk,
        oc_by_risk: degree_by_risk(&rows, |d| d.0),
        uc_by_risk: degree_by_risk(&rows, |d| d.1),
    };
    (summary, rows)
}

fn overflight_sample(rows: &[SubjectRow], pooling: MwPooling) -> Vec<f64> {
    match pooling {
        MwPooling::Junction => rows.iter().flat_map(|r| r.overflights.iter().copied()).collect(),
        MwPooling::SubjectMean => rows
            .iter()
            .filter(|r| !r.overflights.is_empty())
            .map(|r| r.overflights.iter().sum::<f64>() / r.overflights.len() as f64)
            .collect(),
    }
}

/// Builds every table and test that the sessions support; tests whose
/// inputs are missing or degenerate are left empty.
pub fn summarize(sessions: &[SessionLog], opts: &AnalysisOptions) -> SummaryReport {
    let mut treatments = Vec::new();
    let mut rows_by: BTreeMap<Treatment, Vec<SubjectRow>> = BTreeMap::new();
    for t in Treatment::ALL {
        let group: Vec<&SessionLog> = sessions.iter().filter(|s| s.treatment == t).collect();
        if group.is_empty() {
            continue;
        }
        let (summary, rows) = treatment_summary(t, &group, opts);
        treatments.push(summary);
        rows_by.insert(t, rows);
    }
    let hot_hand = HotHandTable::from_sessions(sessions, opts.streak_len).unwrap_or_default();
    let hot_hand_chi2 = chi2_2x2(
        hot_hand.no_hot_hand_not_oc,
        hot_hand.no_hot_hand_oc,
        hot_hand.hot_hand_not_oc,
        hot_hand.hot_hand_oc,
    )
    .ok();
    let hot_hand_binomial = (hot_hand.situations() > 0)
        .then(|| binom_test_geq(hot_hand.hot_hand_oc, hot_hand.situations(), opts.binomial_null).ok())
        .flatten();
    let (closed, open) = (rows_by.get(&Treatment::Closed), rows_by.get(&Treatment::Open));
    let (overflight_test, risk_ks) = match (closed, open) {
        (Some(c), Some(o)) => {
            let (a, b) = (overflight_sample(c, opts.mw_pooling), overflight_sample(o, opts.mw_pooling));
            let codes = |rows: &[SubjectRow]| -> Vec<f64> {
                rows.iter().filter_map(|r| r.attitude?.code()).map(f64::from).collect()
            };
            (
                mann_whitney(&a, &b, Alternative::TwoSided).ok(),
                ks_two_sample(&codes(c), &codes(o)).ok(),
            )
        }
        _ => (None, None),
    };
    SummaryReport {
        options: opts.clone(),
        treatments,
        hot_hand,
        hot_hand_chi2,
        hot_hand_binomial,
        overflight_test,
        risk_ks,
    }
}

fn pct(n: usize, total: usize) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{:.2}%", 100.0 * n as f64 / total as f64)
    }
}

fn fmt_ms(m: &MeanSd) -> String {
    if m.n == 0 {
        "-".into()
    } else {
        format!("{:.2} ({:.2})", m.mean, m.sd)
    }
}

fn fmt_test(t: &Option<TestResult>) -> String {
    match t {
        None => "not available".into(),
        Some(t) => {
            let mut s = format!("statistic {:.3}, p {:.4}", t.statistic, t.p_value);
            if let Some(df) = t.df {
                let _ = write!(s, ", df {df}");
            }
            if let Some(z) = t.z {
                let _ = write!(s, ", Z {z:.3}");
            }
            s
        }
    }
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "not available".into(), |p| format!("{p:.3e}"))
}

impl SummaryReport {
    pub fn treatment(&self, t: Treatment) -> Option<&TreatmentSummary> {
        self.treatments.iter().find(|s| s.treatment == t)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let heads: Vec<String> = self.treatments.iter().map(|t| t.treatment.to_string()).collect();
        let row = |out: &mut String, label: &str, cells: Vec<String>| {
            let _ = write!(out, "{label:<28}");
            for c in cells {
                let _ = write!(out, "{c:>22}");
            }
            out.push('\n');
        };

        out.push_str("Rounds, value, earnings and crashes (mean (sd))\n");
        row(&mut out, "", heads.clone());
        row(&mut out, "sessions", self.treatments.iter().map(|t| t.sessions.to_string()).collect());
        row(&mut out, "rounds per junction", self.treatments.iter().map(|t| fmt_ms(&t.rounds_per_junction)).collect());
        row(&mut out, "information value", self.treatments.iter().map(|t| fmt_ms(&t.total_info)).collect());
        row(&mut out, "total value", self.treatments.iter().map(|t| fmt_ms(&t.total_value)).collect());
        row(&mut out, "earnings (euro)", self.treatments.iter().map(|t| fmt_ms(&t.earnings)).collect());
        row(&mut out, "crash rate", self.treatments.iter().map(|t| format!("{:.2}%", 100.0 * t.crash_rate)).collect());

        out.push_str("\nConfidence degrees (mean (sd))\n");
        row(&mut out, "", heads.clone());
        row(&mut out, "overconfidence", self.treatments.iter().map(|t| fmt_ms(&t.oc_degree)).collect());
        row(&mut out, "underconfidence", self.treatments.iter().map(|t| fmt_ms(&t.uc_degree)).collect());
        row(&mut out, "optimizing", self.treatments.iter().map(|t| fmt_ms(&t.opt_degree)).collect());
        row(&mut out, "rounds beyond optimum", self.treatments.iter().map(|t| fmt_ms(&t.overflight)).collect());

        out.push_str("\nBehavior categories\n");
        row(&mut out, "", heads.iter().cloned().chain(["total".to_string()]).collect());
        let grand: usize = self.treatments.iter().map(|t| t.categorized()).sum();
        for c in BehaviorCategory::ALL {
            let per: Vec<usize> = self.treatments.iter().map(|t| t.categories.get(&c).copied().unwrap_or(0)).collect();
            let total: usize = per.iter().sum();
            let cells = self
                .treatments
                .iter()
                .zip(&per)
                .map(|(t, &n)| {
                    if c == BehaviorCategory::Excluded {
                        n.to_string()
                    } else {
                        format!("{n} ({})", pct(n, t.categorized()))
                    }
                })
                .chain([if c == BehaviorCategory::Excluded { total.to_string() } else { format!("{total} ({})", pct(total, grand)) }])
                .collect();
            row(&mut out, c.as_str(), cells);
        }
        row(
            &mut out,
            "total",
            self.treatments.iter().map(|t| t.categorized().to_string()).chain([grand.to_string()]).collect(),
        );

        let h = &self.hot_hand;
        out.push_str("\nHot hand (started closed-loop junctions)\n");
        row(&mut out, "", vec!["not overconfident".into(), "overconfident".into(), "total".into()]);
        let r = |a: u64, b: u64| vec![a.to_string(), b.to_string(), (a + b).to_string()];
        row(&mut out, "no hot hand", r(h.no_hot_hand_not_oc, h.no_hot_hand_oc));
        row(&mut out, "hot hand", r(h.hot_hand_not_oc, h.hot_hand_oc));
        row(
            &mut out,
            "total",
            r(h.no_hot_hand_not_oc + h.hot_hand_not_oc, h.no_hot_hand_oc + h.hot_hand_oc),
        );
        let _ = writeln!(out, "chi-square: {}", fmt_test(&self.hot_hand_chi2));
        let _ = writeln!(out, "fallacy binomial p (null {}): {}", self.options.binomial_null, fmt_p(self.hot_hand_binomial));

        if self.treatments.iter().any(|t| !t.risk.is_empty()) {
            out.push_str("\nRisk attitudes\n");
            row(&mut out, "", heads.iter().cloned().chain(["total".to_string()]).collect());
            let grand: usize = self.treatments.iter().map(|t| t.risk_total()).sum();
            for a in Attitude::ALL {
                let per: Vec<usize> = self.treatments.iter().map(|t| t.risk.get(&a).copied().unwrap_or(0)).collect();
                let total: usize = per.iter().sum();
                let cells = self
                    .treatments
                    .iter()
                    .zip(&per)
                    .map(|(t, &n)| format!("{n} ({})", pct(n, t.risk_total())))
                    .chain([format!("{total} ({})", pct(total, grand))])
                    .collect();
                row(&mut out, a.as_str(), cells);
            }
        }

        out.push_str("\nTests\n");
        for t in &self.treatments {
            let _ = writeln!(
                out,
                "{}: overconfident subjects binomial p (null {}): {}",
                t.treatment,
                self.options.binomial_null,
                fmt_p(t.overconfident_binomial)
            );
            let _ = writeln!(
                out,
                "{}: underconfident subjects binomial p (null {}): {}",
                t.treatment,
                self.options.binomial_null,
                fmt_p(t.underconfident_binomial)
            );
            let _ = writeln!(out, "{}: overconfidence degree by risk attitude (Kruskal-Wallis): {}", t.treatment, fmt_test(&t.oc_by_risk));
            let _ = writeln!(out, "{}: underconfidence degree by risk attitude (Kruskal-Wallis): {}", t.treatment, fmt_test(&t.uc_by_risk));
        }
        let _ = writeln!(out, "rounds beyond optimum, closed vs open (Mann-Whitney): {}", fmt_test(&self.overflight_test));
        let _ = writeln!(out, "risk attitudes, closed vs open (Kolmogorov-Smirnov): {}", fmt_test(&self.risk_ks));
        out
    }

    /// Long-format tab-separated rows: `table`, `row`, `column`, `value`.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("table\trow\tcolumn\tvalue\n");
        let mut put = |table: &str, row: &str, col: &str, value: String| {
            let _ = writeln!(out, "{table}\t{row}\t{col}\t{value}");
        };
        let ms = |put: &mut dyn FnMut(&str, &str, &str, String), table: &str, row: &str, t: &str, m: &MeanSd| {
            put(table, row, &format!("{t}_n"), m.n.to_string());
            put(table, row, &format!("{t}_mean"), format!("{:.6}", m.mean));
            put(table, row, &format!("{t}_sd"), format!("{:.6}", m.sd));
        };
        for t in &self.treatments {
            let tn = t.treatment.as_str();
            put("outcomes", "sessions", tn, t.sessions.to_string());
            ms(&mut put, "outcomes", "rounds_per_junction", tn, &t.rounds_per_junction);
            ms(&mut put, "outcomes", "total_info", tn, &t.total_info);
            ms(&mut put, "outcomes", "total_value", tn, &t.total_value);
            ms(&mut put, "outcomes", "earnings", tn, &t.earnings);
            put("outcomes", "crash_rate", tn, format!("{:.6}", t.crash_rate));
            ms(&mut put, "degrees", "overconfidence", tn, &t.oc_degree);
            ms(&mut put, "degrees", "underconfidence", tn, &t.uc_degree);
            ms(&mut put, "degrees", "optimizing", tn, &t.opt_degree);
            ms(&mut put, "degrees", "rounds_beyond_optimum", tn, &t.overflight);
            for (c, n) in &t.categories {
                put("categories", c.as_str(), tn, n.to_string());
            }
            for (a, n) in &t.risk {
                put("risk", a.as_str(), tn, n.to_string());
            }
        }
        let h = &self.hot_hand;
        put("hot_hand", "no_hot_hand", "not_overconfident", h.no_hot_hand_not_oc.to_string());
        put("hot_hand", "no_hot_hand", "overconfident", h.no_hot_hand_oc.to_string());
        put("hot_hand", "hot_hand", "not_overconfident", h.hot_hand_not_oc.to_string());
        put("hot_hand", "hot_hand", "overconfident", h.hot_hand_oc.to_string());
        let mut test = |name: &str, t: &Option<TestResult>| {
            if let Some(t) = t {
                put("tests", name, "statistic", format!("{:.6}", t.statistic));
                put("tests", name, "p_value", format!("{:.6e}", t.p_value));
            }
        };
        test("hot_hand_chi2", &self.hot_hand_chi2);
        test("overflight_mann_whitney", &self.overflight_test);
        test("risk_ks", &self.risk_ks);
        for t in &self.treatments {
            test(&format!("{}_oc_by_risk", t.treatment), &t.oc_by_risk);
            test(&format!("{}_uc_by_risk", t.treatment), &t.uc_by_risk);
        }
        let mut p = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                put("tests", name, "p_value", format!("{v:.6e}"));
            }
        };
        p("hot_hand_binomial", self.hot_hand_binomial);
        for t in &self.treatments {
            p(&format!("{}_overconfident_binomial", t.treatment), t.overconfident_binomial);
            p(&format!("{}_underconfident_binomial", t.treatment), t.underconfident_binomial);
        }
        out
    }
}

//! Text and tab-separated renderings of command results.

use std::fmt::Write as _;

use surveil_core::api::SolveResponse;
use surveil_core::dp::{entries_text, entries_tsv};
use surveil_core::policy::{ExactEvaluation, PolicyStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// Aligned tables for reading.
    Text,
    /// Tab-separated values with a header row.
    Tabular,
}

pub fn solve(r: &SolveResponse, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Text => {
            let _ = writeln!(out, "optimal expected value    {:.6}", r.expected_value);
            let _ = writeln!(out, "heuristic expected value  {:.6}", r.heuristic_expected_value);
            let _ = writeln!(out, "gain from optimizing      {:.6}", r.expected_value - r.heuristic_expected_value);
            let _ = writeln!(out, "bellman residual          {:.3e}", r.bellman_residual);
            let _ = writeln!(out, "\nreachable states where the optimum departs from the heuristic: {}", r.disagreements.len());
            if !r.disagreements.is_empty() {
                let _ = writeln!(out, "{:>8} {:>5} {:>5} {:>6} {:>9}", "junction", "round", "sigma", "dp", "heuristic");
                for d in &r.disagreements {
                    let act = |fly: bool| if fly { "fly" } else { "stop" };
                    let _ = writeln!(
                        out,
                        "{:>8} {:>5} {:>5} {:>6} {:>9}",
                        d.junction,
                        d.round,
                        d.sigma,
                        act(d.dp_fly),
                        act(d.heuristic_fly)
                    );
                }
            }
            out.push('\n');
            out.push_str(&entries_text(&r.entries));
        }
        Format::Tabular => {
            out.push_str("# summary\nkey\tvalue\n");
            let _ = writeln!(out, "expected_value\t{:.12}", r.expected_value);
            let _ = writeln!(out, "heuristic_expected_value\t{:.12}", r.heuristic_expected_value);
            let _ = writeln!(out, "bellman_residual\t{:.6e}", r.bellman_residual);
            out.push_str("\n# disagreements\njunction\tround\tsigma\tdp_fly\theuristic_fly\n");
            for d in &r.disagreements {
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", d.junction, d.round, d.sigma, d.dp_fly, d.heuristic_fly);
            }
            out.push_str("\n# table\n");
            out.push_str(&entries_tsv(&r.entries));
        }
    }
    out
}

pub fn evaluations(evals: &[ExactEvaluation], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Text => {
            let _ = writeln!(
                out,
                "{:<40} {:>12} {:>10} {:>10} {:>12}",
                "policy", "E[V]", "sd", "survival", "rounds/junc"
            );
            for e in evals {
                let _ = writeln!(
                    out,
                    "{:<40} {:>12.4} {:>10.4} {:>10.4} {:>12.4}",
                    e.policy,
                    e.expected_value,
                    e.std_value,
                    e.survival_prob,
                    e.mean_rounds_per_junction()
                );
            }
        }
        Format::Tabular => {
            out.push_str("policy\texpected_value\tstd_value\tsurvival_prob\trounds_per_junction\n");
            for e in evals {
                let _ = writeln!(
                    out,
                    "{}\t{:.12}\t{:.12}\t{:.12}\t{:.12}",
                    e.policy,
                    e.expected_value,
                    e.std_value,
                    e.survival_prob,
                    e.mean_rounds_per_junction()
                );
            }
        }
    }
    out
}

pub fn stats(s: &PolicyStats, format: Format) -> String {
    let mut out = String::new();
    let rows: [(&str, String); 7] = [
        ("policy", s.policy.clone()),
        ("missions", s.n_missions.to_string()),
        ("mean_value", format!("{:.6}", s.mean_value)),
        ("std_value", format!("{:.6}", s.std_value)),
        ("std_error", format!("{:.6}", s.std_error())),
        ("crash_rate", format!("{:.6}", s.crash_rate)),
        ("rounds_per_junction", format!("{:.6}", s.mean_rounds_per_junction)),
    ];
    match format {
        Format::Text => {
            for (k, v) in &rows {
                let _ = writeln!(out, "{k:<22}{v}");
            }
            let _ = writeln!(out, "{:<22}{:.6}", "junctions_played", s.mean_junctions_played);
            out.push_str("\ninformation per junction\n");
            let total: u64 = s.info_distribution.values().sum();
            for (info, n) in &s.info_distribution {
                let _ = writeln!(out, "{info:>6} {n:>12} {:>8.4}", *n as f64 / total.max(1) as f64);
            }
        }
        Format::Tabular => {
            out.push_str("key\tvalue\n");
            for (k, v) in &rows {
                let _ = writeln!(out, "{k}\t{v}");
            }
            let _ = writeln!(out, "junctions_played\t{:.6}", s.mean_junctions_played);
            for (info, n) in &s.info_distribution {
                let _ = writeln!(out, "info_{info}\t{n}");
            }
        }
    }
    out
}

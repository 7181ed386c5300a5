// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON report envelope and the ranking table built from
//! several reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::stq::StqReport;
use crate::vpq::{aggregate_vpq, VpqReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "vipseval";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every report file carries the tool version, the configuration it ran
/// with and the metric rules in force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub config: Value,
    pub rules: Value,
    pub result: T,
}

impl<T> Envelope<T> {
    pub fn new(kind: &str, name: Option<String>, config: Value, rules: Value, result: T) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            tool: TOOL.into(),
            version: VERSION.into(),
            kind: kind.into(),
            name,
            config,
            rules,
            result,
        }
    }
}

impl<T: Serialize> Envelope<T> {
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

pub fn read_envelope(path: &Path) -> Result<Envelope<Value>> {
    let env: Envelope<Value> = crate::io::read_json(path)?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::file(
            path,
            format!("unsupported schema version {}", env.schema_version),
        ));
    }
    Ok(env)
}

/// One row of the ranking table. Scores are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingEntry {
    pub name: String,
    /// Window size → VPQ over that window.
    pub windows: BTreeMap<usize, f64>,
    pub stq: Option<f64>,
}

impl RankingEntry {
    pub fn vpq(&self) -> Option<f64> {
        let scores: Vec<f64> = self.windows.values().copied().collect();
        aggregate_vpq(&scores).ok()
    }

    /// Folds a VPQ or STQ report into this entry.
    pub fn absorb(&mut self, env: &Envelope<Value>) -> Result<()> {
        let json_err = |e: serde_json::Error| Error::InvalidArgument(format!("malformed {} report: {e}", env.kind));
        match env.kind.as_str() {
            "vpq" => {
                let r: VpqReport = serde_json::from_value(env.result.clone()).map_err(json_err)?;
                self.windows.extend(r.windows.iter().map(|w| (w.k, w.vpq)));
            }
            "stq" => {
                let r: StqReport = serde_json::from_value(env.result.clone()).map_err(json_err)?;
                self.stq = r.stq;
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "report kind '{other}' has no ranking columns"
                )))
            }
        }
        Ok(())
    }
}

/// Groups reports by name, in first-seen order.
pub fn entries_from_reports(reports: &[Envelope<Value>]) -> Result<Vec<RankingEntry>> {
    let mut entries: Vec<RankingEntry> = Vec::new();
    for (i, env) in reports.iter().enumerate() {
        let name = env.name.clone().unwrap_or_else(|| format!("run{}", i + 1));
        let pos = match entries.iter().position(|e| e.name == name) {
            Some(p) => p,
            None => {
                entries.push(RankingEntry {
                    name,
                    ..Default::default()
                });
                entries.len() - 1
            }
        };
        entries[pos].absorb(env)?;
    }
    Ok(entries)
}

/// Competition ranks (1, 2, 2, 4, …), higher is better; missing scores are
/// unranked.
fn ranks(scores: &[Option<f64>]) -> Vec<Option<usize>> {
    scores
        .iter()
        .map(|s| s.map(|v| 1 + scores.iter().flatten().filter(|&&o| o > v).count()))
        .collect()
}

fn cell(value: Option<f64>, rank: Option<usize>, scale: f64) -> String {
    match (value, rank) {
        (Some(v), Some(r)) => format!("{:.4} ({r})", v * scale),
        _ => "-".into(),
    }
}

/// Renders a Markdown ranking table ordered by overall VPQ. VPQ columns are
/// percentages; STQ stays a fraction. Each cell carries its column rank.
pub fn render_ranking(entries: &[RankingEntry]) -> String {
    let ks: Vec<usize> = {
        let mut ks: Vec<usize> = entries.iter().flat_map(|e| e.windows.keys().copied()).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let overall: Vec<Option<f64>> = entries.iter().map(RankingEntry::vpq).collect();
    let overall_rank = ranks(&overall);
    type Column = (Vec<Option<f64>>, Vec<Option<usize>>);
    let window_ranks: Vec<Column> = ks
        .iter()
        .map(|k| {
            let col: Vec<Option<f64>> = entries.iter().map(|e| e.windows.get(k).copied()).collect();
            let r = ranks(&col);
            (col, r)
        })
        .collect();
    let stq: Vec<Option<f64>> = entries.iter().map(|e| e.stq).collect();
    let stq_rank = ranks(&stq);

    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        overall_rank[a]
            .unwrap_or(usize::MAX)
            .cmp(&overall_rank[b].unwrap_or(usize::MAX))
            .then_with(|| entries[a].name.cmp(&entries[b].name))
    });

    let mut out = String::from("| Rank | Name | VPQ |");
    for k in &ks {
        write!(out, " VPQ{k} |").unwrap();
    }
    out.push_str(" STQ |\n|---|---|---|");
    out.push_str(&"---|".repeat(ks.len() + 1));
    out.push('\n');
    for i in order {
        let rank = overall_rank[i].map_or("-".to_string(), |r| r.to_string());
        write!(
            out,
            "| {rank} | {} | {} |",
            entries[i].name,
            cell(overall[i], overall_rank[i], 100.0)
        )
        .unwrap();
        for (col, r) in &window_ranks {
            write!(out, " {} |", cell(col[i], r[i], 100.0)).unwrap();
        }
        writeln!(out, " {} |", cell(stq[i], stq_rank[i], 1.0)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, w: [f64; 4], stq: f64) -> RankingEntry {
        RankingEntry {
            name: name.into(),
            windows: [1, 2, 4, 6].into_iter().zip(w.map(|v| v / 100.0)).collect(),
            stq: Some(stq),
        }
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            ranks(&[Some(0.5), Some(0.7), None, Some(0.5)]),
            vec![Some(2), Some(1), None, Some(2)]
        );
    }

    #[test]
    fn table_rows_and_ranks() {
        let entries = vec![
            entry("b", [50.0, 50.0, 50.0, 50.0], 0.5),
            entry("a", [60.0, 40.0, 40.0, 40.0], 0.6),
        ];
        let t = render_ranking(&entries);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| Rank | Name | VPQ | VPQ1 | VPQ2 | VPQ4 | VPQ6 | STQ |");
        assert_eq!(
            lines[2],
            "| 1 | b | 50.0000 (1) | 50.0000 (2) | 50.0000 (1) | 50.0000 (1) | 50.0000 (1) | 0.5000 (2) |"
        );
        assert!(lines[3].starts_with("| 2 | a | 45.0000 (2) | 60.0000 (1) |"));
    }

    #[test]
    fn missing_stq_is_a_dash() {
        let mut e = entry("x", [1.0, 2.0, 3.0, 4.0], 0.0);
        e.stq = None;
        let t = render_ranking(&[e]);
        assert!(t.lines().nth(2).unwrap().ends_with("| - |"));
    }

    #[test]
    fn envelope_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let env = Envelope::new(
            "stq",
            Some("x".into()),
            serde_json::json!({}),
            serde_json::json!({}),
            StqReport {
                aq: Some(0.25),
                sq: 1.0,
                stq: Some(0.5),
                classes: vec![],
                tracks: vec![],
            },
        );
        env.write(&path).unwrap();
        let back = read_envelope(&path).unwrap();
        assert_eq!(back.kind, "stq");
        let entries = entries_from_reports(&[back]).unwrap();
        assert_eq!(entries[0].stq, Some(0.5));
        assert_eq!(entries[0].name, "x");
    }
}

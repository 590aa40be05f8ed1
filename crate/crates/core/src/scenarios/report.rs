//! Catalog report: per-scenario verdicts plus the threat-matrix coverage map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::verdict::ScenarioVerdict;

/// One row of the threat matrix and the scenarios that exercise it.
#[derive(Clone, Copy, Debug)]
pub struct MatrixRow {
    pub challenge: &'static str,
    pub issue: &'static str,
    pub reason: &'static str,
    pub scenarios: &'static [&'static str],
    /// How the row was read into a checkable property.
    pub reading: &'static str,
}

pub const THREAT_MATRIX: [MatrixRow; 7] = [
    MatrixRow {
        challenge: "Data protection in servers",
        issue: "Losing Data",
        reason: "Un-Secure Cryptography",
        scenarios: &["S9", "S10"],
        reading: "neither the cloud store nor the Agent vault alone yields any plaintext",
    },
    MatrixRow {
        challenge: "Secure Data Transmission",
        issue: "Losing Data",
        reason: "Un-Secure Transmission",
        scenarios: &["S6", "S7", "S8"],
        reading: "an active adversary on any user link decrypts nothing and gets nothing accepted",
    },
    MatrixRow {
        challenge: "User Authentication",
        issue: "Losing Data",
        reason: "Un-Secure Authentication",
        scenarios: &["S12", "S1"],
        reading: "forged requests and approvals are rejected; honest ones succeed",
    },
    MatrixRow {
        challenge: "User Authentication",
        issue: "Losing Server",
        reason: "Un-Predictable Attacks",
        scenarios: &["S5", "S12"],
        reading: "replays and arbitrary single-field tampering are rejected",
    },
    MatrixRow {
        challenge: "Access Controls",
        issue: "Un-Authorized",
        reason: "Un-Reliable Algorithm",
        scenarios: &["S2", "S4", "S11"],
        reading: "classification policy, owner denial, expiry and one-time use hold",
    },
    MatrixRow {
        challenge: "Access Controls",
        issue: "Un-Authorized",
        reason: "Lack of Scalability",
        scenarios: &["S3"],
        reading: "policy stays correct with 100 applicants and 100 data objects",
    },
    MatrixRow {
        challenge: "Lack of Resistance",
        issue: "Losing Data",
        reason: "Un-Efficient Resistance",
        scenarios: &["S12", "S9"],
        reading: "tampering is detected before any key material is used; a lost store alone leaks nothing",
    },
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected text or json)")]
    Format(String),
    #[error("report: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("threat matrix row {row:?} maps to no passing scenario")]
    Uncovered { row: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(ReportError::Format(other.to_owned())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub title: String,
    pub overall: bool,
    pub passed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Pass,
    Fail,
    NotRun,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub challenge: String,
    pub issue: String,
    pub reason: String,
    pub scenarios: Vec<String>,
    pub status: RowStatus,
    pub reading: String,
}

impl CoverageRow {
    pub fn label(&self) -> String {
        format!("{} / {} / {}", self.challenge, self.issue, self.reason)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub seed: Option<u64>,
    pub scenarios: Vec<ScenarioSummary>,
    pub coverage: Vec<CoverageRow>,
    pub passed: usize,
    pub total: usize,
    pub coverage_complete: bool,
}

impl Report {
    pub fn build(verdicts: &[ScenarioVerdict]) -> Self {
        let seeds: Vec<u64> = verdicts.iter().map(|v| v.seed).collect();
        let seed = seeds.first().copied().filter(|s| seeds.iter().all(|x| x == s));
        let scenarios: Vec<ScenarioSummary> = verdicts
            .iter()
            .map(|v| ScenarioSummary {
                id: v.scenario_id.clone(),
                title: v.title.clone(),
                overall: v.overall,
                passed: v.assertions.iter().filter(|a| a.passed).count(),
                total: v.assertions.len(),
            })
            .collect();
        let coverage: Vec<CoverageRow> = THREAT_MATRIX
            .iter()
            .map(|row| {
                let run: Vec<&ScenarioSummary> = scenarios
                    .iter()
                    .filter(|s| row.scenarios.contains(&s.id.as_str()))
                    .collect();
                let status = if run.is_empty() {
                    RowStatus::NotRun
                } else if run.iter().all(|s| s.overall) {
                    RowStatus::Pass
                } else {
                    RowStatus::Fail
                };
                CoverageRow {
                    challenge: row.challenge.into(),
                    issue: row.issue.into(),
                    reason: row.reason.into(),
                    scenarios: row.scenarios.iter().map(|s| s.to_string()).collect(),
                    status,
                    reading: row.reading.into(),
                }
            })
            .collect();
        let coverage_complete = coverage.iter().all(|r| r.status == RowStatus::Pass);
        Report {
            seed,
            passed: scenarios.iter().filter(|s| s.overall).count(),
            total: scenarios.len(),
            scenarios,
            coverage,
            coverage_complete,
        }
    }

    /// Fails unless every matrix row maps to at least one scenario that ran
    /// and passed.
    pub fn coverage_gate(&self) -> Result<(), ReportError> {
        match self.coverage.iter().find(|r| r.status != RowStatus::Pass) {
            Some(r) => Err(ReportError::Uncovered { row: r.label() }),
            None => Ok(()),
        }
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
                s.push('\n');
                s
            }
            ReportFormat::Text => self.render_text(),
        }
    }

    pub fn parse_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    fn render_text(&self) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut out = String::new();
        match self.seed {
            Some(seed) => out.push_str(&format!("dualguard scenario report (seed {seed})\n\n")),
            None => out.push_str("dualguard scenario report\n\n"),
        }
        out.push_str("Scenarios\n");
        for s in &self.scenarios {
            out.push_str(&format!(
                "  {:<4} {}  {:>2}/{:<2} {}\n",
                s.id,
                verdict(s.overall),
                s.passed,
                s.total,
                s.title
            ));
        }
        out.push_str("\nThreat matrix coverage\n");
        for r in &self.coverage {
            let status = match r.status {
                RowStatus::Pass => "PASS",
                RowStatus::Fail => "FAIL",
                RowStatus::NotRun => "NOT RUN",
            };
            out.push_str(&format!("  {} -> {}: {status}\n", r.label(), r.scenarios.join(", ")));
            out.push_str(&format!("      read as: {}\n", r.reading));
        }
        out.push_str(&format!(
            "\nResult: {}/{} scenarios passed; coverage {}\n",
            self.passed,
            self.total,
            if self.coverage_complete { "complete" } else { "incomplete" }
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::verdict::AssertionResult;
    use crate::scenarios::CATALOG;

    fn verdict(id: &str, ok: bool) -> ScenarioVerdict {
        ScenarioVerdict::new(id, "t", 7, vec![AssertionResult::new("a", ok, "d").state("scan")])
    }

    #[test]
    fn every_row_maps_to_catalog_scenarios() {
        for row in THREAT_MATRIX {
            assert!(!row.scenarios.is_empty());
            for s in row.scenarios {
                assert!(CATALOG.iter().any(|c| c.id == *s), "{s} not in catalog");
            }
        }
        let labels: Vec<String> = THREAT_MATRIX
            .iter()
            .map(|r| format!("{}/{}/{}", r.challenge, r.issue, r.reason))
            .collect();
        let mut unique = labels.clone();
        unique.dedup();
        assert_eq!(unique.len(), labels.len());
    }

    #[test]
    fn gate_needs_every_row_passing() {
        let all: Vec<ScenarioVerdict> = CATALOG.iter().map(|c| verdict(c.id, true)).collect();
        let r = Report::build(&all);
        assert!(r.coverage_gate().is_ok());
        assert_eq!(r.coverage.len(), THREAT_MATRIX.len());

        let mut some = all.clone();
        some.retain(|v| v.scenario_id != "S3");
        assert!(matches!(Report::build(&some).coverage_gate(), Err(ReportError::Uncovered { .. })));

        let mut failing = all;
        failing[8] = verdict("S9", false);
        let r = Report::build(&failing);
        assert!(r.coverage_gate().is_err());
        assert_eq!(r.coverage[0].status, RowStatus::Fail);
    }

    #[test]
    fn json_round_trips_and_text_lists_each_row_once() {
        let all: Vec<ScenarioVerdict> = CATALOG.iter().map(|c| verdict(c.id, true)).collect();
        let r = Report::build(&all);
        assert_eq!(Report::parse_json(&r.render(ReportFormat::Json)).unwrap(), r);
        let text = r.render(ReportFormat::Text);
        for row in &r.coverage {
            assert_eq!(text.matches(&row.label()).count(), 1);
        }
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}

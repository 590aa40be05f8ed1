use serde::{Deserialize, Serialize};

use crate::agent::AuditLog;
use crate::protocol::transcript::Transcript;

/// Where an assertion's support can be found.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// A record of the scenario transcript, by sequence number (= line index).
    Transcript { seq: u64 },
    /// An event of the scenario audit log, by index (= line index).
    Audit { index: u64 },
    /// A scan over final principal state.
    State { scan: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub evidence: Vec<Evidence>,
}

impl AssertionResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        AssertionResult {
            name: name.into(),
            passed,
            detail: detail.into(),
            evidence: Vec::new(),
        }
    }

    pub fn transcript(mut self, seqs: impl IntoIterator<Item = u64>) -> Self {
        self.evidence.extend(seqs.into_iter().map(|seq| Evidence::Transcript { seq }));
        self
    }

    pub fn audit(mut self, indices: impl IntoIterator<Item = u64>) -> Self {
        self.evidence.extend(indices.into_iter().map(|index| Evidence::Audit { index }));
        self
    }

    pub fn state(mut self, scan: impl Into<String>) -> Self {
        self.evidence.push(Evidence::State { scan: scan.into() });
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub scenario_id: String,
    pub title: String,
    pub seed: u64,
    pub assertions: Vec<AssertionResult>,
    pub overall: bool,
}

impl ScenarioVerdict {
    /// `overall` is the conjunction of the assertions; an assertion without
    /// evidence counts as failed.
    pub fn new(scenario_id: &str, title: &str, seed: u64, mut assertions: Vec<AssertionResult>) -> Self {
        for a in &mut assertions {
            if a.evidence.is_empty() && a.passed {
                a.passed = false;
                a.detail.push_str(" (no evidence cited)");
            }
        }
        let overall = !assertions.is_empty() && assertions.iter().all(|a| a.passed);
        ScenarioVerdict {
            scenario_id: scenario_id.to_owned(),
            title: title.to_owned(),
            seed,
            assertions,
            overall,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("verdicts serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Checks that every evidence pointer lands on a real record.
    pub fn resolve(&self, transcript: &Transcript, audit: &AuditLog) -> Result<(), String> {
        for a in &self.assertions {
            for e in &a.evidence {
                let ok = match e {
                    Evidence::Transcript { seq } => transcript.get(*seq).is_some_and(|r| r.seq == *seq),
                    Evidence::Audit { index } => audit.events().get(*index as usize).is_some_and(|ev| ev.index == *index),
                    Evidence::State { scan } => !scan.is_empty(),
                };
                if !ok {
                    return Err(format!("{} / {}: unresolved evidence {e:?}", self.scenario_id, a.name));
                }
            }
        }
        Ok(())
    }
}

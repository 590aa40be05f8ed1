//! TOML scenario files.
//!
//! ```toml
//! [scenario]
//! id = "S1"
//! title = "happy path"
//!
//! [[principal]]
//! id = "alice"
//!
//! [[principal]]
//! id = "bob"
//! approval = "allow"
//! allow = ["carol"]
//!
//! [[data]]
//! id = "d1"
//! owner = "alice"
//! classification = "shared"
//! size = 1024
//!
//! [[event]]
//! at = 20
//! kind = "request"
//! applicant = "bob"
//! data = "d1"
//!
//! [[link]]
//! a = "alice"
//! b = "cloud"
//! delay = 3
//!
//! [adversary]
//! tap = ["bob", "agent"]
//! policy = "random"
//! percent = 30
//!
//! [[assert]]
//! kind = "retrieved"
//! applicant = "bob"
//! data = "d1"
//! ```

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Action, Capabilities, RunReport, SimError, TapPolicy, World, WorldConfig};
use crate::actors::{ApprovalPolicy, RequestStatus, UserConfig};
use crate::crypto::Entropy;
use crate::protocol::transcript::TranscriptEvent;
use crate::protocol::{DataClassification, DataId, Decision, GrantId, PrincipalId, RequestId, Tick};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario {field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn invalid(field: &str, msg: impl Into<String>) -> SpecError {
    SpecError::Invalid {
        field: field.to_owned(),
        msg: msg.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioMeta {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub seed: Option<u64>,
    pub key_seed: Option<u64>,
    pub tick_budget: Option<Tick>,
    pub window: Option<Tick>,
    pub grant_ttl: Option<Tick>,
    pub delay: Option<Tick>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalSpec {
    pub id: String,
    /// approve, deny, manual or allow.
    #[serde(default = "default_approval")]
    pub approval: String,
    #[serde(default)]
    pub allow: Vec<String>,
    #[serde(default = "yes")]
    pub auto_redeem: bool,
    #[serde(default = "yes")]
    pub local_grant_checks: bool,
}

fn default_approval() -> String {
    "approve".into()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub id: String,
    pub owner: String,
    pub classification: String,
    /// Plaintext length; content is drawn from the run seed.
    #[serde(default)]
    pub size: usize,
    /// Literal plaintext; overrides `size`.
    pub text: Option<String>,
    #[serde(default)]
    pub register_at: Tick,
    /// Skip the automatic upload.
    #[serde(default)]
    pub no_upload: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub at: Tick,
    /// request, decide or redeem.
    pub kind: String,
    pub applicant: Option<String>,
    pub owner: Option<String>,
    pub data: Option<String>,
    pub request: Option<String>,
    pub decision: Option<String>,
    pub grant: Option<String>,
    #[serde(default)]
    pub purpose: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub delay: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub tap: Option<[String; 2]>,
    /// passive, drop or random.
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default = "default_percent")]
    pub percent: u32,
    pub capabilities: Option<Vec<String>>,
}

fn default_policy() -> String {
    "passive".into()
}

fn default_percent() -> u32 {
    30
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertionSpec {
    /// retrieved, not_retrieved, denied, no_violations, audit_verifies,
    /// quiescent, grants or rejections.
    pub kind: String,
    pub applicant: Option<String>,
    pub data: Option<String>,
    pub reason: Option<String>,
    pub count: Option<usize>,
    pub min: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioMeta,
    #[serde(default)]
    pub principal: Vec<PrincipalSpec>,
    #[serde(default)]
    pub data: Vec<DataSpec>,
    #[serde(default)]
    pub event: Vec<EventSpec>,
    #[serde(default)]
    pub link: Vec<LinkSpec>,
    pub adversary: Option<AdversarySpec>,
    #[serde(default, rename = "assert")]
    pub asserts: Vec<AssertionSpec>,
}

/// Result of checking one assertion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpecOutcome {
    pub assertion: String,
    pub passed: bool,
    pub detail: String,
}

fn classification(s: &str) -> Result<DataClassification, SpecError> {
    DataClassification::parse(s).ok_or_else(|| invalid("classification", format!("unknown value {s:?}")))
}

fn need<'a>(v: &'a Option<String>, field: &str) -> Result<&'a str, SpecError> {
    v.as_deref().ok_or_else(|| invalid(field, "missing"))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let f: ScenarioFile = toml::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<(), SpecError> {
        let principals: Vec<&str> = self.principal.iter().map(|p| p.id.as_str()).collect();
        for d in &self.data {
            classification(&d.classification)?;
            if !principals.contains(&d.owner.as_str()) {
                return Err(invalid("data.owner", format!("{} is not a principal", d.owner)));
            }
        }
        for p in &self.principal {
            if !["approve", "deny", "manual", "allow"].contains(&p.approval.as_str()) {
                return Err(invalid("principal.approval", format!("unknown value {:?}", p.approval)));
            }
        }
        for e in &self.event {
            match e.kind.as_str() {
                "request" => {
                    need(&e.applicant, "event.applicant")?;
                    need(&e.data, "event.data")?;
                }
                "decide" => {
                    need(&e.owner, "event.owner")?;
                    need(&e.request, "event.request")?;
                    Decision::parse(need(&e.decision, "event.decision")?)
                        .ok_or_else(|| invalid("event.decision", "expected approve or deny"))?;
                }
                "redeem" => {
                    need(&e.applicant, "event.applicant")?;
                    need(&e.grant, "event.grant")?;
                }
                other => return Err(invalid("event.kind", format!("unknown value {other:?}"))),
            }
        }
        if let Some(a) = &self.adversary {
            if !["passive", "drop", "random"].contains(&a.policy.as_str()) {
                return Err(invalid("adversary.policy", format!("unknown value {:?}", a.policy)));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files serialize")
    }

    /// Plaintext for each data object under `seed`.
    pub fn plaintexts(&self, seed: u64) -> BTreeMap<DataId, Vec<u8>> {
        self.data
            .iter()
            .map(|d| {
                let bytes = match &d.text {
                    Some(t) => t.as_bytes().to_vec(),
                    None => {
                        let mut b = vec![0u8; d.size];
                        Entropy::derive(seed, &format!("plaintext:{}", d.id)).fill_bytes(&mut b);
                        b
                    }
                };
                (DataId::new(d.id.clone()), bytes)
            })
            .collect()
    }

    pub fn world_config(&self, seed: u64, key_seed: Option<u64>) -> WorldConfig {
        let m = &self.scenario;
        let mut c = WorldConfig::new(seed).with_key_seed(key_seed.or(m.key_seed).unwrap_or(seed));
        if let Some(b) = m.tick_budget {
            c.tick_budget = b;
        }
        if let Some(w) = m.window {
            c.window = w;
        }
        if let Some(t) = m.grant_ttl {
            c.grant_ttl = t;
        }
        if let Some(d) = m.delay {
            c.default_delay = d.max(1);
        }
        c
    }

    /// Builds the world and schedules every event.
    pub fn build(&self, seed: u64, key_seed: Option<u64>) -> Result<World, SpecError> {
        let mut w = World::new(self.world_config(seed, key_seed))?;
        for p in &self.principal {
            let mut cfg = UserConfig::new(p.id.as_str());
            cfg.approval = match p.approval.as_str() {
                "deny" => ApprovalPolicy::Deny,
                "manual" => ApprovalPolicy::Manual,
                "allow" => ApprovalPolicy::Allow(p.allow.iter().map(|s| PrincipalId::new(s.clone())).collect()),
                _ => ApprovalPolicy::Approve,
            };
            cfg.auto_redeem = p.auto_redeem;
            cfg.local_grant_checks = p.local_grant_checks;
            w.add_user(cfg)?;
        }
        if let Some(a) = &self.adversary {
            let caps = match &a.capabilities {
                None => Capabilities::default(),
                Some(list) => {
                    let has = |c: &str| list.iter().any(|x| x == c);
                    Capabilities {
                        observe: has("observe"),
                        drop: has("drop"),
                        modify: has("modify"),
                        inject: has("inject"),
                    }
                }
            };
            let policy = match a.policy.as_str() {
                "drop" => TapPolicy::DropAll,
                "random" => TapPolicy::Random { percent: a.percent },
                _ => TapPolicy::Passive,
            };
            let tap = a
                .tap
                .as_ref()
                .map(|[x, y]| (PrincipalId::new(x.clone()), PrincipalId::new(y.clone())));
            w.add_adversary(tap.as_ref().map(|(x, y)| (x, y)), caps, policy)?;
            let known = self.data.iter().map(|d| DataId::new(d.id.clone())).collect();
            if let Some(adv) = w.adversary_mut() {
                adv.set_known_data(known);
            }
        }
        for l in &self.link {
            w.set_delay(&PrincipalId::new(l.a.clone()), &PrincipalId::new(l.b.clone()), l.delay)?;
        }
        let plaintexts = self.plaintexts(seed);
        for d in &self.data {
            let owner = PrincipalId::new(d.owner.clone());
            let data = DataId::new(d.id.clone());
            w.schedule(
                d.register_at,
                Action::RegisterData {
                    owner: owner.clone(),
                    data: data.clone(),
                    classification: classification(&d.classification)?,
                },
            );
            if !d.no_upload {
                w.schedule(
                    d.register_at,
                    Action::UploadWhenReady {
                        owner,
                        plaintext: plaintexts[&data].clone(),
                        data,
                    },
                );
            }
        }
        for e in &self.event {
            let action = match e.kind.as_str() {
                "request" => Action::Request {
                    applicant: PrincipalId::new(need(&e.applicant, "event.applicant")?),
                    data: DataId::new(need(&e.data, "event.data")?),
                    purpose: e.purpose.clone(),
                },
                "decide" => Action::Decide {
                    owner: PrincipalId::new(need(&e.owner, "event.owner")?),
                    request: RequestId::new(need(&e.request, "event.request")?),
                    decision: Decision::parse(need(&e.decision, "event.decision")?)
                        .ok_or_else(|| invalid("event.decision", "expected approve or deny"))?,
                },
                _ => Action::Redeem {
                    applicant: PrincipalId::new(need(&e.applicant, "event.applicant")?),
                    grant: GrantId::new(need(&e.grant, "event.grant")?),
                },
            };
            w.schedule(e.at, action);
        }
        Ok(w)
    }

    /// Evaluates every `[[assert]]` against a finished run.
    pub fn check(&self, w: &World, run: &RunReport, seed: u64) -> Vec<SpecOutcome> {
        let plaintexts = self.plaintexts(seed);
        self.asserts.iter().map(|a| check_one(a, w, run, &plaintexts)).collect()
    }
}

fn check_one(a: &AssertionSpec, w: &World, run: &RunReport, plaintexts: &BTreeMap<DataId, Vec<u8>>) -> SpecOutcome {
    let applicant = a.applicant.as_deref().map(PrincipalId::new);
    let data = a.data.as_deref().map(DataId::new);
    let label = match (&a.applicant, &a.data) {
        (Some(p), Some(d)) => format!("{} {p} {d}", a.kind),
        _ => a.kind.clone(),
    };
    let outcome = |passed: bool, detail: String| SpecOutcome {
        assertion: label.clone(),
        passed,
        detail,
    };
    let user = applicant.as_ref().and_then(|p| w.user(p));
    match a.kind.as_str() {
        "retrieved" | "not_retrieved" => {
            let (Some(u), Some(d)) = (user, &data) else {
                return outcome(false, "needs an existing applicant and data".into());
            };
            let expected = plaintexts.get(d);
            let got = u.applicant.retrieved_for(d);
            let hit = got.iter().any(|p| Some(&p.to_vec()) == expected);
            if a.kind == "retrieved" {
                outcome(hit, format!("{} retrieval(s), exact match {hit}", got.len()))
            } else {
                outcome(got.is_empty(), format!("{} retrieval(s)", got.len()))
            }
        }
        "denied" => {
            let (Some(u), Some(d)) = (user, &data) else {
                return outcome(false, "needs an existing applicant and data".into());
            };
            let reasons: Vec<String> = u
                .applicant
                .requests
                .values()
                .filter(|r| &r.data_id == d)
                .filter_map(|r| match &r.status {
                    RequestStatus::Denied(why) => Some(why.clone()),
                    _ => None,
                })
                .collect();
            outcome(!reasons.is_empty(), format!("denials: {reasons:?}"))
        }
        "no_violations" => outcome(
            w.violations().is_empty(),
            format!("{} adversary envelope(s) accepted", w.violations().len()),
        ),
        "audit_verifies" => match w.agent().audit().verify() {
            Ok(()) => outcome(true, format!("{} event(s)", w.agent().audit().len())),
            Err(e) => outcome(false, e.to_string()),
        },
        "quiescent" => outcome(
            !run.budget_exhausted,
            format!("stopped at tick {} after {} deliveries", run.end, run.deliveries),
        ),
        "grants" => {
            let n = w.agent().grants().count();
            let want = a.count.unwrap_or(0);
            outcome(n == want, format!("{n} grant(s), expected {want}"))
        }
        "rejections" => {
            let reason = a.reason.clone().unwrap_or_default();
            let n = w
                .transcript()
                .records
                .iter()
                .filter(|r| r.event == TranscriptEvent::Reject && r.outcome.as_deref() == Some(reason.as_str()))
                .count();
            let min = a.min.unwrap_or(1);
            outcome(n >= min, format!("{n} rejection(s) for {reason}, expected at least {min}"))
        }
        other => outcome(false, format!("unknown assertion kind {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[scenario]
id = "T1"
title = "sample"

[[principal]]
id = "alice"

[[principal]]
id = "bob"
approval = "allow"
allow = ["carol"]

[[data]]
id = "d1"
owner = "alice"
classification = "shared"
size = 16

[[event]]
at = 20
kind = "request"
applicant = "bob"
data = "d1"

[[assert]]
kind = "retrieved"
applicant = "bob"
data = "d1"
"#;

    #[test]
    fn parses_and_round_trips() {
        let f = ScenarioFile::parse(SAMPLE).unwrap();
        assert_eq!(f.principal.len(), 2);
        assert_eq!(f.principal[1].allow, vec!["carol".to_string()]);
        assert_eq!(f.event[0].at, 20);
        let again = ScenarioFile::parse(&f.to_toml()).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = SAMPLE.replace("classification = \"shared\"", "classification = \"secret\"");
        assert!(matches!(ScenarioFile::parse(&bad), Err(SpecError::Invalid { .. })));
        let bad = SAMPLE.replace("kind = \"request\"", "kind = \"steal\"");
        assert!(matches!(ScenarioFile::parse(&bad), Err(SpecError::Invalid { .. })));
        let bad = SAMPLE.replace("owner = \"alice\"", "owner = \"zed\"");
        assert!(matches!(ScenarioFile::parse(&bad), Err(SpecError::Invalid { .. })));
        let bad = format!("{SAMPLE}\nsurprise = 1\n");
        assert!(ScenarioFile::parse(&bad).is_err());
    }

    #[test]
    fn plaintexts_follow_the_seed() {
        let f = ScenarioFile::parse(SAMPLE).unwrap();
        let a = f.plaintexts(1);
        assert_eq!(a, f.plaintexts(1));
        assert_ne!(a, f.plaintexts(2));
        assert_eq!(a[&DataId::new("d1")].len(), 16);
    }
}

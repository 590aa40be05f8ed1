//! S1..S12.

use std::collections::{BTreeMap, BTreeSet};

use super::attacks::{
    forgery_campaign, mitm_campaign, mutation_sweep, store_state, vault_state, ForgeryKind, ForgeryTarget,
};
use super::verdict::AssertionResult;
use super::{vault_master, RunOptions, ScenarioError};
use crate::actors::RequestStatus;
use crate::agent::{open_vault, AuditAction, AuditEvent, AuditLog};
use crate::protocol::transcript::TranscriptEvent;
use crate::protocol::{DataClassification, DataId, Decision, MsgType, PrincipalId, RequestId};
use crate::simnet::{
    adversary_try_decrypt, Action, AdversaryState, DataSpec, EventSpec, PrincipalSpec, RunReport, ScenarioFile,
    TapOp, TapPolicy, TryCache, World, ADVERSARY_ID,
};

const BASE_FILES: [(&str, &str); 12] = [
    ("S1", include_str!("catalog/s01.toml")),
    ("S2", include_str!("catalog/s02.toml")),
    ("S3", include_str!("catalog/s03.toml")),
    ("S4", include_str!("catalog/s04.toml")),
    ("S5", include_str!("catalog/s05.toml")),
    ("S6", include_str!("catalog/s06.toml")),
    ("S7", include_str!("catalog/s07.toml")),
    ("S8", include_str!("catalog/s08.toml")),
    ("S9", include_str!("catalog/s09.toml")),
    ("S10", include_str!("catalog/s10.toml")),
    ("S11", include_str!("catalog/s11.toml")),
    ("S12", include_str!("catalog/s12.toml")),
];

/// The embedded TOML base file of a catalog scenario.
pub fn base_file(id: &str) -> Option<&'static str> {
    BASE_FILES.iter().find(|(i, _)| i.eq_ignore_ascii_case(id)).map(|(_, t)| *t)
}

fn load(id: &str) -> Result<ScenarioFile, ScenarioError> {
    let text = base_file(id).ok_or_else(|| ScenarioError::Setup(format!("no base file for {id}")))?;
    Ok(ScenarioFile::parse(text)?)
}

fn build(spec: &ScenarioFile, opts: &RunOptions) -> Result<World, ScenarioError> {
    Ok(spec.build(opts.seed, Some(opts.key_seed))?)
}

fn p(id: &str) -> PrincipalId {
    PrincipalId::new(id)
}

/// Accept records for envelopes of type `t` delivered to `to`.
fn accepted(w: &World, t: MsgType, to: &str) -> Vec<u64> {
    let records = &w.transcript().records;
    records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Accept && r.to == to)
        .filter(|r| {
            r.ref_seq
                .and_then(|s| records.get(s as usize))
                .and_then(|o| o.envelope.as_ref())
                .is_some_and(|e| e.msg_type == t.as_str())
        })
        .map(|r| r.seq)
        .collect()
}

fn rejected(w: &World, reason: &str) -> Vec<u64> {
    w.transcript()
        .records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Reject && r.outcome.as_deref() == Some(reason))
        .map(|r| r.seq)
        .collect()
}

fn audit_find(log: &AuditLog, f: impl Fn(&AuditEvent) -> bool) -> Vec<u64> {
    log.events().iter().filter(|e| f(e)).map(|e| e.index).collect()
}

fn is(action: AuditAction) -> impl Fn(&AuditEvent) -> bool {
    move |e| e.action == action && e.is_ok()
}

/// The file's `[[assert]]` entries as verdict assertions, each citing the
/// records it looked at.
fn spec_results(spec: &ScenarioFile, w: &World, run: &RunReport, seed: u64) -> Vec<AssertionResult> {
    let audit = w.agent().audit();
    spec.asserts
        .iter()
        .zip(spec.check(w, run, seed))
        .map(|(a, o)| {
            let r = AssertionResult::new(o.assertion, o.passed, o.detail);
            let who = a.applicant.as_deref().unwrap_or_default();
            let r = match a.kind.as_str() {
                "retrieved" => r.transcript(accepted(w, MsgType::DataResponse, who)),
                "denied" => r.transcript(accepted(w, MsgType::Denial, who)),
                "rejections" => r.transcript(rejected(w, a.reason.as_deref().unwrap_or_default())),
                "grants" => r.audit(audit_find(audit, is(AuditAction::GrantIssued))),
                "audit_verifies" => r.audit(audit.events().last().map(|e| e.index)),
                _ => r,
            };
            r.state(format!("{} over final principal state", a.kind))
        })
        .collect()
}

/// Checks every issued grant against its stated basis. Returns the audit
/// indices examined and a description of each unsupported grant.
pub fn soundness_violations(w: &World) -> (Vec<u64>, Vec<String>) {
    let events = w.agent().audit().events();
    let mut checked = Vec::new();
    let mut bad = Vec::new();
    for (i, g) in events.iter().enumerate() {
        if g.action != AuditAction::GrantIssued || !g.is_ok() {
            continue;
        }
        checked.push(g.index);
        let (data, applicant, request) = (
            g.subject("data").unwrap_or_default(),
            g.subject("applicant").unwrap_or_default(),
            g.subject("request").unwrap_or_default(),
        );
        let entry = w.agent().entry(&DataId::new(data));
        let ok = match (g.subject("basis"), entry) {
            (Some("public"), Some(e)) => e.classification == DataClassification::Public,
            (Some("owner_self"), Some(e)) => e.owner_id.as_str() == applicant,
            (Some("owner_approval"), Some(e)) => {
                let verified = events[..i].iter().any(|v| {
                    v.action == AuditAction::OwnerVerified
                        && v.is_ok()
                        && v.subject("request") == Some(request)
                        && v.subject("decision") == Some(Decision::Approve.as_str())
                });
                let decided = w.user(&e.owner_id).is_some_and(|u| {
                    u.owner
                        .decisions
                        .iter()
                        .any(|(r, d)| r.as_str() == request && *d == Decision::Approve)
                });
                e.classification == DataClassification::Shared && verified && decided
            }
            _ => false,
        };
        if !ok {
            bad.push(format!("audit {}: grant for {applicant} on {data} lacks its basis", g.index));
        }
    }
    (checked, bad)
}

fn soundness(w: &World) -> AssertionResult {
    let (checked, bad) = soundness_violations(w);
    AssertionResult::new(
        "every grant has a valid basis",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} grant(s) checked", checked.len())
        } else {
            bad.join("; ")
        },
    )
    .audit(checked)
    .state("grant basis against classification, owner and owner decisions")
}

fn no_action_errors(w: &World) -> AssertionResult {
    AssertionResult::new(
        "every scheduled action succeeded",
        w.action_errors().is_empty(),
        format!("{:?}", w.action_errors()),
    )
    .state("scheduled action errors")
}

/// Runs S1 with an arbitrary plaintext and returns what the applicant got.
pub fn s1_roundtrip(plaintext: &[u8], seed: u64, key_seed: u64) -> Result<Option<Vec<u8>>, ScenarioError> {
    let mut spec = load("S1")?;
    spec.data[0].no_upload = true;
    let mut w = spec.build(seed, Some(key_seed))?;
    let data = DataId::new(spec.data[0].id.clone());
    w.schedule(
        0,
        Action::UploadWhenReady {
            owner: p(&spec.data[0].owner),
            data: data.clone(),
            plaintext: plaintext.to_vec(),
        },
    );
    w.run();
    Ok(w.user(&p("bob"))
        .and_then(|u| u.applicant.retrieved_for(&data).first().map(|b| b.to_vec())))
}

type Outcome = Result<(World, Vec<AssertionResult>), ScenarioError>;

pub(super) fn s1(opts: &RunOptions) -> Outcome {
    let spec = load("S1")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let audit = w.agent().audit();
    let verified = audit_find(audit, |e| {
        is(AuditAction::OwnerVerified)(e) && e.subject("decision") == Some("approve")
    });
    let basis = audit_find(audit, |e| {
        is(AuditAction::GrantIssued)(e) && e.subject("basis") == Some("owner_approval")
    });
    out.push(
        AssertionResult::new(
            "grant follows a double-verified approval",
            verified.len() == 1 && basis.len() == 1 && verified[0] < basis[0],
            format!("owner_verified {verified:?}, grant {basis:?}"),
        )
        .audit(verified.iter().chain(&basis).copied())
        .transcript(accepted(&w, MsgType::OwnerVerification, "agent")),
    );
    let rejects: Vec<u64> = w
        .transcript()
        .records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Reject)
        .map(|r| r.seq)
        .collect();
    out.push(
        AssertionResult::new("no envelope rejected", rejects.is_empty(), format!("{} rejection(s)", rejects.len()))
            .transcript(rejects)
            .state("transcript scan for reject records"),
    );
    let bob = w.user(&p("bob")).expect("bob exists");
    out.push(
        AssertionResult::new(
            "applicant holds no data private key after redeeming",
            bob.applicant.held_keys() == 0 && w.cloud().counters().redemptions == 1,
            format!("{} key(s) held, {} redemption(s)", bob.applicant.held_keys(), w.cloud().counters().redemptions),
        )
        .transcript(accepted(&w, MsgType::CloudAccess, "cloud"))
        .state("bob applicant state and cloud counters"),
    );
    out.push(soundness(&w));
    out.push(no_action_errors(&w));
    Ok((w, out))
}

pub(super) fn s2(opts: &RunOptions) -> Outcome {
    let spec = load("S2")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let audit = w.agent().audit();
    let denials = audit_find(audit, |e| is(AuditAction::Denied)(e) && e.subject("applicant") == Some("bob"));
    let reasons: Vec<&str> = denials
        .iter()
        .filter_map(|i| audit.events()[*i as usize].subject("reason"))
        .collect();
    out.push(
        AssertionResult::new(
            "bob is denied as not the owner",
            reasons == ["not_owner"],
            format!("denial reasons {reasons:?}"),
        )
        .audit(denials)
        .transcript(accepted(&w, MsgType::Denial, "bob")),
    );
    let forwarded = audit_find(audit, is(AuditAction::ApprovalForwarded));
    let asked: usize = w.users().map(|u| u.owner.pending.len() + u.owner.decisions.len()).sum();
    out.push(
        AssertionResult::new(
            "the owner is never asked about Private data",
            forwarded.is_empty() && asked == 0,
            format!("{} approval request(s) forwarded, {asked} seen by owners", forwarded.len()),
        )
        .audit(forwarded)
        .state("owner pending approvals and decisions"),
    );
    let self_grants = audit_find(audit, |e| {
        is(AuditAction::GrantIssued)(e) && e.subject("basis") == Some("owner_self") && e.subject("applicant") == Some("alice")
    });
    out.push(
        AssertionResult::new("owner self-access is granted", self_grants.len() == 1, format!("{self_grants:?}"))
            .audit(self_grants)
            .transcript(accepted(&w, MsgType::DataResponse, "alice")),
    );
    let plaintext = &spec.plaintexts(opts.seed)[&DataId::new("diary")];
    let bob = w.user(&p("bob")).expect("bob exists");
    let leaked = contains(&bob.applicant.state_bytes(), plaintext) || contains(&bob.owner.state_bytes(), plaintext);
    out.push(
        AssertionResult::new(
            "bob holds neither key nor plaintext",
            bob.applicant.held_keys() == 0 && !leaked,
            format!("{} key(s), plaintext present {leaked}", bob.applicant.held_keys()),
        )
        .state("byte scan of bob's owner and applicant state"),
    );
    out.push(soundness(&w));
    out.push(no_action_errors(&w));
    Ok((w, out))
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

const S3_OWNERS: usize = 10;
const S3_OBJECTS: usize = 100;
const S3_APPLICANTS: usize = 100;

fn s3_class(i: usize) -> DataClassification {
    match i % 3 {
        0 => DataClassification::Public,
        1 => DataClassification::Private,
        _ => DataClassification::Shared,
    }
}

fn s3_spec() -> Result<ScenarioFile, ScenarioError> {
    let mut spec = load("S3")?;
    let even: Vec<String> = (0..S3_APPLICANTS).step_by(2).map(|j| format!("a{j:02}")).collect();
    for k in 0..S3_OWNERS {
        spec.principal.push(PrincipalSpec {
            id: format!("o{k}"),
            approval: "allow".into(),
            allow: even.clone(),
            auto_redeem: true,
            local_grant_checks: true,
        });
    }
    for j in 0..S3_APPLICANTS {
        spec.principal.push(PrincipalSpec {
            id: format!("a{j:02}"),
            approval: "approve".into(),
            allow: Vec::new(),
            auto_redeem: true,
            local_grant_checks: true,
        });
    }
    for i in 0..S3_OBJECTS {
        spec.data.push(DataSpec {
            id: format!("d{i:02}"),
            owner: format!("o{}", i % S3_OWNERS),
            classification: s3_class(i).as_str().into(),
            size: 64,
            text: None,
            register_at: (i / 20) as u64,
            no_upload: false,
        });
    }
    let request = |at: u64, applicant: String, data: String| EventSpec {
        at,
        kind: "request".into(),
        applicant: Some(applicant),
        owner: None,
        data: Some(data),
        request: None,
        decision: None,
        grant: None,
        purpose: "bulk".into(),
    };
    for j in 0..S3_APPLICANTS {
        spec.event.push(request(40 + (j / 10) as u64, format!("a{j:02}"), format!("d{j:02}")));
    }
    for k in 0..S3_OWNERS {
        // The owner's first Private object.
        let i = (0..S3_OBJECTS)
            .find(|i| i % S3_OWNERS == k && s3_class(*i) == DataClassification::Private)
            .expect("every owner has Private data");
        spec.event.push(request(52, format!("o{k}"), format!("d{i:02}")));
    }
    Ok(spec)
}

/// What the policy must decide for a request by `applicant` for object `i`.
fn s3_expected(i: usize, applicant: &str) -> Result<(), &'static str> {
    let owner = format!("o{}", i % S3_OWNERS);
    let even = applicant
        .strip_prefix('a')
        .and_then(|n| n.parse::<usize>().ok())
        .is_some_and(|n| n % 2 == 0);
    match s3_class(i) {
        DataClassification::Public => Ok(()),
        _ if applicant == owner => Ok(()),
        DataClassification::Private => Err("not_owner"),
        DataClassification::Shared if even => Ok(()),
        DataClassification::Shared => Err("owner_denied"),
    }
}

pub(super) fn s3(opts: &RunOptions) -> Outcome {
    let spec = s3_spec()?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let plaintexts = spec.plaintexts(opts.seed);
    let mut mismatches = Vec::new();
    let mut expected_grants = 0;
    let mut retrieved_ok = 0;
    let mut requests = 0;
    for u in w.users() {
        for r in u.applicant.requests.values() {
            requests += 1;
            let i: usize = r.data_id.as_str()[1..].parse().expect("generated ids");
            let want = s3_expected(i, u.config().id.as_str());
            let got = match &r.status {
                RequestStatus::Granted(_) => Ok(()),
                RequestStatus::Denied(why) => Err(why.as_str()),
                RequestStatus::Pending => Err("pending"),
            };
            if want.is_ok() {
                expected_grants += 1;
                let exact = u
                    .applicant
                    .retrieved_for(&r.data_id)
                    .iter()
                    .any(|b| *b == plaintexts[&r.data_id].as_slice());
                retrieved_ok += usize::from(exact);
            }
            if want != got {
                mismatches.push(format!("{} on {}: want {want:?}, got {got:?}", u.config().id, r.data_id));
            }
        }
    }
    let expected_requests = S3_APPLICANTS + S3_OWNERS;
    out.push(
        AssertionResult::new(
            "every decision matches the classification table",
            mismatches.is_empty() && requests == expected_requests,
            if mismatches.is_empty() {
                format!("{requests}/{expected_requests} requests decided as expected")
            } else {
                mismatches.join("; ")
            },
        )
        .audit(audit_find(w.agent().audit(), |e| {
            is(AuditAction::GrantIssued)(e) || is(AuditAction::Denied)(e)
        }))
        .state("applicant request status against an independent decision table"),
    );
    let grants = w.agent().grants().count();
    out.push(
        AssertionResult::new(
            "every granted applicant retrieved the exact plaintext",
            grants == expected_grants && retrieved_ok == expected_grants,
            format!("{grants} grant(s), {retrieved_ok} exact retrieval(s), {expected_grants} expected"),
        )
        .state("applicant retrievals against generated plaintexts"),
    );
    let audit = w.agent().audit();
    let forwarded = audit_find(audit, is(AuditAction::ApprovalForwarded));
    let shared_data: BTreeSet<String> = (0..S3_OBJECTS)
        .filter(|i| s3_class(*i) == DataClassification::Shared)
        .map(|i| format!("d{i:02}"))
        .collect();
    let stray: Vec<u64> = forwarded
        .iter()
        .copied()
        .filter(|i| !shared_data.contains(audit.events()[*i as usize].subject("data").unwrap_or_default()))
        .collect();
    let public_grants = audit_find(audit, |e| is(AuditAction::GrantIssued)(e) && e.subject("basis") == Some("public"));
    let public_requests = (0..S3_APPLICANTS).filter(|j| s3_class(*j) == DataClassification::Public).count();
    out.push(
        AssertionResult::new(
            "Public requests are granted without asking the owner",
            stray.is_empty() && public_grants.len() == public_requests,
            format!(
                "{} public grant(s) for {public_requests} request(s); {} approval request(s) forwarded, {} not for Shared data",
                public_grants.len(),
                forwarded.len(),
                stray.len()
            ),
        )
        .audit(public_grants.into_iter().chain(stray)),
    );
    out.push(
        AssertionResult::new(
            "all objects stored and nothing left pending",
            w.cloud().records().count() == S3_OBJECTS && w.agent().pending().count() == 0,
            format!("{} record(s), {} pending", w.cloud().records().count(), w.agent().pending().count()),
        )
        .state("cloud records and agent pending approvals"),
    );
    out.push(soundness(&w));
    out.push(no_action_errors(&w));
    Ok((w, out))
}

pub(super) fn s4(opts: &RunOptions) -> Outcome {
    let spec = load("S4")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let audit = w.agent().audit();
    let forwarded = audit_find(audit, is(AuditAction::ApprovalForwarded));
    let verified = audit_find(audit, |e| is(AuditAction::OwnerVerified)(e) && e.subject("decision") == Some("deny"));
    let denied = audit_find(audit, |e| is(AuditAction::Denied)(e) && e.subject("reason") == Some("owner_denied"));
    out.push(
        AssertionResult::new(
            "the owner's verified denial reaches the applicant",
            forwarded.len() == 1 && verified.len() == 1 && denied.len() == 1,
            format!("forwarded {forwarded:?}, verified deny {verified:?}, denied {denied:?}"),
        )
        .audit(forwarded.iter().chain(&verified).chain(&denied).copied())
        .transcript(accepted(&w, MsgType::Denial, "bob")),
    );
    let bob = w.user(&p("bob")).expect("bob exists");
    let c = w.cloud().counters();
    out.push(
        AssertionResult::new(
            "no key material leaves the Agent",
            bob.applicant.held_keys() == 0 && bob.applicant.grants.is_empty() && c.redemptions == 0,
            format!("bob holds {} grant(s); {} redemption(s)", bob.applicant.grants.len(), c.redemptions),
        )
        .state("bob applicant state and cloud counters"),
    );
    out.push(soundness(&w));
    out.push(no_action_errors(&w));
    Ok((w, out))
}

pub(super) fn s5(opts: &RunOptions) -> Outcome {
    let spec = load("S5")?;
    let mut w = build(&spec, opts)?;
    let late = w.config().window + 8;
    let seed = opts.seed;
    if let Some(a) = w.adversary_mut() {
        a.set_strategy(TapPolicy::Script(vec![TapOp::Duplicate, TapOp::ReplayLater(late)]), seed);
    }
    let mut run = w.run();
    let redemption = w
        .transcript()
        .envelopes()
        .find(|(_, e)| e.msg_type == MsgType::CloudAccess)
        .map(|(_, e)| e);
    let mut replayed_redemption = None;
    if let Some(e) = redemption {
        let seq = w.inject(&p("bob"), &p("cloud"), e, 1)?;
        replayed_redemption = Some(seq);
        let more = w.run();
        run.end = more.end;
        run.deliveries += more.deliveries;
        run.budget_exhausted |= more.budget_exhausted;
    }
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let records = &w.transcript().records;
    let injects: Vec<u64> = records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Inject)
        .map(|r| r.seq)
        .collect();
    let verdicts: Vec<(u64, Option<String>)> = records
        .iter()
        .filter(|r| r.ref_seq.is_some_and(|s| injects.contains(&s)))
        .filter(|r| matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject))
        .map(|r| (r.seq, r.outcome.clone()))
        .collect();
    let all_rejected = verdicts.len() == injects.len() && verdicts.iter().all(|(_, o)| o.is_some());
    out.push(
        AssertionResult::new(
            "every replayed envelope is rejected",
            injects.len() == 3 && all_rejected && replayed_redemption.is_some(),
            format!("{} replay(s): {verdicts:?}", injects.len()),
        )
        .transcript(injects.iter().copied().chain(verdicts.iter().map(|(s, _)| *s))),
    );
    let bob = w.user(&p("bob")).expect("bob exists");
    let responses = accepted(&w, MsgType::DataResponse, "bob");
    out.push(
        AssertionResult::new(
            "exactly one redemption and one response",
            responses.len() == 1 && w.cloud().counters().redemptions == 1 && bob.applicant.retrieved.len() == 1,
            format!(
                "{} response(s), {} redemption(s)",
                responses.len(),
                w.cloud().counters().redemptions
            ),
        )
        .transcript(responses)
        .state("cloud counters and bob retrievals"),
    );
    out.push(soundness(&w));
    Ok((w, out))
}

fn mitm(id: &str, opts: &RunOptions) -> Outcome {
    let spec = load(id)?;
    let base = build(&spec, opts)?;
    let (passive, campaign) = mitm_campaign(&base, opts.strategies, opts.seed)?;
    let run = RunReport {
        start: 0,
        end: passive.now(),
        deliveries: 0,
        budget_exhausted: passive.now() > passive.config().tick_budget,
    };
    let mut out = spec_results(&spec, &passive, &run, opts.seed);
    let link = base
        .adversary()
        .and_then(|a| a.link())
        .cloned()
        .ok_or_else(|| ScenarioError::Setup(format!("{id} needs a tapped link")))?;
    let link_records: Vec<u64> = passive
        .transcript()
        .records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Send && r.link == campaign.link)
        .map(|r| r.seq)
        .collect();
    let executed = campaign.interception_strategies + campaign.injection_strategies;
    out.push(
        AssertionResult::new(
            "every strategy was executed",
            executed == opts.strategies && campaign.actions > 0,
            format!(
                "{} interception and {} injection strategies on {} ({} tap point(s), {} injection point(s), {} adversary action(s))",
                campaign.interception_strategies,
                campaign.injection_strategies,
                campaign.link,
                campaign.tap_points,
                campaign.injection_points,
                campaign.actions
            ),
        )
        .transcript(campaign.passive_captures.iter().copied())
        .state(format!("strategy log sample: {:?}", campaign.sample)),
    );
    out.push(
        AssertionResult::new(
            "adversary decrypts nothing",
            campaign.successes.is_empty(),
            format!(
                "{} success(es) over {} decryption attempt(s)",
                campaign.successes.len(),
                campaign.decrypt_attempts
            ),
        )
        .state("adversary key ring against every captured ciphertext, after each strategy"),
    );
    let violations: Vec<String> = campaign
        .violations
        .iter()
        .take(5)
        .map(|(i, v)| format!("strategy {i}: {} accepted by {}", v.msg_type, v.to))
        .collect();
    out.push(
        AssertionResult::new(
            "no adversary-made envelope is accepted",
            campaign.violations.is_empty(),
            format!("{} violation(s) {violations:?}", campaign.violations.len()),
        )
        .state("recipient verdicts on modified and injected envelopes, every strategy"),
    );
    let tapped = crate::simnet::link_name(&link.a, &link.b);
    let sweep = mutation_sweep(&base, |d| d.link == tapped, opts.seed);
    let carries = !link_records.is_empty();
    out.push(
        AssertionResult::new(
            "every single-field mutation on the link is rejected",
            sweep.accepted.is_empty() && sweep.cloud_side_effects.is_empty() && (sweep.mutations > 0 || !carries),
            if carries {
                format!(
                    "{} mutation(s) of {} delivery(ies), {} accepted; reasons {:?}",
                    sweep.mutations,
                    sweep.deliveries,
                    sweep.accepted.len(),
                    sweep.reasons
                )
            } else {
                format!("{tapped} carries no protocol traffic; nothing to mutate")
            },
        )
        .transcript(sweep.swept.iter().copied())
        .state(format!("sends on {tapped}: {}", link_records.len())),
    );
    out.push(soundness(&passive));
    Ok((passive, out))
}

pub(super) fn s6(opts: &RunOptions) -> Outcome {
    mitm("S6", opts)
}

pub(super) fn s7(opts: &RunOptions) -> Outcome {
    mitm("S7", opts)
}

pub(super) fn s8(opts: &RunOptions) -> Outcome {
    mitm("S8", opts)
}

fn recovered_ids(state: &AdversaryState, cache: &mut TryCache, plaintexts: &BTreeMap<DataId, Vec<u8>>) -> (usize, usize, BTreeSet<DataId>) {
    let report = adversary_try_decrypt(state, cache);
    let exact = report
        .recovered
        .iter()
        .filter(|r| plaintexts.get(&r.data_id) == Some(&r.plaintext))
        .map(|r| r.data_id.clone())
        .collect();
    (report.successes.len(), report.data_bearing(), exact)
}

fn ceiling(w: &World, spec: &ScenarioFile, opts: &RunOptions, cache: &mut TryCache) -> Result<AssertionResult, ScenarioError> {
    let plaintexts = spec.plaintexts(opts.seed);
    let mut probe = w.clone();
    let vault = probe.agent_mut().save_vault(&vault_master(opts.seed))?;
    let records = open_vault(&vault, &vault_master(opts.seed)).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let mut both = store_state(&w.cloud().persist(), w).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    both.private_keys.extend(vault_state(&records, w).private_keys);
    let (_, _, exact) = recovered_ids(&both, cache, &plaintexts);
    let all: BTreeSet<DataId> = plaintexts.keys().cloned().collect();
    Ok(AssertionResult::new(
        "holding both stores recovers every plaintext",
        exact == all,
        format!("{}/{} object(s) recovered exactly", exact.len(), all.len()),
    )
    .state("oracle completeness: persisted store plus decrypted vault"))
}

pub(super) fn s9(opts: &RunOptions) -> Outcome {
    let spec = load("S9")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let plaintexts = spec.plaintexts(opts.seed);
    let store = w.cloud().persist();
    let state = store_state(&store, &w).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let mut cache = TryCache::default();
    let (successes, _, exact) = recovered_ids(&state, &mut cache, &plaintexts);
    out.push(
        AssertionResult::new(
            "the persisted store alone yields nothing",
            successes == 0 && exact.is_empty() && state.records.len() == plaintexts.len(),
            format!(
                "{} record(s), {} key(s) tried, {successes} success(es), {} plaintext(s)",
                state.records.len(),
                state.private_keys.len() + 2 * state.public_keys.len(),
                exact.len()
            ),
        )
        .state("adversary oracle over the persisted cloud store"),
    );
    let leaked: Vec<String> = w
        .agent()
        .entries()
        .filter(|e| contains(store.as_bytes(), crate::protocol::transcript::b64(&e.data_keypair.private.to_der()).as_bytes()))
        .map(|e| e.data_id.to_string())
        .collect();
    let plain: Vec<&DataId> = plaintexts
        .iter()
        .filter(|(_, b)| contains(store.as_bytes(), b))
        .map(|(d, _)| d)
        .collect();
    out.push(
        AssertionResult::new(
            "the store holds no data private key and no plaintext",
            leaked.is_empty() && plain.is_empty(),
            format!("keys {leaked:?}, plaintexts {plain:?}"),
        )
        .state("byte scan of the persisted store"),
    );
    out.push(ceiling(&w, &spec, opts, &mut cache)?);
    Ok((w, out))
}

pub(super) fn s10(opts: &RunOptions) -> Outcome {
    let spec = load("S10")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let plaintexts = spec.plaintexts(opts.seed);
    let master = vault_master(opts.seed);
    let vault = w.clone().agent_mut().save_vault(&master)?;
    let records = open_vault(&vault, &master).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let state = vault_state(&records, &w);
    let mut cache = TryCache::default();
    let (successes, _, exact) = recovered_ids(&state, &mut cache, &plaintexts);
    let data_keys = records.iter().filter(|r| matches!(r, crate::agent::VaultRecord::Data { .. })).count();
    out.push(
        AssertionResult::new(
            "the vault alone yields no plaintext",
            exact.is_empty() && successes == 0 && data_keys == plaintexts.len(),
            format!(
                "{} private key(s) ({data_keys} data keys), {successes} success(es), {} plaintext(s)",
                state.private_keys.len(),
                exact.len()
            ),
        )
        .state("adversary oracle over the decrypted vault"),
    );
    let mut wire = state.clone();
    wire.envelopes = w
        .transcript()
        .envelopes()
        .map(|(seq, e)| (format!("transcript seq {seq}"), e))
        .collect();
    let report = adversary_try_decrypt(&wire, &mut cache);
    let opened: Vec<String> = report.successes.iter().take(4).map(|s| s.source.clone()).collect();
    out.push(
        AssertionResult::new(
            "the vault plus every wire envelope yields no stored data",
            report.data_bearing() == 0 && report.recovered.is_empty(),
            format!(
                "{} envelope(s); {} non-data opening(s) such as {opened:?}; {} data-bearing",
                wire.envelopes.len(),
                report.successes.len(),
                report.data_bearing()
            ),
        )
        .transcript(w.transcript().envelopes().map(|(s, _)| s).take(1))
        .state("adversary oracle over the decrypted vault and the full transcript"),
    );
    out.push(ceiling(&w, &spec, opts, &mut cache)?);
    Ok((w, out))
}

pub(super) fn s11(opts: &RunOptions) -> Outcome {
    let spec = load("S11")?;
    let mut w = build(&spec, opts)?;
    let run = w.run();
    let mut out = spec_results(&spec, &w, &run, opts.seed);
    let records = &w.transcript().records;
    let access: Vec<(u64, Option<String>)> = records
        .iter()
        .filter(|r| r.event == TranscriptEvent::Send && r.to == "cloud")
        .filter(|r| r.envelope.as_ref().is_some_and(|e| e.msg_type == MsgType::CloudAccess.as_str()))
        .filter_map(|s| {
            records
                .iter()
                .find(|r| r.ref_seq == Some(s.seq) && matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject))
                .map(|r| (r.tick, r.outcome.clone()))
        })
        .collect();
    let verdict_seqs: Vec<u64> = rejected(&w, "bad_grant")
        .into_iter()
        .chain(accepted(&w, MsgType::CloudAccess, "cloud"))
        .collect();
    let ok = |o: &Option<String>| o.is_none();
    let first_tick: Vec<&(u64, Option<String>)> = access.iter().filter(|(t, _)| *t == access[0].0).collect();
    out.push(
        AssertionResult::new(
            "concurrent duplicate redemptions: exactly one succeeds",
            first_tick.len() == 2 && first_tick.iter().filter(|(_, o)| ok(o)).count() == 1,
            format!("{first_tick:?}"),
        )
        .transcript(verdict_seqs.iter().copied()),
    );
    out.push(
        AssertionResult::new(
            "a second redemption and an expired grant are refused",
            access.len() == 4 && access[2..].iter().all(|(_, o)| o.as_deref() == Some("bad_grant")),
            format!("{access:?}"),
        )
        .transcript(rejected(&w, "bad_grant")),
    );
    let expired = audit_find(w.agent().audit(), |e| {
        is(AuditAction::GrantExpired)(e) && e.subject("grant") == Some("grant-2")
    });
    out.push(
        AssertionResult::new("the Agent records grant-2 as expired", expired.len() == 1, format!("{expired:?}"))
            .audit(expired),
    );
    let bob = w.user(&p("bob")).expect("bob exists");
    let c = w.cloud().counters();
    out.push(
        AssertionResult::new(
            "one response for the one successful redemption",
            c.redemptions == 1 && bob.applicant.retrieved.len() == 1 && accepted(&w, MsgType::DataResponse, "bob").len() == 1,
            format!("{} redemption(s), {} retrieval(s)", c.redemptions, bob.applicant.retrieved.len()),
        )
        .transcript(accepted(&w, MsgType::DataResponse, "bob"))
        .state("cloud counters and bob retrievals"),
    );
    out.push(soundness(&w));
    out.push(no_action_errors(&w));
    Ok((w, out))
}

pub(super) fn s12(opts: &RunOptions) -> Outcome {
    let spec = load("S12")?;
    let base = build(&spec, opts)?;
    let (alice, bob, data) = (p("alice"), p("bob"), DataId::new("vault-doc"));
    let request = RequestId::new("bob-r1");

    // Full flow for the sweep: alice approves at tick 40.
    let mut full = base.clone();
    full.schedule(
        40,
        Action::Decide {
            owner: alice.clone(),
            request: request.clone(),
            decision: Decision::Approve,
        },
    );
    let sweep = mutation_sweep(&full, |_| true, opts.seed);
    let mut out = Vec::new();
    out.push(
        AssertionResult::new(
            "every single-field mutation on every link is rejected",
            sweep.accepted.is_empty() && sweep.mutations > 0,
            format!(
                "{} mutation(s) of {} delivery(ies); accepted {:?}; reasons {:?}",
                sweep.mutations,
                sweep.deliveries,
                sweep.accepted.iter().take(5).collect::<Vec<_>>(),
                sweep.reasons
            ),
        )
        .transcript(sweep.swept.iter().copied()),
    );
    out.push(
        AssertionResult::new(
            "rejected mutations never reach cloud key material",
            sweep.cloud_side_effects.is_empty(),
            format!("{:?}", sweep.cloud_side_effects),
        )
        .state("cloud counters before and after each mutated delivery"),
    );
    full.run();
    let text = full.agent().audit().to_jsonl();
    let mut bytes = text.clone().into_bytes();
    let mut undetected = Vec::new();
    for i in 0..bytes.len() {
        bytes[i] ^= 0x01;
        let detected = match std::str::from_utf8(&bytes) {
            Ok(t) => AuditLog::from_jsonl(t).is_err(),
            Err(_) => true,
        };
        if !detected {
            undetected.push(i);
        }
        bytes[i] ^= 0x01;
    }
    out.push(
        AssertionResult::new(
            "every single-byte change to the audit log is detected",
            undetected.is_empty() && !text.is_empty(),
            format!("{} byte(s) flipped, {} undetected", text.len(), undetected.len()),
        )
        .audit(full.agent().audit().events().iter().map(|e| e.index))
        .state("bit flip at every byte of the serialized audit log"),
    );

    let mut w = base;
    let run = w.run();
    let pending = w.agent().pending().any(|p| p.request_id == request);
    let target = ForgeryTarget {
        owner: &alice,
        applicant: &bob,
        data: &data,
        request: &request,
    };
    let forgeries = forgery_campaign(&mut w, &target, opts.forgeries, opts.seed)?;
    let per_kind: Vec<String> = forgeries
        .per_kind
        .iter()
        .map(|(k, (n, reasons))| format!("{} x{n} -> {reasons:?}", k.as_str()))
        .collect();
    let kinds_ok = ForgeryKind::ALL.iter().all(|k| {
        forgeries.per_kind.get(k).map_or(opts.forgeries < ForgeryKind::ALL.len(), |(n, reasons)| {
            reasons.get(k.expected().as_str()) == Some(n)
        })
    });
    out.push(
        AssertionResult::new(
            "each forgery is rejected with its reason code",
            pending && kinds_ok && forgeries.unexpected.is_empty() && forgeries.attempts == opts.forgeries,
            format!("{}; unexpected {:?}", per_kind.join("; "), forgeries.unexpected.iter().take(5).collect::<Vec<_>>()),
        )
        .transcript(forgeries.verdict_seqs.iter().copied()),
    );
    out.push(
        AssertionResult::new(
            "no grant issued during the forgery campaign",
            forgeries.grants_after == forgeries.grants_before,
            format!("{} grant(s) before, {} after", forgeries.grants_before, forgeries.grants_after),
        )
        .audit(audit_find(w.agent().audit(), is(AuditAction::GrantIssued)))
        .state("agent grant table"),
    );
    let at = w.now() + 1;
    w.schedule(
        at,
        Action::Decide {
            owner: alice,
            request,
            decision: Decision::Approve,
        },
    );
    let after = w.run();
    let run = RunReport {
        end: after.end,
        deliveries: run.deliveries + after.deliveries,
        budget_exhausted: run.budget_exhausted || after.budget_exhausted,
        ..run
    };
    let plaintext = &spec.plaintexts(opts.seed)[&data];
    let got = w
        .user(&bob)
        .is_some_and(|u| u.applicant.retrieved_for(&data).contains(&plaintext.as_slice()));
    out.push(
        AssertionResult::new("the honest approval still goes through", got, format!("bob retrieved vault-doc: {got}"))
            .transcript(accepted(&w, MsgType::DataResponse, "bob")),
    );
    let mut spec_out = spec_results(&spec, &w, &run, opts.seed);
    spec_out.append(&mut out);
    spec_out.push(soundness(&w));
    let mallory_grants = audit_find(w.agent().audit(), |e| {
        is(AuditAction::GrantIssued)(e) && e.subject("applicant") == Some(ADVERSARY_ID)
    });
    spec_out.push(
        AssertionResult::new("the adversary holds no grant", mallory_grants.is_empty(), format!("{mallory_grants:?}"))
            .audit(mallory_grants)
            .state("grant table scan for the adversary"),
    );
    Ok((w, spec_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_base_file_parses_with_matching_id() {
        for c in super::super::CATALOG.iter() {
            let f = load(c.id).unwrap();
            assert_eq!(f.scenario.id, c.id);
            assert_eq!(f.scenario.title, c.title);
        }
    }

    #[test]
    fn s3_table_is_independent_of_the_agent() {
        assert_eq!(s3_expected(0, "a01"), Ok(()));
        assert_eq!(s3_expected(1, "a02"), Err("not_owner"));
        assert_eq!(s3_expected(1, "o1"), Ok(()));
        assert_eq!(s3_expected(2, "a02"), Ok(()));
        assert_eq!(s3_expected(2, "a03"), Err("owner_denied"));
        let spec = s3_spec().unwrap();
        assert_eq!(spec.principal.len(), S3_OWNERS + S3_APPLICANTS);
        assert_eq!(spec.data.len(), S3_OBJECTS);
        assert_eq!(spec.event.len(), S3_APPLICANTS + S3_OWNERS);
    }
}

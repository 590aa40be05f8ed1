//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria run on separate threads.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::thread;

use dualguard::agent::{open_vault, AuditLog, VaultRecord};
use dualguard::crypto::{
    decrypt_labeled, encrypt_labeled, gen_symmetric_key, open, seal, sign, sym_decrypt, sym_encrypt, unwrap_key,
    verify, wrap_key, CryptoError, Entropy, KeyOwner, KeyPair, KeySource, SymCiphertext, SymmetricKey,
};
use dualguard::protocol::transcript::{Transcript, TranscriptEvent};
use dualguard::protocol::{
    authenticate_envelope, make_envelope, open_payload, DataId, Directory, MsgType, PrincipalId, ReplayCache,
    RequestId,
};
use dualguard::scenarios::cli::cli_main;
use dualguard::scenarios::{
    base_file, forgery_campaign, mitm_campaign, mutation_sweep, run_scenario, s1_roundtrip, store_state, vault_master,
    vault_state, ForgeryKind, ForgeryTarget, Report, RunOptions, DEFAULT_KEY_SEED, THREAT_MATRIX,
};
use dualguard::simnet::{adversary_try_decrypt, ScenarioFile, TryCache, World};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

const SEED: u64 = 7;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "end-to-end identity", c1_identity),
        (2, "MITM immunity", c2_mitm),
        (3, "store separation", c3_store_separation),
        (4, "authentication soundness", c4_forgeries),
        (5, "replay and lifecycle", c5_replay_lifecycle),
        (6, "crypto correctness", c6_crypto),
        (7, "determinism", c7_determinism),
        (8, "coverage gate", c8_coverage),
    ];
    let results: Vec<(u32, &str, Outcome)> = thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(n, name, f)| (*n, *name, s.spawn(f)))
            .collect();
        handles
            .into_iter()
            .map(|(n, name, h)| {
                let o = h.join().unwrap_or_else(|p| {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    outcome(false, format!("panicked: {msg}"))
                });
                (n, name, o)
            })
            .collect()
    });
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("criterion {n} ({name}): {} - {}", if o.ok { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.ok);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if let Ok((first, _)) = catalog_runs() {
        let _ = std::fs::remove_dir_all(first.parent().unwrap());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn base_world(id: &str, seed: u64) -> (ScenarioFile, World) {
    let spec = ScenarioFile::parse(base_file(id).unwrap()).unwrap();
    let w = spec.build(seed, Some(DEFAULT_KEY_SEED)).unwrap();
    (spec, w)
}

/// Plaintexts come from a generator local to this test, not from the
/// scenario machinery.
fn c1_identity() -> Outcome {
    const SIZES: [usize; 4] = [0, 1, 1024, 1 << 20];
    let mut rng = ChaCha20Rng::seed_from_u64(0xacce97);
    let mut mismatches = Vec::new();
    for i in 0..100u64 {
        let mut plaintext = vec![0u8; SIZES[i as usize % SIZES.len()]];
        rng.fill_bytes(&mut plaintext);
        match s1_roundtrip(&plaintext, 1000 + i, DEFAULT_KEY_SEED) {
            Ok(Some(got)) if got == plaintext => {}
            Ok(Some(got)) => mismatches.push(format!("run {i}: {} bytes back for {}", got.len(), plaintext.len())),
            Ok(None) => mismatches.push(format!("run {i}: nothing retrieved")),
            Err(e) => mismatches.push(format!("run {i}: {e}")),
        }
    }
    let s1 = run_scenario("S1", &RunOptions::new(SEED)).unwrap();
    outcome(
        mismatches.is_empty() && s1.verdict.overall,
        format!(
            "100 runs over sizes {SIZES:?}, {} mismatch(es) {:?}; S1 verdict {}",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>(),
            s1.verdict.overall
        ),
    )
}

fn c2_mitm() -> Outcome {
    const STRATEGIES: usize = 1000;
    let per_link: Vec<(String, bool, String)> = thread::scope(|s| {
        let handles: Vec<_> = ["S6", "S7", "S8"]
            .into_iter()
            .map(|id| {
                s.spawn(move || {
                    let (_, base) = base_world(id, SEED);
                    let (passive, c) = mitm_campaign(&base, STRATEGIES, SEED).unwrap();
                    let sweep = mutation_sweep(&base, |d| d.link == c.link, SEED);
                    let traffic = passive
                        .transcript()
                        .records
                        .iter()
                        .filter(|r| r.event == TranscriptEvent::Send && r.link == c.link)
                        .count();
                    // A link with no protocol traffic has nothing to mutate.
                    let swept = if traffic == 0 { sweep.deliveries == 0 } else { sweep.mutations > 0 };
                    let ok = c.interception_strategies + c.injection_strategies >= STRATEGIES
                        && c.successes.is_empty()
                        && c.violations.is_empty()
                        && swept
                        && sweep.accepted.is_empty()
                        && sweep.cloud_side_effects.is_empty();
                    let detail = format!(
                        "{}: {} strategies ({} tap, {} inject), {} successes, {} accepted forgeries; {} mutations of {} deliveries, {} accepted",
                        c.link,
                        c.interception_strategies + c.injection_strategies,
                        c.interception_strategies,
                        c.injection_strategies,
                        c.successes.len(),
                        c.violations.len(),
                        sweep.mutations,
                        sweep.deliveries,
                        sweep.accepted.len()
                    );
                    (id.to_string(), ok, detail)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    outcome(
        per_link.iter().all(|(_, ok, _)| *ok),
        per_link
            .iter()
            .map(|(id, _, d)| format!("{id} {d}"))
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn c3_store_separation() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for id in ["S9", "S10"] {
        let (spec, mut w) = base_world(id, SEED);
        w.run();
        let plaintexts = spec.plaintexts(SEED);
        let master = vault_master(SEED);
        let vault_text = w.clone().agent_mut().save_vault(&master).unwrap();
        let records: Vec<VaultRecord> = open_vault(&vault_text, &master).unwrap();
        let exact = |state: &dualguard::simnet::AdversaryState, cache: &mut TryCache| {
            let r = adversary_try_decrypt(state, cache);
            let hits: BTreeSet<DataId> = r
                .recovered
                .iter()
                .filter(|x| plaintexts.get(&x.data_id) == Some(&x.plaintext))
                .map(|x| x.data_id.clone())
                .collect();
            (r.recovered.len(), hits)
        };
        let mut cache = TryCache::default();
        let store = store_state(&w.cloud().persist(), &w).unwrap();
        let vault = vault_state(&records, &w);
        let (alone, _) = if id == "S9" { exact(&store, &mut cache) } else { exact(&vault, &mut cache) };
        let mut both = store.clone();
        both.private_keys.extend(vault.private_keys.clone());
        let (_, ceiling) = exact(&both, &mut cache);
        let all: BTreeSet<DataId> = plaintexts.keys().cloned().collect();
        let verdict = run_scenario(id, &RunOptions::new(SEED)).unwrap().verdict.overall;
        ok &= alone == 0 && ceiling == all && verdict;
        details.push(format!(
            "{id}: {alone} recoveries from the {} alone, ceiling {}/{} exact, verdict {verdict}",
            if id == "S9" { "store" } else { "vault" },
            ceiling.len(),
            all.len()
        ));
    }
    outcome(ok, details.join("; "))
}

fn c4_forgeries() -> Outcome {
    const ATTEMPTS: usize = 1000;
    // Expected reason codes, written out independently of the campaign code.
    let expected: BTreeMap<&str, &str> = [
        ("forged_access_request", "bad_signature"),
        ("forged_owner_verification", "bad_signature"),
        ("foreign_approval", "bad_signature"),
        ("wrong_outer_key", "bad_signature"),
        ("mismatched_binding", "bad_data_binding"),
    ]
    .into();
    let (_, mut w) = base_world("S12", SEED);
    w.run();
    let (alice, bob, data, request) = (
        PrincipalId::new("alice"),
        PrincipalId::new("bob"),
        DataId::new("vault-doc"),
        RequestId::new("bob-r1"),
    );
    let target = ForgeryTarget { owner: &alice, applicant: &bob, data: &data, request: &request };
    let r = forgery_campaign(&mut w, &target, ATTEMPTS, SEED).unwrap();
    let mut wrong = Vec::new();
    for kind in ForgeryKind::ALL {
        let want = expected[kind.as_str()];
        match r.per_kind.get(&kind) {
            Some((n, reasons)) if reasons.get(want) == Some(n) && *n > 0 => {}
            other => wrong.push(format!("{}: {other:?}", kind.as_str())),
        }
    }
    let grants = w
        .agent()
        .audit()
        .events()
        .iter()
        .filter(|e| e.action == dualguard::agent::AuditAction::GrantIssued)
        .count();
    let summary: Vec<String> = r
        .per_kind
        .iter()
        .map(|(k, (n, reasons))| format!("{} {n}x {reasons:?}", k.as_str()))
        .collect();
    outcome(
        r.attempts == ATTEMPTS && wrong.is_empty() && r.unexpected.is_empty() && r.grants_after == r.grants_before,
        format!(
            "{} attempts; {}; grants {} -> {} ({grants} in audit)",
            r.attempts,
            summary.join(", "),
            r.grants_before,
            r.grants_after
        ),
    )
}

fn verdicts_for(t: &Transcript, send: impl Fn(&dualguard::protocol::transcript::TranscriptRecord) -> bool) -> Vec<(u64, Option<String>)> {
    t.records
        .iter()
        .filter(|r| send(r))
        .filter_map(|s| {
            t.records
                .iter()
                .find(|r| r.ref_seq == Some(s.seq) && matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject))
                .map(|r| (r.tick, r.outcome.clone()))
        })
        .collect()
}

fn c5_replay_lifecycle() -> Outcome {
    let s5 = run_scenario("S5", &RunOptions::new(SEED)).unwrap();
    let replays = verdicts_for(&s5.transcript, |r| r.event == TranscriptEvent::Inject);
    let replay_ok = replays.len() >= 3
        && replays
            .iter()
            .all(|(_, o)| matches!(o.as_deref(), Some("replayed_nonce") | Some("stale_timestamp")));

    let s11 = run_scenario("S11", &RunOptions::new(SEED)).unwrap();
    let redemptions = verdicts_for(&s11.transcript, |r| {
        r.event == TranscriptEvent::Send
            && r.envelope.as_ref().is_some_and(|e| e.msg_type == MsgType::CloudAccess.as_str())
    });
    let mut by_tick: BTreeMap<u64, Vec<Option<String>>> = BTreeMap::new();
    for (t, o) in &redemptions {
        by_tick.entry(*t).or_default().push(o.clone());
    }
    let accepted = redemptions.iter().filter(|(_, o)| o.is_none()).count();
    let concurrent_ok = by_tick
        .values()
        .find(|v| v.len() > 1)
        .is_some_and(|v| v.iter().filter(|o| o.is_none()).count() == 1);
    let later_refused = redemptions.iter().skip(2).all(|(_, o)| o.as_deref() == Some("bad_grant"));
    outcome(
        replay_ok && s5.verdict.overall && concurrent_ok && later_refused && accepted == 1 && redemptions.len() == 4 && s11.verdict.overall,
        format!(
            "S5 replays {replays:?}; S11 redemptions {redemptions:?}, {accepted} accepted; verdicts S5 {} S11 {}",
            s5.verdict.overall, s11.verdict.overall
        ),
    )
}

struct Kat {
    key: &'static str,
    iv: &'static str,
    pt: &'static str,
    aad: &'static str,
    ct: &'static str,
    tag: &'static str,
}

// AES-256 vectors from the original GCM submission (test cases 13 to 16).
const KATS: [Kat; 4] = [
    Kat {
        key: "0000000000000000000000000000000000000000000000000000000000000000",
        iv: "000000000000000000000000",
        pt: "",
        aad: "",
        ct: "",
        tag: "530f8afbc74536b9a963b4f1c4cb738b",
    },
    Kat {
        key: "0000000000000000000000000000000000000000000000000000000000000000",
        iv: "000000000000000000000000",
        pt: "00000000000000000000000000000000",
        aad: "",
        ct: "cea7403d4d606b6e074ec5d3baf39d18",
        tag: "d0d1c8a799996bf0265b98b5d48ab919",
    },
    Kat {
        key: "feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308",
        iv: "cafebabefacedbaddecaf888",
        pt: "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
        aad: "",
        ct: "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad",
        tag: "b094dac5d93471bdec1a502270e3cc6c",
    },
    Kat {
        key: "feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308",
        iv: "cafebabefacedbaddecaf888",
        pt: "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
        aad: "feedfacedeadbeeffeedfacedeadbeefabaddad2",
        ct: "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662",
        tag: "76fc6ece0f4e1768cddf8853bb2d551b",
    },
];

fn kat_failures() -> Vec<String> {
    let mut bad = Vec::new();
    for (i, k) in KATS.iter().enumerate() {
        let h = |s: &str| hex::decode(s).unwrap();
        let key = SymmetricKey::from_bytes(h(k.key).try_into().unwrap(), &mut Entropy::derive(i as u64, "kat")).unwrap();
        let aad = h(k.aad);
        let mut ct = SymCiphertext {
            nonce_iv: h(k.iv).try_into().unwrap(),
            body: h(k.ct),
            auth_tag: h(k.tag).try_into().unwrap(),
            aad_hash: Sha256::digest(&aad).into(),
        };
        if sym_decrypt(&key, &ct, &aad).ok() != Some(h(k.pt)) {
            bad.push(format!("vector {i} does not decrypt to its plaintext"));
        }
        ct.auth_tag[0] ^= 1;
        if sym_decrypt(&key, &ct, &aad) != Err(CryptoError::AuthFailure) {
            bad.push(format!("vector {i} accepted with a modified tag"));
        }
    }
    bad
}

fn keys() -> &'static (KeyPair, KeyPair) {
    static KEYS: OnceLock<(KeyPair, KeyPair)> = OnceLock::new();
    KEYS.get_or_init(|| {
        let src = KeySource::Deterministic { key_seed: DEFAULT_KEY_SEED };
        (
            src.keypair("acceptance:a", KeyOwner::User).unwrap(),
            src.keypair("acceptance:b", KeyOwner::User).unwrap(),
        )
    })
}

fn flip(bytes: &mut [u8], pos: usize, bit: u8) {
    let i = pos % bytes.len();
    bytes[i] ^= 1 << (bit % 8);
}

/// Runs one property for `CASES` generated inputs.
fn property<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn c6_crypto() -> Outcome {
    let mut failures = kat_failures();
    let (a, b) = keys();
    let bytes = |max| proptest::collection::vec(any::<u8>(), 0..max);
    let results = [
        property("sym round trip and tamper", (bytes(512), bytes(64), any::<u64>(), any::<usize>(), any::<u8>()), |(pt, aad, seed, pos, bit)| {
            let key = gen_symmetric_key(&mut Entropy::derive(seed, "c6-sym")).unwrap();
            let ct = sym_encrypt(&key, &pt, &aad).unwrap();
            prop_assert_eq!(sym_decrypt(&key, &ct, &aad).unwrap(), pt);
            let mut bad = ct.clone();
            if bad.body.is_empty() {
                flip(&mut bad.auth_tag, pos, bit);
            } else {
                flip(&mut bad.body, pos, bit);
            }
            prop_assert_eq!(sym_decrypt(&key, &bad, &aad), Err(CryptoError::AuthFailure));
            Ok(())
        }),
        property("sign and verify", (bytes(256), any::<u64>(), any::<usize>(), any::<u8>()), |(msg, seed, pos, bit)| {
            let sig = sign(&msg, &a.private, &mut Entropy::derive(seed, "c6-sign")).unwrap();
            prop_assert!(verify(&msg, &sig, &a.public));
            prop_assert!(!verify(&msg, &sig, &b.public));
            let mut bad = sig.clone();
            flip(&mut bad.sig_bytes, pos, bit);
            prop_assert!(!verify(&msg, &bad, &a.public));
            let mut other = msg.clone();
            other.push(0);
            prop_assert!(!verify(&other, &sig, &a.public));
            Ok(())
        }),
        property("key wrap and unwrap", (any::<u64>(), any::<usize>(), any::<u8>()), |(seed, pos, bit)| {
            let mut rng = Entropy::derive(seed, "c6-wrap");
            let k = gen_symmetric_key(&mut rng).unwrap();
            let w = wrap_key(&k, &a.public, &mut rng).unwrap();
            let back = unwrap_key(&w, &a.private, &mut rng).unwrap();
            prop_assert_eq!(back.expose(), k.expose());
            prop_assert!(unwrap_key(&w, &b.private, &mut rng).is_err());
            let mut bad = w.clone();
            flip(&mut bad.blob, pos, bit);
            prop_assert!(unwrap_key(&bad, &a.private, &mut rng).is_err());
            Ok(())
        }),
        property("labeled encryption", (bytes(190), any::<u64>()), |(msg, seed)| {
            let mut rng = Entropy::derive(seed, "c6-oaep");
            let blob = encrypt_labeled(&msg, &a.public, "label-one", &mut rng).unwrap();
            prop_assert_eq!(decrypt_labeled(&blob, &a.private, "label-one").unwrap().to_vec(), msg);
            prop_assert!(decrypt_labeled(&blob, &a.private, "label-two").is_err());
            prop_assert!(decrypt_labeled(&blob, &b.private, "label-one").is_err());
            Ok(())
        }),
        property("seal and open", (bytes(2048), bytes(32), any::<u64>(), any::<usize>(), any::<u8>()), |(payload, ctx, seed, pos, bit)| {
            let mut rng = Entropy::derive(seed, "c6-seal");
            let sp = seal(&payload, &ctx, &a.private, &b.public, &mut rng).unwrap();
            prop_assert_eq!(open(&sp, &ctx, &b.private, &a.public, &mut rng).unwrap(), payload);
            prop_assert!(open(&sp, &ctx, &a.private, &a.public, &mut rng).is_err());
            prop_assert!(open(&sp, &ctx, &b.private, &b.public, &mut rng).is_err());
            let mut bad = sp.clone();
            flip(&mut bad.body.body, pos, bit);
            prop_assert!(open(&bad, &ctx, &b.private, &a.public, &mut rng).is_err());
            Ok(())
        }),
        property("envelope round trip and tamper", (bytes(256), any::<u64>(), 1u64..1000), |(payload, seed, now)| {
            let mut rng = Entropy::derive(seed, "c6-envelope");
            let (pa, pb) = (PrincipalId::new("a"), PrincipalId::new("b"));
            let mut dir = Directory::new();
            dir.insert(pa.clone(), a.public.clone());
            dir.insert(pb.clone(), b.public.clone());
            let e = make_envelope(MsgType::AccessRequest, &pa, &a.private, &pb, Some(&b.public), &payload, now, &mut rng).unwrap();
            let mut cache = ReplayCache::new(64);
            prop_assert_eq!(authenticate_envelope(&e, &pb, &dir, &mut cache, now), Ok(()));
            prop_assert_eq!(open_payload(&e, &b.private, &a.public, &mut rng).unwrap(), payload);
            prop_assert!(authenticate_envelope(&e, &pb, &dir, &mut cache, now).is_err());
            let mut bad = e.clone();
            bad.timestamp += 1;
            prop_assert!(authenticate_envelope(&bad, &pb, &dir, &mut ReplayCache::new(64), now).is_err());
            Ok(())
        }),
    ];
    let properties = results.len();
    failures.extend(results.into_iter().filter_map(Result::err));
    outcome(
        failures.is_empty(),
        format!("{} GCM vectors, {properties} properties x 1000 cases; failures {failures:?}", KATS.len()),
    )
}

/// Both directories of the determinism run, shared with the coverage gate.
fn catalog_runs() -> &'static Result<(PathBuf, PathBuf), String> {
    static RUNS: OnceLock<Result<(PathBuf, PathBuf), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let root = tempfile::Builder::new().prefix("dualguard-acceptance").tempdir().map_err(|e| e.to_string())?.keep();
        let run = |name: &str| {
            let dir = root.join(name);
            let args = [
                "dualguard", "run", "--scenario", "all", "--seed", "7", "--strategies", "40", "--forgeries", "40", "--out",
            ];
            let mut out = Vec::new();
            let mut err = Vec::new();
            let code = cli_main(args.iter().map(|s| s.to_string()).chain([dir.display().to_string()]), &mut out, &mut err);
            (code == 0)
                .then_some(dir)
                .ok_or_else(|| format!("run {name} exited {code}: {}{}", String::from_utf8_lossy(&out), String::from_utf8_lossy(&err)))
        };
        Ok((run("first")?, run("second")?))
    })
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn tamper_detected(text: &[u8], pos: usize) -> bool {
    let mut bytes = text.to_vec();
    bytes[pos] ^= 0x01;
    match std::str::from_utf8(&bytes) {
        Ok(t) => AuditLog::from_jsonl(t).is_err(),
        Err(_) => true,
    }
}

fn c7_determinism() -> Outcome {
    let (first, second) = match catalog_runs() {
        Ok(d) => d,
        Err(e) => return outcome(false, e.clone()),
    };
    let (a, b) = (tree(first), tree(second));
    let differing: Vec<&PathBuf> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();

    let mut chain_failures = Vec::new();
    let mut flips = 0usize;
    let mut undetected = Vec::new();
    let mut sampled = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(0x7a3e);
    for (path, text) in a.iter().filter(|(p, _)| p.starts_with("audit")) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let file = first.join(path).display().to_string();
        if cli_main(["dualguard", "verify-audit", file.as_str()], &mut out, &mut err) != 0 {
            chain_failures.push(path.display().to_string());
        }
        // Exhaustive below 64 KiB; larger logs get every byte of the first
        // and last records plus 4096 random positions.
        let positions: Vec<usize> = if text.len() <= 64 * 1024 {
            (0..text.len()).collect()
        } else {
            sampled.push(path.display().to_string());
            let first_end = text.iter().position(|c| *c == b'\n').unwrap() + 1;
            let last_start = text[..text.len() - 1].iter().rposition(|c| *c == b'\n').unwrap() + 1;
            (0..first_end)
                .chain(last_start..text.len())
                .chain((0..4096).map(|_| rng.next_u64() as usize % text.len()))
                .collect()
        };
        for pos in positions {
            flips += 1;
            if !tamper_detected(text, pos) {
                undetected.push(format!("{}@{pos}", path.display()));
            }
        }
    }

    // The CLI names the first broken line of a tampered log.
    let s1 = first.join("audit/S1.jsonl");
    let text = std::fs::read_to_string(&s1).unwrap();
    let line3 = text.match_indices('\n').nth(1).unwrap().0 + 10;
    let mut bytes = text.into_bytes();
    bytes[line3] ^= 0x01;
    let tampered = first.join("tampered.jsonl");
    std::fs::write(&tampered, &bytes).unwrap();
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli_main(["dualguard", "verify-audit", tampered.to_str().unwrap()], &mut out, &mut err);
    let err = String::from_utf8_lossy(&err).to_string();
    std::fs::remove_file(&tampered).unwrap();
    let names_line = code != 0 && err.contains("line 3");

    outcome(
        differing.is_empty() && a.len() == b.len() && chain_failures.is_empty() && undetected.is_empty() && names_line,
        format!(
            "{} files compared, {} differ; {} audit chains failed; {flips} single-byte tampers, {} undetected (sampled {sampled:?}); CLI on tampered log: exit {code}, {:?}",
            a.len(),
            differing.len(),
            chain_failures.len(),
            undetected.len(),
            err.trim()
        ),
    )
}

fn c8_coverage() -> Outcome {
    let (first, _) = match catalog_runs() {
        Ok(d) => d,
        Err(e) => return outcome(false, e.clone()),
    };
    let report = Report::parse_json(&std::fs::read_to_string(first.join("report.json")).unwrap()).unwrap();
    let gate = report.coverage_gate();
    let text = std::fs::read_to_string(first.join("report.txt")).unwrap();
    let rows_once = report.coverage.iter().all(|r| text.matches(&r.label()).count() == 1);
    let mut out = Vec::new();
    let mut err = Vec::new();
    let dir = first.display().to_string();
    let code = cli_main(["dualguard", "report", dir.as_str(), "--require-coverage"], &mut out, &mut err);
    outcome(
        gate.is_ok() && rows_once && code == 0 && report.coverage.len() == THREAT_MATRIX.len() && report.passed == 12,
        format!(
            "{} matrix rows, gate {:?}, {}/{} scenarios passing, report exit {code}",
            report.coverage.len(),
            gate.map_err(|e| e.to_string()),
            report.passed,
            report.total
        ),
    )
}

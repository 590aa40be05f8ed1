//! The scenario catalog S1..S12, its runner and the CLI behind the binary.
//!
//! Every scenario builds a [`World`] from an embedded TOML base file, runs it,
//! adds whatever attack campaign the scenario calls for, and turns the
//! results into a [`ScenarioVerdict`] whose assertions point at transcript
//! records, audit events or named state scans.

mod attacks;
mod catalog;
pub mod cli;
pub mod report;
pub mod verdict;

use rand::RngCore;
use thiserror::Error;

use crate::agent::{AgentError, AuditLog, MasterKey};
use crate::crypto::Entropy;
use crate::protocol::transcript::Transcript;
use crate::simnet::{SimError, SpecError, World};

pub use attacks::{
    forgery_campaign, mitm_campaign, mutation_sweep, store_state, vault_state, CampaignResult, ForgeryKind,
    ForgeryResult, ForgeryTarget, SweepResult,
};
pub use catalog::{base_file, s1_roundtrip, soundness_violations};
pub use report::{Report, ReportError, ReportFormat, THREAT_MATRIX};
pub use verdict::{AssertionResult, Evidence, ScenarioVerdict};

pub const DEFAULT_KEY_SEED: u64 = 1;
pub const DEFAULT_STRATEGIES: usize = 1000;
pub const DEFAULT_FORGERIES: usize = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {id:?}; valid ids: {valid}")]
    Unknown { id: String, valid: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("scenario setup: {0}")]
    Setup(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    /// Seeds every long-term and data key pair. Kept apart from `seed` so
    /// that many run seeds can share one set of keys.
    pub key_seed: u64,
    /// Randomized interception strategies per tapped link (S6..S8).
    pub strategies: usize,
    /// Forgery attempts in S12.
    pub forgeries: usize,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        RunOptions {
            seed,
            key_seed: DEFAULT_KEY_SEED,
            strategies: DEFAULT_STRATEGIES,
            forgeries: DEFAULT_FORGERIES,
        }
    }
}

type Runner = fn(&RunOptions) -> Result<(World, Vec<AssertionResult>), ScenarioError>;

#[derive(Debug)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub title: &'static str,
    runner: Runner,
}

pub const CATALOG: [CatalogEntry; 12] = [
    CatalogEntry { id: "S1", title: "happy path, Shared data", runner: catalog::s1 },
    CatalogEntry { id: "S2", title: "Private data, owner only", runner: catalog::s2 },
    CatalogEntry { id: "S3", title: "Public auto-grant at scale", runner: catalog::s3 },
    CatalogEntry { id: "S4", title: "owner denies", runner: catalog::s4 },
    CatalogEntry { id: "S5", title: "replayed envelopes", runner: catalog::s5 },
    CatalogEntry { id: "S6", title: "man in the middle, owner-agent", runner: catalog::s6 },
    CatalogEntry { id: "S7", title: "man in the middle, applicant-agent", runner: catalog::s7 },
    CatalogEntry { id: "S8", title: "man in the middle, owner-applicant", runner: catalog::s8 },
    CatalogEntry { id: "S9", title: "cloud store compromise", runner: catalog::s9 },
    CatalogEntry { id: "S10", title: "agent vault compromise", runner: catalog::s10 },
    CatalogEntry { id: "S11", title: "grant expiry and one-time use", runner: catalog::s11 },
    CatalogEntry { id: "S12", title: "tamper and forgery sweep", runner: catalog::s12 },
];

/// Everything one scenario run leaves behind.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub verdict: ScenarioVerdict,
    pub transcript: Transcript,
    pub audit: AuditLog,
    /// Persisted cloud store text.
    pub store: String,
    /// Encrypted Agent vault text, sealed under [`vault_master`].
    pub vault: String,
}

impl CatalogEntry {
    pub fn run(&self, opts: &RunOptions) -> Result<ScenarioRun, ScenarioError> {
        let (mut world, assertions) = (self.runner)(opts)?;
        let verdict = ScenarioVerdict::new(self.id, self.title, opts.seed, assertions);
        let vault = world.agent_mut().save_vault(&vault_master(opts.seed))?;
        Ok(ScenarioRun {
            verdict,
            transcript: world.transcript().clone(),
            audit: world.agent().audit().clone(),
            store: world.cloud().persist(),
            vault,
        })
    }
}

/// Master key for the vault files a run writes. Derived from the run seed
/// so output directories are reproducible.
pub fn vault_master(seed: u64) -> MasterKey {
    let mut bytes = [0u8; 32];
    Entropy::derive(seed, "vault-master").fill_bytes(&mut bytes);
    MasterKey::from_bytes(bytes)
}

/// Resolves `all` or a comma-separated list of ids (case-insensitive), in
/// catalog order.
pub fn select(filter: &str) -> Result<Vec<&'static CatalogEntry>, ScenarioError> {
    if filter.trim().eq_ignore_ascii_case("all") {
        return Ok(CATALOG.iter().collect());
    }
    let mut wanted = Vec::new();
    for id in filter.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some(i) = CATALOG.iter().position(|c| c.id.eq_ignore_ascii_case(id)) else {
            return Err(ScenarioError::Unknown {
                id: id.to_owned(),
                valid: CATALOG.iter().map(|c| c.id).collect::<Vec<_>>().join(", "),
            });
        };
        if !wanted.contains(&i) {
            wanted.push(i);
        }
    }
    if wanted.is_empty() {
        return Err(ScenarioError::Unknown {
            id: filter.to_owned(),
            valid: CATALOG.iter().map(|c| c.id).collect::<Vec<_>>().join(", "),
        });
    }
    wanted.sort_unstable();
    Ok(wanted.into_iter().map(|i| &CATALOG[i]).collect())
}

pub fn run_scenario(id: &str, opts: &RunOptions) -> Result<ScenarioRun, ScenarioError> {
    let entry = select(id)?;
    match entry.as_slice() {
        [one] => one.run(opts),
        _ => Err(ScenarioError::Unknown {
            id: id.to_owned(),
            valid: CATALOG.iter().map(|c| c.id).collect::<Vec<_>>().join(", "),
        }),
    }
}

pub fn run_catalog(filter: &str, opts: &RunOptions) -> Result<Vec<ScenarioRun>, ScenarioError> {
    select(filter)?.into_iter().map(|c| c.run(opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_resolves_ids_and_lists_valid_ones() {
        assert_eq!(select("all").unwrap().len(), 12);
        let ids: Vec<&str> = select("s6, S1,S6").unwrap().iter().map(|c| c.id).collect();
        assert_eq!(ids, ["S1", "S6"]);
        match select("S13") {
            Err(ScenarioError::Unknown { id, valid }) => {
                assert_eq!(id, "S13");
                assert!(valid.starts_with("S1, S2") && valid.ends_with("S12"));
            }
            other => panic!("{other:?}"),
        }
        assert!(select(" , ").is_err());
    }
}

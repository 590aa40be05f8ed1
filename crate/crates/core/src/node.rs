//! What the simulated network needs from a principal.

use crate::protocol::{Envelope, PrincipalId, Reason, Tick};

/// Result of handing one envelope to a principal.
#[derive(Debug, Default)]
pub struct Outcome {
    pub rejected: Option<Reason>,
    pub outgoing: Vec<Envelope>,
}

impl Outcome {
    pub fn accepted(outgoing: Vec<Envelope>) -> Self {
        Outcome {
            rejected: None,
            outgoing,
        }
    }

    pub fn rejected(reason: Reason) -> Self {
        Outcome {
            rejected: Some(reason),
            outgoing: Vec::new(),
        }
    }

    pub fn rejected_with_reply(reason: Reason, reply: Option<Envelope>) -> Self {
        Outcome {
            rejected: Some(reason),
            outgoing: reply.into_iter().collect(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.rejected.is_none()
    }
}

pub trait Node {
    fn id(&self) -> &PrincipalId;

    /// Processes one delivered envelope to completion.
    fn handle(&mut self, e: &Envelope, now: Tick) -> Outcome;

    /// Timer hook, called once per tick before deliveries.
    fn on_tick(&mut self, _now: Tick) -> Vec<Envelope> {
        Vec::new()
    }
}

/// Whether seeded randomness is acceptable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RunMode {
    #[default]
    Production,
    Deterministic,
}

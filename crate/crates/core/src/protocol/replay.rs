use std::collections::BTreeMap;

use super::{PrincipalId, Reason, Tick};

/// Default acceptance window, in ticks, on either side of the receiver's clock.
pub const DEFAULT_WINDOW: Tick = 64;

/// Nonces seen by one receiving principal.
///
/// Entries whose timestamp has fallen out of the window are pruned; any
/// resubmission of a pruned envelope is then caught as stale instead, so the
/// cache stays bounded by window × message rate.
#[derive(Clone, Debug)]
pub struct ReplayCache {
    window: Tick,
    seen: BTreeMap<(PrincipalId, [u8; 16]), Tick>,
}

impl ReplayCache {
    pub fn new(window: Tick) -> Self {
        ReplayCache {
            window,
            seen: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> Tick {
        self.window
    }

    pub fn in_window(&self, timestamp: Tick, now: Tick) -> bool {
        timestamp.saturating_add(self.window) >= now && timestamp <= now.saturating_add(self.window)
    }

    pub fn record(&mut self, sender: &PrincipalId, nonce: [u8; 16], timestamp: Tick) -> Result<(), Reason> {
        let key = (sender.clone(), nonce);
        if self.seen.contains_key(&key) {
            return Err(Reason::ReplayedNonce);
        }
        self.seen.insert(key, timestamp);
        Ok(())
    }

    /// Drops entries that can no longer pass the window check. Returns how
    /// many were removed.
    pub fn prune(&mut self, now: Tick) -> usize {
        let before = self.seen.len();
        let window = self.window;
        self.seen.retain(|_, ts| ts.saturating_add(window) >= now);
        before - self.seen.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PrincipalId, &[u8; 16], Tick)> {
        self.seen.iter().map(|((p, n), ts)| (p, n, *ts))
    }

    /// Rebuilds a cache from persisted entries.
    pub fn restore(window: Tick, entries: impl IntoIterator<Item = (PrincipalId, [u8; 16], Tick)>) -> Self {
        ReplayCache {
            window,
            seen: entries.into_iter().map(|(p, n, ts)| ((p, n), ts)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_nonce_rejected_and_prune_bounds_size() {
        let mut c = ReplayCache::new(4);
        let p = PrincipalId::new("p");
        for i in 0..20u8 {
            c.record(&p, [i; 16], i as Tick).unwrap();
            c.prune(i as Tick);
            assert!(c.len() <= 5, "size {} at {i}", c.len());
        }
        assert_eq!(c.record(&p, [19; 16], 19), Err(Reason::ReplayedNonce));
        // pruned nonce is re-recordable, but its timestamp is stale by then
        assert!(!c.in_window(0, 19));
    }
}

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::CallSite;

/// Per-site call counts.
pub type CallCounts = BTreeMap<CallSite, u64>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteStats {
    pub count: u64,
    pub seconds: f64,
}

/// Thread-safe call accounting. Counters never decrease.
#[derive(Debug, Default)]
pub struct CallLedger {
    inner: Mutex<BTreeMap<CallSite, Vec<Duration>>>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, site: CallSite, elapsed: Duration) {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .entry(site)
            .or_default()
            .push(elapsed);
    }

    pub fn total(&self) -> u64 {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .values()
            .map(|v| v.len() as u64)
            .sum()
    }

    pub fn counts(&self) -> CallCounts {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .iter()
            .map(|(k, v)| (*k, v.len() as u64))
            .collect()
    }

    /// Individual call durations recorded for `site`.
    pub fn durations(&self, site: CallSite) -> Vec<Duration> {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .get(&site)
            .cloned()
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let inner = self.inner.lock().expect("ledger lock poisoned");
        LedgerSnapshot {
            sites: inner
                .iter()
                .map(|(k, v)| {
                    (
                        *k,
                        SiteStats {
                            count: v.len() as u64,
                            seconds: v.iter().map(Duration::as_secs_f64).sum(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub sites: BTreeMap<CallSite, SiteStats>,
}

impl LedgerSnapshot {
    pub fn count(&self, site: CallSite) -> u64 {
        self.sites.get(&site).map_or(0, |s| s.count)
    }

    pub fn total(&self) -> u64 {
        self.sites.values().map(|s| s.count).sum()
    }

    pub fn seconds(&self) -> f64 {
        self.sites.values().map(|s| s.seconds).sum()
    }

    pub fn counts(&self) -> CallCounts {
        self.sites.iter().map(|(k, v)| (*k, v.count)).collect()
    }
}

/// `after - before`, dropping zero entries.
pub fn diff_counts(before: &CallCounts, after: &CallCounts) -> CallCounts {
    after
        .iter()
        .filter_map(|(site, &n)| {
            let d = n - before.get(site).copied().unwrap_or(0);
            (d > 0).then_some((*site, d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn concurrent_records_all_land() {
        let ledger = Arc::new(CallLedger::new());
        std::thread::scope(|s| {
            for _ in 0..8 {
                let l = Arc::clone(&ledger);
                s.spawn(move || {
                    for _ in 0..250 {
                        l.record(CallSite::Rewrite, Duration::from_millis(1));
                    }
                });
            }
        });
        assert_eq!(ledger.total(), 2000);
        assert_eq!(ledger.durations(CallSite::Rewrite).len(), 2000);
        let snap = ledger.snapshot();
        assert!((snap.seconds() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn diff_drops_unchanged_sites() {
        let before = CallCounts::from([(CallSite::Judge, 2), (CallSite::Rewrite, 1)]);
        let after = CallCounts::from([(CallSite::Judge, 2), (CallSite::Rewrite, 3)]);
        assert_eq!(diff_counts(&before, &after), CallCounts::from([(CallSite::Rewrite, 2)]));
    }
}

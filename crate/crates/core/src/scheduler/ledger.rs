use crate::error::{Error, Result};
use crate::ids::{AppId, AtomId, TpcId};
use crate::time::Nanos;

/// Scheduler-side view of one TPC.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TpcState {
    pub owner: Option<AppId>,
    /// Predicted time the TPC drains its dispatched atoms.
    pub busy_until: Nanos,
    pub stolen_by: Option<AppId>,
    pub running_priority: u8,
    /// Outstanding atoms and their predicted completion.
    entries: Vec<(AtomId, Nanos)>,
}

impl TpcState {
    pub fn outstanding(&self) -> usize {
        self.entries.len()
    }
}

/// Per-TPC ownership and timers.
#[derive(Debug, Clone)]
pub struct TpcLedger {
    tpcs: Vec<TpcState>,
    owned: Vec<Vec<TpcId>>,
}

impl TpcLedger {
    /// Gives each app a contiguous id range of `quotas[i]` TPCs, in app order.
    pub fn new(total_tpcs: u32, quotas: &[u32]) -> Result<Self> {
        let sum: u64 = quotas.iter().map(|&q| q as u64).sum();
        if sum > total_tpcs as u64 {
            return Err(Error::Validation(format!(
                "quotas sum to {sum} but the device has {total_tpcs} TPCs"
            )));
        }
        let mut tpcs = vec![TpcState::default(); total_tpcs as usize];
        let mut owned = Vec::with_capacity(quotas.len());
        let mut next = 0u32;
        for (i, &q) in quotas.iter().enumerate() {
            let ids: Vec<TpcId> = (next..next + q).collect();
            for &p in &ids {
                tpcs[p as usize].owner = Some(AppId(i as u32));
            }
            owned.push(ids);
            next += q;
        }
        Ok(TpcLedger { tpcs, owned })
    }

    pub fn tpc(&self, p: TpcId) -> &TpcState {
        &self.tpcs[p as usize]
    }

    pub fn len(&self) -> usize {
        self.tpcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tpcs.is_empty()
    }

    pub fn owned(&self, app: AppId) -> &[TpcId] {
        &self.owned[app.0 as usize]
    }

    /// Owned TPCs, soonest-free first.
    pub fn owned_by_readiness(&self, app: AppId) -> Vec<TpcId> {
        let mut ids = self.owned(app).to_vec();
        ids.sort_by_key(|&p| (self.tpcs[p as usize].busy_until, p));
        ids
    }

    /// Up to `want` TPCs `app` may borrow: not its own, the owner has nothing
    /// pending, and the timer expires within `horizon`. Unowned TPCs come
    /// first, then those whose owner has been quiet longest.
    pub fn steal_tpcs(
        &self,
        app: AppId,
        want: usize,
        now: Nanos,
        horizon: Nanos,
        owner_pending: impl Fn(AppId) -> bool,
        owner_last_active: impl Fn(AppId) -> Option<Nanos>,
    ) -> Vec<TpcId> {
        if want == 0 {
            return Vec::new();
        }
        let mut c: Vec<(bool, Option<Nanos>, TpcId)> = self
            .tpcs
            .iter()
            .enumerate()
            .filter(|(_, t)| t.owner != Some(app))
            .filter(|(_, t)| t.busy_until <= now + horizon)
            .filter(|(_, t)| t.owner.is_none_or(|o| !owner_pending(o)))
            .map(|(p, t)| (t.owner.is_some(), t.owner.and_then(&owner_last_active), p as TpcId))
            .collect();
        c.sort();
        c.into_iter().take(want).map(|(_, _, p)| p).collect()
    }

    pub fn on_dispatch(&mut self, atom: AtomId, app: AppId, tpcs: &[TpcId], predicted: Nanos, priority: u8, now: Nanos) {
        for &p in tpcs {
            let t = &mut self.tpcs[p as usize];
            t.busy_until = t.busy_until.max(now) + predicted;
            t.entries.push((atom, t.busy_until));
            t.running_priority = t.running_priority.max(priority);
            if t.owner != Some(app) {
                t.stolen_by = Some(app);
            }
        }
    }

    /// Drops the atom's timers. An early finish clamps `busy_until` to now.
    pub fn on_complete(&mut self, atom: AtomId, tpcs: &[TpcId], now: Nanos) {
        for &p in tpcs {
            let t = &mut self.tpcs[p as usize];
            t.entries.retain(|(a, _)| *a != atom);
            t.busy_until = t.entries.iter().map(|e| e.1).max().unwrap_or(now).max(now);
            if t.entries.is_empty() {
                t.stolen_by = None;
                t.running_priority = 0;
            }
        }
    }

    /// Stops lending the owner's TPCs. Resident atoms are left alone; future
    /// steals are already excluded while the owner has pending work.
    pub fn revoke_stolen(&mut self, owner: AppId) -> Vec<AppId> {
        let mut thieves = Vec::new();
        for &p in &self.owned[owner.0 as usize] {
            if let Some(th) = self.tpcs[p as usize].stolen_by.take() {
                if !thieves.contains(&th) {
                    thieves.push(th);
                }
            }
        }
        thieves
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotas_are_contiguous() {
        let l = TpcLedger::new(10, &[3, 0, 5]).unwrap();
        assert_eq!(l.owned(AppId(0)), &[0, 1, 2]);
        assert!(l.owned(AppId(1)).is_empty());
        assert_eq!(l.owned(AppId(2)), &[3, 4, 5, 6, 7]);
        assert_eq!(l.tpc(9).owner, None);
        assert!(TpcLedger::new(4, &[3, 2]).is_err());
    }

    #[test]
    fn steals_idle_unowned_first() {
        let l = TpcLedger::new(6, &[2, 2]).unwrap();
        let got = l.steal_tpcs(AppId(0), 3, Nanos::ZERO, Nanos::ZERO, |_| false, |_| None);
        assert_eq!(got, vec![4, 5, 2]);
        let none = l.steal_tpcs(AppId(0), 3, Nanos::ZERO, Nanos::ZERO, |_| true, |_| None);
        assert_eq!(none, vec![4, 5]);
    }

    #[test]
    fn horizon_excludes_busy() {
        let mut l = TpcLedger::new(4, &[2, 2]).unwrap();
        l.on_dispatch(AtomId(1), AppId(1), &[2], Nanos::from_millis(5), 1, Nanos::ZERO);
        let got = l.steal_tpcs(AppId(0), 4, Nanos::ZERO, Nanos::from_millis(1), |_| false, |_| None);
        assert_eq!(got, vec![3]);
        let got = l.steal_tpcs(AppId(0), 4, Nanos::ZERO, Nanos::from_millis(5), |_| false, |_| None);
        assert_eq!(got, vec![2, 3]);
    }

    #[test]
    fn early_completion_clamps() {
        let mut l = TpcLedger::new(2, &[2]).unwrap();
        l.on_dispatch(AtomId(0), AppId(0), &[0], Nanos::from_millis(10), 2, Nanos::ZERO);
        l.on_complete(AtomId(0), &[0], Nanos::from_millis(3));
        assert_eq!(l.tpc(0).busy_until, Nanos::from_millis(3));
    }

    #[test]
    fn revoke_clears_marks() {
        let mut l = TpcLedger::new(4, &[2, 1, 1]).unwrap();
        l.on_dispatch(AtomId(0), AppId(1), &[0], Nanos::from_millis(1), 0, Nanos::ZERO);
        l.on_dispatch(AtomId(1), AppId(2), &[1], Nanos::from_millis(1), 0, Nanos::ZERO);
        let mut thieves = l.revoke_stolen(AppId(0));
        thieves.sort();
        assert_eq!(thieves, vec![AppId(1), AppId(2)]);
        assert!(l.revoke_stolen(AppId(0)).is_empty());
    }
}

//! Intra-cluster balancing through the supernode's heavy-node board.
//!
//! The board pairs a hash index `H` (node to sort key) with a list `L` of
//! heavy records sorted by load rate, heaviest first.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, HashMap};

use crate::load::MessageCategory;
use crate::overlay::{ClusterRef, NodeRef, NodeState, Ring};

/// Records older than this many cycles are dropped.
pub const RECORD_MAX_AGE: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeavyRecord {
    pub node: NodeRef,
    pub load_rate: f64,
    pub items_to_remove: u64,
    pub timestamp: u32,
}

#[derive(Clone, Copy, Debug)]
struct RateKey(f64);

impl PartialEq for RateKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RateKey {}

impl PartialOrd for RateKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RateKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

type ListKey = (Reverse<RateKey>, NodeRef);

#[derive(Clone, Debug, Default)]
pub struct BalanceBoard {
    h: HashMap<NodeRef, RateKey>,
    l: BTreeMap<ListKey, HeavyRecord>,
}

/// Items a light node should receive, donor by donor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransferPlan {
    pub receiver: Option<NodeRef>,
    pub lines: Vec<(NodeRef, u64)>,
}

impl TransferPlan {
    pub fn total(&self) -> u64 {
        self.lines.iter().map(|&(_, n)| n).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntraReport {
    pub registered: usize,
    pub requests: usize,
    pub items_moved: u64,
    pub skipped_lines: usize,
}

impl IntraReport {
    pub fn absorb(&mut self, other: IntraReport) {
        self.registered += other.registered;
        self.requests += other.requests;
        self.items_moved += other.items_moved;
        self.skipped_lines += other.skipped_lines;
    }
}

/// Items equivalent to a rate gap. Releases round up; requests round down
/// so that a receiver never lands above the average.
fn deficit_items(gap: f64, capacity: f64, mu: f64, up: bool) -> u64 {
    let x = gap * capacity / mu;
    let x = if up { x.ceil() } else { x.floor() };
    if x.is_finite() && x > 0.0 {
        x as u64
    } else {
        0
    }
}

impl BalanceBoard {
    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    pub fn get(&self, node: NodeRef) -> Option<&HeavyRecord> {
        let k = self.h.get(&node)?;
        self.l.get(&(Reverse(*k), node))
    }

    /// Records in `L` order, heaviest first.
    pub fn records(&self) -> impl Iterator<Item = &HeavyRecord> {
        self.l.values()
    }

    pub fn insert(&mut self, rec: HeavyRecord) {
        self.remove(rec.node);
        let k = RateKey(rec.load_rate);
        self.h.insert(rec.node, k);
        self.l.insert((Reverse(k), rec.node), rec);
    }

    pub fn remove(&mut self, node: NodeRef) -> Option<HeavyRecord> {
        let k = self.h.remove(&node)?;
        self.l.remove(&(Reverse(k), node))
    }

    pub fn clear(&mut self) {
        self.h.clear();
        self.l.clear();
    }

    /// Drops records whose timestamp is more than `max_age` cycles old.
    pub fn expire(&mut self, cycle: u32, max_age: u32) -> usize {
        let stale: Vec<NodeRef> = self
            .l
            .values()
            .filter(|r| cycle.saturating_sub(r.timestamp) > max_age)
            .map(|r| r.node)
            .collect();
        for n in &stale {
            self.remove(*n);
        }
        stale.len()
    }

    /// Registers `node` if its rate exceeds `alpha * rate_avr`. The release
    /// amount is capped at the items the node actually holds.
    #[allow(clippy::too_many_arguments)]
    pub fn register_heavy(
        &mut self,
        node: NodeRef,
        state: &NodeState,
        rate_avr: f64,
        alpha: f64,
        mu: f64,
        cycle: u32,
    ) -> bool {
        let rate = state.load.load_rate(state.capacity);
        if rate <= alpha * rate_avr {
            return false;
        }
        let want = deficit_items(rate - rate_avr, state.capacity, mu, true).min(state.items.len() as u64);
        if want == 0 {
            self.remove(node);
            return false;
        }
        self.insert(HeavyRecord {
            node,
            load_rate: rate,
            items_to_remove: want,
            timestamp: cycle,
        });
        true
    }

    /// Allocates items to a light node by walking `L` from the heaviest record.
    pub fn request_load(
        &mut self,
        light: NodeRef,
        state: &NodeState,
        rate_avr: f64,
        alpha: f64,
        mu: f64,
    ) -> TransferPlan {
        let rate = state.load.load_rate(state.capacity);
        if rate >= (2.0 - alpha) * rate_avr {
            return TransferPlan::default();
        }
        let need = deficit_items(rate_avr - rate, state.capacity, mu, false);
        self.allocate(light, need)
    }

    pub(crate) fn allocate(&mut self, receiver: NodeRef, mut need: u64) -> TransferPlan {
        let mut plan = TransferPlan {
            receiver: Some(receiver),
            lines: Vec::new(),
        };
        let mut done = Vec::new();
        for (key, rec) in self.l.iter_mut() {
            if need == 0 {
                break;
            }
            if rec.node == receiver {
                continue;
            }
            let give = need.min(rec.items_to_remove);
            plan.lines.push((rec.node, give));
            rec.items_to_remove -= give;
            need -= give;
            if rec.items_to_remove == 0 {
                done.push(*key);
            }
        }
        for key in done {
            self.l.remove(&key);
            self.h.remove(&key.1);
        }
        plan
    }

    /// Verifies the H/L bijection and the ordering of L.
    pub fn check(&self) -> Result<(), String> {
        if self.h.len() != self.l.len() {
            return Err(format!("|H| = {} but |L| = {}", self.h.len(), self.l.len()));
        }
        for ((Reverse(k), n), rec) in &self.l {
            if self.h.get(n) != Some(k) || rec.node != *n || RateKey(rec.load_rate) != *k {
                return Err(format!("record for {n:?} not indexed consistently"));
            }
            if rec.items_to_remove == 0 {
                return Err(format!("record for {n:?} has nothing to remove"));
            }
        }
        let rates: Vec<f64> = self.l.values().map(|r| r.load_rate).collect();
        if rates.windows(2).any(|w| w[0] < w[1]) {
            return Err("L not sorted by descending load rate".into());
        }
        Ok(())
    }
}

impl Ring {
    /// Carries out a plan for `cluster`, moving each donor's most recently
    /// received items first. Lines whose donor has left are skipped.
    pub fn execute_transfers(&mut self, cluster: ClusterRef, plan: &TransferPlan) -> (u64, usize) {
        let Some(receiver) = plan.receiver else {
            return (0, 0);
        };
        let in_cluster = |r: &Ring, n: NodeRef| r.node(n).alive && r.node(n).cluster == Some(cluster);
        if !in_cluster(self, receiver) {
            return (0, plan.lines.len());
        }
        let mut moved = 0u64;
        let mut skipped = 0usize;
        for &(donor, count) in &plan.lines {
            if !in_cluster(self, donor) {
                skipped += 1;
                continue;
            }
            let n = self.transfer_recent(donor, receiver, count as usize);
            if n == 0 {
                continue;
            }
            moved += n as u64;
            self.charge(donor, MessageCategory::BalancerControl, 1);
            self.charge(receiver, MessageCategory::BalancerControl, 1);
            self.charge_supernode(cluster, MessageCategory::BalancerControl, 1);
        }
        (moved, skipped)
    }

    /// One pass of the intra-cluster procedure over `cluster`.
    pub fn intra_balance_cycle(&mut self, cluster: ClusterRef, alpha: f64, cycle: u32) -> IntraReport {
        let mut report = IntraReport::default();
        let members = self.cluster(cluster).members.clone();
        if members.len() < 2 {
            return report;
        }
        let rates: Vec<f64> = members.iter().map(|&m| self.load_rate(m)).collect();
        let rate_avr = self.cluster_rate(cluster);
        if !(rate_avr > 0.0) {
            return report;
        }
        let mu = self.costs.mu;
        let mut board = std::mem::take(&mut self.cluster_mut(cluster).board);
        board.expire(cycle, RECORD_MAX_AGE);
        for &m in &members {
            if board.register_heavy(m, self.node(m), rate_avr, alpha, mu, cycle) {
                report.registered += 1;
            }
        }
        let mut lights: Vec<(f64, NodeRef)> = members
            .iter()
            .zip(&rates)
            .filter(|(_, &r)| r < (2.0 - alpha) * rate_avr)
            .map(|(&m, &r)| (r, m))
            .collect();
        lights.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut plans = Vec::new();
        for &(_, m) in &lights {
            if board.is_empty() {
                break;
            }
            let plan = board.request_load(m, self.node(m), rate_avr, alpha, mu);
            report.requests += 1;
            if !plan.lines.is_empty() {
                plans.push(plan);
            }
        }
        debug_assert!(board.check().is_ok());
        self.cluster_mut(cluster).board = board;
        for plan in &plans {
            let (moved, skipped) = self.execute_transfers(cluster, plan);
            report.items_moved += moved;
            report.skipped_lines += skipped;
        }
        report
    }
}

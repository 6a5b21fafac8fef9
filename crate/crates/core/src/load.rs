//! Message accounting.
//!
//! A node's load is the number of messages it processed during a cycle; its
//! load rate is that load divided by its capacity. Counters accumulate in a
//! `current` window and are frozen into `measured` at each cycle boundary, so
//! balancing decisions always see a completed cycle.

use std::io::Write;

use crate::overlay::{ClusterRef, NodeRef, Ring};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageCategory {
    FloodQuery,
    MetadataMaintenance,
    TopologyMaintenance,
    ChordRouting,
    BalancerControl,
}

impl MessageCategory {
    pub const ALL: [MessageCategory; 5] = [
        MessageCategory::FloodQuery,
        MessageCategory::MetadataMaintenance,
        MessageCategory::TopologyMaintenance,
        MessageCategory::ChordRouting,
        MessageCategory::BalancerControl,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageCategory::FloodQuery => "flood_query",
            MessageCategory::MetadataMaintenance => "metadata_maintenance",
            MessageCategory::TopologyMaintenance => "topology_maintenance",
            MessageCategory::ChordRouting => "chord_routing",
            MessageCategory::BalancerControl => "balancer_control",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadWindow {
    current: [u64; 5],
    measured: [u64; 5],
    items_at_measure: usize,
}

impl LoadWindow {
    pub fn charge(&mut self, cat: MessageCategory, count: u64) {
        self.current[cat.index()] += count;
    }

    /// Messages of `cat` charged so far in the open cycle.
    pub fn count(&self, cat: MessageCategory) -> u64 {
        self.current[cat.index()]
    }

    pub fn measured_count(&self, cat: MessageCategory) -> u64 {
        self.measured[cat.index()]
    }

    pub fn current_load(&self) -> u64 {
        self.current.iter().sum()
    }

    /// Load of the last completed cycle: every message weighs one unit.
    pub fn node_load(&self) -> u64 {
        self.measured.iter().sum()
    }

    pub fn load_rate(&self, capacity: f64) -> f64 {
        self.node_load() as f64 / capacity
    }

    pub(crate) fn items_at_measure(&self) -> usize {
        self.items_at_measure
    }

    /// Freeze the open window and start a new one.
    pub fn close_cycle(&mut self, items_held: usize) {
        self.measured = self.current;
        self.current = [0; 5];
        self.items_at_measure = items_held;
    }
}

/// Per-cycle maintenance cost coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaintenanceCosts {
    /// Metadata maintenance messages per held item per cycle.
    pub mu: f64,
    /// Topology maintenance messages per node per cycle.
    pub nu: u64,
}

impl Default for MaintenanceCosts {
    fn default() -> Self {
        MaintenanceCosts { mu: 1.0, nu: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChargeEvent {
    pub node: NodeRef,
    pub category: MessageCategory,
    pub count: u64,
}

/// Replays recorded charges into fresh windows, one per node index.
pub fn replay_charges(events: &[ChargeEvent], n_nodes: usize) -> Vec<LoadWindow> {
    let mut windows = vec![LoadWindow::default(); n_nodes];
    for e in events {
        windows[e.node.index()].charge(e.category, e.count);
    }
    windows
}

pub fn write_charge_log<W: Write>(mut out: W, events: &[ChargeEvent]) -> std::io::Result<()> {
    writeln!(out, "node,category,count")?;
    for e in events {
        writeln!(out, "{},{},{}", e.node.index(), e.category.name(), e.count)?;
    }
    Ok(())
}

impl Ring {
    pub fn charge(&mut self, node: NodeRef, cat: MessageCategory, count: u64) {
        debug_assert!(self.node(node).alive, "charging dead node {node:?}");
        if count == 0 {
            return;
        }
        self.node_mut(node).load.charge(cat, count);
        if let Some(log) = self.charge_log.as_mut() {
            log.push(ChargeEvent {
                node,
                category: cat,
                count,
            });
        }
    }

    pub fn charge_supernode(&mut self, cluster: ClusterRef, cat: MessageCategory, count: u64) {
        if let Some(s) = self.acting_supernode(cluster) {
            self.charge(s, cat, count);
        }
    }

    /// Start recording every charge; used by the replay oracle and CSV export.
    pub fn enable_charge_log(&mut self) {
        self.charge_log = Some(Vec::new());
    }

    pub fn take_charge_log(&mut self) -> Vec<ChargeEvent> {
        self.charge_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Mean measured load of the cluster's members. Callers must not ask
    /// about empty clusters.
    pub fn cluster_load(&self, cluster: ClusterRef) -> f64 {
        let members = &self.cluster(cluster).members;
        debug_assert!(!members.is_empty());
        let total: u64 = members.iter().map(|&n| self.node(n).load.node_load()).sum();
        total as f64 / members.len() as f64
    }

    pub fn load_rate(&self, node: NodeRef) -> f64 {
        let n = self.node(node);
        n.load.load_rate(n.capacity)
    }

    /// Average load rate of a cluster: total member load over total member
    /// capacity. This is the common rate every member would have if load were
    /// spread in proportion to capacity.
    pub fn cluster_rate(&self, c: ClusterRef) -> f64 {
        let (load, cap) = self.cluster(c).members.iter().fold((0.0, 0.0), |(l, k), &m| {
            let n = self.node(m);
            (l + n.load.node_load() as f64, k + n.capacity)
        });
        if cap > 0.0 {
            load / cap
        } else {
            0.0
        }
    }

    /// End-of-cycle charges proportional to held metadata and fixed topology upkeep.
    pub fn maintenance_charges(&mut self, cluster: ClusterRef) {
        let costs = self.costs;
        for i in 0..self.cluster(cluster).members.len() {
            let n = self.cluster(cluster).members[i];
            let held = self.node(n).items.len() as f64;
            let meta = (costs.mu * held).ceil() as u64;
            self.charge(n, MessageCategory::MetadataMaintenance, meta);
            self.charge(n, MessageCategory::TopologyMaintenance, costs.nu);
        }
    }

    /// Close every live node's window at the cycle boundary.
    pub fn close_cycle(&mut self) {
        for node in self.nodes.iter_mut().filter(|n| n.alive) {
            let held = node.items.len();
            node.load.close_cycle(held);
        }
    }
}

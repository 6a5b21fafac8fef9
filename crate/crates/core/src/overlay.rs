//! The upper and middle layers.
//!
//! Clusters of servers appear as virtual nodes on a Chord ring. Each cluster
//! owns the span `(predecessor id, own id]` of the identifier space and stores
//! every metadata item whose key falls in that span on one of its members.
//! The first roster entry of a cluster is its acting supernode; the others
//! are candidates that take over when it leaves.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::flooding::MetadataItem;
use crate::id::{IdSpace, Identifier, RingSpan};
use crate::intra::BalanceBoard;
use crate::load::{ChargeEvent, LoadWindow, MaintenanceCosts, MessageCategory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterRef(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemRef(pub(crate) usize);

impl NodeRef {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ClusterRef {
    pub fn index(self) -> usize {
        self.0
    }
}

impl ItemRef {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Supernode,
    Candidate,
    Ordinary,
}

/// How a joining node picks its cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum JoinPolicy {
    #[default]
    Uniform,
    ProportionalToSize,
}

impl JoinPolicy {
    pub fn name(self) -> &'static str {
        match self {
            JoinPolicy::Uniform => "uniform",
            JoinPolicy::ProportionalToSize => "proportional-to-size",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlayParams {
    /// Acting supernode plus candidates.
    pub roster_size: usize,
    /// Upper bound on intra-cluster neighbor degree.
    pub max_neighbors: usize,
}

impl Default for OverlayParams {
    fn default() -> Self {
        OverlayParams {
            roster_size: 3,
            max_neighbors: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: Identifier,
    pub capacity: f64,
    pub role: Role,
    pub cluster: Option<ClusterRef>,
    /// Held items in receipt order, most recent last.
    pub items: Vec<ItemRef>,
    pub neighbors: Vec<NodeRef>,
    pub load: LoadWindow,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finger {
    pub target: Identifier,
    pub cluster: ClusterRef,
    pub supernodes: Vec<NodeRef>,
}

#[derive(Clone, Debug)]
pub struct ClusterState {
    pub id: Identifier,
    pub span: RingSpan,
    pub members: Vec<NodeRef>,
    pub roster: Vec<NodeRef>,
    pub fingers: Vec<Finger>,
    /// Cached estimate of the ring-wide average cluster load.
    pub load_estimate: f64,
    pub board: BalanceBoard,
    /// Already donated, received or split during the current balancing pass.
    pub(crate) busy: bool,
    pub(crate) last_split: Option<u32>,
}

impl ClusterState {
    fn new(id: Identifier, span: RingSpan, first: NodeRef) -> Self {
        ClusterState {
            id,
            span,
            members: vec![first],
            roster: vec![first],
            fingers: Vec::new(),
            load_estimate: 0.0,
            board: BalanceBoard::default(),
            busy: false,
            last_split: None,
        }
    }

    pub fn acting_supernode(&self) -> Option<NodeRef> {
        self.roster.first().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Route {
    pub cluster: ClusterRef,
    pub hops: u32,
}

/// Global overlay state: nodes, clusters in ring order, and the item registry.
#[derive(Clone, Debug)]
pub struct Ring {
    pub(crate) space: IdSpace,
    pub(crate) params: OverlayParams,
    pub(crate) costs: MaintenanceCosts,
    pub(crate) nodes: Vec<NodeState>,
    clusters: Vec<Option<ClusterState>>,
    order: BTreeMap<u64, ClusterRef>,
    pub(crate) items: Vec<MetadataItem>,
    pub(crate) holders: Vec<Option<NodeRef>>,
    pub(crate) registry: HashMap<(Identifier, Vec<u8>), ItemRef>,
    pub(crate) by_key: HashMap<Identifier, Vec<ItemRef>>,
    pub(crate) charge_log: Option<Vec<ChargeEvent>>,
    pub(crate) visit_stamp: Vec<u32>,
    pub(crate) stamp: u32,
    live_members: usize,
}

impl Ring {
    pub fn new(space: IdSpace, params: OverlayParams, costs: MaintenanceCosts) -> Self {
        Ring {
            space,
            params,
            costs,
            nodes: Vec::new(),
            clusters: Vec::new(),
            order: BTreeMap::new(),
            items: Vec::new(),
            holders: Vec::new(),
            registry: HashMap::new(),
            by_key: HashMap::new(),
            charge_log: None,
            visit_stamp: Vec::new(),
            stamp: 0,
            live_members: 0,
        }
    }

    pub fn space(&self) -> IdSpace {
        self.space
    }

    pub fn costs(&self) -> MaintenanceCosts {
        self.costs
    }

    pub fn params(&self) -> OverlayParams {
        self.params
    }

    /// Creates a live node that is not yet in any cluster.
    pub fn add_node(&mut self, id: Identifier, capacity: f64) -> NodeRef {
        assert!(capacity > 0.0, "capacity must be positive");
        let r = NodeRef(self.nodes.len());
        self.nodes.push(NodeState {
            id,
            capacity,
            role: Role::Ordinary,
            cluster: None,
            items: Vec::new(),
            neighbors: Vec::new(),
            load: LoadWindow::default(),
            alive: true,
        });
        self.visit_stamp.push(0);
        r
    }

    pub fn node(&self, r: NodeRef) -> &NodeState {
        &self.nodes[r.0]
    }

    pub(crate) fn node_mut(&mut self, r: NodeRef) -> &mut NodeState {
        &mut self.nodes[r.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Live nodes that belong to a cluster.
    pub fn live_members(&self) -> usize {
        self.live_members
    }

    pub fn alive_nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive && n.cluster.is_some())
            .map(|(i, _)| NodeRef(i))
    }

    pub fn cluster(&self, r: ClusterRef) -> &ClusterState {
        self.clusters[r.0].as_ref().expect("dissolved cluster")
    }

    pub(crate) fn cluster_mut(&mut self, r: ClusterRef) -> &mut ClusterState {
        self.clusters[r.0].as_mut().expect("dissolved cluster")
    }

    pub fn try_cluster(&self, r: ClusterRef) -> Option<&ClusterState> {
        self.clusters.get(r.0).and_then(|c| c.as_ref())
    }

    pub fn cluster_count(&self) -> usize {
        self.order.len()
    }

    /// Slab size; every [`ClusterRef`] ever issued is below this.
    pub fn cluster_slots(&self) -> usize {
        self.clusters.len()
    }

    /// Live clusters in ascending id order.
    pub fn clusters(&self) -> impl Iterator<Item = ClusterRef> + '_ {
        self.order.values().copied()
    }

    pub fn acting_supernode(&self, c: ClusterRef) -> Option<NodeRef> {
        self.try_cluster(c).and_then(|c| c.acting_supernode())
    }

    pub fn successor(&self, c: ClusterRef) -> ClusterRef {
        let id = self.cluster(c).id.value();
        self.order
            .range(id + 1..)
            .next()
            .or_else(|| self.order.iter().next())
            .map(|(_, &r)| r)
            .expect("non-empty ring")
    }

    pub fn predecessor(&self, c: ClusterRef) -> ClusterRef {
        let id = self.cluster(c).id.value();
        self.order
            .range(..id)
            .next_back()
            .or_else(|| self.order.iter().next_back())
            .map(|(_, &r)| r)
            .expect("non-empty ring")
    }

    /// Cluster responsible for `key`, from global ring state.
    pub fn owner_of(&self, key: Identifier) -> Option<ClusterRef> {
        self.order
            .range(key.value()..)
            .next()
            .or_else(|| self.order.iter().next())
            .map(|(_, &r)| r)
    }

    pub fn span_len(&self, c: ClusterRef) -> u128 {
        self.space.span_len(&self.cluster(c).span)
    }

    pub fn item(&self, r: ItemRef) -> &MetadataItem {
        &self.items[r.0]
    }

    pub fn holder(&self, r: ItemRef) -> Option<NodeRef> {
        self.holders[r.0]
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn cluster_item_count(&self, c: ClusterRef) -> usize {
        self.cluster(c)
            .members
            .iter()
            .map(|&n| self.node(n).items.len())
            .sum()
    }

    pub fn holds_key(&self, node: NodeRef, key: Identifier) -> bool {
        self.by_key
            .get(&key)
            .is_some_and(|items| items.iter().any(|&i| self.holders[i.0] == Some(node)))
    }

    // ---- membership -------------------------------------------------------

    /// Establishes a new cluster whose id is `first`'s node id.
    ///
    /// The new cluster takes `(pred, id]` from the cluster that previously
    /// owned that region, together with the metadata stored there.
    pub fn create_cluster(&mut self, first: NodeRef) -> Result<ClusterRef> {
        let node = self.node(first);
        if !node.alive {
            return Err(Error::NodeNotAlive(first.0));
        }
        if node.cluster.is_some() {
            return Err(Error::AlreadyMember(first.0));
        }
        let id = node.id;
        if self.order.contains_key(&id.value()) {
            return Err(Error::DuplicateCluster(id.value()));
        }
        let r = ClusterRef(self.clusters.len());
        let old_owner = self.owner_of(id);
        let span = match old_owner {
            None => RingSpan::full(id),
            Some(owner) => {
                let pred = self.cluster(owner).span.start;
                let pred = if self.cluster_count() == 1 {
                    self.cluster(owner).id
                } else {
                    pred
                };
                self.cluster_mut(owner).span = RingSpan::new(id, self.cluster(owner).id);
                RingSpan::new(pred, id)
            }
        };
        self.clusters.push(Some(ClusterState::new(id, span, first)));
        self.order.insert(id.value(), r);
        let n = self.node_mut(first);
        n.cluster = Some(r);
        n.role = Role::Supernode;
        self.live_members += 1;
        self.build_fingers(r);
        if let Some(owner) = old_owner {
            self.rehome_misplaced(owner, r);
        }
        Ok(r)
    }

    /// Adds `node` as an ordinary member of `c` and links it to random members.
    pub fn join_cluster_with<R: Rng + ?Sized>(&mut self, node: NodeRef, c: ClusterRef, rng: &mut R) {
        self.attach(node, c);
        let candidates: Vec<NodeRef> = self
            .cluster(c)
            .members
            .iter()
            .copied()
            .filter(|&m| m != node)
            .collect();
        let k = self.params.max_neighbors.min(candidates.len());
        for &m in candidates.choose_multiple(rng, k) {
            self.link(node, m);
        }
        self.refill_roster(c);
    }

    /// Deterministic join without neighbor sampling: links to the first
    /// members in roster order. Used by unit tests and tooling.
    pub fn join_cluster(&mut self, node: NodeRef, c: ClusterRef) {
        self.attach(node, c);
        let k = self.params.max_neighbors;
        let peers: Vec<NodeRef> = self
            .cluster(c)
            .members
            .iter()
            .copied()
            .filter(|&m| m != node)
            .take(k)
            .collect();
        for m in peers {
            self.link(node, m);
        }
        self.refill_roster(c);
    }

    pub fn join_node<R: Rng + ?Sized>(
        &mut self,
        node: NodeRef,
        policy: JoinPolicy,
        rng: &mut R,
    ) -> Result<ClusterRef> {
        if self.order.is_empty() {
            return Err(Error::EmptyRing);
        }
        if self.node(node).cluster.is_some() {
            return Err(Error::AlreadyMember(node.0));
        }
        let c = match policy {
            JoinPolicy::Uniform => {
                let i = rng.random_range(0..self.order.len());
                *self.order.values().nth(i).expect("index in range")
            }
            JoinPolicy::ProportionalToSize => {
                let mut pick = rng.random_range(0..self.live_members);
                let mut chosen = None;
                for c in self.order.values() {
                    let sz = self.cluster(*c).members.len();
                    if pick < sz {
                        chosen = Some(*c);
                        break;
                    }
                    pick -= sz;
                }
                chosen.expect("live member count consistent")
            }
        };
        self.join_cluster_with(node, c, rng);
        Ok(c)
    }

    fn attach(&mut self, node: NodeRef, c: ClusterRef) {
        let n = self.node_mut(node);
        debug_assert!(n.alive && n.cluster.is_none());
        n.cluster = Some(c);
        n.role = Role::Ordinary;
        self.cluster_mut(c).members.push(node);
        self.live_members += 1;
    }

    /// Removes `node` from the overlay.
    ///
    /// Held items go, one by one, to the member with the lowest projected
    /// load rate. A departing acting supernode is replaced by its first
    /// candidate; the last member's departure dissolves the cluster into its
    /// successor.
    pub fn leave_node(&mut self, node: NodeRef) -> Result<()> {
        let n = self.node(node);
        if !n.alive {
            return Err(Error::NodeNotAlive(node.0));
        }
        let c = n.cluster.ok_or(Error::NodeNotAlive(node.0))?;
        if self.live_members == 1 {
            return Err(Error::LastNode);
        }
        let was_acting = self.cluster(c).acting_supernode() == Some(node);
        let in_roster = self.cluster(c).roster.contains(&node);
        for peer in std::mem::take(&mut self.node_mut(node).neighbors) {
            self.node_mut(peer).neighbors.retain(|&p| p != node);
        }
        {
            let cs = self.cluster_mut(c);
            cs.members.retain(|&m| m != node);
            cs.roster.retain(|&m| m != node);
            cs.board.remove(node);
            if was_acting {
                cs.board.clear();
            }
        }
        let items = std::mem::take(&mut self.node_mut(node).items);
        {
            let n = self.node_mut(node);
            n.alive = false;
            n.cluster = None;
            n.role = Role::Ordinary;
        }
        self.live_members -= 1;

        let target = if self.cluster(c).members.is_empty() {
            let succ = self.successor(c);
            let start = self.cluster(c).span.start;
            let id = self.cluster(c).id;
            self.order.remove(&id.value());
            self.clusters[c.0] = None;
            let succ_id = self.cluster(succ).id;
            let span = if self.order.len() == 1 {
                RingSpan::full(succ_id)
            } else {
                RingSpan::new(start, succ_id)
            };
            self.cluster_mut(succ).span = span;
            succ
        } else {
            if in_roster {
                self.refill_roster(c);
                self.update_supernode_tables(c);
            }
            c
        };
        for it in items {
            let dst = self.lightest_member(target);
            self.attach_item(it, dst);
        }
        Ok(())
    }

    /// Promotes the highest-capacity ordinary members until the roster is full.
    /// Rebuilds the roster from scratch with the highest-capacity members.
    pub fn reseat_roster(&mut self, c: ClusterRef) {
        for n in std::mem::take(&mut self.cluster_mut(c).roster) {
            self.node_mut(n).role = Role::Ordinary;
        }
        self.refill_roster(c);
    }

    fn refill_roster(&mut self, c: ClusterRef) {
        let want = self.params.roster_size.min(self.cluster(c).members.len());
        while self.cluster(c).roster.len() < want {
            let best = self
                .cluster(c)
                .members
                .iter()
                .copied()
                .filter(|&m| self.node(m).role == Role::Ordinary)
                .max_by(|&a, &b| {
                    self.node(a)
                        .capacity
                        .total_cmp(&self.node(b).capacity)
                        .then(b.cmp(&a))
                });
            let Some(best) = best else { break };
            self.cluster_mut(c).roster.push(best);
            self.node_mut(best).role = Role::Candidate;
        }
        if let Some(&acting) = self.cluster(c).roster.first() {
            self.node_mut(acting).role = Role::Supernode;
        }
    }

    fn link(&mut self, a: NodeRef, b: NodeRef) {
        if a == b || self.node(a).neighbors.contains(&b) {
            return;
        }
        self.node_mut(a).neighbors.push(b);
        self.node_mut(b).neighbors.push(a);
    }

    /// Rebuilds the neighbor graph of `c` as a union of random Hamiltonian
    /// cycles, giving every member degree close to `max_neighbors`.
    pub fn rewire<R: Rng + ?Sized>(&mut self, c: ClusterRef, rng: &mut R) {
        let members = self.cluster(c).members.clone();
        for &m in &members {
            self.node_mut(m).neighbors.clear();
        }
        let n = members.len();
        if n < 2 {
            return;
        }
        let degree = self.params.max_neighbors.min(n - 1);
        if degree == n - 1 {
            for i in 0..n {
                for j in i + 1..n {
                    self.link(members[i], members[j]);
                }
            }
            return;
        }
        let mut perm = members;
        for _ in 0..degree.div_ceil(2) {
            perm.shuffle(rng);
            for i in 0..n {
                self.link(perm[i], perm[(i + 1) % n]);
            }
        }
    }

    pub fn rewire_all<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let all: Vec<ClusterRef> = self.clusters().collect();
        for c in all {
            self.rewire(c, rng);
        }
    }

    // ---- routing ----------------------------------------------------------

    fn build_fingers(&mut self, c: ClusterRef) {
        let id = self.cluster(c).id;
        let mut fingers = Vec::with_capacity(self.space.bits() as usize);
        for i in 0..self.space.bits() {
            let target = self.space.add(id, 1u64 << i);
            let owner = self.owner_of(target).expect("non-empty ring");
            fingers.push(Finger {
                target,
                cluster: owner,
                supernodes: self.cluster(owner).roster.clone(),
            });
        }
        self.cluster_mut(c).fingers = fingers;
    }

    /// Recomputes every finger table from global ring state.
    pub fn refresh_fingers(&mut self) {
        let all: Vec<ClusterRef> = self.clusters().collect();
        for c in all {
            self.build_fingers(c);
        }
    }

    /// Pushes the current roster of `c` into every finger entry that refers to it.
    pub fn update_supernode_tables(&mut self, c: ClusterRef) {
        let roster = self.cluster(c).roster.clone();
        for slot in self.clusters.iter_mut().flatten() {
            for f in slot.fingers.iter_mut().filter(|f| f.cluster == c) {
                f.supernodes.clone_from(&roster);
            }
        }
    }

    pub fn hop_cap(&self) -> u32 {
        let n = self.cluster_count().max(1) as f64;
        2 * n.log2().ceil() as u32 + 8
    }

    /// Chord lookup at cluster granularity, charging one routing message to
    /// the acting supernode of every cluster the query is forwarded to.
    pub fn find_successor(&mut self, key: Identifier, start: ClusterRef) -> Result<Route> {
        let cap = self.hop_cap();
        let mut cur = start;
        let mut hops = 0;
        loop {
            if self.space.in_span(key, &self.cluster(cur).span) {
                return Ok(Route { cluster: cur, hops });
            }
            if hops >= cap {
                return Err(Error::RoutingFailure { hops });
            }
            let succ = self.successor(cur);
            let next = if self.space.in_span(key, &self.cluster(succ).span) {
                succ
            } else {
                self.closest_preceding(cur, key).unwrap_or(succ)
            };
            hops += 1;
            self.charge_supernode(next, MessageCategory::ChordRouting, 1);
            cur = next;
        }
    }

    fn closest_preceding(&self, cur: ClusterRef, key: Identifier) -> Option<ClusterRef> {
        let here = self.cluster(cur).id;
        let limit = self.space.clockwise_distance(here, key);
        self.cluster(cur)
            .fingers
            .iter()
            .filter_map(|f| {
                let fc = self.try_cluster(f.cluster)?;
                let d = self.space.clockwise_distance(here, fc.id);
                (d != 0 && d <= limit).then_some((d, f.cluster))
            })
            .max_by_key(|&(d, _)| d)
            .map(|(_, c)| c)
    }

    // ---- span changes -----------------------------------------------------

    /// Moves cluster `c` to `new_id` without reordering the ring and returns
    /// the number of items that changed owner.
    pub fn move_cluster(&mut self, c: ClusterRef, new_id: Identifier) -> Result<usize> {
        let old = self.cluster(c).id;
        if new_id == old {
            return Ok(0);
        }
        if self.cluster_count() == 1 {
            self.order.remove(&old.value());
            self.order.insert(new_id.value(), c);
            let cs = self.cluster_mut(c);
            cs.id = new_id;
            cs.span = RingSpan::full(new_id);
            return Ok(0);
        }
        let pred = self.predecessor(c);
        let succ = self.successor(c);
        let pred_id = self.cluster(pred).id;
        let succ_id = self.cluster(succ).id;
        if !self.space.strictly_between(new_id, pred_id, succ_id) {
            return Err(Error::InvalidMove {
                cluster_id: old.value(),
                new_id: new_id.value(),
            });
        }
        let clockwise = self.space.strictly_between(new_id, old, succ_id);
        self.order.remove(&old.value());
        self.order.insert(new_id.value(), c);
        {
            let cs = self.cluster_mut(c);
            cs.id = new_id;
            cs.span = RingSpan::new(pred_id, new_id);
        }
        self.cluster_mut(succ).span = RingSpan::new(new_id, succ_id);
        let moved = if clockwise {
            self.rehome_misplaced(succ, c)
        } else {
            self.rehome_misplaced(c, succ)
        };
        Ok(moved)
    }

    /// Splits `c` by creating a new cluster over the counterclockwise half of
    /// its span, populated by half the members (never the acting supernode).
    pub fn split_cluster<R: Rng + ?Sized>(&mut self, c: ClusterRef, rng: &mut R) -> Result<ClusterRef> {
        let cs = self.cluster(c);
        if cs.members.len() < 2 {
            return Err(Error::SplitRefused("singleton cluster"));
        }
        let len = self.space.span_len(&cs.span);
        if len < 2 {
            return Err(Error::SplitRefused("span too short"));
        }
        let start = if cs.span.is_full() { cs.id } else { cs.span.start };
        let new_id = self.space.add(start, (len / 2) as u64);
        let acting = cs.acting_supernode().expect("non-empty roster");
        let mut movers: Vec<NodeRef> = cs.members.iter().copied().filter(|&m| m != acting).collect();
        movers.shuffle(rng);
        movers.truncate(cs.members.len() / 2);

        let r = ClusterRef(self.clusters.len());
        let mut roster = movers.clone();
        roster.sort_by(|&a, &b| {
            self.node(b)
                .capacity
                .total_cmp(&self.node(a).capacity)
                .then(a.cmp(&b))
        });
        roster.truncate(self.params.roster_size);

        {
            let cs = self.cluster_mut(c);
            cs.members.retain(|m| !movers.contains(m));
            cs.roster.retain(|m| !movers.contains(m));
            for &m in &movers {
                cs.board.remove(m);
            }
            cs.span = RingSpan::new(new_id, cs.id);
        }
        let mut fresh = ClusterState::new(new_id, RingSpan::new(start, new_id), roster[0]);
        fresh.members.clone_from(&movers);
        fresh.roster.clone_from(&roster);
        self.clusters.push(Some(fresh));
        self.order.insert(new_id.value(), r);
        for &m in &movers {
            let n = self.node_mut(m);
            n.cluster = Some(r);
            n.role = Role::Ordinary;
        }
        for (i, &m) in roster.iter().enumerate() {
            self.node_mut(m).role = if i == 0 { Role::Supernode } else { Role::Candidate };
        }
        self.refill_roster(c);
        self.rehome_misplaced(c, r);
        self.rehome_misplaced(r, c);
        self.rewire(c, rng);
        self.rewire(r, rng);
        self.build_fingers(r);
        self.update_supernode_tables(c);
        Ok(r)
    }

    // ---- item placement ---------------------------------------------------

    /// Load rate the supernode expects for `n`: last measured load adjusted
    /// by the maintenance cost of items gained or lost since.
    pub fn projected_rate(&self, n: NodeRef) -> f64 {
        let node = self.node(n);
        let delta = node.items.len() as f64 - node.load.items_at_measure() as f64;
        (node.load.node_load() as f64 + self.costs.mu * delta) / node.capacity
    }

    pub fn lightest_member(&self, c: ClusterRef) -> NodeRef {
        self.cluster(c)
            .members
            .iter()
            .copied()
            .min_by(|&a, &b| {
                self.projected_rate(a)
                    .total_cmp(&self.projected_rate(b))
                    .then(a.cmp(&b))
            })
            .expect("non-empty cluster")
    }

    pub(crate) fn attach_item(&mut self, it: ItemRef, dst: NodeRef) {
        self.nodes[dst.0].items.push(it);
        self.holders[it.0] = Some(dst);
    }

    /// Registers a new item on `holder` without routing or charges.
    pub(crate) fn place_item(&mut self, item: MetadataItem, holder: NodeRef) -> ItemRef {
        let r = ItemRef(self.items.len());
        self.registry
            .insert((item.key, item.supplier_address.clone()), r);
        self.by_key.entry(item.key).or_default().push(r);
        self.items.push(item);
        self.holders.push(None);
        self.attach_item(r, holder);
        r
    }

    /// Items held by members of `from` whose keys left `from`'s span go to
    /// the lightest members of `to`.
    fn rehome_misplaced(&mut self, from: ClusterRef, to: ClusterRef) -> usize {
        let span = self.cluster(from).span;
        let space = self.space;
        let mut moving = Vec::new();
        let members = self.cluster(from).members.clone();
        for m in members {
            let items = &self.items;
            self.nodes[m.0].items.retain(|&it| {
                let keep = space.in_span(items[it.0].key, &span);
                if !keep {
                    moving.push(it);
                }
                keep
            });
        }
        for &it in &moving {
            let dst = self.lightest_member(to);
            self.attach_item(it, dst);
        }
        moving.len()
    }

    /// Moves up to `count` of `from`'s most recently received items to `to`.
    pub(crate) fn transfer_recent(&mut self, from: NodeRef, to: NodeRef, count: usize) -> usize {
        let take = count.min(self.node(from).items.len());
        let split = self.node(from).items.len() - take;
        let moved: Vec<ItemRef> = self.nodes[from.0].items.drain(split..).rev().collect();
        for it in moved {
            self.attach_item(it, to);
        }
        take
    }

    #[cfg(test)]
    pub(crate) fn insert_item_for_test(&mut self, holder: NodeRef, key: u64) -> ItemRef {
        let name = format!("test-{key}").into_bytes();
        let item = MetadataItem {
            key: self.space.id(key),
            service_name: name.clone(),
            supplier_address: name,
            payload_size: 1,
        };
        self.place_item(item, holder)
    }

    // ---- checks -----------------------------------------------------------

    /// Exhaustive structural check of every overlay invariant.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let ids: Vec<(u64, ClusterRef)> = self.order.iter().map(|(&k, &v)| (k, v)).collect();
        let mut covered: u128 = 0;
        let mut members_seen = 0usize;
        for (i, &(id, c)) in ids.iter().enumerate() {
            let cs = self
                .try_cluster(c)
                .ok_or_else(|| format!("order references dissolved cluster {c:?}"))?;
            if cs.id.value() != id || cs.span.end != cs.id {
                return Err(format!("cluster {c:?}: id/span end mismatch"));
            }
            let pred = ids[(i + ids.len() - 1) % ids.len()].0;
            if ids.len() > 1 && cs.span.start.value() != pred {
                return Err(format!("cluster {c:?}: span start {} != predecessor {pred:#x}", cs.span.start));
            }
            if ids.len() == 1 && !cs.span.is_full() {
                return Err("single cluster must own the full ring".into());
            }
            covered += self.space.span_len(&cs.span);
            if cs.members.is_empty() {
                return Err(format!("cluster {c:?} has no members"));
            }
            if cs.roster.is_empty() || cs.roster.iter().any(|r| !cs.members.contains(r)) {
                return Err(format!("cluster {c:?}: roster not a non-empty subset of members"));
            }
            if self.node(cs.roster[0]).role != Role::Supernode {
                return Err(format!("cluster {c:?}: roster head is not a supernode"));
            }
            for &m in &cs.members {
                let n = self.node(m);
                if !n.alive || n.cluster != Some(c) {
                    return Err(format!("node {m:?} membership inconsistent"));
                }
                for &p in &n.neighbors {
                    let pn = self.node(p);
                    if pn.cluster != Some(c) || !pn.neighbors.contains(&m) {
                        return Err(format!("link {m:?}-{p:?} not symmetric intra-cluster"));
                    }
                }
                for &it in &n.items {
                    if self.holders[it.0] != Some(m) {
                        return Err(format!("item {it:?} holder mismatch"));
                    }
                    if !self.space.in_span(self.items[it.0].key, &cs.span) {
                        return Err(format!("item {it:?} outside holder cluster span"));
                    }
                }
            }
            members_seen += cs.members.len();
        }
        if !ids.is_empty() && covered != self.space.size() {
            return Err(format!("spans cover {covered} of {} points", self.space.size()));
        }
        if members_seen != self.live_members {
            return Err("live member count drifted".into());
        }
        let held: usize = self.nodes.iter().map(|n| n.items.len()).sum();
        if held != self.items.len() {
            return Err(format!("{held} items held, {} registered", self.items.len()));
        }
        Ok(())
    }

    /// Order-sensitive digest of overlay state, for determinism checks.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for n in &self.nodes {
            bytes.extend_from_slice(&n.id.value().to_le_bytes());
            bytes.extend_from_slice(&n.capacity.to_bits().to_le_bytes());
            bytes.push(n.alive as u8);
            bytes.extend_from_slice(&(n.cluster.map_or(u64::MAX, |c| c.0 as u64)).to_le_bytes());
            bytes.extend_from_slice(&(n.items.len() as u64).to_le_bytes());
        }
        for (&id, c) in &self.order {
            bytes.extend_from_slice(&id.to_le_bytes());
            bytes.extend_from_slice(&(c.0 as u64).to_le_bytes());
        }
        for h in &self.holders {
            bytes.extend_from_slice(&(h.map_or(u64::MAX, |n| n.0 as u64)).to_le_bytes());
        }
        crate::id::hash64(&bytes)
    }
}

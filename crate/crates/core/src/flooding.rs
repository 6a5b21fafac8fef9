//! Metadata items, intra-cluster gossip flooding and the end-to-end lookup
//! pipeline (entry node, supernode, Chord route, flood, response).

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::id::{IdSpace, Identifier};
use crate::load::MessageCategory;
use crate::overlay::{ClusterRef, ItemRef, NodeRef, Ring};

/// A service-supplier record.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MetadataItem {
    pub key: Identifier,
    pub service_name: Vec<u8>,
    pub supplier_address: Vec<u8>,
    pub payload_size: u64,
}

impl MetadataItem {
    pub fn new(space: IdSpace, service_name: &[u8], supplier_address: &[u8]) -> Self {
        MetadataItem {
            key: space.hash_key(service_name),
            service_name: service_name.to_vec(),
            supplier_address: supplier_address.to_vec(),
            payload_size: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Hit,
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub outcome: Outcome,
    pub holder: Option<NodeRef>,
    pub hops_chord: u32,
    pub messages_flooded: u64,
}

impl QueryResult {
    fn miss(hops_chord: u32, messages_flooded: u64) -> Self {
        QueryResult {
            outcome: Outcome::Miss,
            holder: None,
            hops_chord,
            messages_flooded,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.outcome == Outcome::Hit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FloodParams {
    pub fanout: usize,
    pub ttl: u32,
}

impl Default for FloodParams {
    fn default() -> Self {
        FloodParams { fanout: 3, ttl: 6 }
    }
}

impl Ring {
    fn next_stamp(&mut self) -> u32 {
        if self.stamp == u32::MAX {
            self.visit_stamp.iter_mut().for_each(|s| *s = 0);
            self.stamp = 0;
        }
        self.stamp += 1;
        self.stamp
    }

    /// Random-BFS flood from the acting supernode of `cluster`.
    pub fn flood_query<R: Rng + ?Sized>(
        &mut self,
        cluster: ClusterRef,
        key: Identifier,
        params: FloodParams,
        rng: &mut R,
    ) -> QueryResult {
        self.flood_traced(cluster, key, params, rng, None)
    }

    /// As [`Ring::flood_query`], also recording nodes in first-visit order.
    pub fn flood_traced<R: Rng + ?Sized>(
        &mut self,
        cluster: ClusterRef,
        key: Identifier,
        params: FloodParams,
        rng: &mut R,
        mut trace: Option<&mut Vec<NodeRef>>,
    ) -> QueryResult {
        debug_assert!(params.ttl >= 1 && params.fanout >= 1);
        let Some(sn) = self.acting_supernode(cluster) else {
            return QueryResult::miss(0, 0);
        };
        if self.holds_key(sn, key) {
            return QueryResult {
                outcome: Outcome::Hit,
                holder: Some(sn),
                hops_chord: 0,
                messages_flooded: 0,
            };
        }
        let stamp = self.next_stamp();
        self.visit_stamp[sn.0] = stamp;
        let mut frontier = vec![sn];
        let mut next = Vec::new();
        let mut picks = Vec::new();
        let mut messages = 0u64;
        let mut found = None;
        for _ in 0..params.ttl {
            for &u in &frontier {
                let nbrs = &self.nodes[u.0].neighbors;
                picks.clear();
                picks.extend(nbrs.choose_multiple(rng, params.fanout.min(nbrs.len())).copied());
                for &v in &picks {
                    messages += 1;
                    self.charge(v, MessageCategory::FloodQuery, 1);
                    if self.visit_stamp[v.0] == stamp {
                        continue;
                    }
                    self.visit_stamp[v.0] = stamp;
                    next.push(v);
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(v);
                    }
                    if found.is_none() && self.holds_key(v, key) {
                        found = Some(v);
                    }
                }
            }
            if found.is_some() || next.is_empty() {
                break;
            }
            std::mem::swap(&mut frontier, &mut next);
            next.clear();
        }
        match found {
            Some(h) => QueryResult {
                outcome: Outcome::Hit,
                holder: Some(h),
                hops_chord: 0,
                messages_flooded: messages,
            },
            None => QueryResult::miss(0, messages),
        }
    }

    /// Stores `item` in the cluster owning its key, on the member with the
    /// lowest projected load rate. Republishing the same (key, supplier) is a
    /// no-op that returns the existing item.
    pub fn publish(&mut self, item: MetadataItem, entry: NodeRef) -> Result<ItemRef> {
        let Some(cluster) = self.node(entry).cluster.filter(|_| self.node(entry).alive) else {
            return Err(Error::NodeNotAlive(entry.0));
        };
        if let Some(&existing) = self.registry.get(&(item.key, item.supplier_address.clone())) {
            return Ok(existing);
        }
        if self.acting_supernode(cluster) != Some(entry) {
            self.charge_supernode(cluster, MessageCategory::ChordRouting, 1);
        }
        let route = self.find_successor(item.key, cluster)?;
        let holder = self.lightest_member(route.cluster);
        self.charge(holder, MessageCategory::MetadataMaintenance, 1);
        Ok(self.place_item(item, holder))
    }

    /// Full lookup of `service_name` issued at `entry`.
    pub fn lookup<R: Rng + ?Sized>(
        &mut self,
        service_name: &[u8],
        entry: NodeRef,
        params: FloodParams,
        rng: &mut R,
    ) -> Result<QueryResult> {
        let key = self.space.hash_key(service_name);
        self.lookup_key(key, entry, params, rng)
    }

    pub fn lookup_key<R: Rng + ?Sized>(
        &mut self,
        key: Identifier,
        entry: NodeRef,
        params: FloodParams,
        rng: &mut R,
    ) -> Result<QueryResult> {
        let Some(cluster) = self.node(entry).cluster.filter(|_| self.node(entry).alive) else {
            return Err(Error::NodeNotAlive(entry.0));
        };
        if self.acting_supernode(cluster) != Some(entry) {
            self.charge_supernode(cluster, MessageCategory::ChordRouting, 1);
        }
        let mut result = match self.find_successor(key, cluster) {
            Ok(route) => {
                let mut r = self.flood_query(route.cluster, key, params, rng);
                r.hops_chord = route.hops;
                r
            }
            Err(Error::RoutingFailure { hops }) => QueryResult::miss(hops, 0),
            Err(e) => return Err(e),
        };
        self.charge(entry, MessageCategory::ChordRouting, 1);
        if result.is_hit() {
            debug_assert!(self.holds_key(result.holder.unwrap(), key));
        } else {
            result.holder = None;
        }
        Ok(result)
    }
}

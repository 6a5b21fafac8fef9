//! Structural checks shared by the property tests and the acceptance run.
//! Each one panics with a description on the first violation.

use mhp2p::flooding::MetadataItem;
use mhp2p::intra::{BalanceBoard, HeavyRecord};
use mhp2p::io::ResultTable;
use mhp2p::load::{LoadWindow, MaintenanceCosts, MessageCategory};
use mhp2p::overlay::{ClusterRef, JoinPolicy, NodeState, OverlayParams, Role, Ring};
use mhp2p::sim::{run_experiment_sequential, GridCell, SimConfig};
use mhp2p::IdSpace;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn held_multiset(r: &Ring) -> Vec<(u64, Vec<u8>)> {
    let mut out: Vec<(u64, Vec<u8>)> = r
        .alive_nodes()
        .flat_map(|n| r.node(n).items.iter().copied())
        .map(|it| {
            let m = r.item(it);
            (m.key.value(), m.supplier_address.clone())
        })
        .collect();
    out.sort();
    out
}

fn linear_owner(r: &Ring, key: u64) -> ClusterRef {
    let mut ids: Vec<(u64, ClusterRef)> = r.clusters().map(|c| (r.cluster(c).id.value(), c)).collect();
    ids.sort();
    ids.iter().find(|(id, _)| *id >= key).unwrap_or(&ids[0]).1
}

/// Joins, leaves, moves, splits and publishes at m = 10, with partition,
/// ownership and metadata conservation checked after every operation.
pub fn ten_thousand_mixed_operations_conserve_metadata() {
    let space = IdSpace::new(10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ring = Ring::new(space, OverlayParams::default(), MaintenanceCosts { mu: 1.0, nu: 2 });
    let first = ring.add_node(space.id(rng.random()), 10.0);
    ring.create_cluster(first).unwrap();
    let mut alive = vec![first];
    let mut expected = Vec::new();
    let mut published = 0u32;
    let mut counts = [0u32; 5];
    for step in 0..10_000 {
        let op = rng.random_range(0..100);
        if op < 30 {
            let n = ring.add_node(space.id(rng.random()), rng.random_range(1.0..100.0));
            if rng.random_bool(0.2) && ring.create_cluster(n).is_ok() {
                counts[0] += 1;
            } else if ring.node(n).cluster.is_none() {
                ring.join_node(n, JoinPolicy::Uniform, &mut rng).unwrap();
                counts[0] += 1;
            }
            alive.push(n);
        } else if op < 50 {
            let i = rng.random_range(0..alive.len());
            if ring.leave_node(alive[i]).is_ok() {
                alive.swap_remove(i);
                counts[1] += 1;
            }
        } else if op < 65 {
            let cs: Vec<ClusterRef> = ring.clusters().collect();
            if cs.len() >= 3 {
                let c = *cs.choose(&mut rng).unwrap();
                let lo = ring.cluster(ring.predecessor(c)).id;
                let gap = space.clockwise_distance(lo, ring.cluster(ring.successor(c)).id);
                if gap >= 2 {
                    let to = space.add(lo, rng.random_range(1..gap));
                    ring.move_cluster(c, to).unwrap();
                    counts[2] += 1;
                }
            }
        } else if op < 75 {
            let cs: Vec<ClusterRef> = ring.clusters().collect();
            let c = *cs.choose(&mut rng).unwrap();
            if ring.cluster(c).members.len() >= 2 && ring.split_cluster(c, &mut rng).is_ok() {
                counts[3] += 1;
            }
        } else {
            ring.refresh_fingers();
            let entry = *alive.choose(&mut rng).unwrap();
            published += 1;
            // distinct suppliers, so key collisions at m = 10 are not deduplicated
            let item = MetadataItem::new(space, format!("svc-{published}").as_bytes(), format!("s{published}").as_bytes());
            expected.push((item.key.value(), item.supplier_address.clone()));
            ring.publish(item, entry).unwrap();
            counts[4] += 1;
        }
        if let Err(e) = ring.check_invariants() {
            panic!("step {step}: {e}");
        }
        if step % 10 == 0 || op >= 75 {
            expected.sort();
            assert_eq!(held_multiset(&ring), expected, "step {step}");
        }
        for c in ring.clusters().collect::<Vec<_>>() {
            for &m in &ring.cluster(c).members {
                for &it in &ring.node(m).items {
                    assert!(space.in_span(ring.item(it).key, &ring.cluster(c).span));
                }
            }
        }
    }
    assert!(counts.iter().all(|&c| c > 100), "operation mix too thin: {counts:?}");
}

pub fn find_successor_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for _ in 0..100 {
        let bits = rng.random_range(8..=20);
        let space = IdSpace::new(bits).unwrap();
        let mut ring = Ring::new(space, OverlayParams::default(), MaintenanceCosts { mu: 1.0, nu: 2 });
        let want = rng.random_range(1..=80);
        while ring.cluster_count() < want {
            let n = ring.add_node(space.id(rng.random()), 1.0);
            let _ = ring.create_cluster(n);
        }
        ring.refresh_fingers();
        let cs: Vec<ClusterRef> = ring.clusters().collect();
        for _ in 0..100 {
            let key = space.id(rng.random());
            let start = *cs.choose(&mut rng).unwrap();
            let route = ring.find_successor(key, start).unwrap();
            assert_eq!(route.cluster, linear_owner(&ring, key.value()));
            assert_eq!(ring.owner_of(key), Some(route.cluster));
            assert!(route.hops <= ring.hop_cap());
            checked += 1;
        }
    }
    assert_eq!(checked, 10_000);
}

fn state(load: u64, capacity: f64) -> NodeState {
    let mut w = LoadWindow::default();
    w.charge(MessageCategory::MetadataMaintenance, load);
    w.close_cycle(0);
    NodeState {
        id: Default::default(),
        capacity,
        role: Role::Ordinary,
        cluster: None,
        items: Vec::new(),
        neighbors: Vec::new(),
        load: w,
        alive: true,
    }
}

/// Random register / request / remove / expire traces keep H and L in
/// bijection and L sorted, and allocations never exceed what was offered.
pub fn board_traces_keep_h_and_l_consistent() {
    use mhp2p::overlay::NodeRef;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let space = IdSpace::new(16).unwrap();
    let mut ring = Ring::new(space, OverlayParams::default(), MaintenanceCosts { mu: 1.0, nu: 2 });
    let nodes: Vec<NodeRef> = (0..40).map(|i| ring.add_node(space.id(i), 1.0)).collect();
    let mut largest = 0;
    for trace in 0..200 {
        let mut board = BalanceBoard::default();
        let alpha = rng.random_range(1.05..1.95);
        let avr = rng.random_range(1.0..50.0);
        for cycle in 0..50u32 {
            let node = *nodes.choose(&mut rng).unwrap();
            let offered: u64 = board.records().map(|r| r.items_to_remove).sum();
            match rng.random_range(0..4) {
                0 => {
                    board.insert(HeavyRecord {
                        node,
                        load_rate: avr * rng.random_range(alpha..4.0),
                        items_to_remove: rng.random_range(1..60),
                        timestamp: cycle,
                    });
                }
                1 => {
                    let s = state(rng.random_range(0..20), rng.random_range(1.0..10.0));
                    let plan = board.request_load(node, &s, avr, alpha, 1.0);
                    let given: u64 = plan.lines.iter().map(|l| l.1).sum();
                    let left: u64 = board.records().map(|r| r.items_to_remove).sum();
                    assert_eq!(offered - given, left, "trace {trace}");
                    assert!(plan.lines.iter().all(|l| l.0 != node && l.1 > 0));
                }
                2 => {
                    board.remove(node);
                }
                _ => {
                    board.expire(cycle, 3);
                    assert!(board.records().all(|r| cycle - r.timestamp <= 3));
                }
            }
            board.check().unwrap_or_else(|e| panic!("trace {trace} cycle {cycle}: {e}"));
            largest = largest.max(board.len());
            let mut rates: Vec<&HeavyRecord> = board.records().collect();
            assert_eq!(rates.len(), board.len());
            rates.dedup_by_key(|r| r.node);
            assert_eq!(rates.len(), board.len());
        }
    }
    assert!(largest >= 5, "boards stayed nearly empty");
}

pub fn equal_inputs_give_identical_csv() {
    let cells: Vec<GridCell> = [("on", true), ("off", false)]
        .into_iter()
        .map(|(name, on)| GridCell {
            name: name.into(),
            deltas: vec![("inter_balancing".into(), on.to_string())],
            config: SimConfig {
                network_size: 384,
                cycles: 8,
                inter_balancing: on,
                ..SimConfig::default()
            },
        })
        .collect();
    let csv = || {
        let res = run_experiment_sequential(&cells, 2);
        ResultTable::from_cells(&cells, &res).to_csv().unwrap()
    };
    let a = csv();
    assert_eq!(a, csv());
    assert_eq!(a.lines().count(), 1 + 2 * 8);
    #[cfg(feature = "parallel")]
    {
        let res = mhp2p::sim::run_experiment_parallel(&cells, 2, 3);
        assert_eq!(ResultTable::from_cells(&cells, &res).to_csv().unwrap(), a);
    }
}

//! Cycle-driven engine: bootstrap, per-cycle phases and trial orchestration.
//!
//! Each cycle runs churn, table refresh, queries, maintenance, measurement
//! and then balancing. Measurement freezes the cycle's counters, so messages
//! sent by the balancers land in the next cycle's loads.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};

use crate::error::{Error, Result};
use crate::flooding::{FloodParams, MetadataItem};
use crate::id::{hash64, IdSpace};
use crate::inter::BalanceParams;
use crate::load::MaintenanceCosts;
use crate::metrics::{max_ratio, mean, rsd_two_pass, MetricsRecord, Welford, N_FIELDS};
use crate::overlay::{ClusterRef, ItemRef, JoinPolicy, NodeRef, OverlayParams, Ring};

/// Cycles averaged into a trial's aggregate.
pub const FINAL_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub network_size: usize,
    pub arrival_rate: f64,
    pub departure_rate: f64,
    pub items_per_node: f64,
    /// Per-node, per-cycle lookup probability.
    pub node_request_rate: f64,
    pub capacity_shape: f64,
    pub capacity_scale: f64,
    pub cycles: u32,
    pub balance: BalanceParams,
    /// Seed of trial 0; trial `i` uses `seed + i`.
    pub seed: u64,
    pub inter_balancing: bool,
    pub intra_balancing: bool,
    pub join_policy: JoinPolicy,
    pub fanout: usize,
    pub ttl: u32,
    pub mu: f64,
    pub nu: u64,
    pub cluster_size: usize,
    pub id_bits: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            network_size: 4096,
            arrival_rate: 0.01,
            departure_rate: 0.01,
            items_per_node: 10.0,
            node_request_rate: 0.025,
            capacity_shape: 2.0,
            capacity_scale: 50.0,
            cycles: 50,
            balance: BalanceParams::default(),
            seed: 1,
            inter_balancing: true,
            intra_balancing: true,
            join_policy: JoinPolicy::Uniform,
            fanout: 3,
            ttl: 6,
            mu: 1.0,
            nu: 2,
            cluster_size: 64,
            id_bits: 64,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        fn bound(key: &str, value: impl ToString, bound: &'static str) -> Error {
            Error::Bound {
                key: key.into(),
                value: value.to_string(),
                bound,
            }
        }
        let rate = |key: &str, v: f64| -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bound(key, v, "rate ≥ 0"))
            }
        };
        if self.network_size < 2 {
            return Err(bound("network_size", self.network_size, "network_size ≥ 2"));
        }
        rate("arrival_rate", self.arrival_rate)?;
        rate("departure_rate", self.departure_rate)?;
        if self.departure_rate >= 1.0 {
            return Err(bound("departure_rate", self.departure_rate, "departure_rate < 1"));
        }
        rate("items_per_node", self.items_per_node)?;
        rate("node_request_rate", self.node_request_rate)?;
        if self.node_request_rate > 1.0 {
            return Err(bound("node_request_rate", self.node_request_rate, "node_request_rate ∈ [0,1]"));
        }
        if !(self.capacity_shape > 1.0 && self.capacity_shape.is_finite()) {
            return Err(bound("capacity_shape", self.capacity_shape, "capacity_shape > 1"));
        }
        if !(self.capacity_scale > 0.0 && self.capacity_scale.is_finite()) {
            return Err(bound("capacity_scale", self.capacity_scale, "capacity_scale > 0"));
        }
        if self.cycles == 0 {
            return Err(bound("cycles", self.cycles, "cycles ≥ 1"));
        }
        if self.fanout == 0 {
            return Err(bound("fanout", self.fanout, "fanout ≥ 1"));
        }
        if self.ttl == 0 {
            return Err(bound("ttl", self.ttl, "ttl ≥ 1"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(bound("mu", self.mu, "mu > 0"));
        }
        if self.cluster_size == 0 {
            return Err(bound("cluster_size", self.cluster_size, "cluster_size ≥ 1"));
        }
        if !(8..=64).contains(&self.id_bits) {
            return Err(bound("id_bits", self.id_bits, "id_bits ∈ [8,64]"));
        }
        self.balance.validate()
    }

    /// Copy of this config for trial `index`.
    pub fn for_trial(&self, index: u32) -> SimConfig {
        SimConfig {
            seed: self.seed.wrapping_add(u64::from(index)),
            ..self.clone()
        }
    }

    pub fn flood(&self) -> FloodParams {
        FloodParams {
            fanout: self.fanout,
            ttl: self.ttl,
        }
    }
}

/// Joins and departures since bootstrap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PopulationLedger {
    pub initial: usize,
    pub joined: usize,
    pub left: usize,
}

impl PopulationLedger {
    pub fn expected(&self) -> usize {
        self.initial + self.joined - self.left
    }
}

pub struct Simulation {
    cfg: SimConfig,
    ring: Ring,
    rng: ChaCha8Rng,
    alive: Vec<NodeRef>,
    capacity: Pareto<f64>,
    cycle: u32,
    lookups: u64,
    hits: u64,
    ledger: PopulationLedger,
    checks: bool,
}

impl Simulation {
    /// Builds the initial network: capacities, clusters and published items.
    ///
    /// The highest-capacity nodes found the clusters, so every initial acting
    /// supernode is a strong node; everyone else joins per the join policy.
    pub fn bootstrap(cfg: &SimConfig) -> Result<Simulation> {
        cfg.validate()?;
        let space = IdSpace::new(cfg.id_bits)?;
        let costs = MaintenanceCosts {
            mu: cfg.mu,
            nu: cfg.nu,
        };
        let capacity = Pareto::new(cfg.capacity_scale, cfg.capacity_shape).map_err(|e| Error::Bound {
            key: "capacity_shape".into(),
            value: e.to_string(),
            bound: "capacity_shape > 1",
        })?;
        let mut sim = Simulation {
            cfg: cfg.clone(),
            ring: Ring::new(space, OverlayParams::default(), costs),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            alive: Vec::with_capacity(cfg.network_size),
            capacity,
            cycle: 0,
            lookups: 0,
            hits: 0,
            ledger: PopulationLedger {
                initial: cfg.network_size,
                ..Default::default()
            },
            checks: false,
        };
        let n = cfg.network_size;
        let target = ((n as f64 / cfg.cluster_size as f64).round() as usize).clamp(1, n);
        let nodes: Vec<NodeRef> = (0..n).map(|_| sim.fresh_node()).collect();
        let mut by_capacity = nodes.clone();
        by_capacity.sort_by(|&a, &b| {
            let (ca, cb) = (sim.ring.node(a).capacity, sim.ring.node(b).capacity);
            cb.total_cmp(&ca).then(a.cmp(&b))
        });
        let founders: std::collections::HashSet<NodeRef> = by_capacity[..target].iter().copied().collect();
        for &node in &by_capacity[..target] {
            sim.found_cluster(node);
        }
        for &node in nodes.iter().filter(|n| !founders.contains(n)) {
            sim.ring.join_node(node, cfg.join_policy, &mut sim.rng)?;
        }
        sim.alive = nodes;
        // rosters filled during the joins hold whoever arrived first
        for c in sim.ring.clusters().collect::<Vec<_>>() {
            sim.ring.reseat_roster(c);
        }
        sim.ring.rewire_all(&mut sim.rng);
        sim.ring.refresh_fingers();
        sim.seed_items();
        Ok(sim)
    }

    fn fresh_node(&mut self) -> NodeRef {
        let cap = self.capacity.sample(&mut self.rng);
        let id = self.ring.space().id(self.rng.random());
        self.ring.add_node(id, cap)
    }

    /// Creates a cluster at `node`, rehashing its id on collision.
    fn found_cluster(&mut self, node: NodeRef) {
        loop {
            match self.ring.create_cluster(node) {
                Ok(_) => return,
                Err(Error::DuplicateCluster(id)) => {
                    let space = self.ring.space();
                    self.ring.node_mut(node).id = space.id(hash64(&id.to_le_bytes()));
                }
                Err(e) => panic!("cluster creation failed: {e}"),
            }
        }
    }

    /// Stores the initial items. Within a cluster the key's offset in the
    /// span is stretched over the whole ring and the item goes to the member
    /// whose node id is the clockwise successor of that point.
    fn seed_items(&mut self) {
        let total = (self.cfg.items_per_node * self.cfg.network_size as f64).round() as u64;
        let space = self.ring.space();
        let mut tables: Vec<Vec<(u64, NodeRef)>> = vec![Vec::new(); self.ring.cluster_slots()];
        for c in self.ring.clusters() {
            let mut t: Vec<(u64, NodeRef)> = self
                .ring
                .cluster(c)
                .members
                .iter()
                .map(|&m| (self.ring.node(m).id.value(), m))
                .collect();
            t.sort();
            tables[c.index()] = t;
        }
        for j in 0..total {
            let tag: u64 = self.rng.random();
            let name = format!("svc-{tag:016x}");
            let item = MetadataItem::new(space, name.as_bytes(), format!("supplier-{j}").as_bytes());
            let owner = self.ring.owner_of(item.key).expect("non-empty ring");
            let t = &tables[owner.index()];
            let span = self.ring.cluster(owner).span;
            let offset = space.clockwise_distance(span.start, item.key) as f64;
            let frac = offset / space.span_len(&span) as f64;
            let point = ((frac * space.size() as f64) as u128).min(space.size() - 1) as u64;
            let pos = t.partition_point(|&(id, _)| id < point);
            let holder = t[pos % t.len()].1;
            self.ring.place_item(item, holder);
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn ring_mut(&mut self) -> &mut Ring {
        &mut self.ring
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn cycle(&self) -> u32 {
        self.cycle
    }

    pub fn ledger(&self) -> PopulationLedger {
        self.ledger
    }

    /// Checks every overlay invariant after each phase that mutates the ring.
    pub fn enable_checks(&mut self) {
        self.checks = true;
    }

    pub fn digest(&self) -> u64 {
        let mut bytes = self.ring.digest().to_le_bytes().to_vec();
        bytes.extend_from_slice(&(self.alive.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&self.cycle.to_le_bytes());
        hash64(&bytes)
    }

    fn check(&self, phase: &str) {
        if self.checks {
            if let Err(e) = self.ring.check_invariants() {
                panic!("cycle {} after {phase}: {e}", self.cycle);
            }
            assert_eq!(self.ring.live_members(), self.ledger.expected(), "population ledger");
        }
    }

    fn churn(&mut self) {
        let n = self.alive.len();
        let leaves = ((self.cfg.departure_rate * n as f64).round() as usize).min(n - 1);
        let joins = (self.cfg.arrival_rate * n as f64).round() as usize;
        let mut picked: Vec<usize> = sample(&mut self.rng, n, leaves).into_vec();
        picked.sort_unstable_by(|a, b| b.cmp(a));
        for i in picked {
            let node = self.alive.swap_remove(i);
            match self.ring.leave_node(node) {
                Ok(()) => self.ledger.left += 1,
                Err(e) => panic!("departure failed: {e}"),
            }
        }
        for _ in 0..joins {
            let node = self.fresh_node();
            self.ring
                .join_node(node, self.cfg.join_policy, &mut self.rng)
                .expect("ring is never empty");
            self.alive.push(node);
            self.ledger.joined += 1;
        }
    }

    fn queries(&mut self) -> (u64, u64) {
        let (mut lookups, mut hits) = (0, 0);
        if self.ring.item_count() == 0 || self.cfg.node_request_rate == 0.0 {
            return (0, 0);
        }
        let flood = self.cfg.flood();
        for i in 0..self.alive.len() {
            if self.rng.random::<f64>() >= self.cfg.node_request_rate {
                continue;
            }
            let item = ItemRef(self.rng.random_range(0..self.ring.item_count()));
            let key = self.ring.item(item).key;
            let entry = self.alive[i];
            let res = self
                .ring
                .lookup_key(key, entry, flood, &mut self.rng)
                .expect("entry is alive");
            lookups += 1;
            hits += u64::from(res.is_hit());
        }
        (lookups, hits)
    }

    fn measure(&self, lookups: u64, hits: u64) -> MetricsRecord {
        let clusters: Vec<ClusterRef> = self.ring.clusters().collect();
        let loads: Vec<f64> = clusters.iter().map(|&c| self.ring.cluster_load(c)).collect();
        let items: Vec<f64> = clusters
            .iter()
            .map(|&c| self.ring.cluster_item_count(c) as f64)
            .collect();
        let mut streaming = Welford::default();
        loads.iter().for_each(|&l| streaming.push(l));
        let rsd = rsd_two_pass(&loads);
        debug_assert!((streaming.rsd() - rsd).abs() <= 1e-9 * rsd.max(1e-300) + 1e-12);
        let mut ratios = Vec::with_capacity(clusters.len());
        let mut rsds = Vec::with_capacity(clusters.len());
        for &c in &clusters {
            let rates: Vec<f64> = self
                .ring
                .cluster(c)
                .members
                .iter()
                .map(|&m| self.ring.load_rate(m))
                .collect();
            let avr = self.ring.cluster_rate(c);
            let top = rates.iter().copied().fold(0.0, f64::max);
            ratios.push(if avr > 0.0 { top / avr } else { 1.0 });
            rsds.push(rsd_two_pass(&rates));
        }
        MetricsRecord {
            cycle: self.cycle,
            n_nodes: self.ring.live_members(),
            n_clusters: clusters.len(),
            max_cluster_load_ratio: max_ratio(&loads),
            rsd_cluster_load: rsd,
            rate_ratio: mean(&ratios),
            rate_rsd: mean(&rsds),
            item_ratio: max_ratio(&items),
            hit_rate: if lookups == 0 { 1.0 } else { hits as f64 / lookups as f64 },
            ..MetricsRecord::default()
        }
    }

    /// Runs one full cycle and returns its metrics.
    pub fn step(&mut self) -> MetricsRecord {
        self.cycle += 1;
        self.churn();
        self.check("churn");
        self.ring.rewire_all(&mut self.rng);
        self.ring.refresh_fingers();
        let (lookups, hits) = self.queries();
        self.lookups += lookups;
        self.hits += hits;
        let clusters: Vec<ClusterRef> = self.ring.clusters().collect();
        for &c in &clusters {
            self.ring.maintenance_charges(c);
        }
        self.ring.close_cycle();
        let mut record = self.measure(lookups, hits);
        if self.cfg.intra_balancing {
            for &c in &clusters {
                let rep = self.ring.intra_balance_cycle(c, self.cfg.balance.alpha, self.cycle);
                record.items_moved_intra += rep.items_moved;
            }
            self.check("intra balancing");
        }
        if self.cfg.inter_balancing {
            let rep = self.ring.balance_cycle(&self.cfg.balance, self.cycle, &mut self.rng);
            record.items_moved_inter = rep.items_moved;
            record.splits = rep.splits;
            record.moves = rep.moves;
            self.check("inter balancing");
        }
        record
    }

    pub fn run(mut self) -> TrialResult {
        let records = (0..self.cfg.cycles).map(|_| self.step()).collect();
        TrialResult::new(records)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub records: Vec<MetricsRecord>,
    /// Field means over the final [`FINAL_WINDOW`] cycles.
    pub final_means: [f64; N_FIELDS],
}

impl TrialResult {
    pub fn new(records: Vec<MetricsRecord>) -> Self {
        let tail = &records[records.len().saturating_sub(FINAL_WINDOW)..];
        let mut final_means = [0.0; N_FIELDS];
        for r in tail {
            for (acc, v) in final_means.iter_mut().zip(r.values()) {
                *acc += v;
            }
        }
        if !tail.is_empty() {
            final_means.iter_mut().for_each(|m| *m /= tail.len() as f64);
        }
        TrialResult { records, final_means }
    }

    pub fn final_mean(&self, field: &str) -> f64 {
        let i = MetricsRecord::field_index(field).unwrap_or_else(|| panic!("unknown field {field}"));
        self.final_means[i]
    }
}

pub fn run_trial(cfg: &SimConfig) -> Result<TrialResult> {
    Ok(Simulation::bootstrap(cfg)?.run())
}

/// One configuration of an experiment grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub name: String,
    /// Keys and values that distinguish this cell from the base config.
    pub deltas: Vec<(String, String)>,
    pub config: SimConfig,
}

/// Per-cycle mean and sample sd across trials.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub cycles: Vec<u32>,
    pub mean: Vec<[f64; N_FIELDS]>,
    pub sd: Vec<[f64; N_FIELDS]>,
    pub trials: Vec<TrialResult>,
}

impl CellStats {
    pub fn from_trials(trials: Vec<TrialResult>) -> CellStats {
        let len = trials.iter().map(|t| t.records.len()).min().unwrap_or(0);
        let mut mean = Vec::with_capacity(len);
        let mut sd = Vec::with_capacity(len);
        for i in 0..len {
            let mut acc = [Welford::default(); N_FIELDS];
            for t in &trials {
                for (w, v) in acc.iter_mut().zip(t.records[i].values()) {
                    w.push(v);
                }
            }
            mean.push(acc.map(|w| w.mean()));
            sd.push(acc.map(|w| w.sample_sd()));
        }
        let cycles = trials
            .first()
            .map(|t| t.records[..len].iter().map(|r| r.cycle).collect())
            .unwrap_or_default();
        CellStats {
            cycles,
            mean,
            sd,
            trials,
        }
    }

    /// Mean over trials of each trial's final-window mean.
    pub fn final_mean(&self, field: &str) -> f64 {
        let xs: Vec<f64> = self.trials.iter().map(|t| t.final_mean(field)).collect();
        mean(&xs)
    }

    pub fn final_values(&self, field: &str) -> Vec<f64> {
        self.trials.iter().map(|t| t.final_mean(field)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub name: String,
    pub deltas: Vec<(String, String)>,
    pub outcome: std::result::Result<CellStats, String>,
}

fn guarded_trial(cfg: &SimConfig) -> std::result::Result<TrialResult, String> {
    let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_trial(cfg)));
    match run {
        Ok(Ok(t)) => Ok(t),
        Ok(Err(e)) => Err(format!("{}: {e}", e.kind())),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "trial panicked".into())),
    }
}

fn assemble(
    cells: &[GridCell],
    trials: u32,
    mut results: Vec<std::result::Result<TrialResult, String>>,
) -> Vec<CellResult> {
    let mut out = Vec::with_capacity(cells.len());
    let mut rest = results.drain(..);
    for cell in cells {
        let mine: Vec<_> = rest.by_ref().take(trials as usize).collect();
        let outcome = mine
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| format!("trial {i}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(CellStats::from_trials);
        out.push(CellResult {
            name: cell.name.clone(),
            deltas: cell.deltas.clone(),
            outcome,
        });
    }
    out
}

fn jobs_list(cells: &[GridCell], trials: u32) -> Vec<SimConfig> {
    cells
        .iter()
        .flat_map(|c| (0..trials).map(move |t| c.config.for_trial(t)))
        .collect()
}

/// Runs every cell × trial on the calling thread.
pub fn run_experiment_sequential(cells: &[GridCell], trials: u32) -> Vec<CellResult> {
    let results = jobs_list(cells, trials).iter().map(guarded_trial).collect();
    assemble(cells, trials, results)
}

/// Runs every cell × trial on a pool of `jobs` threads. Results do not
/// depend on the thread count.
#[cfg(feature = "parallel")]
pub fn run_experiment_parallel(cells: &[GridCell], trials: u32, jobs: usize) -> Vec<CellResult> {
    use rayon::prelude::*;
    let configs = jobs_list(cells, trials);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let results = pool.install(|| configs.par_iter().map(guarded_trial).collect());
    assemble(cells, trials, results)
}

/// Default worker count: grid size capped at available cores.
pub fn default_jobs(cells: usize, trials: u32) -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    (cells * trials as usize).clamp(1, cores)
}

pub fn run_experiment(cells: &[GridCell], trials: u32, jobs: usize) -> Vec<CellResult> {
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 {
            return run_experiment_parallel(cells, trials, jobs);
        }
    }
    let _ = jobs;
    run_experiment_sequential(cells, trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::load::MessageCategory;

    fn small() -> SimConfig {
        SimConfig {
            network_size: 512,
            cycles: 12,
            ..SimConfig::default()
        }
    }

    #[test]
    fn pareto_mean_matches_closed_form() {
        let dist = Pareto::new(50.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let analytic = 2.0 * 50.0 / (2.0 - 1.0);
        assert!((mean(&xs) - analytic).abs() / analytic < 0.05);
    }

    #[test]
    fn minimal_network() {
        let cfg = SimConfig {
            network_size: 2,
            items_per_node: 0.0,
            ..SimConfig::default()
        };
        let sim = Simulation::bootstrap(&cfg).unwrap();
        assert!((1..=2).contains(&sim.ring().cluster_count()));
        assert_eq!(sim.ring().item_count(), 0);
        sim.ring().check_invariants().unwrap();
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let a = Simulation::bootstrap(&small()).unwrap();
        let b = Simulation::bootstrap(&small()).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = Simulation::bootstrap(&SimConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.ring().item_count(), 5120);
        assert_eq!(a.ring().cluster_count(), 8);
        a.ring().check_invariants().unwrap();
    }

    #[test]
    fn idle_network_pays_topology_only() {
        let cfg = SimConfig {
            network_size: 256,
            arrival_rate: 0.0,
            departure_rate: 0.0,
            node_request_rate: 0.0,
            items_per_node: 0.0,
            inter_balancing: false,
            intra_balancing: false,
            cycles: 3,
            ..SimConfig::default()
        };
        let mut sim = Simulation::bootstrap(&cfg).unwrap();
        for _ in 0..3 {
            sim.step();
            for n in sim.ring().alive_nodes() {
                assert_eq!(sim.ring().node(n).load.node_load(), cfg.nu);
            }
        }
    }

    #[test]
    fn replay_is_identical() {
        let a = run_trial(&small()).unwrap();
        let b = run_trial(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 12);
    }

    #[test]
    fn invariants_hold_every_phase() {
        let cfg = SimConfig {
            arrival_rate: 0.03,
            departure_rate: 0.03,
            ..small()
        };
        let mut sim = Simulation::bootstrap(&cfg).unwrap();
        sim.enable_checks();
        let items = sim.ring().item_count();
        for _ in 0..cfg.cycles {
            sim.step();
        }
        let held: usize = sim.ring().alive_nodes().map(|n| sim.ring().node(n).items.len()).sum();
        assert_eq!(held, items);
    }

    #[test]
    fn toggled_off_inter_moves_nothing() {
        let cfg = SimConfig {
            inter_balancing: false,
            ..small()
        };
        let t = run_trial(&cfg).unwrap();
        assert!(t.records.iter().all(|r| r.items_moved_inter == 0 && r.splits == 0 && r.moves == 0));
    }

    #[test]
    fn lookups_hit_without_churn() {
        let cfg = SimConfig {
            arrival_rate: 0.0,
            departure_rate: 0.0,
            fanout: 6,
            ttl: 12,
            node_request_rate: 0.2,
            ..small()
        };
        let t = run_trial(&cfg).unwrap();
        assert!(t.records.iter().all(|r| r.hit_rate == 1.0));
    }

    #[test]
    fn cluster_load_tracks_item_count_without_balancing() {
        use crate::metrics::spearman;
        let cfg = SimConfig {
            network_size: 2048,
            arrival_rate: 0.0,
            departure_rate: 0.0,
            inter_balancing: false,
            intra_balancing: false,
            ..SimConfig::default()
        };
        let mut sim = Simulation::bootstrap(&cfg).unwrap();
        let cs: Vec<ClusterRef> = sim.ring().clusters().collect();
        let mut total = vec![0.0; cs.len()];
        for _ in 0..5 {
            sim.step();
            for (t, &c) in total.iter_mut().zip(&cs) {
                let members = sim.ring().cluster(c).members.len() as f64;
                *t += sim.ring().cluster_load(c) * members;
            }
        }
        let items: Vec<f64> = cs.iter().map(|&c| sim.ring().cluster_item_count(c) as f64).collect();
        assert!(spearman(&total, &items) > 0.9);
    }

    #[test]
    fn balancing_overhead_lands_next_cycle() {
        let cfg = SimConfig {
            arrival_rate: 0.0,
            departure_rate: 0.0,
            node_request_rate: 0.0,
            intra_balancing: false,
            ..small()
        };
        let mut sim = Simulation::bootstrap(&cfg).unwrap();
        sim.step();
        let pending: u64 = sim
            .ring()
            .alive_nodes()
            .map(|n| sim.ring().node(n).load.count(MessageCategory::BalancerControl))
            .sum();
        assert!(pending > 0);
        let measured: u64 = sim
            .ring()
            .alive_nodes()
            .map(|n| sim.ring().node(n).load.measured_count(MessageCategory::BalancerControl))
            .sum();
        assert_eq!(measured, 0);
    }

    #[test]
    fn experiment_isolates_failures() {
        let good = GridCell {
            name: "good".into(),
            deltas: vec![],
            config: SimConfig { cycles: 2, ..small() },
        };
        let bad = GridCell {
            name: "bad".into(),
            deltas: vec![("cycles".into(), "0".into())],
            config: SimConfig { cycles: 0, ..small() },
        };
        let res = run_experiment_sequential(&[good.clone(), bad, good], 2);
        assert!(res[0].outcome.is_ok());
        assert!(res[1].outcome.as_ref().unwrap_err().contains("config"));
        let stats = res[2].outcome.as_ref().unwrap();
        assert_eq!(stats.trials.len(), 2);
        assert_eq!(stats.mean.len(), 2);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let cells: Vec<GridCell> = [true, false]
            .iter()
            .map(|&on| GridCell {
                name: format!("inter-{on}"),
                deltas: vec![],
                config: SimConfig {
                    cycles: 4,
                    inter_balancing: on,
                    ..small()
                },
            })
            .collect();
        let a = run_experiment_sequential(&cells, 3);
        let b = run_experiment_parallel(&cells, 3, 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.outcome.as_ref().unwrap(), y.outcome.as_ref().unwrap());
        }
    }
}

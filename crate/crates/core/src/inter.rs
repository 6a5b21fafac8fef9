//! Upper-layer balancing: sampled average-load estimation, span moves
//! between ring neighbours and splitting of very heavy clusters.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::load::MessageCategory;
use crate::overlay::{ClusterRef, Ring};

/// Cycle-dependent sampling multiplier `k`.
///
/// Written as `k1:last1,k2:last2,...,k_final`, e.g. `4:10,2:20,1` uses `k = 4`
/// through cycle 10, `k = 2` through cycle 20 and `k = 1` afterwards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KSchedule {
    steps: Vec<(u32, u32)>,
    last: u32,
}

impl Default for KSchedule {
    fn default() -> Self {
        KSchedule {
            steps: vec![(4, 10), (2, 20)],
            last: 1,
        }
    }
}

impl KSchedule {
    pub fn constant(k: u32) -> Self {
        KSchedule {
            steps: Vec::new(),
            last: k,
        }
    }

    pub fn k_for(&self, cycle: u32) -> u32 {
        self.steps
            .iter()
            .find(|&&(_, until)| cycle <= until)
            .map_or(self.last, |&(k, _)| k)
    }
}

impl fmt::Display for KSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, until) in &self.steps {
            write!(f, "{k}:{until},")?;
        }
        write!(f, "{}", self.last)
    }
}

impl FromStr for KSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let (last, steps) = parts.split_last().ok_or("empty schedule")?;
        let positive = |t: &str| -> std::result::Result<u32, String> {
            match t.parse::<u32>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(format!("`{t}` is not a positive integer")),
            }
        };
        let mut out = Vec::new();
        let mut prev = 0;
        for step in steps {
            let (k, until) = step
                .split_once(':')
                .ok_or_else(|| format!("`{step}` should be k:last_cycle"))?;
            let (k, until) = (positive(k.trim())?, positive(until.trim())?);
            if until <= prev {
                return Err("cycle bounds must increase".into());
            }
            prev = until;
            out.push((k, until));
        }
        Ok(KSchedule {
            steps: out,
            last: positive(last)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k_schedule: KSchedule,
    /// A cluster may split only if it has at least this fraction of the
    /// mean cluster size.
    pub split_min_share: f64,
    /// Cycles a cluster must wait after taking part in a split before it may
    /// split again.
    pub split_cooldown: u32,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams {
            alpha: 1.4,
            beta: 0.25,
            gamma: 2.0,
            k_schedule: KSchedule::default(),
            split_min_share: 0.5,
            split_cooldown: 5,
        }
    }
}

impl BalanceParams {
    /// Range checks. `beta = 0.5` is accepted and disables moving.
    pub fn validate(&self) -> Result<()> {
        let bound = |key: &str, v: f64, bound: &'static str| Error::Bound {
            key: key.into(),
            value: v.to_string(),
            bound,
        };
        if !(self.alpha > 1.0 && self.alpha < 2.0) {
            return Err(bound("alpha", self.alpha, "α ∈ (1,2)"));
        }
        if !(self.beta >= 0.0 && self.beta <= 0.5) {
            return Err(bound("beta", self.beta, "β ∈ [0,0.5)"));
        }
        if !(self.gamma >= 2.0) || !self.gamma.is_finite() {
            return Err(bound("gamma", self.gamma, "γ ≥ 2"));
        }
        if !(self.split_min_share >= 0.0 && self.split_min_share.is_finite()) {
            return Err(bound("split_min_share", self.split_min_share, "split_min_share ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterClass {
    Light,
    Moderate,
    Heavy,
    VeryHeavy,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

pub fn classify(load: f64, load_avr: f64, gamma: f64) -> ClusterClass {
    if close(load, load_avr) {
        ClusterClass::Moderate
    } else if load < load_avr {
        ClusterClass::Light
    } else if load >= gamma * load_avr || close(load, gamma * load_avr) {
        ClusterClass::VeryHeavy
    } else {
        ClusterClass::Heavy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// The requesting cluster takes span from its successor.
    Clockwise,
    /// The requesting cluster hands span to its successor.
    Counterclockwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MovePlan {
    pub direction: Direction,
    pub length: u64,
}

fn move_length(heavy: f64, light: f64, heavy_len: u128) -> Option<u64> {
    let raw = ((heavy - light) * heavy_len as f64 / (2.0 * heavy)).round();
    let max = (heavy_len.div_ceil(2) - 1) as f64;
    if max < 1.0 {
        return None;
    }
    Some(raw.clamp(1.0, max) as u64)
}

/// Decides whether `a` should move relative to its successor `b`.
///
/// Transfer happens only when the heavier side carries at least
/// `1 / (1 - 2β)` times the lighter side's load; the moved length is half
/// the load gap expressed in the heavier side's span units, kept strictly
/// below half of that span.
pub fn plan_move(load_a: f64, load_b: f64, len_a: u128, len_b: u128, beta: f64) -> Option<MovePlan> {
    let vm = 1.0 - 2.0 * beta;
    if !(vm > 0.0) {
        return None;
    }
    if load_b > load_a && load_b >= load_a / vm {
        move_length(load_b, load_a, len_b).map(|length| MovePlan {
            direction: Direction::Clockwise,
            length,
        })
    } else if load_a > load_b && load_a >= load_b / vm {
        move_length(load_a, load_b, len_a).map(|length| MovePlan {
            direction: Direction::Counterclockwise,
            length,
        })
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InterReport {
    pub moves: u64,
    pub splits: u64,
    pub items_moved: u64,
    pub probes: u64,
}

/// Number of clusters probed by one estimate.
pub fn sample_size(k: u32, n_nodes: usize, n_clusters: usize) -> usize {
    let log = (n_nodes.max(2) as f64).log2().ceil() as usize;
    (k as usize * log).min(n_clusters.saturating_sub(1))
}

impl Ring {
    /// Estimates the mean cluster load by probing random other clusters.
    ///
    /// `loads` holds each cluster's measured load indexed by slot and
    /// `candidates` the clusters eligible for probing.
    pub(crate) fn estimate_with<R: Rng + ?Sized>(
        &mut self,
        c: ClusterRef,
        candidates: &[ClusterRef],
        loads: &[f64],
        k: u32,
        rng: &mut R,
    ) -> f64 {
        let others: Vec<ClusterRef> = candidates.iter().copied().filter(|&o| o != c).collect();
        let m = sample_size(k, self.live_members(), others.len() + 1);
        if m == 0 {
            return loads[c.index()];
        }
        let picks = rand::seq::index::sample(rng, others.len(), m);
        let mut sum = 0.0;
        for i in picks.iter() {
            let o = others[i];
            sum += loads[o.index()];
            self.charge_supernode(c, MessageCategory::BalancerControl, 1);
            self.charge_supernode(o, MessageCategory::BalancerControl, 1);
        }
        let est = sum / m as f64;
        self.cluster_mut(c).load_estimate = est;
        est
    }

    /// Measured load of every live cluster, indexed by slot.
    pub fn cluster_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.cluster_slots()];
        for c in self.clusters() {
            loads[c.index()] = self.cluster_load(c);
        }
        loads
    }

    pub fn estimate_average_load<R: Rng + ?Sized>(&mut self, c: ClusterRef, k: u32, rng: &mut R) -> f64 {
        let all: Vec<ClusterRef> = self.clusters().collect();
        let loads = self.cluster_loads();
        self.estimate_with(c, &all, &loads, k, rng)
    }

    /// Applies a move plan to `a`, returning the number of items that moved.
    pub fn apply_move(&mut self, a: ClusterRef, plan: MovePlan) -> Result<usize> {
        let id = self.cluster(a).id;
        let new_id = match plan.direction {
            Direction::Clockwise => self.space.add(id, plan.length),
            Direction::Counterclockwise => self.space.sub(id, plan.length),
        };
        self.move_cluster(a, new_id)
    }

    fn may_split(&self, c: ClusterRef, params: &BalanceParams, cycle: u32) -> bool {
        let cs = self.cluster(c);
        let mean_size = self.live_members() as f64 / self.cluster_count() as f64;
        let rested = cs
            .last_split
            .is_none_or(|t| cycle.saturating_sub(t) > params.split_cooldown);
        rested
            && cs.members.len() >= 2
            && cs.members.len() as f64 >= params.split_min_share * mean_size
            && self.span_len(c) >= 2
    }

    /// One pass of the upper-layer procedure over every cluster.
    pub fn balance_cycle<R: Rng + ?Sized>(&mut self, params: &BalanceParams, cycle: u32, rng: &mut R) -> InterReport {
        let mut report = InterReport::default();
        let clusters: Vec<ClusterRef> = self.clusters().collect();
        if clusters.len() < 2 {
            return report;
        }
        let loads = self.cluster_loads();
        for &c in &clusters {
            self.cluster_mut(c).busy = false;
        }
        let k = params.k_schedule.k_for(cycle);
        let mut order = clusters.clone();
        order.shuffle(rng);
        for c in order {
            if self.cluster(c).busy {
                continue;
            }
            let avr = self.estimate_with(c, &clusters, &loads, k, rng);
            report.probes += sample_size(k, self.live_members(), clusters.len()) as u64;
            let load = loads[c.index()];
            if avr > 0.0
                && classify(load, avr, params.gamma) == ClusterClass::VeryHeavy
                && self.may_split(c, params, cycle)
            {
                if let Ok(fresh) = self.split_cluster(c, rng) {
                    report.splits += 1;
                    for x in [c, fresh] {
                        let cs = self.cluster_mut(x);
                        cs.busy = true;
                        cs.last_split = Some(cycle);
                    }
                    continue;
                }
            }
            let b = self.successor(c);
            if b == c || self.cluster(b).busy || b.index() >= loads.len() {
                continue;
            }
            let plan = plan_move(load, loads[b.index()], self.span_len(c), self.span_len(b), params.beta);
            let Some(plan) = plan else { continue };
            self.charge_supernode(c, MessageCategory::BalancerControl, 1);
            self.charge_supernode(b, MessageCategory::BalancerControl, 1);
            if let Ok(moved) = self.apply_move(c, plan) {
                report.moves += 1;
                report.items_moved += moved as u64;
                self.cluster_mut(c).busy = true;
                self.cluster_mut(b).busy = true;
            }
        }
        report
    }
}

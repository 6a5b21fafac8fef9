//! Per-cycle statistics.

/// Snapshot of one completed cycle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub cycle: u32,
    pub n_nodes: usize,
    pub n_clusters: usize,
    /// Heaviest cluster load over mean cluster load.
    pub max_cluster_load_ratio: f64,
    pub rsd_cluster_load: f64,
    /// Mean over clusters of max member load rate over the cluster rate
    /// (member load sum over member capacity sum).
    pub rate_ratio: f64,
    /// Mean over clusters of the rsd of member load rates.
    pub rate_rsd: f64,
    /// Largest cluster item count over mean cluster item count.
    pub item_ratio: f64,
    pub items_moved_inter: u64,
    pub items_moved_intra: u64,
    pub splits: u64,
    pub moves: u64,
    pub hit_rate: f64,
}

pub const FIELD_NAMES: [&str; 12] = [
    "n_nodes",
    "n_clusters",
    "max_cluster_load_ratio",
    "rsd_cluster_load",
    "rate_ratio",
    "rate_rsd",
    "item_ratio",
    "items_moved_inter",
    "items_moved_intra",
    "splits",
    "moves",
    "hit_rate",
];

/// Number of numeric fields reported per record.
pub const N_FIELDS: usize = FIELD_NAMES.len();

impl MetricsRecord {
    /// Numeric fields in [`FIELD_NAMES`] order.
    pub fn values(&self) -> [f64; N_FIELDS] {
        [
            self.n_nodes as f64,
            self.n_clusters as f64,
            self.max_cluster_load_ratio,
            self.rsd_cluster_load,
            self.rate_ratio,
            self.rate_rsd,
            self.item_ratio,
            self.items_moved_inter as f64,
            self.items_moved_intra as f64,
            self.splits as f64,
            self.moves as f64,
            self.hit_rate,
        ]
    }

    pub fn field_index(name: &str) -> Option<usize> {
        FIELD_NAMES.iter().position(|&f| f == name)
    }
}

/// Welford's streaming mean and variance.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn population_sd(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }

    pub fn sample_sd(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0).sqrt()
        }
    }

    pub fn rsd(&self) -> f64 {
        if self.mean > 0.0 {
            self.population_sd() / self.mean
        } else {
            0.0
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Two-pass relative standard deviation (population sd over mean).
pub fn rsd_two_pass(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if !(m > 0.0) {
        return 0.0;
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    var.sqrt() / m
}

/// Max over mean, or 1 for constant or empty inputs.
pub fn max_ratio(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if !(m > 0.0) {
        return 1.0;
    }
    xs.iter().copied().fold(f64::MIN, f64::max) / m
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut num = 0.0;
    let (mut dx, mut dy) = (0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

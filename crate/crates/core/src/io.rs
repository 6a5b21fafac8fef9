//! Config files, experiment manifests and result tables.
//!
//! Configs are flat `key = value` lines with `#` comments. A manifest uses the
//! same syntax plus `[base]` and `[cell NAME]` section headers; each cell is a
//! set of deltas over the base. Result tables are CSV with one row per cell
//! and cycle.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{FIELD_NAMES, N_FIELDS};
use crate::overlay::JoinPolicy;
use crate::sim::{CellResult, GridCell, SimConfig};

/// Every key accepted in a config file, in serialization order.
pub const CONFIG_KEYS: [&str; 24] = [
    "network_size",
    "arrival_rate",
    "departure_rate",
    "items_per_node",
    "node_request_rate",
    "capacity_shape",
    "capacity_scale",
    "cycles",
    "alpha",
    "beta",
    "gamma",
    "k_schedule",
    "split_min_share",
    "split_cooldown",
    "seed",
    "inter_balancing",
    "intra_balancing",
    "join_policy",
    "fanout",
    "ttl",
    "mu",
    "nu",
    "cluster_size",
    "id_bits",
];

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse {value:?} as a number"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {value:?}")),
    }
}

/// Assigns one key. Values are checked for syntax only; ranges are checked by
/// [`SimConfig::validate`].
pub fn set_key(cfg: &mut SimConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    let b = &mut cfg.balance;
    match key {
        "network_size" => cfg.network_size = parse_num(value)?,
        "arrival_rate" => cfg.arrival_rate = parse_num(value)?,
        "departure_rate" => cfg.departure_rate = parse_num(value)?,
        "items_per_node" => cfg.items_per_node = parse_num(value)?,
        "node_request_rate" => cfg.node_request_rate = parse_num(value)?,
        "capacity_shape" => cfg.capacity_shape = parse_num(value)?,
        "capacity_scale" => cfg.capacity_scale = parse_num(value)?,
        "cycles" => cfg.cycles = parse_num(value)?,
        "alpha" => b.alpha = parse_num(value)?,
        "beta" => b.beta = parse_num(value)?,
        "gamma" => b.gamma = parse_num(value)?,
        "k_schedule" => b.k_schedule = value.parse()?,
        "split_min_share" => b.split_min_share = parse_num(value)?,
        "split_cooldown" => b.split_cooldown = parse_num(value)?,
        "seed" => cfg.seed = parse_num(value)?,
        "inter_balancing" => cfg.inter_balancing = parse_bool(value)?,
        "intra_balancing" => cfg.intra_balancing = parse_bool(value)?,
        "join_policy" => {
            cfg.join_policy = match value {
                "uniform" => JoinPolicy::Uniform,
                "proportional-to-size" => JoinPolicy::ProportionalToSize,
                _ => return Err(format!("expected uniform or proportional-to-size, got {value:?}")),
            }
        }
        "fanout" => cfg.fanout = parse_num(value)?,
        "ttl" => cfg.ttl = parse_num(value)?,
        "mu" => cfg.mu = parse_num(value)?,
        "nu" => cfg.nu = parse_num(value)?,
        "cluster_size" => cfg.cluster_size = parse_num(value)?,
        "id_bits" => cfg.id_bits = parse_num(value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Current value of `key` in config syntax.
pub fn get_key(cfg: &SimConfig, key: &str) -> Option<String> {
    let b = &cfg.balance;
    Some(match key {
        "network_size" => cfg.network_size.to_string(),
        "arrival_rate" => cfg.arrival_rate.to_string(),
        "departure_rate" => cfg.departure_rate.to_string(),
        "items_per_node" => cfg.items_per_node.to_string(),
        "node_request_rate" => cfg.node_request_rate.to_string(),
        "capacity_shape" => cfg.capacity_shape.to_string(),
        "capacity_scale" => cfg.capacity_scale.to_string(),
        "cycles" => cfg.cycles.to_string(),
        "alpha" => b.alpha.to_string(),
        "beta" => b.beta.to_string(),
        "gamma" => b.gamma.to_string(),
        "k_schedule" => b.k_schedule.to_string(),
        "split_min_share" => b.split_min_share.to_string(),
        "split_cooldown" => b.split_cooldown.to_string(),
        "seed" => cfg.seed.to_string(),
        "inter_balancing" => cfg.inter_balancing.to_string(),
        "intra_balancing" => cfg.intra_balancing.to_string(),
        "join_policy" => cfg.join_policy.name().to_string(),
        "fanout" => cfg.fanout.to_string(),
        "ttl" => cfg.ttl.to_string(),
        "mu" => cfg.mu.to_string(),
        "nu" => cfg.nu.to_string(),
        "cluster_size" => cfg.cluster_size.to_string(),
        "id_bits" => cfg.id_bits.to_string(),
        _ => return None,
    })
}

/// Full config in file syntax, one key per line.
pub fn config_to_string(cfg: &SimConfig) -> String {
    let mut out = String::new();
    for key in CONFIG_KEYS {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&get_key(cfg, key).expect("listed key"));
        out.push('\n');
    }
    out
}

enum Line<'a> {
    Blank,
    Section(&'a str),
    Pair(&'a str, &'a str),
}

fn lex(line: &str) -> std::result::Result<Line<'_>, String> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(Line::Blank);
    }
    if let Some(rest) = line.strip_prefix('[') {
        let inner = rest.strip_suffix(']').ok_or("unterminated section header")?;
        return Ok(Line::Section(inner.trim()));
    }
    let (k, v) = line.split_once('=').ok_or("expected key = value")?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err("missing key".into());
    }
    Ok(Line::Pair(k, v))
}

fn parse_error(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.into(),
        line,
        msg: msg.into(),
    }
}

/// Parses and validates a config. Absent keys keep their defaults.
pub fn parse_config(text: &str, origin: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut seen = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        match lex(raw).map_err(|m| parse_error(origin, i + 1, m))? {
            Line::Blank => {}
            Line::Section(_) => return Err(parse_error(origin, i + 1, "sections are only allowed in manifests")),
            Line::Pair(k, v) => {
                if seen.contains(&k) {
                    return Err(parse_error(origin, i + 1, format!("duplicate key {k:?}")));
                }
                seen.push(k);
                set_key(&mut cfg, k, v).map_err(|m| parse_error(origin, i + 1, m))?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    parse_config(&read(path)?, &path.display().to_string())
}

/// A named grid of configurations run for a fixed number of trials.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub name: String,
    /// Free-text description of the figure or claim the grid reproduces.
    pub figure: String,
    pub trials: u32,
    pub base: SimConfig,
    pub cells: Vec<GridCell>,
}

/// Parses a manifest. A manifest without cells runs the base as one cell.
pub fn parse_manifest(text: &str, origin: &str) -> Result<ExperimentManifest> {
    enum Where {
        Top,
        Base,
        Cell(usize),
    }
    let mut name = None;
    let mut figure = String::new();
    let mut trials = 5u32;
    let mut base_lines: Vec<(usize, &str, &str)> = Vec::new();
    let mut cells: Vec<(String, Vec<(usize, &str, &str)>)> = Vec::new();
    let mut at = Where::Top;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        match lex(raw).map_err(|m| parse_error(origin, n, m))? {
            Line::Blank => {}
            Line::Section("base") => at = Where::Base,
            Line::Section(s) => {
                let cell = s
                    .strip_prefix("cell")
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| parse_error(origin, n, format!("unknown section [{s}]")))?;
                if cells.iter().any(|(c, _)| c == cell) {
                    return Err(parse_error(origin, n, format!("duplicate cell {cell:?}")));
                }
                cells.push((cell.to_string(), Vec::new()));
                at = Where::Cell(cells.len() - 1);
            }
            Line::Pair(k, v) => match at {
                Where::Top => match k {
                    "name" => name = Some(v.to_string()),
                    "figure" => figure = v.to_string(),
                    "trials" => {
                        trials = parse_num(v).map_err(|m| parse_error(origin, n, m))?;
                        if trials == 0 {
                            return Err(parse_error(origin, n, "trials must be at least 1"));
                        }
                    }
                    _ => return Err(parse_error(origin, n, format!("unknown manifest key {k:?}"))),
                },
                Where::Base => base_lines.push((n, k, v)),
                Where::Cell(c) => cells[c].1.push((n, k, v)),
            },
        }
    }
    let name = name.ok_or_else(|| parse_error(origin, 0, "manifest has no name"))?;
    let mut base = SimConfig::default();
    for &(n, k, v) in &base_lines {
        set_key(&mut base, k, v).map_err(|m| parse_error(origin, n, m))?;
    }
    base.validate()?;
    if cells.is_empty() {
        cells.push(("base".into(), Vec::new()));
    }
    let mut grid = Vec::with_capacity(cells.len());
    for (cell, lines) in cells {
        let mut config = base.clone();
        let mut deltas = Vec::new();
        for (n, k, v) in lines {
            set_key(&mut config, k, v).map_err(|m| parse_error(origin, n, m))?;
            deltas.push((k.to_string(), v.to_string()));
        }
        config.validate()?;
        grid.push(GridCell {
            name: cell,
            deltas,
            config,
        });
    }
    Ok(ExperimentManifest {
        name,
        figure,
        trials,
        base,
        cells: grid,
    })
}

pub fn load_manifest(path: &Path) -> Result<ExperimentManifest> {
    parse_manifest(&read(path)?, &path.display().to_string())
}

/// Renders `x` with 6 significant digits, dropping trailing zeros.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("own output");
    rounded.to_string()
}

/// One row of a result table: one cell at one cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    /// Values for [`ResultTable::delta_keys`], in order.
    pub deltas: Vec<String>,
    pub cycle: u32,
    pub mean: [f64; N_FIELDS],
    pub sd: [f64; N_FIELDS],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub delta_keys: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Builds a table from completed cells, in cell then cycle order. Cells
    /// whose trials failed contribute no rows.
    pub fn from_cells(cells: &[GridCell], results: &[CellResult]) -> ResultTable {
        let mut delta_keys: Vec<String> = Vec::new();
        for c in cells {
            for (k, _) in &c.deltas {
                if !delta_keys.contains(k) {
                    delta_keys.push(k.clone());
                }
            }
        }
        let mut rows = Vec::new();
        for (cell, res) in cells.iter().zip(results) {
            let Ok(stats) = &res.outcome else { continue };
            let deltas: Vec<String> = delta_keys
                .iter()
                .map(|k| get_key(&cell.config, k).expect("known key"))
                .collect();
            for (i, &cycle) in stats.cycles.iter().enumerate() {
                rows.push(ResultRow {
                    experiment: cell.name.clone(),
                    deltas: deltas.clone(),
                    cycle,
                    mean: stats.mean[i],
                    sd: stats.sd[i],
                });
            }
        }
        ResultTable { delta_keys, rows }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["experiment".to_string()];
        h.extend(self.delta_keys.iter().cloned());
        h.push("cycle".into());
        for f in FIELD_NAMES {
            h.push(format!("{f}_mean"));
            h.push(format!("{f}_sd"));
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parse {
            path: "<csv>".into(),
            line: 0,
            msg: e.to_string(),
        };
        w.write_record(self.header()).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.experiment.clone()];
            rec.extend(r.deltas.iter().cloned());
            rec.push(r.cycle.to_string());
            for (m, s) in r.mean.iter().zip(&r.sd) {
                rec.push(fmt6(*m));
                rec.push(fmt6(*s));
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse {
            path: "<csv>".into(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("utf-8 input"))
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<ResultTable> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let err = |line: usize, msg: String| parse_error(origin, line, msg);
        let header: Vec<String> = rd
            .headers()
            .map_err(|e| err(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let tail = 1 + 2 * N_FIELDS;
        if header.len() < tail + 1 || header[0] != "experiment" {
            return Err(err(1, "not a result table header".into()));
        }
        let n_deltas = header.len() - tail - 1;
        let table = ResultTable {
            delta_keys: header[1..1 + n_deltas].to_vec(),
            rows: Vec::new(),
        };
        if table.header() != header {
            return Err(err(1, "unexpected columns".into()));
        }
        let mut table = table;
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| err(line, e.to_string()))?;
            let cell = |j: usize| rec.get(j).unwrap_or("");
            let cycle = parse_num(cell(1 + n_deltas)).map_err(|m| err(line, m))?;
            let mut mean = [0.0; N_FIELDS];
            let mut sd = [0.0; N_FIELDS];
            for f in 0..N_FIELDS {
                let at = 2 + n_deltas + 2 * f;
                mean[f] = parse_num(cell(at)).map_err(|m| err(line, m))?;
                sd[f] = parse_num(cell(at + 1)).map_err(|m| err(line, m))?;
            }
            table.rows.push(ResultRow {
                experiment: cell(0).to_string(),
                deltas: (1..=n_deltas).map(|j| cell(j).to_string()).collect(),
                cycle,
                mean,
                sd,
            });
        }
        Ok(table)
    }

    /// Row slice per experiment, in first-appearance order.
    pub fn experiments(&self) -> Vec<(&str, Vec<&ResultRow>)> {
        let mut out: Vec<(&str, Vec<&ResultRow>)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(n, _)| *n == r.experiment) {
                Some((_, v)) => v.push(r),
                None => out.push((&r.experiment, vec![r])),
            }
        }
        out
    }
}

/// Writes the table to `path` through a temporary file in the same directory,
/// so a failed write never leaves a partial file behind.
pub fn write_results(table: &ResultTable, path: &Path) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let text = table.to_csv()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<ResultTable> {
    ResultTable::parse_csv(&read(path)?, &path.display().to_string())
}

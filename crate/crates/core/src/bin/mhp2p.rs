use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use mhp2p::io::{self, ResultTable};
use mhp2p::metrics::FIELD_NAMES;
use mhp2p::sim::{self, CellStats, GridCell, SimConfig, Simulation, FINAL_WINDOW};
use mhp2p::{Error, Result};

#[derive(Parser)]
#[command(name = "mhp2p", version, about = "Cycle-driven simulator of a Chord ring of server clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation, print final-window means and write the per-cycle CSV.
    Run {
        /// Config file; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long, env = "MHP2P_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = "run.csv")]
        out: PathBuf,
        /// No per-cycle progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Run every cell of a manifest for its trial count.
    Experiment {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; the CSV is named after the manifest.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads; defaults to the grid size capped at available cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed base for every cell; trial i uses seed + i.
        #[arg(long, env = "MHP2P_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config file and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Print final-window means and sds per experiment from a result CSV.
    Summarize { csv: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Run { .. } => "run",
        Command::Experiment { .. } => "experiment",
        Command::Validate { .. } => "validate",
        Command::Summarize { .. } => "summarize",
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            let mut cmd = Cli::command();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("{}", sub.render_usage());
            }
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            quiet,
        } => run(config.as_deref(), seed, &out, quiet),
        Command::Experiment {
            manifest,
            out,
            jobs,
            seed,
            quiet,
        } => experiment(&manifest, &out, jobs, seed, quiet),
        Command::Validate { config, quiet } => {
            let cfg = io::load_config(&config)?;
            if !quiet {
                print!("{}", io::config_to_string(&cfg));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { csv } => {
            summarize(&io::read_results(&csv)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(config: Option<&Path>, seed: Option<u64>, out: &Path, quiet: bool) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(p) => io::load_config(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut sim = Simulation::bootstrap(&cfg)?;
    let mut records = Vec::with_capacity(cfg.cycles as usize);
    for _ in 0..cfg.cycles {
        let r = sim.step();
        if !quiet {
            eprintln!("cycle {}/{}", r.cycle, cfg.cycles);
        }
        records.push(r);
    }
    let trial = sim::TrialResult::new(records);
    println!("final {FINAL_WINDOW}-cycle means (seed {}):", cfg.seed);
    for (name, v) in FIELD_NAMES.iter().zip(trial.final_means) {
        println!("  {name:<24} {}", io::fmt6(v));
    }
    let cells = [GridCell {
        name: "run".into(),
        deltas: Vec::new(),
        config: cfg,
    }];
    let results = [sim::CellResult {
        name: "run".into(),
        deltas: Vec::new(),
        outcome: Ok(CellStats::from_trials(vec![trial])),
    }];
    io::write_results(&ResultTable::from_cells(&cells, &results), out)?;
    Ok(ExitCode::SUCCESS)
}

fn experiment(manifest: &Path, out: &Path, jobs: Option<usize>, seed: Option<u64>, quiet: bool) -> Result<ExitCode> {
    let mut m = io::load_manifest(manifest)?;
    if let Some(s) = seed {
        for c in &mut m.cells {
            c.config.seed = s;
        }
    }
    let jobs = jobs.unwrap_or_else(|| sim::default_jobs(m.cells.len(), m.trials)).max(1);
    if !quiet {
        eprintln!(
            "{}: {} cells x {} trials on {jobs} worker(s)",
            m.name,
            m.cells.len(),
            m.trials
        );
    }
    let results = sim::run_experiment(&m.cells, m.trials, jobs);
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(stats) if !quiet => eprintln!(
                "cell {} done: max_cluster_load_ratio {}",
                r.name,
                io::fmt6(stats.final_mean("max_cluster_load_ratio"))
            ),
            Ok(_) => {}
            Err(e) => {
                failed += 1;
                eprintln!("error: trial: cell {}: {}", r.name, e.replace('\n', " "));
            }
        }
    }
    let table = ResultTable::from_cells(&m.cells, &results);
    if table.rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join(format!("{}.csv", m.name));
    io::write_results(&table, &path)?;
    if !quiet {
        summarize(&table);
        eprintln!("wrote {}", path.display());
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn summarize(table: &ResultTable) {
    for (name, rows) in table.experiments() {
        let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
        println!("{name} (final {} cycles)", tail.len());
        for (f, field) in FIELD_NAMES.iter().enumerate() {
            let n = tail.len() as f64;
            let mean = tail.iter().map(|r| r.mean[f]).sum::<f64>() / n;
            let sd = tail.iter().map(|r| r.sd[f]).sum::<f64>() / n;
            println!("  {field:<24} {} ± {}", io::fmt6(mean), io::fmt6(sd));
        }
    }
}

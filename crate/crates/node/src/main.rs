use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orderless::bench::{run_simulation, AggregateReport, SuiteEntry, WorkloadConfig};
use orderless::genesis::{Genesis, Keyring};
use orderless::ledger::Ledger;
use orderless::node::VerifyCache;
use orderless::sim::secs;
use orderless_core::{EndorsementPolicy, Registry, Validity};

#[derive(Parser)]
#[command(name = "orderless", version, about = "Coordination-free ledger benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment in the simulator and save reports and ledgers.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Gossip rounds to run after the workload drains.
        #[arg(long, default_value_t = 32)]
        settle_rounds: u64,
    },
    /// Check hash chains and re-validate blocks of saved ledgers.
    VerifyLedger {
        /// A ledger directory, or any directory containing ledgers.
        #[arg(long)]
        dir: PathBuf,
        /// Defaults to the nearest genesis.json above `dir`.
        #[arg(long)]
        genesis: Option<PathBuf>,
    },
    /// Compare state digests and valid transaction sets across organizations.
    ConvergenceCheck {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Cmd::Run {
            config,
            seed,
            reps,
            out,
            settle_rounds,
        } => run(&config, seed, reps, &out, settle_rounds),
        Cmd::VerifyLedger { dir, genesis } => verify_ledgers(&dir, genesis.as_deref()),
        Cmd::ConvergenceCheck { out } => convergence_check(&out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn run(config: &Path, seed: Option<u64>, reps: usize, out: &Path, settle_rounds: u64) -> Res<bool> {
    if reps == 0 {
        return Err("--reps must be at least 1".into());
    }
    let mut cfg = WorkloadConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for r in 0..reps {
        let rep = WorkloadConfig {
            seed: cfg.seed.wrapping_add(r as u64),
            ..cfg.clone()
        };
        let (report, mut sim) = run_simulation(&rep)?;
        report.write_csv(&out.join(format!("rep-{r}.csv")))?;
        let drained = sim.run_until_quiescent(secs(rep.duration_s) + 600 * orderless::sim::SECOND);
        sim.run_gossip_rounds(settle_rounds);
        Keyring::derive(rep.num_orgs, rep.clients, rep.seed)
            .genesis(rep.q)
            .save(&out.join(format!("genesis-rep-{r}.json")))?;
        let dir = out.join("ledgers").join(format!("rep-{r}"));
        for node in sim.nodes() {
            node.ledger().save(&dir.join(node.id()))?;
        }
        println!(
            "rep {r}: seed {} throughput {:.1} tps, latency avg {:.1} ms p1 {:.1} ms p99 {:.1} ms, \
             submitted {} committed {} reads {} failed {} in flight {}{}",
            rep.seed,
            report.throughput,
            report.latency_avg_ms,
            report.latency_p1_ms,
            report.latency_p99_ms,
            report.submitted,
            report.committed,
            report.reads,
            report.failed,
            report.in_flight,
            if drained { "" } else { " (did not drain)" },
        );
        runs.push(report);
    }
    let entry = SuiteEntry {
        config: cfg,
        mean: AggregateReport::of(&runs),
        runs,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&[&entry])?)?;
    println!(
        "mean over {reps}: throughput {:.1} tps, latency avg {:.1} ms",
        entry.mean.throughput, entry.mean.latency_avg_ms
    );
    Ok(true)
}

/// Directories below `root` (inclusive) holding a block log.
fn ledger_dirs(root: &Path) -> Res<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("blocks.log").is_file() {
            found.push(dir);
            continue;
        }
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// The genesis file of the run a ledger belongs to.
fn find_genesis(ledger: &Path) -> Option<PathBuf> {
    let rep = ledger.parent()?.file_name()?.to_str()?.to_string();
    ledger.ancestors().skip(1).find_map(|dir| {
        [dir.join(format!("genesis-{rep}.json")), dir.join("genesis.json")]
            .into_iter()
            .find(|p| p.is_file())
    })
}

fn verify_ledgers(root: &Path, genesis: Option<&Path>) -> Res<bool> {
    let dirs = ledger_dirs(root)?;
    if dirs.is_empty() {
        return Err(format!("no ledgers below {}", root.display()).into());
    }
    let mut rosters: HashMap<PathBuf, (Registry, EndorsementPolicy, VerifyCache)> = HashMap::new();
    let mut all_ok = true;
    for dir in dirs {
        let ledger = Ledger::load(&dir)?;
        let mut problems = Vec::new();
        if let Err(e) = ledger.verify() {
            problems.push(format!("chain: {e:?}"));
        }
        let divergent = ledger.object_ids().into_iter().filter(|id| ledger.object(id) != ledger.replay_object(id)).count();
        if divergent > 0 {
            problems.push(format!("{divergent} objects differ from replay"));
        }
        match genesis.map(Path::to_path_buf).or_else(|| find_genesis(&dir)) {
            None => problems.push("no genesis file found".into()),
            Some(path) => {
                if !rosters.contains_key(&path) {
                    let g = Genesis::load(&path)?;
                    rosters.insert(path.clone(), (g.registry()?, g.policy()?, VerifyCache::new()));
                }
                let (registry, policy, cache) = &rosters[&path];
                for b in ledger.blocks() {
                    let ok = cache.validate(&b.transaction, policy, registry).is_ok();
                    if ok != (b.validity == Validity::Valid) {
                        problems.push(format!("block {} verdict {:?} does not re-validate", b.height, b.validity));
                    }
                }
            }
        }
        let status = if problems.is_empty() { "ok" } else { "FAILED" };
        println!("{}: {} blocks, {status}", dir.display(), ledger.len());
        for p in &problems {
            println!("  {p}");
        }
        all_ok &= problems.is_empty();
    }
    Ok(all_ok)
}

fn convergence_check(out: &Path) -> Res<bool> {
    let ledgers = out.join("ledgers");
    let runs: Vec<PathBuf> = if ledgers.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(&ledgers)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        v.retain(|p| p.is_dir());
        v.sort();
        v
    } else {
        vec![out.to_path_buf()]
    };
    let mut all_ok = true;
    for run in runs {
        let orgs = ledger_dirs(&run)?;
        let mut views = Vec::new();
        for dir in &orgs {
            let l = Ledger::load(dir)?;
            views.push((dir.file_name().unwrap_or_default().to_string_lossy().into_owned(), l.state_digest(), l.valid_tx_ids()));
        }
        let Some((_, digest, ids)) = views.first() else {
            continue;
        };
        let diverged: Vec<&str> = views
            .iter()
            .filter(|(_, d, i)| d != digest || i != ids)
            .map(|(o, _, _)| o.as_str())
            .collect();
        if diverged.is_empty() {
            println!("{}: {} organizations converged on {} ({} valid transactions)", run.display(), views.len(), digest, ids.len());
        } else {
            all_ok = false;
            println!("{}: DIVERGED, differing from {}: {diverged:?}", run.display(), views[0].0);
        }
    }
    Ok(all_ok)
}

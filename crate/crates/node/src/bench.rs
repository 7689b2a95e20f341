//! Experiment orchestration: workload generation, metric collection and
//! report output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use orderless_core::contract::{Auction, Synthetic, Voting};
use orderless_core::{ContractRegistry, CrdtKind, EndorsementPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{Call, Outcome, SessionConfig};
use crate::sim::byzantine::ByzantineSchedule;
use crate::sim::link::LinkModel;
use crate::sim::{secs, CostModel, LinkOverride, Network, SimConfig, SimTime, Simulation, SECOND};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parsing toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
#[error("config {index}: {source}")]
pub struct SuiteError {
    pub index: usize,
    #[source]
    pub source: ConfigError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Application {
    Synthetic,
    Voting,
    Auction,
}

/// One experiment. Defaults are the desk-scale synthetic setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub application: Application,
    /// Transactions per second, spread uniformly over the run.
    pub arrival_rate: f64,
    pub duration_s: f64,
    pub read_percent: u32,
    pub modify_percent: u32,
    pub num_orgs: usize,
    /// Endorsement policy `{q of num_orgs}`.
    pub q: usize,
    pub clients: usize,
    pub gossip_ratio: usize,
    pub gossip_interval_s: f64,
    pub byzantine: ByzantineSchedule,
    pub seed: u64,
    pub obj_count: usize,
    pub ops_per_obj: usize,
    pub crdt_type: String,
    pub elections: usize,
    pub parties: usize,
    pub auctions: usize,
    pub max_bid: u32,
    pub link: LinkModel,
    pub link_overrides: Vec<LinkOverride>,
    pub costs: CostModel,
    pub suspicion_threshold: u32,
    pub endorse_timeout_s: f64,
    pub receipt_timeout_s: f64,
    pub max_attempts: u32,
    pub auto_retry: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            application: Application::Synthetic,
            arrival_rate: 300.0,
            duration_s: 180.0,
            read_percent: 50,
            modify_percent: 50,
            num_orgs: 8,
            q: 4,
            clients: 1000,
            gossip_ratio: 1,
            gossip_interval_s: 1.0,
            byzantine: ByzantineSchedule::default(),
            seed: 1,
            obj_count: 1,
            ops_per_obj: 1,
            crdt_type: CrdtKind::GCounter.name().into(),
            elections: 8,
            parties: 8,
            auctions: 8,
            max_bid: 10,
            link: LinkModel::default(),
            link_overrides: Vec::new(),
            costs: CostModel::default(),
            suspicion_threshold: session.suspicion_threshold,
            endorse_timeout_s: session.endorse_timeout.as_secs_f64(),
            receipt_timeout_s: session.receipt_timeout.as_secs_f64(),
            max_attempts: session.max_attempts,
            auto_retry: session.auto_retry,
        }
    }
}

impl WorkloadConfig {
    /// Reads a `.toml` file, or JSON for any other extension.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text)?
        } else {
            serde_json::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.read_percent + self.modify_percent != 100 {
            return bad(format!(
                "read and modify percentages sum to {}",
                self.read_percent + self.modify_percent
            ));
        }
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival rate must be positive".into());
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be non-negative".into());
        }
        if let Err(e) = EndorsementPolicy::new(self.q, self.num_orgs) {
            return bad(e.to_string());
        }
        if self.clients == 0 {
            return bad("at least one client is required".into());
        }
        if self.gossip_ratio == 0 || !(self.gossip_interval_s > 0.0) {
            return bad("gossip ratio and interval must be positive".into());
        }
        if self.kind().is_none() {
            return bad(format!("unknown crdt type {:?}", self.crdt_type));
        }
        if self.obj_count == 0 || self.ops_per_obj == 0 {
            return bad("obj_count and ops_per_obj must be at least 1".into());
        }
        if self.elections == 0 || self.parties == 0 || self.auctions == 0 || self.max_bid == 0 {
            return bad("application sizes must be positive".into());
        }
        if self.max_attempts == 0 || self.suspicion_threshold == 0 {
            return bad("max_attempts and suspicion_threshold must be positive".into());
        }
        for link in std::iter::once(&self.link).chain(self.link_overrides.iter().map(|o| &o.link)) {
            link.check().map_err(|e| ConfigError::Invalid(e.into()))?;
        }
        self.byzantine.check(self.duration_s).map_err(ConfigError::Invalid)
    }

    fn kind(&self) -> Option<CrdtKind> {
        CrdtKind::parse(&self.crdt_type)
    }

    pub fn policy(&self) -> EndorsementPolicy {
        EndorsementPolicy::new(self.q, self.num_orgs).expect("validated policy")
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            suspicion_threshold: self.suspicion_threshold,
            endorse_timeout: Duration::from_secs_f64(self.endorse_timeout_s),
            receipt_timeout: Duration::from_secs_f64(self.receipt_timeout_s),
            max_attempts: self.max_attempts,
            auto_retry: self.auto_retry,
            ..SessionConfig::default()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            link: self.link.clone(),
            link_overrides: self.link_overrides.clone(),
            gossip_ratio: self.gossip_ratio,
            gossip_interval_s: self.gossip_interval_s,
            costs: self.costs.clone(),
            byzantine: self.byzantine.clone(),
        }
    }

    pub fn contracts(&self) -> ContractRegistry {
        let mut reg = ContractRegistry::new();
        reg.register(Box::new(Voting::fixture(self.elections, self.parties)));
        reg.register(Box::new(Auction::new()));
        reg.register(Box::new(Synthetic::default()));
        reg
    }

    /// Number of calls the run submits.
    pub fn total_calls(&self) -> u64 {
        (self.arrival_rate * self.duration_s).floor() as u64
    }

    /// Submission time of the `k`-th call.
    pub fn arrival_time(&self, k: u64) -> SimTime {
        (k as f64 * SECOND as f64 / self.arrival_rate).round() as SimTime
    }
}

/// Produces the calls of an experiment.
pub struct Workload<'a> {
    cfg: &'a WorkloadConfig,
    rng: ChaCha8Rng,
}

impl<'a> Workload<'a> {
    pub fn new(cfg: &'a WorkloadConfig) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x776f_726b_6c6f_6164),
        }
    }

    /// `(client, call, read)`.
    pub fn next_call(&mut self) -> (usize, Call, bool) {
        let cfg = self.cfg;
        let client = self.rng.gen_range(0..cfg.clients);
        let read = self.rng.gen_range(0..100) < cfg.read_percent;
        let call = match cfg.application {
            Application::Synthetic => {
                let kind = cfg.kind().expect("validated crdt type").name();
                let objs = cfg.obj_count.to_string();
                if read {
                    Call::new(Synthetic::ID, "read", &[&objs, kind])
                } else {
                    Call::new(Synthetic::ID, "modify", &[&objs, &cfg.ops_per_obj.to_string(), kind])
                }
            }
            Application::Voting => {
                let party = format!("party-{}", self.rng.gen_range(0..cfg.parties));
                let election = format!("election-{}", self.rng.gen_range(0..cfg.elections));
                let function = if read { "read_vote_count" } else { "vote" };
                Call::new(Voting::ID, function, &[&party, &election])
            }
            Application::Auction => {
                let auction = format!("auction-{}", self.rng.gen_range(0..cfg.auctions));
                if read {
                    Call::new(Auction::ID, "get_highest_bid", &[&auction])
                } else {
                    let amount = self.rng.gen_range(1..=cfg.max_bid).to_string();
                    Call::new(Auction::ID, "bid", &[&amount, &auction])
                }
            }
        };
        (client, call, read)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub duration_s: f64,
    pub submitted: u64,
    /// Writes with receipts from q organizations.
    pub committed: u64,
    /// Reads answered by q organizations.
    pub reads: u64,
    pub failed: u64,
    pub in_flight: u64,
    /// Successful calls (writes and reads) finished within the run, per second.
    pub throughput: f64,
    pub latency_avg_ms: f64,
    pub latency_p1_ms: f64,
    pub latency_p99_ms: f64,
    /// Successful calls finishing in each second of the run.
    pub per_second: Vec<u64>,
    pub failures: BTreeMap<String, u64>,
    pub trace_digest: String,
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl MetricsReport {
    /// Summarizes `sim` at its current time, treating `duration_s` as the
    /// measurement window.
    pub fn collect(sim: &Simulation, duration_s: f64) -> Self {
        let cutoff = secs(duration_s);
        let seconds = duration_s.ceil() as usize;
        let mut per_second = vec![0u64; seconds];
        let mut latencies = Vec::new();
        let (mut committed, mut reads, mut failed) = (0, 0, 0);
        let mut failures = BTreeMap::new();
        for c in sim.completions() {
            match &c.outcome {
                Outcome::Committed(_) => committed += 1,
                Outcome::Read(_) => reads += 1,
                Outcome::Failed(f) => {
                    failed += 1;
                    *failures.entry(f.name().to_string()).or_default() += 1;
                    continue;
                }
            }
            latencies.push(c.latency() as f64 / 1000.0);
            if c.finished_at <= cutoff && seconds > 0 {
                per_second[((c.finished_at / SECOND) as usize).min(seconds - 1)] += 1;
            }
        }
        latencies.sort_by(f64::total_cmp);
        let finished_in_window: u64 = per_second.iter().sum();
        Self {
            duration_s,
            submitted: sim.submitted(),
            committed,
            reads,
            failed,
            in_flight: sim.in_flight() as u64,
            throughput: if duration_s > 0.0 {
                finished_in_window as f64 / duration_s
            } else {
                0.0
            },
            latency_avg_ms: if latencies.is_empty() {
                0.0
            } else {
                latencies.iter().sum::<f64>() / latencies.len() as f64
            },
            latency_p1_ms: percentile(&latencies, 1.0),
            latency_p99_ms: percentile(&latencies, 99.0),
            per_second,
            failures,
            trace_digest: hex::encode(sim.trace_digest().0),
        }
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["second", "completed"])?;
        for (s, n) in self.per_second.iter().enumerate() {
            w.write_record([s.to_string(), n.to_string()])?;
        }
        w.flush()
    }
}

/// Builds the network and simulator for `cfg` and queues its workload.
pub fn prepare(cfg: &WorkloadConfig) -> Result<Simulation, ConfigError> {
    cfg.validate()?;
    let network = Network::build(
        cfg.num_orgs,
        cfg.clients,
        cfg.policy(),
        Arc::new(cfg.contracts()),
        cfg.session(),
        cfg.seed,
    );
    let mut sim = Simulation::new(cfg.sim_config(), network, cfg.seed);
    let mut workload = Workload::new(cfg);
    for k in 0..cfg.total_calls() {
        let (client, call, read) = workload.next_call();
        sim.submit_at(cfg.arrival_time(k), client, call, read);
    }
    Ok(sim)
}

/// Runs `cfg` to its duration and returns the report with the simulator,
/// whose ledgers stay available for inspection.
pub fn run_simulation(cfg: &WorkloadConfig) -> Result<(MetricsReport, Simulation), ConfigError> {
    let mut sim = prepare(cfg)?;
    sim.run_until(secs(cfg.duration_s));
    Ok((MetricsReport::collect(&sim, cfg.duration_s), sim))
}

pub fn run_experiment(cfg: &WorkloadConfig) -> Result<MetricsReport, ConfigError> {
    run_simulation(cfg).map(|(r, _)| r)
}

/// Mean of several runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub throughput: f64,
    pub throughput_stddev: f64,
    pub latency_avg_ms: f64,
    pub latency_p1_ms: f64,
    pub latency_p99_ms: f64,
    pub submitted: f64,
    pub committed: f64,
    pub reads: f64,
    pub failed: f64,
    pub in_flight: f64,
    pub per_second: Vec<f64>,
    pub failures: BTreeMap<String, f64>,
}

impl AggregateReport {
    pub fn of(reports: &[MetricsReport]) -> Self {
        assert!(!reports.is_empty(), "aggregating zero runs");
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let throughput = mean(&|r| r.throughput);
        let var = mean(&|r| (r.throughput - throughput).powi(2));
        let len = reports.iter().map(|r| r.per_second.len()).max().unwrap_or(0);
        let per_second = (0..len)
            .map(|i| mean(&|r| r.per_second.get(i).copied().unwrap_or(0) as f64))
            .collect();
        let mut failures = BTreeMap::new();
        for r in reports {
            for (k, v) in &r.failures {
                *failures.entry(k.clone()).or_insert(0.0) += *v as f64 / n;
            }
        }
        Self {
            runs: reports.len(),
            throughput,
            throughput_stddev: var.sqrt(),
            latency_avg_ms: mean(&|r| r.latency_avg_ms),
            latency_p1_ms: mean(&|r| r.latency_p1_ms),
            latency_p99_ms: mean(&|r| r.latency_p99_ms),
            submitted: mean(&|r| r.submitted as f64),
            committed: mean(&|r| r.committed as f64),
            reads: mean(&|r| r.reads as f64),
            failed: mean(&|r| r.failed as f64),
            in_flight: mean(&|r| r.in_flight as f64),
            per_second,
            failures,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub config: WorkloadConfig,
    pub runs: Vec<MetricsReport>,
    pub mean: AggregateReport,
}

/// Runs each config `repetitions` times, repetition `r` with seed
/// `config.seed + r`. With `out`, writes `config-{i}/rep-{r}.csv` per run
/// plus `summary.json` and `summary.csv`.
pub fn run_suite(
    configs: &[WorkloadConfig],
    repetitions: usize,
    out: Option<&Path>,
) -> Result<Vec<SuiteEntry>, SuiteError> {
    assert!(repetitions >= 1, "at least one repetition");
    let io = |index: usize, path: &Path, e: std::io::Error| SuiteError {
        index,
        source: ConfigError::Io {
            path: path.into(),
            source: e,
        },
    };
    let mut entries = Vec::new();
    for (index, config) in configs.iter().enumerate() {
        let mut runs = Vec::new();
        for r in 0..repetitions {
            let cfg = WorkloadConfig {
                seed: config.seed.wrapping_add(r as u64),
                ..config.clone()
            };
            let report = run_experiment(&cfg).map_err(|source| SuiteError { index, source })?;
            if let Some(out) = out {
                let dir = out.join(format!("config-{index}"));
                std::fs::create_dir_all(&dir).map_err(|e| io(index, &dir, e))?;
                let path = dir.join(format!("rep-{r}.csv"));
                report.write_csv(&path).map_err(|e| io(index, &path, e))?;
            }
            runs.push(report);
        }
        entries.push(SuiteEntry {
            config: config.clone(),
            mean: AggregateReport::of(&runs),
            runs,
        });
    }
    if let Some(out) = out {
        write_summary(&entries, out).map_err(|e| io(configs.len().saturating_sub(1), out, e))?;
    }
    Ok(entries)
}

fn write_summary(entries: &[SuiteEntry], out: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_vec_pretty(entries).map_err(std::io::Error::other)?;
    std::fs::write(out.join("summary.json"), json)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record([
        "config",
        "application",
        "orgs",
        "q",
        "rate",
        "runs",
        "throughput",
        "latency_avg_ms",
        "latency_p1_ms",
        "latency_p99_ms",
        "failed",
    ])?;
    for (i, e) in entries.iter().enumerate() {
        let m = &e.mean;
        w.write_record([
            i.to_string(),
            format!("{:?}", e.config.application).to_lowercase(),
            e.config.num_orgs.to_string(),
            e.config.q.to_string(),
            e.config.arrival_rate.to_string(),
            m.runs.to_string(),
            format!("{:.3}", m.throughput),
            format!("{:.3}", m.latency_avg_ms),
            format!("{:.3}", m.latency_p1_ms),
            format!("{:.3}", m.latency_p99_ms),
            format!("{:.1}", m.failed),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(app: Application) -> WorkloadConfig {
        WorkloadConfig {
            application: app,
            arrival_rate: 20.0,
            duration_s: 5.0,
            num_orgs: 4,
            q: 2,
            clients: 10,
            ..Default::default()
        }
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let xs: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(percentile(&xs, 1.0), 2.0);
        assert_eq!(percentile(&xs, 99.0), 198.0);
        assert_eq!(percentile(&[5.0], 1.0), 5.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn mix_must_sum_to_hundred() {
        let cfg = WorkloadConfig {
            read_percent: 60,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        assert!(WorkloadConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_rate_is_rejected() {
        let cfg = WorkloadConfig {
            arrival_rate: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_duration_gives_an_empty_report() {
        let cfg = WorkloadConfig {
            duration_s: 0.0,
            ..small(Application::Synthetic)
        };
        let r = run_experiment(&cfg).unwrap();
        assert_eq!((r.submitted, r.committed, r.throughput), (0, 0, 0.0));
        assert!(r.per_second.is_empty());
        assert_eq!(r.latency_avg_ms, 0.0);
    }

    #[test]
    fn every_application_commits() {
        for app in [Application::Synthetic, Application::Voting, Application::Auction] {
            let r = run_experiment(&small(app)).unwrap();
            assert_eq!(r.submitted, 100);
            assert_eq!(r.failed, 0, "{app:?}: {:?}", r.failures);
            assert!(r.committed > 0 && r.reads > 0);
            assert_eq!(r.submitted, r.committed + r.reads + r.failed + r.in_flight);
            assert!(r.latency_p1_ms <= r.latency_avg_ms && r.latency_avg_ms <= r.latency_p99_ms);
        }
    }

    #[test]
    fn config_parses_from_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(
            &toml_path,
            "application = \"voting\"\narrival_rate = 50.0\nnum_orgs = 16\nq = 4\n[link]\nbase_delay_ms = 20.0\n",
        )
        .unwrap();
        let c = WorkloadConfig::load(&toml_path).unwrap();
        assert_eq!((c.application, c.num_orgs, c.link.base_delay_ms), (Application::Voting, 16, 20.0));
        assert_eq!(c.duration_s, 180.0);
        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(WorkloadConfig::load(&json_path).unwrap(), c);
        std::fs::write(&json_path, "{\"q\": 9}").unwrap();
        assert!(matches!(WorkloadConfig::load(&json_path), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn suite_writes_outputs_and_averages() {
        let dir = tempfile::tempdir().unwrap();
        let entries = run_suite(&[small(Application::Auction)], 2, Some(dir.path())).unwrap();
        assert_eq!(entries[0].runs.len(), 2);
        assert!(dir.path().join("config-0/rep-1.csv").exists());
        assert!(dir.path().join("summary.csv").exists());
        let summary: Vec<SuiteEntry> =
            serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
        let mean = (entries[0].runs[0].throughput + entries[0].runs[1].throughput) / 2.0;
        assert!((summary[0].mean.throughput - mean).abs() < 1e-9);
    }

    #[test]
    fn suite_reports_the_failing_config() {
        let bad = WorkloadConfig {
            q: 0,
            ..small(Application::Voting)
        };
        let err = run_suite(&[small(Application::Voting), bad], 1, None).unwrap_err();
        assert_eq!(err.index, 1);
    }
}

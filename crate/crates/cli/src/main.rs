//! `qchain`: scenario runs, bound tables, certificate and chain checks, client
//! authentication, consensus transcript replay and the energy calculator.
//!
//! Exit codes: 0 on success, 1 when a check fails or an input is unusable
//! (with a `reason=` line on stderr), 2 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qchain_core::chain::{audit_file, RuleSet};
use qchain_core::codec::{fmt_f64, fmt_sig};
use qchain_core::consensus::{replay, ConsensusTranscript};
use qchain_core::energy::{client_rate, energy_report, radius_report, EnergyModel, ServiceRadius};
use qchain_core::netsim::{run_scenario, ScenarioConfig, ScenarioMetrics};
use qchain_core::poe::{verify_poe_with, PoECertificate, SessionParams, VerifyRules};
use qchain_core::qsa::{authenticate, AuthParams, ClientDevice, PhotonicKeySim};
use qchain_core::qstate::LossModel;
use qchain_core::rng::random_stream;
use qchain_core::steering::{loss_tolerant_bound, make_strategy};
use qchain_core::{Digest, Error};

#[derive(Parser)]
#[command(
    name = "qchain",
    version,
    about = "Proof-of-entanglement consortium chain simulator"
)]
struct Cli {
    /// Print numbers with 17 significant digits instead of 6.
    #[arg(long, global = true)]
    machine: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write metrics, transcripts and the chain log.
    Simulate(SimulateArgs),
    /// Print the cheating bound C_n(eta) as CSV (n,eta,bound).
    Bound(BoundArgs),
    /// Verify a PoE certificate against a block hash.
    Verify(VerifyArgs),
    /// Replay and audit a chain log.
    ChainAudit(ChainAuditArgs),
    /// Run one decoy-state authentication session.
    Auth(AuthArgs),
    /// Session power, block rate, client throughput and consortium power.
    Energy(EnergyArgs),
    /// Largest fiber distance meeting a minimum client pair rate.
    Radius(RadiusArgs),
    /// Re-check a consensus transcript.
    ConsensusReplay(ReplayArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML); defaults apply to every omitted key.
    config: PathBuf,
    /// Seed of the first run; overrides the file's seed.
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of consecutive seeds to run, each into `<out>/seed-<seed>`.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Worker threads for multi-seed runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct BoundArgs {
    /// Setting count.
    n: usize,
    /// Heralding efficiencies; without any, an even grid from 1/n to 1.
    eta: Vec<f64>,
    /// Points in the default grid.
    #[arg(long, default_value_t = 20)]
    grid: usize,
}

#[derive(Args)]
struct VerifyArgs {
    certificate: PathBuf,
    /// Block hash (64 hex digits).
    hash: String,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args)]
struct RuleArgs {
    /// Do not enforce the round cadence (only for the ordering loophole demo).
    #[arg(long)]
    no_ordering: bool,
    #[arg(long, default_value_t = SessionParams::default().min_heralded)]
    min_heralded: u64,
    #[arg(long, default_value_t = SessionParams::default().balance_z)]
    balance_z: f64,
}

impl RuleArgs {
    fn rules(&self) -> VerifyRules {
        VerifyRules {
            ordering: !self.no_ordering,
            min_heralded: self.min_heralded,
            balance_z: self.balance_z,
        }
    }
}

#[derive(Args)]
struct ChainAuditArgs {
    store: PathBuf,
    /// Consortium size; members are servers 0..N.
    #[arg(long)]
    servers: u64,
    #[command(flatten)]
    rules: RuleArgs,
}

#[derive(Args)]
struct AuthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = AuthParams::default().rounds)]
    rounds: u32,
    #[arg(long, default_value_t = AuthParams::default().p_decoy)]
    p_decoy: f64,
    #[arg(long, default_value_t = AuthParams::default().theta_acc)]
    theta_acc: f64,
    #[arg(long, default_value_t = AuthParams::default().theta_decoy)]
    theta_decoy: f64,
    /// Error rate of the genuine modem.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Replace the genuine modem by a keyless guesser right with probability Q.
    #[arg(long, value_name = "Q")]
    adversary: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    entries: usize,
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long, default_value_t = EnergyModel::default().server_watts)]
    server_watts: f64,
    #[arg(long, default_value_t = EnergyModel::default().client_watts)]
    client_watts: f64,
    #[arg(long, default_value_t = EnergyModel::default().pair_rate_hz)]
    pair_rate: f64,
    #[arg(long, default_value_t = EnergyModel::default().window_minutes)]
    window_minutes: f64,
    #[arg(long, default_value_t = EnergyModel::default().team_min)]
    team_min: u32,
    #[arg(long, default_value_t = EnergyModel::default().team_max)]
    team_max: u32,
    #[arg(long, default_value_t = EnergyModel::default().consortium_size)]
    consortium: u32,
}

#[derive(Args)]
struct RadiusArgs {
    #[arg(long, default_value_t = 6e7)]
    pair_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    db_per_km: f64,
    #[arg(long, default_value_t = 0.2)]
    coupling: f64,
    #[arg(long, default_value_t = 0.5)]
    detection: f64,
    #[arg(long, default_value_t = 3000.0)]
    min_rate: f64,
    /// Distance at which to also report the rate the link delivers.
    #[arg(long, default_value_t = 1.0)]
    at_km: f64,
}

#[derive(Args)]
struct ReplayArgs {
    transcript: PathBuf,
}

/// A failed check or unusable input: printed as `reason=<code> <detail>`.
struct Failure {
    code: String,
    detail: String,
}

impl Failure {
    fn new(code: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            detail: detail.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InputDomain(_) => "input_domain",
            Error::UnsupportedSettings(_) => "unsupported_settings",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Malformed { .. } => "malformed",
            Error::Linkage(_) => "linkage",
            Error::Config { .. } => "config",
            Error::Duplicate(_) => "duplicate",
            Error::Io(_) => "io",
        };
        Failure::new(code, e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

struct Fmt {
    machine: bool,
}

impl Fmt {
    fn num(&self, x: f64) -> String {
        if self.machine {
            fmt_f64(x)
        } else {
            fmt_sig(x, 6)
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let base = ScenarioConfig::from_toml(&read(&args.config)?)?;
    if args.runs == 0 {
        return Err(Failure::new("input_domain", "--runs must be at least 1"));
    }
    let seeds: Vec<u64> = (0..args.runs).map(|i| args.seed.wrapping_add(i)).collect();
    let dir_for = |seed: u64| {
        if args.runs == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed-{seed}"))
        }
    };
    let run = |seed: u64| -> Result<ScenarioMetrics, Error> {
        let config = ScenarioConfig {
            seed,
            ..base.clone()
        };
        run_scenario(&config, Some(&dir_for(seed)))
    };
    // each worker owns whole scenarios; results are reported in seed order
    let jobs = args.jobs.clamp(1, seeds.len());
    let mut results: Vec<Option<Result<ScenarioMetrics, Error>>> =
        (0..seeds.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(seeds.len().div_ceil(jobs)).collect();
        let mut start = 0;
        for chunk in chunks {
            let mine = &seeds[start..start + chunk.len()];
            start += chunk.len();
            let run = &run;
            scope.spawn(move || {
                for (slot, &seed) in chunk.iter_mut().zip(mine) {
                    *slot = Some(run(seed));
                }
            });
        }
    });
    for (seed, r) in seeds.iter().zip(results) {
        let m = r.expect("every seed ran")?;
        let s = &m.summary;
        println!(
            "seed={seed} out={} committed={} stalled={} idle={} height={} head={} certificates={} adversarial_certificates={} audit_clean={}",
            dir_for(*seed).display(),
            s.committed_blocks,
            s.stalled_rounds,
            s.idle_rounds,
            s.chain_height,
            s.head_hash,
            s.total_certificates,
            s.adversarial_certificates,
            s.chain_audit_clean
        );
    }
    Ok(())
}

fn bound(args: &BoundArgs, f: &Fmt) -> Result<(), Failure> {
    let n = args.n;
    let strategy = make_strategy(n)?;
    println!("n,eta,bound");
    {
        let etas: Vec<f64> = if args.eta.is_empty() {
            if args.grid < 2 {
                return Err(Failure::new(
                    "input_domain",
                    "--grid needs at least 2 points",
                ));
            }
            let lo = 1.0 / n as f64;
            (0..args.grid)
                .map(|i| lo + (1.0 - lo) * i as f64 / (args.grid - 1) as f64)
                .collect()
        } else {
            args.eta.clone()
        };
        for eta in etas {
            let b = loss_tolerant_bound(&strategy, eta)?;
            println!("{n},{},{}", f.num(eta), f.num(b));
        }
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let cert = PoECertificate::from_text(&read(&args.certificate)?)?;
    let hash =
        Digest::from_hex(&args.hash).map_err(|e| Failure::new("malformed_hash", e.to_string()))?;
    match verify_poe_with(&cert, &hash, &args.rules.rules()).reason() {
        None => {
            println!(
                "accepted s_n={} bound={}",
                fmt_sig(cert.report.s_n, 6),
                fmt_sig(cert.report.bound, 6)
            );
            Ok(())
        }
        Some(r) => Err(Failure::new(r.code(), r.to_string())),
    }
}

fn chain_audit(args: &ChainAuditArgs) -> Result<(), Failure> {
    let mut rules = RuleSet::new(0..args.servers);
    rules.verify = args.rules.rules();
    let report = audit_file(&args.store, &rules)?;
    println!(
        "blocks={} certificates={}",
        report.blocks, report.certificates
    );
    if report.is_clean() {
        println!("clean");
        Ok(())
    } else {
        for p in &report.problems {
            println!("problem {p}");
        }
        Err(Failure::new(
            "audit_failed",
            format!("{} problem(s)", report.problems.len()),
        ))
    }
}

fn auth(args: &AuthArgs) -> Result<(), Failure> {
    let params = AuthParams {
        rounds: args.rounds,
        p_decoy: args.p_decoy,
        theta_acc: args.theta_acc,
        theta_decoy: args.theta_decoy,
        ..AuthParams::default()
    };
    let mut rng = random_stream(args.seed, 0);
    let key = PhotonicKeySim::generate(&mut rng);
    let record = key.enroll(args.entries)?;
    let device = match args.adversary {
        Some(q) => ClientDevice::guesser(q),
        None => ClientDevice::genuine(key, args.noise),
    };
    let result = authenticate(&record, &device, &params, &mut rng)?;
    println!("{}", result.to_line());
    Ok(())
}

fn energy(args: &EnergyArgs, f: &Fmt) -> Result<(), Failure> {
    let model = EnergyModel {
        server_watts: args.server_watts,
        client_watts: args.client_watts,
        pair_rate_hz: args.pair_rate,
        window_minutes: args.window_minutes,
        team_min: args.team_min,
        team_max: args.team_max,
        consortium_size: args.consortium,
    };
    let r = energy_report(&model)?;
    println!("session_watts={}", f.num(r.session_watts));
    println!("blocks_per_day={}", f.num(r.blocks_per_day));
    println!(
        "clients_per_day={}..{}",
        f.num(r.clients_per_day.0),
        f.num(r.clients_per_day.1)
    );
    println!("consortium_watts={}", f.num(r.consortium_watts));
    Ok(())
}

fn radius(args: &RadiusArgs, f: &Fmt) -> Result<(), Failure> {
    let loss = LossModel::new(0.0, args.db_per_km, args.coupling, args.detection)?;
    let r = radius_report(args.pair_rate, &loss, args.min_rate)?;
    println!("radius_km={}", f.num(r.km()));
    match r {
        ServiceRadius::Km(_) => println!("status=reachable"),
        ServiceRadius::Unreachable => {
            println!(
                "status=unreachable fixed coupling and detection losses exceed the rate budget"
            )
        }
        ServiceRadius::Unbounded => println!("status=unbounded fiber loss is zero"),
    }
    // the rate this link actually delivers, for comparison with the target
    println!(
        "client_rate_at_{}km={}",
        args.at_km,
        f.num(client_rate(args.pair_rate, &loss, args.at_km))
    );
    println!(
        "client_rate_at_source={}",
        f.num(client_rate(args.pair_rate, &loss, 0.0))
    );
    Ok(())
}

fn consensus_replay(args: &ReplayArgs) -> Result<(), Failure> {
    let t = ConsensusTranscript::from_text(&read(&args.transcript)?)?;
    let summary = replay(&t)?;
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let f = Fmt {
        machine: cli.machine,
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Bound(a) => bound(a, &f),
        Command::Verify(a) => verify(a),
        Command::ChainAudit(a) => chain_audit(a),
        Command::Auth(a) => auth(a),
        Command::Energy(a) => energy(a, &f),
        Command::Radius(a) => radius(a, &f),
        Command::ConsensusReplay(a) => consensus_replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reason={} {}", e.code, e.detail);
            ExitCode::from(1)
        }
    }
}

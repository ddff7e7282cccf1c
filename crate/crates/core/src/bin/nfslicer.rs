use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nfslicer::sim::{self, SimConfig, SweepAxis};
use nfslicer::sizing::{self, ScalabilityPoint, SizeHistogram, SizingInput, SwitchModel};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SATURATED: u8 = 3;

/// Slice & Splice engine, NIC/PCIe latency simulator, and sizing calculators.
#[derive(Parser)]
#[command(name = "nfslicer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write report.json and report.csv.
    Simulate(SimulateArgs),
    /// Run one simulation per value of an axis and emit a CSV table.
    Sweep(SweepArgs),
    /// Payload table provisioning and related arithmetic.
    Size(SizeArgs),
    /// Large-packet share of a packet size histogram.
    Analyze(AnalyzeArgs),
    /// Configuration utilities.
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set streams.load.size=1518`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Also write the measuring-stream histogram as histogram.csv.
    #[arg(long)]
    hist: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// packet_size, rate_pps, or sliced_fraction.
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one measuring-stream histogram CSV per row.
    #[arg(long)]
    hist_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long, default_value = "100G")]
    line_rate: String,
    /// Slicing threshold in bytes.
    #[arg(long, default_value_t = 500)]
    thr: u64,
    /// Worst-case residency of a sliced packet, e.g. `10us`.
    #[arg(long, default_value = "10us")]
    service_time: String,
    #[arg(long, default_value_t = nfslicer::packet::MAX_PAYLOAD as u64)]
    max_payload: u64,
    /// Datapath width in bits; with --cycle, reports the sustained line rate.
    #[arg(long, requires = "cycle")]
    width: Option<u64>,
    /// Datapath cycle time, e.g. `2.56ns`.
    #[arg(long, requires = "width")]
    cycle: Option<String>,
    /// Unsliced frame size; reports the data reduction against --sliced.
    #[arg(long)]
    full: Option<u64>,
    #[arg(long, default_value_t = 64)]
    sliced: u64,
    /// Switch SRAM measurements as `servers:utilization,...`.
    #[arg(long)]
    switch_points: Option<String>,
    #[arg(long, default_value = "linear-with-intercept")]
    switch_model: String,
    #[arg(long, default_value_t = 1.0)]
    nic_scale: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV of `size,count` rows or one size per row.
    #[arg(long)]
    hist: PathBuf,
    #[arg(long, default_value_t = 1400)]
    threshold: u32,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the effective configuration as TOML.
    Dump(ConfigArgs),
}

/// Stdout writes that tolerate a closed pipe.
fn emit(s: &str) {
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn config(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_CONFIG,
            msg: msg.to_string(),
        }
    }

    fn other(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_FAILURE,
            msg: msg.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(args: &ConfigArgs) -> Result<SimConfig, Failure> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    if let Ok(seed) = std::env::var("NFSLICER_SEED") {
        let seed: u64 = seed
            .trim()
            .parse()
            .map_err(|_| Failure::config(format!("NFSLICER_SEED={seed:?} is not an unsigned integer")))?;
        overrides.push(format!("sim.seed={seed}"));
    }
    overrides.extend(args.set.iter().cloned());
    SimConfig::from_toml_with_overrides(&text, &overrides).map_err(Failure::config)
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> CmdResult {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Failure::other(format!("{}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Failure::other(format!("{}: {e}", path.display()))
    })
}

fn check_saturation(cfg: &SimConfig) -> CmdResult {
    let sat = cfg.saturation();
    if sat.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = sat.iter().map(|s| format!("  {s}")).collect();
    Err(Failure {
        code: EXIT_SATURATED,
        msg: format!("offered load reaches capacity:\n{}", lines.join("\n")),
    })
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let cfg = load_config(&args.cfg)?;
    check_saturation(&cfg)?;
    let report = sim::run(&cfg).map_err(Failure::config)?;
    let row = sim::report_row("run-0", &report);
    let csv = format!("{}\n{}\n", sim::CSV_COLUMNS.join(","), sim::csv_row(&row));
    write_atomic(&args.out_dir.join("report.json"), &(report.to_json() + "\n"))?;
    write_atomic(&args.out_dir.join("report.csv"), &csv)?;
    if args.hist {
        write_atomic(
            &args.out_dir.join("histogram.csv"),
            &report.measuring_histogram.to_csv(),
        )?;
    }
    let m = &report.measuring.latency;
    emit(&format!(
        "measuring: n={} mean={:.1}ns p50={}ns p90={}ns p99={}ns\n",
        m.count, m.mean_ns, m.p50_ns, m.p90_ns, m.p99_ns
    ));
    emit(&format!(
        "load: injected={} completed={} dropped={} | pcie in/out {:.2}/{:.2} Gbps\n",
        report.load.injected, report.load.completed, report.load.dropped, report.pcie_in_gbps, report.pcie_out_gbps
    ));
    Ok(())
}

fn parse_values(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Failure::config(format!("bad sweep value {v:?}")))
        })
        .collect()
}

fn sweep(args: SweepArgs) -> CmdResult {
    let cfg = load_config(&args.cfg)?;
    let axis: SweepAxis = args.axis.parse().map_err(Failure::config)?;
    let values = parse_values(&args.values)?;
    if values.is_empty() {
        return Err(Failure::config("--values lists no values"));
    }
    let table = sim::sweep(&cfg, axis, &values, args.jobs).map_err(Failure::config)?;
    let csv = table.to_csv();
    match &args.out {
        Some(p) => write_atomic(p, &csv)?,
        None => emit(&csv),
    }
    if let Some(dir) = &args.hist_dir {
        for row in &table.rows {
            if let Some(r) = &row.report {
                write_atomic(
                    &dir.join(format!("{}.csv", row.run_id)),
                    &r.measuring_histogram.to_csv(),
                )?;
            }
        }
    }
    match table.failures() {
        0 => Ok(()),
        n => Err(Failure::other(format!("{n} of {} runs failed", table.rows.len()))),
    }
}

fn parse_points(s: &str) -> Result<Vec<ScalabilityPoint>, Failure> {
    s.split(',')
        .map(|p| {
            let (n, u) = p
                .split_once(':')
                .ok_or_else(|| Failure::config(format!("point {p:?} is not servers:utilization")))?;
            Ok(ScalabilityPoint {
                servers: n
                    .trim()
                    .parse()
                    .map_err(|_| Failure::config(format!("bad server count {n:?}")))?,
                sram_utilization: u
                    .trim()
                    .parse()
                    .map_err(|_| Failure::config(format!("bad utilization {u:?}")))?,
            })
        })
        .collect()
}

fn size(args: SizeArgs) -> CmdResult {
    let line_rate = sizing::parse_bitrate(&args.line_rate).map_err(Failure::config)?;
    let service = sizing::parse_duration_ps(&args.service_time).map_err(Failure::config)?;
    let input = SizingInput {
        max_payload_bytes: args.max_payload,
        ..SizingInput::new(line_rate, args.thr, service)
    };
    let entries = sizing::provision_entries(&input).map_err(Failure::config)?;
    let sram = sizing::sram_bytes(entries, args.max_payload);
    let mut out = json!({
        "entries": entries,
        "sram_bytes": sram,
        "sram_kib": sram as f64 / 1024.0,
        "min_interarrival_ns": input.min_interarrival_ps() / 1000.0,
    });
    if let (Some(w), Some(c)) = (args.width, &args.cycle) {
        let cycle = sizing::parse_duration_ps(c).map_err(Failure::config)?;
        out["line_rate_gbps"] = json!(sizing::line_rate_gbps(w, cycle).map_err(Failure::config)?);
    }
    if let Some(full) = args.full {
        out["data_reduction"] = json!(sizing::data_reduction(full, args.sliced).map_err(Failure::config)?);
    }
    if let Some(points) = &args.switch_points {
        let model: SwitchModel = args.switch_model.parse().map_err(Failure::config)?;
        let fit = sizing::switch_max_servers(&parse_points(points)?, model, args.nic_scale).map_err(Failure::config)?;
        out["switch"] = serde_json::to_value(fit).map_err(Failure::other)?;
    }
    emit(&(serde_json::to_string_pretty(&out).map_err(Failure::other)? + "\n"));
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> CmdResult {
    let file = fs::File::open(&args.hist).map_err(|e| Failure::config(format!("{}: {e}", args.hist.display())))?;
    let hist = SizeHistogram::from_csv(file).map_err(Failure::config)?;
    let mix = sizing::traffic_mix(&hist, args.threshold).map_err(Failure::config)?;
    let out = json!({
        "threshold_bytes": args.threshold,
        "packets": hist.total_packets(),
        "packet_fraction": mix.packet_fraction,
        "byte_fraction": mix.byte_fraction,
    });
    emit(&(serde_json::to_string_pretty(&out).map_err(Failure::other)? + "\n"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Size(a) => size(a),
        Command::Analyze(a) => analyze(a),
        Command::Config {
            command: ConfigCommand::Dump(a),
        } => load_config(&a).map(|cfg| emit(&cfg.to_toml())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

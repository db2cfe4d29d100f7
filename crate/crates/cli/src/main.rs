mod goldens;
mod netfile;
mod output;

use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kraken_core::dse::{self, Constraints, DseQuery};
use kraken_core::engine::{simulate_layer_with, write_trace, SimOptions};
use kraken_core::perfmodel::{layer_perf, network_perf, peak_gops, DomainPerf, LayerPerf};
use kraken_core::verify::{corpus, run_corpus, seeded_operands, Sabotage};
use kraken_core::workload::BUILTIN_NETWORKS;
use kraken_core::{builtin_network, conv_reference, EngineConfig, LayerDescriptor, Network};

use output::{write_all, Cell, Format, Table};

#[derive(Parser, Debug)]
#[command(name = "kraken", version, about = "Dataflow model, simulator and design-space sweep for an elastic-group CNN accelerator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form clocks, efficiency, traffic and bandwidth per layer.
    Model(ModelArgs),
    /// Run layers on the cycle-level engine and check them against the reference.
    Simulate(SimulateArgs),
    /// Sweep array shapes and report the efficiency/traffic front.
    Dse(DseArgs),
    /// Cross-check simulator, formulas and stream transforms over a seeded corpus.
    Verify(VerifyArgs),
    /// Compare the built-in networks at 7x96 against published figures.
    Goldens(GoldensArgs),
}

#[derive(Args, Debug, Clone)]
struct Source {
    /// Built-in network name (alexnet, vgg16, resnet50).
    network: Option<String>,
    /// Network file; see the README for the grammar.
    #[arg(long, env = "KRAKEN_FILE", conflicts_with = "network")]
    file: Option<PathBuf>,
    /// Batch rows for fully-connected and matmul layers.
    #[arg(long, env = "KRAKEN_FC_BATCH")]
    fc_batch: Option<usize>,
}

impl Source {
    fn resolve(&self) -> Result<Network> {
        let net = match (&self.network, &self.file) {
            (_, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let stem = path.file_stem().map_or("network".into(), |s| s.to_string_lossy().into_owned());
                netfile::parse(&text, &stem).with_context(|| path.display().to_string())?
            }
            (Some(name), None) => builtin_network(name).map_err(|e| anyhow!("{e}"))?,
            (None, None) => bail!("name a built-in network or pass --file"),
        };
        Ok(match self.fc_batch {
            Some(rows) => net.with_matrix_batch(rows),
            None => net,
        })
    }
}

#[derive(Args, Debug, Clone)]
struct Engine {
    #[arg(long = "R", env = "KRAKEN_R", default_value_t = 7)]
    rows: usize,
    #[arg(long = "C", env = "KRAKEN_C", default_value_t = 96)]
    cores: usize,
    #[arg(long, env = "KRAKEN_INPUT_BITS", default_value_t = 8)]
    input_bits: u32,
    #[arg(long, env = "KRAKEN_WEIGHT_BITS", default_value_t = 8)]
    weight_bits: u32,
    #[arg(long, env = "KRAKEN_ACC_BITS", default_value_t = 32)]
    acc_bits: u32,
}

impl Engine {
    fn config(&self) -> Result<EngineConfig> {
        let cfg = EngineConfig {
            input_bits: self.input_bits,
            weight_bits: self.weight_bits,
            acc_bits: self.acc_bits,
            ..EngineConfig::new(self.rows, self.cores)
        };
        cfg.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Clone)]
struct Clocking {
    /// Clock for convolution layers, Hz.
    #[arg(long, alias = "f", env = "KRAKEN_F_CONV", default_value_t = 400e6)]
    f_conv: f64,
    /// Clock for fully-connected and matmul layers, Hz.
    #[arg(long, env = "KRAKEN_F_FC", default_value_t = 200e6)]
    f_fc: f64,
}

#[derive(Args, Debug, Clone)]
struct Emit {
    #[arg(long, value_enum, env = "KRAKEN_FORMAT", default_value = "table")]
    format: Format,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    engine: Engine,
    #[command(flatten)]
    clocking: Clocking,
    #[command(flatten)]
    emit: Emit,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    engine: Engine,
    #[command(flatten)]
    emit: Emit,
    #[arg(long, env = "KRAKEN_SEED", default_value_t = 1)]
    seed: u64,
    /// Append per-cycle records (CSV) after the report.
    #[arg(long, env = "KRAKEN_TRACE")]
    trace: bool,
    /// Refuse networks whose closed-form clock total exceeds this.
    #[arg(long, env = "KRAKEN_CAP_CYCLES", default_value_t = 1_000_000_000)]
    cap_cycles: u64,
}

#[derive(Args, Debug)]
struct DseArgs {
    /// Networks in the suite; defaults to every built-in network.
    networks: Vec<String>,
    /// Network files added to the suite.
    #[arg(long = "file", env = "KRAKEN_FILE", value_delimiter = ',')]
    files: Vec<PathBuf>,
    /// Row range, `LO..HI` inclusive.
    #[arg(long, default_value = "1..16", value_parser = parse_range)]
    rows: RangeInclusive<usize>,
    /// Core range, `LO..HI` inclusive.
    #[arg(long, default_value = "8..128", value_parser = parse_range)]
    cores: RangeInclusive<usize>,
    /// Keep only core counts divisible by this
    #[arg(long)]
    core_multiple: Option<usize>,
    /// Largest off-chip traffic per clock (bytes) any layer may need
    #[arg(long)]
    max_bytes_per_clock: Option<u64>,
    /// Deepest per-core weight buffer (beats) any layer may need
    #[arg(long)]
    max_wsram_depth: Option<usize>,
    /// Efficiency slack (fraction) accepted when picking the least-traffic point.
    #[arg(long, default_value_t = 0.005)]
    tolerance: f64,
    /// Emit every grid point rather than the front.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    emit: Emit,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, env = "KRAKEN_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    corpus_size: usize,
    #[command(flatten)]
    emit: Emit,
    /// Offset added to every closed-form clock count (self-test of the checks).
    #[arg(long, hide = true, default_value_t = 0, allow_hyphen_values = true)]
    sabotage_q_offset: i64,
}

#[derive(Args, Debug)]
struct GoldensArgs {
    #[command(flatten)]
    clocking: Clocking,
    #[command(flatten)]
    emit: Emit,
}

fn parse_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    match s.split_once("..") {
        Some((lo, hi)) => Ok(parse(lo)?..=parse(hi.trim_start_matches('='))?),
        None => parse(s).map(|v| v..=v),
    }
}

fn shape(l: &LayerDescriptor) -> String {
    if l.is_conv() {
        format!(
            "{}x{}x{}x{}->{} k{}x{} s{}x{} p{}x{}",
            l.batch, l.height, l.width, l.in_channels, l.out_channels, l.kernel_h, l.kernel_w, l.stride_h, l.stride_w, l.pad_h, l.pad_w
        )
    } else {
        format!("{}x{}->{}", l.height, l.in_channels, l.out_channels)
    }
}

fn pct(v: f64) -> Cell {
    Cell::Float(100.0 * v, 2)
}

/// Outcome of a command: tables to print and whether every check passed.
struct Outcome {
    tables: Vec<Table>,
    notes: Vec<String>,
    ok: bool,
}

fn cmd_model(args: &ModelArgs) -> Result<Outcome> {
    let net = args.source.resolve()?;
    let cfg = args.engine.config()?;
    let mut layers = Table::new(
        format!("{} per layer", net.name),
        ["layer", "kind", "shape", "G", "E", "T", "Q", "eff_%", "M_x", "M_k", "M_y", "AI", "bytes/clk", "status"],
    );
    let mut ok = true;
    let mut perfs: Vec<LayerPerf> = Vec::new();
    for (j, l) in net.layers.iter().enumerate() {
        let f = if l.is_conv() { args.clocking.f_conv } else { args.clocking.f_fc };
        let mut row = vec![Cell::int(j), Cell::text(l.kind.as_str()), Cell::text(shape(l))];
        match layer_perf(l, &cfg, f) {
            Ok(p) => {
                row.extend([
                    Cell::int(p.params.group),
                    Cell::int(p.params.groups),
                    Cell::int(p.params.iterations),
                    Cell::int(p.clocks),
                    pct(p.efficiency),
                    Cell::int(p.words.x),
                    Cell::int(p.words.k),
                    Cell::int(p.words.y),
                    Cell::Float(p.ai, 2),
                    Cell::int(p.bytes_per_clock(cfg.input_bits.max(cfg.weight_bits))),
                    Cell::text(if p.bandwidth.unit_shift_convention { "ok (unit-shift bw)" } else { "ok" }),
                ]);
                perfs.push(p);
            }
            Err(e) => {
                ok = false;
                row.extend((0..10).map(|_| Cell::Empty));
                row.push(Cell::text(format!("error: {e}")));
            }
        }
        layers.push(row);
    }
    let mut tables = vec![layers];
    if ok && !net.layers.is_empty() {
        let perf = network_perf(&net, &cfg, args.clocking.f_conv, args.clocking.f_fc).map_err(|e| anyhow!("{e}"))?;
        let mut agg = Table::new(
            format!("{} aggregate", net.name),
            ["domain", "layers", "batch", "clocks", "eff_%", "fps", "latency_ms", "words", "words/frame", "AI", "Gops"],
        );
        let mut domain = |name: &str, d: &DomainPerf| {
            agg.push(vec![
                Cell::text(name),
                Cell::int(d.layers),
                Cell::int(d.batch),
                Cell::int(d.clocks),
                pct(d.efficiency),
                Cell::Float(d.fps, 2),
                Cell::Float(1e3 * d.latency_s, 3),
                Cell::int(d.words.total()),
                Cell::Float(d.words_per_frame_kernel_amortized, 0),
                Cell::Float(d.ai_per_frame_kernel_amortized, 2),
                Cell::Float(d.efficiency * peak_gops(&cfg, d.frequency_hz), 1),
            ]);
        };
        if let Some(d) = &perf.conv {
            domain("conv", d);
        }
        if let Some(d) = &perf.matrix {
            domain("fc", d);
        }
        agg.push(vec![
            Cell::text("all"),
            Cell::int(perf.layers.len()),
            Cell::Empty,
            Cell::int(perf.layers.iter().map(|l| l.clocks).sum::<u64>()),
            pct(perf.efficiency),
            Cell::Empty,
            Cell::Empty,
            Cell::int(perf.words.total()),
            Cell::Empty,
            Cell::Float(perf.ai, 2),
            Cell::Empty,
        ]);
        tables.push(agg);
    }
    Ok(Outcome { tables, notes: Vec::new(), ok })
}

/// Per-layer operand seed derived from the run seed.
fn layer_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(j as u64)
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let net = args.source.resolve()?;
    let cfg = args.engine.config()?;
    let mut estimate = 0u64;
    for (j, l) in net.layers.iter().enumerate() {
        estimate += kraken_core::perfmodel::clocks(l, &cfg).map_err(|e| anyhow!("layer {j}: {e}"))?;
    }
    if estimate > args.cap_cycles {
        bail!("refusing to simulate: an estimated {estimate} cycles exceeds --cap-cycles {}", args.cap_cycles);
    }
    let mut table = Table::new(
        format!("{} simulation", net.name),
        ["layer", "kind", "shape", "cycles", "Q", "x_words", "k_words", "y_words", "utilization_%", "pipe_peak", "oracle"],
    );
    let mut ok = true;
    let mut traces = Vec::new();
    let opts = SimOptions { trace: args.trace, ..SimOptions::default() };
    for (j, l) in net.layers.iter().enumerate() {
        let (x, k) = seeded_operands(l, &cfg, layer_seed(args.seed, j));
        let report = simulate_layer_with(&x, &k, l, &cfg, &opts).map_err(|e| anyhow!("layer {j}: {e}"))?;
        let reference = conv_reference(&x, &k, l, &cfg.arithmetic()).map_err(|e| anyhow!("layer {j}: {e}"))?;
        let verdict = match reference.first_difference(&report.output) {
            None => "MATCH".to_string(),
            Some(i) => {
                ok = false;
                format!("MISMATCH at {i:?}")
            }
        };
        let q = kraken_core::perfmodel::clocks(l, &cfg).map_err(|e| anyhow!("{e}"))?;
        ok &= q == report.cycles;
        table.push(vec![
            Cell::int(j),
            Cell::text(l.kind.as_str()),
            Cell::text(shape(l)),
            Cell::int(report.cycles),
            Cell::int(q),
            Cell::int(report.words.x),
            Cell::int(report.words.k),
            Cell::int(report.words.y),
            pct(report.utilization(cfg.pe_count())),
            Cell::int(report.output_pipe_peak),
            Cell::text(verdict),
        ]);
        if let Some(t) = report.trace {
            traces.push((j, t));
        }
    }
    let notes = vec![format!("oracle: {}", if ok { "MATCH" } else { "MISMATCH" })];
    write_all(&[table], args.emit.format, out)?;
    for (j, t) in traces {
        writeln!(out, "# trace layer {j}")?;
        write_trace(&t, &mut *out)?;
    }
    Ok(Outcome { tables: Vec::new(), notes, ok })
}

fn cmd_dse(args: &DseArgs) -> Result<Outcome> {
    let mut networks = Vec::new();
    let names: Vec<String> = if args.networks.is_empty() && args.files.is_empty() {
        BUILTIN_NETWORKS.iter().map(|s| s.to_string()).collect()
    } else {
        args.networks.clone()
    };
    for name in &names {
        networks.push(builtin_network(name).map_err(|e| anyhow!("{e}"))?);
    }
    for path in &args.files {
        networks.push(Source { network: None, file: Some(path.clone()), fc_batch: None }.resolve()?);
    }
    let mut query = DseQuery::new(networks, args.rows.clone(), args.cores.clone());
    query.constraints = Constraints {
        core_multiple: args.core_multiple,
        max_bytes_per_clock: args.max_bytes_per_clock,
        max_wsram_depth: args.max_wsram_depth,
    };
    let points = dse::sweep(&query).map_err(|e| anyhow!("{e}"))?;
    let front = dse::pareto(&points);
    let shown = if args.all { points.clone() } else { front };
    let mut headers = vec!["R".to_string(), "C".to_string()];
    for n in &query.networks {
        headers.push(format!("eff_{}_%", n.name));
    }
    headers.extend(["eff_%", "Mwords/frame", "bytes/clk", "feasible"].map(String::from));
    let mut table = Table::new(if args.all { "dse grid" } else { "dse pareto front" }, headers);
    for p in &shown {
        let mut row = vec![Cell::int(p.rows), Cell::int(p.cores)];
        if p.networks.is_empty() {
            row.extend(query.networks.iter().map(|_| Cell::Empty));
            row.extend([Cell::Empty, Cell::Empty, Cell::Empty]);
        } else {
            row.extend(p.networks.iter().map(|n| pct(n.efficiency)));
            row.extend([pct(p.efficiency), Cell::Float(p.words_per_frame / 1e6, 3), Cell::int(p.peak_bytes_per_clock)]);
        }
        row.push(Cell::text(if p.is_feasible() { "yes" } else { "no" }));
        table.push(row);
    }
    let mut recommended = Table::new("dse recommendation", ["R", "C", "eff_%", "Mwords/frame"]);
    let mut notes = Vec::new();
    if let Some(p) = dse::recommend(&points, args.tolerance) {
        recommended.push(vec![Cell::int(p.rows), Cell::int(p.cores), pct(p.efficiency), Cell::Float(p.words_per_frame / 1e6, 3)]);
    } else {
        notes.push("no feasible point".to_string());
    }
    Ok(Outcome { tables: vec![table, recommended], notes, ok: true })
}

fn cmd_verify(args: &VerifyArgs) -> Result<Outcome> {
    let mut notes = Vec::new();
    if args.corpus_size == 0 {
        eprintln!("warning: empty corpus, nothing was checked");
    }
    let cases = corpus(args.seed, args.corpus_size);
    let summary = run_corpus(&cases, Sabotage { q_offset: args.sabotage_q_offset });
    let mut table = Table::new(format!("verify: {} cases", summary.cases), ["check", "passed", "failed"]);
    for (name, (pass, fail)) in &summary.checks {
        table.push(vec![Cell::text(*name), Cell::int(*pass), Cell::int(*fail)]);
    }
    let mut failures = Table::new("failures", ["case", "R", "C", "shape", "check", "reason"]);
    for r in &summary.failures {
        for (check, reason) in &r.failures {
            failures.push(vec![
                Cell::int(r.case.index),
                Cell::int(r.case.rows),
                Cell::int(r.case.cores),
                Cell::text(shape(&r.case.layer)),
                Cell::text(*check),
                Cell::text(reason.clone()),
            ]);
        }
    }
    let mut tables = vec![table];
    if !failures.rows.is_empty() {
        tables.push(failures);
    }
    notes.push(format!("verify: {}", if summary.passed() { "PASS" } else { "FAIL" }));
    Ok(Outcome { tables, notes, ok: summary.passed() })
}

fn cmd_goldens(args: &GoldensArgs) -> Result<Outcome> {
    let rows = goldens::compare(args.clocking.f_conv, args.clocking.f_fc).map_err(|e| anyhow!("{e}"))?;
    let mut table = Table::new("goldens at 7x96", ["network", "domain", "metric", "computed", "golden", "tolerance", "result"]);
    let mut failed = 0;
    for r in &rows {
        failed += usize::from(!r.passed());
        table.push(vec![
            Cell::text(r.network),
            Cell::text(r.domain),
            Cell::text(r.metric),
            Cell::Float(r.computed, 3),
            Cell::text(r.golden.text),
            Cell::Float(r.tolerance, 3),
            Cell::text(if r.passed() { "pass" } else { "FAIL" }),
        ]);
    }
    let notes = vec![format!("goldens: {} of {} within tolerance", rows.len() - failed, rows.len())];
    Ok(Outcome { tables: vec![table], notes, ok: failed == 0 })
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    let (outcome, format) = match &cli.command {
        Command::Model(a) => (cmd_model(a)?, a.emit.format),
        Command::Simulate(a) => (cmd_simulate(a, out)?, a.emit.format),
        Command::Dse(a) => (cmd_dse(a)?, a.emit.format),
        Command::Verify(a) => (cmd_verify(a)?, a.emit.format),
        Command::Goldens(a) => (cmd_goldens(a)?, a.emit.format),
    };
    if !outcome.tables.is_empty() {
        write_all(&outcome.tables, format, out)?;
    }
    // Summary lines would corrupt machine-readable output, so they go to stderr there.
    for note in &outcome.notes {
        if format == Format::Table {
            writeln!(out, "{note}")?;
        } else {
            eprintln!("{note}");
        }
    }
    Ok(outcome.ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let result = run(&cli, &mut out);
    let flushed = out.flush();
    match (result, flushed) {
        (Ok(true), Ok(())) => ExitCode::SUCCESS,
        (Ok(false), Ok(())) => ExitCode::from(1),
        (Err(e), _) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        (_, Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

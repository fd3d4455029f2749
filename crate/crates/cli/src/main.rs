//! Command-line front end: compile chain sources, create and run chains,
//! submit instances, query the graph index, run analytics, simulate a
//! network, certify mechanism tables, and roll chains over.
//!
//! Artifacts live in a flat directory (`--dir`, default `.`):
//! `<name>.kchain` holds the canonical config bytes, `<name>.blocks` the
//! block records, `<name>.hexa` a graph snapshot, and `<name>.pending` the
//! instances submitted but not yet mined. Results go to stdout, diagnostics
//! to stderr; output for a given set of inputs is byte-stable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

use chainkit::analytics::{chain_stats, ChainStats};
use chainkit::config::{AccountId, ChainConfig};
use chainkit::dsl::{self, DslError, InteractionResult};
use chainkit::encoding::{decode_seq, encode_seq, Encodable, Reader};
use chainkit::graphstore::{GraphStore, TriplePattern};
use chainkit::ledger::{append_block_record, read_blocks_file, write_blocks_file, Chain};
use chainkit::mechanism;
use chainkit::netsim::{self, SimConfig};

#[derive(Parser)]
#[command(name = "chainkit", version, about = "construction kit for simulated blockchain economies")]
struct Cli {
    /// Directory holding chain artifacts.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,
    /// Report wall-clock timing on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile source files and write a fresh chain at genesis.
    Create(CreateArgs),
    /// Mine pending instances into new blocks.
    Run(RunArgs),
    /// Evaluate an interaction expression against a stored chain.
    Send(SendArgs),
    /// Query the chain's triple index.
    Query(QueryArgs),
    /// Print chain statistics.
    Analyze(AnalyzeArgs),
    /// Run a deterministic multi-node network simulation.
    Simulate(SimulateArgs),
    /// Check a mechanism table for incentive compatibility.
    CheckIc(CheckIcArgs),
    /// Start a successor chain committed to a stored chain's history.
    Rollover(RolloverArgs),
}

#[derive(Args)]
struct CreateArgs {
    /// Source file (.kl); repeat for multi-module sets.
    #[arg(long = "spec", required = true)]
    spec: Vec<PathBuf>,
    /// Account credited as the genesis creator.
    #[arg(long, default_value = "genesis")]
    creator: String,
}

#[derive(Args)]
struct RunArgs {
    /// Chain name; optional when the directory holds exactly one chain.
    #[arg(long)]
    chain: Option<String>,
    /// Number of blocks to mine.
    #[arg(long, default_value_t = 1)]
    blocks: u64,
    #[arg(long, default_value = "miner")]
    creator: String,
    /// Nonce search budget per block.
    #[arg(long, default_value_t = 1 << 22)]
    max_tries: u64,
}

#[derive(Args)]
struct SendArgs {
    /// Expression such as `B1.send(female("asset","alice",5))`,
    /// `B1.RI.contains("<hex>")`, or `B1.stats()`.
    expr: String,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    chain: Option<String>,
    #[arg(short, long)]
    subject: Option<String>,
    #[arg(short, long)]
    predicate: Option<String>,
    #[arg(short, long)]
    object: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    chain: Option<String>,
    /// Emit CSV (header `metric,value`) instead of the plain report.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Source file (.kl); repeat for multi-module sets.
    #[arg(long = "spec", required = true)]
    spec: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Virtual time units to simulate.
    #[arg(long, default_value_t = 30)]
    duration: u64,
    /// Leading zero hex digits required of block digests.
    #[arg(long, default_value_t = 1)]
    difficulty: u64,
}

#[derive(Args)]
struct CheckIcArgs {
    /// Mechanism table file (.tbl).
    #[arg(long)]
    table: PathBuf,
}

#[derive(Args)]
struct RolloverArgs {
    /// Name of the stored chain being superseded.
    #[arg(long)]
    chain: String,
    /// Source file (.kl) for the successor; repeat for multi-module sets.
    #[arg(long = "spec", required = true)]
    spec: Vec<PathBuf>,
    #[arg(long, default_value = "genesis")]
    creator: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let code = match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("{message}");
            ExitCode::from(1)
        }
    };
    if cli.verbose {
        eprintln!("elapsed: {:?}", started.elapsed());
    }
    code
}

fn dispatch(cli: &Cli) -> Result<(), String> {
    match &cli.cmd {
        Cmd::Create(args) => cmd_create(&cli.dir, args),
        Cmd::Run(args) => cmd_run(&cli.dir, args),
        Cmd::Send(args) => cmd_send(&cli.dir, args),
        Cmd::Query(args) => cmd_query(&cli.dir, args),
        Cmd::Analyze(args) => cmd_analyze(&cli.dir, args),
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::CheckIc(args) => cmd_check_ic(args),
        Cmd::Rollover(args) => cmd_rollover(&cli.dir, args),
    }
}

// --- verbs --------------------------------------------------------------------

fn cmd_create(dir: &Path, args: &CreateArgs) -> Result<(), String> {
    let config = compile_specs(&args.spec)?;
    let name = config.chain_name.clone();
    if config_path(dir, &name).exists() {
        return Err(format!("chain `{name}` already exists in {}", dir.display()));
    }
    let (chain, _) = Chain::create(config, AccountId::new(&args.creator))
        .map_err(|e| e.to_string())?;
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    save_chain(dir, &chain)?;
    println!("created chain {name} height 0 head {}", chain.head_hash().to_hex());
    Ok(())
}

fn cmd_run(dir: &Path, args: &RunArgs) -> Result<(), String> {
    let name = resolve_chain_name(dir, args.chain.as_deref())?;
    let mut chain = load_chain(dir, &name)?;
    let creator = AccountId::new(&args.creator);
    for _ in 0..args.blocks {
        let pending = chain.take_pending();
        let listed: u64 = pending.values().map(|l| l.len() as u64).sum();
        let timestamp = chain.head().timestamp + 1;
        let block = chain
            .mine_block(creator.clone(), pending, timestamp, args.max_tries)
            .map_err(|e| e.to_string())?;
        chain.append_block(block).map_err(|e| e.to_string())?;
        append_block_record(&blocks_path(dir, &name), chain.head())
            .map_err(|e| e.to_string())?;
        println!(
            "mined block {} {} instances {listed}",
            chain.head().height,
            chain.head_hash().to_hex()
        );
    }
    save_sidecars(dir, &chain)?;
    Ok(())
}

fn cmd_send(dir: &Path, args: &SendArgs) -> Result<(), String> {
    let name = expr_chain_name(&args.expr)?;
    let mut chain = load_chain(dir, &name)?;
    let result = dsl::eval_interaction(&mut chain, &args.expr).map_err(|e| e.to_string())?;
    save_sidecars(dir, &chain)?;
    match result {
        InteractionResult::Submitted(hash) => println!("submitted {}", hash.to_hex()),
        InteractionResult::Contains(found) => println!("{found}"),
        InteractionResult::Stats(stats) => print!("{}", render_stats(&name, &stats)),
    }
    Ok(())
}

fn cmd_query(dir: &Path, args: &QueryArgs) -> Result<(), String> {
    let name = resolve_chain_name(dir, args.chain.as_deref())?;
    let bytes =
        std::fs::read(graph_path(dir, &name)).map_err(|_| "no chain loaded".to_string())?;
    let store = GraphStore::restore(&bytes).map_err(|e| format!("{name}.hexa: {e}"))?;
    let mut pattern = TriplePattern::any();
    if let Some(s) = &args.subject {
        pattern = pattern.with_subject(s.as_bytes().to_vec());
    }
    if let Some(p) = &args.predicate {
        pattern = pattern.with_predicate(p.as_bytes().to_vec());
    }
    if let Some(o) = &args.object {
        pattern = pattern.with_object(o.as_bytes().to_vec());
    }
    for t in store.query(&pattern) {
        println!("{}\t{}\t{}", printable(&t.subject), printable(&t.predicate), printable(&t.object));
    }
    Ok(())
}

fn cmd_analyze(dir: &Path, args: &AnalyzeArgs) -> Result<(), String> {
    let name = resolve_chain_name(dir, args.chain.as_deref())?;
    let chain = load_chain(dir, &name)?;
    let stats = chain_stats(&chain);
    if args.csv {
        print!("{}", render_stats_csv(&stats));
    } else {
        print!("{}", render_stats(&name, &stats));
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), String> {
    let config = compile_specs(&args.spec)?;
    let sim = SimConfig::new(args.nodes, args.seed, args.duration, args.difficulty);
    let report = netsim::run_simulation(&config, &sim).map_err(|e| e.to_string())?;
    print!("{}", report.summary);
    print!("{}", report.event_log);
    Ok(())
}

fn cmd_check_ic(args: &CheckIcArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.table)
        .map_err(|e| format!("{}: {e}", args.table.display()))?;
    let mech =
        mechanism::from_tbl_str(&text).map_err(|e| format!("{}: {e}", args.table.display()))?;
    let report = mech.check_ic().map_err(|e| e.to_string())?;
    println!("IC: {}", if report.is_ic { "yes" } else { "no" });
    println!("enumerations: {}", report.enumerations);
    println!("taxation: {}", if report.taxation_holds { "holds" } else { "fails" });
    for v in report.violations.iter().take(5) {
        println!(
            "violation: player {} profile {:?} reports {} truthful {} deviant {}",
            v.player, v.profile, v.reported_type, v.truthful_utility, v.deviant_utility
        );
    }
    if report.violations.len() > 5 {
        println!("... {} violations total", report.violations.len());
    }
    Ok(())
}

fn cmd_rollover(dir: &Path, args: &RolloverArgs) -> Result<(), String> {
    let old = load_chain(dir, &args.chain)?;
    let new_config = compile_specs(&args.spec)?;
    let new_name = new_config.chain_name.clone();
    if new_name == old.config.chain_name {
        return Err(format!(
            "successor chain is also named `{new_name}`; it would overwrite the source"
        ));
    }
    if config_path(dir, &new_name).exists() {
        return Err(format!("chain `{new_name}` already exists in {}", dir.display()));
    }
    let successor = netsim::rollover_chain(&old, new_config, AccountId::new(&args.creator))
        .map_err(|e| e.to_string())?;
    let committed = successor.blocks[0]
        .predecessor_version_hash
        .expect("rollover genesis commits to a predecessor");
    // the stored records, hashed raw, must agree with the replayed history
    let file_version = netsim::file_version_hash(old.config.hash_alg, &blocks_path(dir, &args.chain))
        .map_err(|e| e.to_string())?;
    if file_version != committed {
        return Err("stored block file does not match the loaded chain history".into());
    }
    save_chain(dir, &successor)?;
    println!("rolled over {} -> {new_name}", args.chain);
    println!("predecessor version {}", committed.to_hex());
    println!("genesis {}", successor.head_hash().to_hex());
    Ok(())
}

// --- storage ------------------------------------------------------------------

fn config_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.kchain"))
}

fn blocks_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.blocks"))
}

fn graph_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.hexa"))
}

fn pending_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.pending"))
}

/// The explicit name, or the single chain stored in `dir`.
fn resolve_chain_name(dir: &Path, explicit: Option<&str>) -> Result<String, String> {
    if let Some(name) = explicit {
        return Ok(name.to_string());
    }
    let entries = std::fs::read_dir(dir).map_err(|_| "no chain loaded".to_string())?;
    let mut names: Vec<String> = entries
        .flatten()
        .filter_map(|entry| {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("kchain") {
                return None;
            }
            path.file_stem().and_then(|s| s.to_str()).map(str::to_string)
        })
        .collect();
    names.sort();
    match names.len() {
        0 => Err("no chain loaded".into()),
        1 => Ok(names.remove(0)),
        _ => Err(format!(
            "multiple chains in {}: {}; pass --chain",
            dir.display(),
            names.join(", ")
        )),
    }
}

fn load_chain(dir: &Path, name: &str) -> Result<Chain, String> {
    let config_bytes =
        std::fs::read(config_path(dir, name)).map_err(|_| "no chain loaded".to_string())?;
    let config = ChainConfig::canonical_decode(&config_bytes)
        .map_err(|e| format!("{name}.kchain: {e}"))?;
    let blocks =
        read_blocks_file(&blocks_path(dir, name)).map_err(|e| format!("{name}.blocks: {e}"))?;
    let mut chain = Chain::replay(config, blocks).map_err(|e| format!("replay {name}: {e}"))?;
    let pending_file = pending_path(dir, name);
    if pending_file.exists() {
        let bytes =
            std::fs::read(&pending_file).map_err(|e| format!("{name}.pending: {e}"))?;
        let mut r = Reader::new(&bytes);
        chain.pending = decode_seq(&mut r).map_err(|e| format!("{name}.pending: {e}"))?;
        r.finish().map_err(|e| format!("{name}.pending: {e}"))?;
    }
    Ok(chain)
}

fn save_chain(dir: &Path, chain: &Chain) -> Result<(), String> {
    let name = &chain.config.chain_name;
    std::fs::write(config_path(dir, name), chain.config.canonical_encode())
        .map_err(|e| format!("{name}.kchain: {e}"))?;
    write_blocks_file(&blocks_path(dir, name), &chain.blocks)
        .map_err(|e| e.to_string())?;
    save_sidecars(dir, chain)
}

/// Rewrite the graph snapshot and pending pool, leaving block records alone.
fn save_sidecars(dir: &Path, chain: &Chain) -> Result<(), String> {
    let name = &chain.config.chain_name;
    std::fs::write(graph_path(dir, name), chain.graph.snapshot())
        .map_err(|e| format!("{name}.hexa: {e}"))?;
    let mut buf = Vec::new();
    encode_seq(&chain.pending, &mut buf);
    std::fs::write(pending_path(dir, name), buf).map_err(|e| format!("{name}.pending: {e}"))?;
    Ok(())
}

// --- compilation --------------------------------------------------------------

/// Read and compile a set of source files. Module names are the file stems,
/// so `import ballot;` resolves to a sibling `ballot.kl`.
fn compile_specs(paths: &[PathBuf]) -> Result<ChainConfig, String> {
    let mut named: Vec<(String, String, PathBuf)> = Vec::new();
    for path in paths {
        let source = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| format!("{}: no module name in path", path.display()))?;
        named.push((stem.to_string(), source, path.clone()));
    }
    let pairs: Vec<(&str, &str)> =
        named.iter().map(|(n, s, _)| (n.as_str(), s.as_str())).collect();
    dsl::compile_sources(&pairs).map_err(|err| render_dsl_error(err, &named))
}

/// Put the originating file path in front of `line:col: message` errors.
fn render_dsl_error(err: DslError, named: &[(String, String, PathBuf)]) -> String {
    let path_of = |module: &str| {
        named
            .iter()
            .find(|(n, _, _)| n == module)
            .map(|(_, _, p)| p.display().to_string())
            .unwrap_or_else(|| module.to_string())
    };
    match err {
        DslError::Lex { module, source } => format!("{}:{source}", path_of(&module)),
        DslError::Parse { module, source } => format!("{}:{source}", path_of(&module)),
        DslError::Lowering(e) => e.to_string(),
    }
}

// --- rendering ----------------------------------------------------------------

fn expr_chain_name(expr: &str) -> Result<String, String> {
    let name: String = expr
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect();
    if name.is_empty() {
        return Err(format!("malformed interaction expression: `{expr}`"));
    }
    Ok(name)
}

fn render_stats(name: &str, stats: &ChainStats) -> String {
    let mut out = String::new();
    out.push_str(&format!("chain {name}\n"));
    out.push_str(&format!("blocks {}\n", stats.block_count));
    match stats.avg_block_time {
        Some(avg) => out.push_str(&format!("average block time {avg} ({})\n", decimal6(avg))),
        None => out.push_str("average block time n/a\n"),
    }
    out.push_str(&format!("rewards issued {}\n", stats.total_rewards_issued.amount()));
    for (root, count) in &stats.instance_count_per_root {
        out.push_str(&format!("instances {root} {count}\n"));
    }
    out
}

fn render_stats_csv(stats: &ChainStats) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("blocks,{}\n", stats.block_count));
    match stats.avg_block_time {
        Some(avg) => out.push_str(&format!("avg_block_time,{}\n", decimal6(avg))),
        None => out.push_str("avg_block_time,\n"),
    }
    out.push_str(&format!("rewards_issued,{}\n", stats.total_rewards_issued.amount()));
    for (root, count) in &stats.instance_count_per_root {
        out.push_str(&format!("instances[{root}],{count}\n"));
    }
    out
}

/// Six decimal places, ties rounded away from zero.
fn decimal6(r: Ratio<i64>) -> String {
    let n = *r.numer() as i128 * 1_000_000;
    let d = *r.denom() as i128;
    let q = if n >= 0 { (n + d / 2) / d } else { (n - d / 2) / d };
    let sign = if q < 0 { "-" } else { "" };
    let q = q.abs();
    format!("{sign}{}.{:06}", q / 1_000_000, q % 1_000_000)
}

/// UTF-8 text when clean, hex otherwise.
fn printable(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if !s.chars().any(|c| c.is_control()) => s.to_string(),
        _ => hex::encode(bytes),
    }
}

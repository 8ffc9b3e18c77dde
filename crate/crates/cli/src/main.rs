//! `ionmap`: map trapped-ion instruction circuits onto a tiled well fabric.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ionmap::commands::CommandStream;
use ionmap::config::FlowConfig;
use ionmap::emulator::validate;
use ionmap::fabric::FabricGraph;
use ionmap::flow::{map_graph, prepare, FlowError, FlowResult};
use ionmap::placer::LevelMode;
use ionmap::qasm;
use ionmap::qidg::Qidg;
use ionmap::scheduler::{exact_oracle, schedule_enumerated, LevelConstraints, ORACLE_MAX_NODES};
use ionmap::sizer::{best_size, profile_sizes, toffoli_cost, OpLatencyTable, SizeReport, ToffoliLatencies, WorkloadModel};

#[derive(Parser, Debug)]
#[command(name = "ionmap", version, about = "Schedule, place and route trapped-ion circuits")]
struct Cli {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the alpha sweep and size profiling.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a circuit and dump its dependency graph.
    Parse {
        circuit: PathBuf,
        /// Serialize sibling sets before dumping.
        #[arg(long)]
        preprocess: bool,
        /// Emit Graphviz instead of a report.
        #[arg(long)]
        dot: bool,
    },
    /// Schedule a circuit for every alpha of the sweep.
    Schedule {
        circuit: PathBuf,
        #[arg(long)]
        nmax: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alpha_set: Option<Vec<f64>>,
        /// Also report the exact minimum level count (small graphs only).
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        fabric: FabricArgs,
    },
    /// Run the full flow and write the command stream.
    Map {
        circuit: PathBuf,
        #[command(flatten)]
        fabric: FabricArgs,
        #[command(flatten)]
        flow: FlowArgs,
        /// Command stream output (default: the circuit path with `.cmd`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replay a command stream against the fabric and the circuit.
    Validate {
        stream: PathBuf,
        /// Circuit the stream was produced from (default: from the stream header).
        #[arg(long)]
        circuit: Option<PathBuf>,
        #[command(flatten)]
        fabric: FabricArgs,
    },
    /// Profile operation circuits over block sizes and pick the best size.
    Size {
        /// Directory of `<op>.qasm` files.
        ops: PathBuf,
        /// Workload TOML (`d_r_avg`, `[weights]`, optional `l_r1`); Toffoli preset when absent.
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        sizes: Vec<usize>,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// CSV series for plotting.
    Plotdata {
        #[command(subcommand)]
        series: Series,
    },
}

#[derive(Subcommand, Debug)]
enum Series {
    /// Latency per alpha of the sweep.
    Alpha {
        circuit: PathBuf,
        #[command(flatten)]
        fabric: FabricArgs,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Latency of each operation per block size, with the objective.
    Size {
        ops: PathBuf,
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
        sizes: Vec<usize>,
        #[command(flatten)]
        flow: FlowArgs,
    },
}

#[derive(Args, Debug, Default)]
struct FabricArgs {
    /// Block edge in templates.
    #[arg(long)]
    ulb_n: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct FlowArgs {
    /// Carry only the default schedule candidate through placement and routing.
    #[arg(long)]
    fast: bool,
    /// Placer seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    alpha_set: Option<Vec<f64>>,
    /// Disable deferral to later levels.
    #[arg(long)]
    fixed_levels: bool,
}

impl FabricArgs {
    fn apply(&self, cfg: &mut FlowConfig) {
        if let Some(n) = self.ulb_n {
            cfg.fabric.ulb_n = n;
        }
    }
}

impl FlowArgs {
    fn apply(&self, cfg: &mut FlowConfig) {
        cfg.fast |= self.fast;
        if let Some(s) = self.seed {
            cfg.placer.seed = s;
        }
        if let Some(a) = &self.alpha_set {
            cfg.scheduler.alpha_set = a.clone();
        }
    }

    fn mode(&self) -> LevelMode {
        if self.fixed_levels {
            LevelMode::Fixed
        } else {
            LevelMode::Variable
        }
    }
}

/// Error that should print as `<Kind>: <message>`.
fn flow_err(e: FlowError) -> anyhow::Error {
    anyhow!("{}: {e}", e.kind())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_config(cli: &Cli) -> Result<FlowConfig> {
    match &cli.config {
        Some(p) => FlowConfig::from_toml(&read(p)?).map_err(|e| flow_err(e.into()).context(format!("config {}", p.display()))),
        None => Ok(FlowConfig::default()),
    }
}

fn load_workload(path: Option<&Path>) -> Result<WorkloadModel> {
    match path {
        Some(p) => WorkloadModel::from_toml(&read(p)?).with_context(|| format!("workload {}", p.display())),
        None => Ok(WorkloadModel::toffoli()),
    }
}

fn load_ops(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut ops = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "qasm") {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            ops.insert(name, read(&p)?);
        }
    }
    if ops.is_empty() {
        bail!("no .qasm files in {}", dir.display());
    }
    Ok(ops)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let mut cfg = load_config(cli)?;
    let format = cli.format.unwrap_or(Format::Text);
    let out = match &cli.command {
        Command::Parse { circuit, preprocess, dot } => {
            let text = read(circuit)?;
            let g = if *preprocess {
                prepare(&text, &cfg).map_err(flow_err)?
            } else {
                let program = qasm::parse(&text).map_err(|e| flow_err(e.into()))?;
                Qidg::analyze(&program, &cfg.fabric).map_err(|e| flow_err(e.into()))?
            };
            if *dot {
                g.to_dot()
            } else {
                graph_report(&g, format)
            }
        }
        Command::Schedule { circuit, nmax, alpha_set, oracle, fabric } => {
            fabric.apply(&mut cfg);
            if let Some(a) = alpha_set {
                cfg.scheduler.alpha_set = a.clone();
            }
            if nmax.is_some() {
                cfg.scheduler.n_max = *nmax;
            }
            schedule_report(&read(circuit)?, &cfg, *oracle, format)?
        }
        Command::Map { circuit, fabric, flow, output } => {
            fabric.apply(&mut cfg);
            flow.apply(&mut cfg);
            let r = map_circuit(&read(circuit)?, &cfg, flow.mode())?;
            let path = output.clone().unwrap_or_else(|| circuit.with_extension("cmd"));
            let abs = fs::canonicalize(circuit).unwrap_or_else(|_| circuit.clone());
            let header = format!("# ionmap command stream\n# circuit: {}\n# ulb_n: {}\n", abs.display(), cfg.fabric.ulb_n);
            fs::write(&path, header + &r.best.route.stream.to_text()).with_context(|| format!("writing {}", path.display()))?;
            map_report(&r, &path, format)
        }
        Command::Validate { stream, circuit, fabric } => {
            let text = read(stream)?;
            let header = StreamHeader::parse(&text);
            if let Some(n) = header.ulb_n {
                cfg.fabric.ulb_n = n;
            }
            fabric.apply(&mut cfg);
            let circuit = match (circuit, header.circuit) {
                (Some(c), _) => c.clone(),
                (None, Some(c)) => c,
                (None, None) => bail!("the stream names no circuit; pass --circuit"),
            };
            let s = CommandStream::parse(&text).context("parsing the command stream")?;
            let program = qasm::parse(&read(&circuit)?).map_err(|e| flow_err(e.into()))?;
            let g = Qidg::analyze(&program, &cfg.fabric).map_err(|e| flow_err(e.into()))?;
            let f = FabricGraph::build(&cfg.fabric).map_err(|e| flow_err(e.into()))?;
            let rep = validate(&s, &f, &g);
            let body = match format {
                Format::Json => rep.to_json(),
                Format::Csv => {
                    let mut s = String::from("time,rule,command,detail\n");
                    for v in &rep.violations {
                        let _ = writeln!(s, "{},{:?},\"{}\",\"{}\"", v.time, v.rule, v.command, v.detail.replace('"', "'"));
                    }
                    s
                }
                Format::Text => rep.to_text(),
            };
            print!("{}", ensure_newline(body));
            return Ok(if rep.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Size { ops, workload, sizes, flow } => {
            flow.apply(&mut cfg);
            let w = load_workload(workload.as_deref())?;
            let (table, report, l_r1) = size_run(ops, &w, sizes, &cfg)?;
            size_report(&table, &report, &w, sizes, l_r1, format)
        }
        Command::Plotdata { series } => match series {
            Series::Alpha { circuit, fabric, flow } => {
                fabric.apply(&mut cfg);
                flow.apply(&mut cfg);
                let r = map_circuit(&read(circuit)?, &cfg, flow.mode())?;
                let mut s = String::from("alpha,n_m,levels,latency\n");
                for p in &r.sweep {
                    let lat = p.latency.map(|l| l.to_string()).unwrap_or_default();
                    let _ = writeln!(s, "{},{},{},{lat}", p.alpha, p.n_m, p.levels);
                }
                s
            }
            Series::Size { ops, workload, sizes, flow } => {
                flow.apply(&mut cfg);
                let w = load_workload(workload.as_deref())?;
                let (table, report, _) = size_run(ops, &w, sizes, &cfg)?;
                let ops: Vec<&String> = table.cells.keys().collect();
                let mut s = String::from("n");
                for op in &ops {
                    let _ = write!(s, ",{op}");
                }
                s += ",routing,objective\n";
                for o in &report.objectives {
                    let _ = write!(s, "{}", o.n);
                    for op in &ops {
                        let l = table.latency(op, o.n).map(|l| l.to_string()).unwrap_or_default();
                        let _ = write!(s, ",{l}");
                    }
                    let v = o.value.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(s, ",{},{v}", o.routing);
                }
                s
            }
        },
    };
    print!("{}", ensure_newline(out));
    Ok(ExitCode::SUCCESS)
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn map_circuit(text: &str, cfg: &FlowConfig, mode: LevelMode) -> Result<FlowResult> {
    let g = prepare(text, cfg).map_err(flow_err)?;
    let f = FabricGraph::build(&cfg.fabric).map_err(|e| flow_err(e.into()))?;
    map_graph(&g, &f, cfg, mode).map_err(flow_err)
}

#[derive(Default)]
struct StreamHeader {
    circuit: Option<PathBuf>,
    ulb_n: Option<usize>,
}

impl StreamHeader {
    fn parse(text: &str) -> Self {
        let mut h = Self::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(p) = line.strip_prefix("# circuit:") {
                h.circuit = Some(PathBuf::from(p.trim()));
            } else if let Some(n) = line.strip_prefix("# ulb_n:") {
                h.ulb_n = n.trim().parse().ok();
            }
        }
        h
    }
}

fn graph_report(g: &Qidg, format: Format) -> String {
    let name = |q: &ionmap::qidg::QubitId| g.qubits()[q.index()].name.clone();
    let idx = |v: &[usize]| v.iter().map(|&j| g.node(j).index).collect::<Vec<_>>();
    match format {
        Format::Json => {
            let nodes: Vec<Value> = (0..g.len())
                .map(|i| {
                    let n = g.node(i);
                    json!({
                        "index": n.index,
                        "opcode": n.opcode,
                        "operands": n.operands.iter().map(name).collect::<Vec<_>>(),
                        "duration": n.duration,
                        "asap": g.asap(i),
                        "alap": g.alap(i),
                        "mobility": g.mobility(i),
                        "parents": idx(g.parents(i)),
                        "siblings": idx(&g.siblings(i).iter().copied().collect::<Vec<_>>()),
                    })
                })
                .collect();
            let edges: Vec<Value> = g
                .edges()
                .map(|(a, b, t)| json!({"from": g.node(a).index, "to": g.node(b).index, "tags": format!("{t:?}")}))
                .collect();
            let qubits: Vec<Value> = g.qubits().iter().map(|q| json!({"name": q.name, "kind": format!("{:?}", q.kind)})).collect();
            serde_json::to_string_pretty(&json!({"qubits": qubits, "nodes": nodes, "edges": edges})).unwrap()
        }
        Format::Csv | Format::Text => {
            let sep = if format == Format::Csv { "," } else { "\t" };
            let list = |v: Vec<usize>| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
            let mut s = ["instruction", "opcode", "operands", "duration", "asap", "alap", "parents", "siblings"].join(sep);
            s.push('\n');
            for i in 0..g.len() {
                let n = g.node(i);
                let row = [
                    n.index.to_string(),
                    n.opcode.clone(),
                    n.operands.iter().map(name).collect::<Vec<_>>().join(" "),
                    n.duration.to_string(),
                    g.asap(i).to_string(),
                    g.alap(i).to_string(),
                    list(idx(g.parents(i))),
                    list(idx(&g.siblings(i).iter().copied().collect::<Vec<_>>())),
                ];
                s += &row.join(sep);
                s.push('\n');
            }
            s
        }
    }
}

fn schedule_report(text: &str, cfg: &FlowConfig, oracle: bool, format: Format) -> Result<String> {
    let g = prepare(text, cfg).map_err(flow_err)?;
    let f = FabricGraph::build(&cfg.fabric).map_err(|e| flow_err(e.into()))?;
    let en = schedule_enumerated(&g, &cfg.scheduler, f.interaction_wells().len(), &LevelConstraints::none(g.len()))
        .map_err(|e| flow_err(e.into()))?;
    let best: Vec<Option<usize>> = if oracle {
        if g.len() > ORACLE_MAX_NODES {
            bail!("--oracle handles at most {ORACLE_MAX_NODES} instructions, the circuit has {}", g.len());
        }
        en.candidates.iter().map(|c| exact_oracle(&g, c.n_m).ok()).collect()
    } else {
        vec![None; en.candidates.len()]
    };
    Ok(match format {
        Format::Json => {
            let cands: Vec<Value> = en
                .candidates
                .iter()
                .zip(&best)
                .map(|(c, b)| {
                    json!({
                        "alpha": c.alpha,
                        "n_m": c.n_m,
                        "levels": c.schedule.num_levels,
                        "oracle_levels": b,
                        "level": (0..g.len()).map(|i| json!({"instruction": g.node(i).index, "level": c.schedule.level[i]})).collect::<Vec<_>>(),
                    })
                })
                .collect();
            serde_json::to_string_pretty(&json!({"default_pick": en.default_pick, "candidates": cands})).unwrap()
        }
        Format::Csv => {
            let mut s = String::from("alpha,n_m,instruction,opcode,level\n");
            for c in &en.candidates {
                for i in 0..g.len() {
                    let _ = writeln!(s, "{},{},{},{},{}", c.alpha, c.n_m, g.node(i).index, g.node(i).opcode, c.schedule.level[i]);
                }
            }
            s
        }
        Format::Text => {
            let mut s = String::new();
            for (k, (c, b)) in en.candidates.iter().zip(&best).enumerate() {
                let pick = if k == en.default_pick { " (default)" } else { "" };
                let _ = write!(s, "# alpha {} n_m {} levels {}{pick}", c.alpha, c.n_m, c.schedule.num_levels);
                if let Some(b) = b {
                    let _ = write!(s, " oracle {b}");
                }
                s.push('\n');
                s += &c.schedule.to_table(&g);
            }
            s
        }
    })
}

fn map_report(r: &FlowResult, path: &Path, format: Format) -> String {
    let b = &r.best;
    match format {
        Format::Json => {
            let sweep: Vec<Value> = r
                .sweep
                .iter()
                .map(|p| json!({"alpha": p.alpha, "n_m": p.n_m, "levels": p.levels, "latency": p.latency, "error": p.error}))
                .collect();
            serde_json::to_string_pretty(&json!({
                "stream": path.display().to_string(),
                "latency": b.latency(),
                "lower_bound": b.lower_bound,
                "alpha": b.alpha,
                "n_m": b.n_m,
                "levels": b.placement.schedule.num_levels,
                "deferrals": b.placement.deferrals,
                "commands": b.route.stream.len(),
                "stalls": b.route.stalls,
                "well_waits": b.route.well_waits,
                "evictions": b.route.evictions,
                "sweep": sweep,
            }))
            .unwrap()
        }
        Format::Csv => {
            let mut s = String::from("alpha,n_m,levels,latency,error,best\n");
            for p in &r.sweep {
                let lat = p.latency.map(|l| l.to_string()).unwrap_or_default();
                let err = p.error.clone().unwrap_or_default().replace(',', ";");
                let _ = writeln!(s, "{},{},{},{lat},{err},{}", p.alpha, p.n_m, p.levels, p.alpha == b.alpha && p.n_m == b.n_m);
            }
            s
        }
        Format::Text => {
            let mut s = format!(
                "total latency: {} us\nlower bound: {} us\nalpha {} n_m {} levels {} deferrals {}\ncommands: {} (stalls {}, well waits {}, evictions {})\nstream: {}\n",
                b.latency(),
                b.lower_bound,
                b.alpha,
                b.n_m,
                b.placement.schedule.num_levels,
                b.placement.deferrals,
                b.route.stream.len(),
                b.route.stalls,
                b.route.well_waits,
                b.route.evictions,
                path.display()
            );
            for p in &r.sweep {
                match (&p.latency, &p.error) {
                    (Some(l), _) => {
                        let _ = writeln!(s, "  alpha {:<4} n_m {:<3} levels {:<3} {l} us", p.alpha, p.n_m, p.levels);
                    }
                    (None, e) => {
                        let _ = writeln!(s, "  alpha {:<4} n_m {:<3} failed: {}", p.alpha, p.n_m, e.clone().unwrap_or_default());
                    }
                }
            }
            s
        }
    }
}

fn size_run(ops: &Path, w: &WorkloadModel, sizes: &[usize], cfg: &FlowConfig) -> Result<(OpLatencyTable, SizeReport, f64)> {
    let circuits = load_ops(ops)?;
    let table = profile_sizes(&circuits, sizes, cfg);
    let l_r1 = w.l_r1_or(&cfg.fabric);
    let report = best_size(&table, w, sizes, l_r1)?;
    Ok((table, report, l_r1))
}

fn size_report(table: &OpLatencyTable, report: &SizeReport, w: &WorkloadModel, sizes: &[usize], l_r1: f64, format: Format) -> String {
    // Integer Toffoli accounting, when the table covers its operations.
    let toffoli: BTreeMap<usize, u64> = if l_r1.fract() == 0.0 {
        sizes
            .iter()
            .filter_map(|&n| ToffoliLatencies::from_table(table, n).map(|lat| (n, toffoli_cost(&lat, n as u64, l_r1 as u64))))
            .collect()
    } else {
        BTreeMap::new()
    };
    match format {
        Format::Json => {
            let lat: BTreeMap<&str, BTreeMap<String, Value>> = table
                .cells
                .iter()
                .map(|(op, m)| {
                    let row = m
                        .iter()
                        .map(|(n, c)| {
                            let v = match c.latency() {
                                Some(l) => json!(l),
                                None => json!({"infeasible": format!("{c:?}").trim_start_matches("Infeasible(\"").trim_end_matches("\")")}),
                            };
                            (n.to_string(), v)
                        })
                        .collect();
                    (op.as_str(), row)
                })
                .collect();
            let obj: Vec<Value> = report
                .objectives
                .iter()
                .map(|o| json!({"n": o.n, "feasible": o.feasible, "routing": o.routing, "op_terms": o.op_terms, "objective": o.value}))
                .collect();
            serde_json::to_string_pretty(&json!({
                "n_best": report.best,
                "l_r1": l_r1,
                "d_r_avg": w.d_r_avg,
                "weights": w.weights,
                "latencies": lat,
                "objectives": obj,
                "toffoli_cost": toffoli,
            }))
            .unwrap()
        }
        Format::Csv => report.to_csv(),
        Format::Text => {
            let mut s = format!("best size: {}\n", report.best);
            s += &table.to_csv(sizes).replace(',', "\t");
            s.push('\n');
            for o in &report.objectives {
                match o.value {
                    Some(v) => {
                        let _ = write!(s, "n={} objective {v}", o.n);
                    }
                    None => {
                        let _ = write!(s, "n={} infeasible", o.n);
                    }
                }
                if let Some(c) = toffoli.get(&o.n) {
                    let _ = write!(s, " toffoli {c} us");
                }
                s.push('\n');
            }
            s
        }
    }
}

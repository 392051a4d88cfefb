//! `decprov`: run scenarios, verify provenance logs and query federations.

mod load;
mod render;

use std::fs;
use std::io::{self, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use decprov_core::query::{self, FlowDeclaration, DEFAULT_DEPTH, UNBOUNDED};
use decprov_core::simulator::{self, EventOutcome, ScenarioError};
use decprov_core::store::{verify_log, REGULATOR};
use decprov_core::{Federation, NodeKind, QualifiedId};
use serde::Serialize;

use render::{Graph, Style};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Usage = 1,
    Data = 2,
    NotFound = 3,
    Integrity = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { exit: Exit::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { exit: Exit::Data, message: message.into() }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Failure { exit: Exit::NotFound, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Dot,
}

#[derive(Debug, Parser)]
#[command(name = "decprov", version, about = "Decision provenance: capture, verify and query provenance logs")]
struct Cli {
    /// Output format; `dot` applies to lineage, impact and export.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Traversal depth limit, or `unbounded`.
    #[arg(long, global = true, default_value_t = DEFAULT_DEPTH, value_parser = parse_depth)]
    depth: usize,

    /// Requesting domain for visibility. Defaults to the first store's domain.
    #[arg(long = "as", global = true, value_name = "DOMAIN", conflicts_with = "regulator")]
    as_domain: Option<String>,

    /// Query as the regulator, who sees every node in full.
    #[arg(long, global = true)]
    regulator: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write one log per domain plus a run report.
    Run {
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(short, long, value_name = "DIR")]
        out: PathBuf,
        /// Mark a component faulty from a tick on: COMPONENT or COMPONENT@TICK.
        #[arg(long, value_name = "COMPONENT[@TICK]")]
        fault: Vec<String>,
    },
    /// Accountability queries over a federation directory.
    Query(QueryArgs),
    /// Check the hash chain of every log in a directory.
    Verify {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
    /// Render the whole federation graph.
    Export {
        #[arg(default_value = ".")]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Federation directory written by `decprov run`.
    #[arg(long, global = true, default_value = ".")]
    dir: PathBuf,

    #[command(subcommand)]
    kind: QueryKind,
}

#[derive(Debug, Subcommand)]
enum QueryKind {
    /// Everything that led to a node.
    Lineage { root: String },
    /// Everything that followed from a node.
    Impact { root: String },
    /// Entities held about a data subject.
    Inventory { subject: String },
    /// Entities to erase for a data subject, including derivations and copies.
    Erasure { subject: String },
    /// Transfers not covered by the declared flows.
    Unexpected {
        /// Declared flows as a JSON list of {from, to, node_type}.
        /// Defaults to the flows in the directory's run report.
        #[arg(long)]
        flows: Option<PathBuf>,
    },
}

fn parse_depth(text: &str) -> Result<usize, String> {
    match text {
        "unbounded" => Ok(UNBOUNDED),
        _ => text
            .parse()
            .map_err(|_| format!("expected a non-negative integer or `unbounded`, got {text:?}")),
    }
}

fn color_from_env() -> Result<bool, Failure> {
    match std::env::var("DECPROV_COLOR") {
        Ok(v) if v == "1" => Ok(true),
        Ok(v) if v == "0" => Ok(false),
        Ok(v) => Err(Failure::usage(format!("DECPROV_COLOR must be 0 or 1, got {v:?}"))),
        Err(_) => Ok(io::stdout().is_terminal()),
    }
}

struct Ctx {
    format: Option<Format>,
    depth: usize,
    as_domain: Option<String>,
    regulator: bool,
    style: Style,
}

impl Ctx {
    fn principal(&self, federation: &Federation) -> String {
        if self.regulator {
            return REGULATOR.to_string();
        }
        if let Some(d) = &self.as_domain {
            return d.clone();
        }
        federation.domains().next().unwrap_or(REGULATOR).to_string()
    }

    /// The requested format, checked against what the command supports.
    fn format(&self, allowed: &[Format], default: Format) -> Result<Format, Failure> {
        let f = self.format.unwrap_or(default);
        if allowed.contains(&f) {
            Ok(f)
        } else {
            Err(Failure::usage(format!("format {f:?} is not available for this command").to_lowercase()))
        }
    }
}

fn main() -> ExitCode {
    let color = match color_from_env() {
        Ok(c) => c,
        Err(f) => return report(f),
    };
    let command = Cli::command().color(if color { clap::ColorChoice::Always } else { clap::ColorChoice::Never });
    let cli = match command.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Usage as u8 } else { Exit::Success as u8 });
        }
    };
    let ctx = Ctx {
        format: cli.format,
        depth: cli.depth,
        as_domain: cli.as_domain,
        regulator: cli.regulator,
        style: Style { color },
    };
    let result = match cli.command {
        Command::Run { scenario, out, fault } => cmd_run(&ctx, &scenario, &out, &fault),
        Command::Query(args) => cmd_query(&ctx, &args.dir, args.kind),
        Command::Verify { dir } => cmd_verify(&ctx, &dir),
        Command::Export { dir } => cmd_export(&ctx, &dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    eprintln!("decprov: {}", f.message);
    ExitCode::from(f.exit as u8)
}

fn emit(text: &str) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        // A closed pipe (e.g. `| head`) is not an error.
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Failure::data(format!("writing output: {e}"))),
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    Failure::data(e.to_string())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: String,
    events: usize,
    ok: usize,
    blocked: usize,
    errors: usize,
    alerts: &'a [QualifiedId],
    files: Vec<String>,
}

fn cmd_run(ctx: &Ctx, path: &Path, out: &Path, faults: &[String]) -> Result<(), Failure> {
    let format = ctx.format(&[Format::Text, Format::Json], Format::Text)?;
    let mut scenario = simulator::load_scenario_file(path).map_err(scenario_failure)?;
    for spec in faults {
        let (component, tick) = match spec.split_once('@') {
            Some((c, t)) => (c, t.parse().map_err(|_| Failure::usage(format!("bad fault tick in {spec:?}")))?),
            None => (spec.as_str(), 0),
        };
        scenario = simulator::inject_fault(&scenario, component, tick).map_err(|e| Failure::usage(e.to_string()))?;
    }
    let result = simulator::run(&scenario).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;

    fs::create_dir_all(out).map_err(|e| Failure::data(format!("creating {}: {e}", out.display())))?;
    let mut files = Vec::new();
    for store in result.federation.stores() {
        let file = out.join(format!("{}.{}", store.domain(), load::LOG_EXTENSION));
        fs::write(&file, store.export_to_vec()).map_err(|e| Failure::data(format!("writing {}: {e}", file.display())))?;
        files.push(file);
    }
    let report_path = out.join(load::REPORT_FILE);
    fs::write(&report_path, render::to_json(&result.report(scenario.seed)))
        .map_err(|e| Failure::data(format!("writing {}: {e}", report_path.display())))?;
    for stale in load::log_files(out)? {
        if !files.contains(&stale) {
            eprintln!(
                "decprov: warning: {} is not part of this run but will be read by queries on {}",
                stale.display(),
                out.display()
            );
        }
    }
    files.push(report_path);

    let count = |pred: fn(&EventOutcome) -> bool| result.events.iter().filter(|e| pred(&e.outcome)).count();
    let summary = RunSummary {
        scenario: path.display().to_string(),
        events: result.events.len(),
        ok: count(|o| matches!(o, EventOutcome::Ok)),
        blocked: count(|o| matches!(o, EventOutcome::Blocked { .. })),
        errors: count(|o| matches!(o, EventOutcome::Error { .. })),
        alerts: &result.alerts,
        files: files.iter().map(|f| f.display().to_string()).collect(),
    };
    let text = match format {
        Format::Json => render::to_json(&summary),
        _ => {
            let s = ctx.style;
            let mut text = format!(
                "{}\n",
                s.bold(&format!(
                    "ran {}: {} events ({} ok, {} blocked, {} errors), {} alerts",
                    summary.scenario,
                    summary.events,
                    summary.ok,
                    summary.blocked,
                    summary.errors,
                    summary.alerts.len()
                ))
            );
            for e in &result.events {
                let line = match &e.outcome {
                    EventOutcome::Ok => continue,
                    EventOutcome::Blocked { rule, alert } => {
                        s.warn(&format!("blocked by {rule}, alert {alert}"))
                    }
                    EventOutcome::Error { kind, message } => s.bad(&format!("{kind}: {message}")),
                };
                text.push_str(&format!("  event {} (t{} {} {}): {line}\n", e.index, e.tick, e.op, e.component));
            }
            for f in &summary.files {
                text.push_str(&format!("  wrote {f}\n"));
            }
            text
        }
    };
    emit(&text)
}

fn parse_root(text: &str) -> Result<QualifiedId, Failure> {
    text.parse().map_err(|e| Failure::usage(format!("{text:?} is not a qualified id: {e}")))
}

fn subject_known(federation: &Federation, subject: &str) -> bool {
    federation
        .stores()
        .flat_map(|s| s.nodes())
        .any(|n| n.kind == NodeKind::Entity && n.str_attr(decprov_core::model::keys::DATA_SUBJECT) == Some(subject))
}

fn cmd_query(ctx: &Ctx, dir: &Path, kind: QueryKind) -> Result<(), Failure> {
    let graph_query = matches!(kind, QueryKind::Lineage { .. } | QueryKind::Impact { .. });
    let format = if graph_query {
        ctx.format(&[Format::Text, Format::Json, Format::Dot], Format::Text)?
    } else {
        ctx.format(&[Format::Text, Format::Json], Format::Text)?
    };
    let loaded = load::load_dir(dir)?;
    let fed = &loaded.federation;
    let principal = ctx.principal(fed);
    let style = ctx.style;
    let text = match kind {
        QueryKind::Lineage { root } => pipeline(ctx, fed, &root, &principal, format, query::lineage)?,
        QueryKind::Impact { root } => pipeline(ctx, fed, &root, &principal, format, query::impact)?,
        QueryKind::Inventory { subject } => {
            if !subject_known(fed, &subject) {
                return Err(Failure::not_found(format!("no entities about data subject {subject:?}")));
            }
            let entities = query::data_inventory(fed, &subject, &principal);
            let report = render::InventoryReport {
                data_subject: &subject,
                requesting_domain: &principal,
                entities: &entities,
            };
            match format {
                Format::Json => render::to_json(&report),
                _ => render::inventory_text(&report, style),
            }
        }
        QueryKind::Erasure { subject } => {
            if !subject_known(fed, &subject) {
                return Err(Failure::not_found(format!("no entities about data subject {subject:?}")));
            }
            let report = query::erasure_set(fed, &subject);
            match format {
                Format::Json => render::to_json(&report),
                _ => render::erasure_text(&report, style),
            }
        }
        QueryKind::Unexpected { flows } => {
            let declared: FlowDeclaration = match flows {
                Some(path) => load::read_flows(&path)?,
                None => loaded.flows.clone(),
            };
            let observed = query::observed_transfers(fed);
            // Non-regulators see transfers they sent or whose copy they may read.
            let unexpected: Vec<_> = query::unexpected_flows(fed, &declared)
                .into_iter()
                .filter(|f| {
                    principal == REGULATOR
                        || f.from_domain == principal
                        || matches!(fed.resolve(&f.alias, &principal), decprov_core::Resolution::Full(_))
                })
                .collect();
            let report = render::FlowReport {
                declared: declared.len(),
                observed: observed.len(),
                unexpected: &unexpected,
            };
            match format {
                Format::Json => render::to_json(&report),
                _ => render::flows_text(&report, style),
            }
        }
    };
    emit(&text)
}

type Traversal = fn(&Federation, &QualifiedId, usize, &str) -> Result<query::DecisionPipeline, query::QueryError>;

fn pipeline(ctx: &Ctx, fed: &Federation, root: &str, principal: &str, format: Format, traverse: Traversal) -> Result<String, Failure> {
    let root = parse_root(root)?;
    let p = traverse(fed, &root, ctx.depth, principal).map_err(|e| Failure::not_found(e.to_string()))?;
    Ok(match format {
        Format::Json => render::to_json(&p),
        Format::Dot => render::dot(&Graph::from_pipeline(&p)),
        Format::Text => render::pipeline_text(&p, ctx.depth, ctx.style),
    })
}

fn cmd_verify(ctx: &Ctx, dir: &Path) -> Result<(), Failure> {
    let format = ctx.format(&[Format::Text, Format::Json], Format::Text)?;
    let files = load::log_files(dir)?;
    let mut stores = Vec::new();
    for path in &files {
        let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        let result = verify_log(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        stores.push(render::StoreCheck::new(path.display().to_string(), result));
    }
    let corrupt: Vec<String> = stores
        .iter()
        .filter_map(|s| s.first_corrupt.map(|pos| format!("{} at record {pos}", s.domain)))
        .collect();
    let report = render::VerifyReport {
        ok: corrupt.is_empty(),
        stores,
    };
    emit(&match format {
        Format::Json => render::to_json(&report),
        _ => render::verify_text(&report, ctx.style),
    })?;
    if corrupt.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            exit: Exit::Integrity,
            message: format!("integrity failure: {}", corrupt.join(", ")),
        })
    }
}

fn cmd_export(ctx: &Ctx, dir: &Path) -> Result<(), Failure> {
    let format = ctx.format(&[Format::Text, Format::Json, Format::Dot], Format::Dot)?;
    let loaded = load::load_dir(dir)?;
    let graph = Graph::whole(&loaded.federation, &ctx.principal(&loaded.federation));
    emit(&match format {
        Format::Json => render::to_json(&graph),
        Format::Dot => render::dot(&graph),
        Format::Text => render::graph_text(&graph, ctx.style),
    })
}

//! Command-line verbs over a store root.
//!
//! Human mode prints plain lines; `--output machine` prints one JSON record
//! per line on stdout and error records on stderr. Exit status is 0 only on
//! success.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphflow_core::cohort::Resource;
use graphflow_core::gfl;
use graphflow_core::pilot::{self, PilotConfig};
use graphflow_core::runtime::{clock::parse_rfc3339, RunStatus, RunView};
use graphflow_core::store::EventStore;
use serde::Deserialize;
use serde_json::{json, Value as Json};

use crate::file_store::{Durability, FileStore};
use crate::http;
use crate::ops::{self, SignalSpec};
use crate::site::{Clock, Site, SiteError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Output {
    #[default]
    Human,
    Machine,
}

#[derive(Parser, Debug)]
#[command(name = "graphflow", version, about = "Verified workflow diagrams with a durable runtime")]
pub struct Cli {
    /// Store root.
    #[arg(long, env = "GRAPHFLOW_ROOT", default_value = ".graphflow", global = true)]
    pub root: PathBuf,
    #[arg(long, short, default_value = http::DEFAULT_WORKSPACE, global = true)]
    pub workspace: String,
    #[arg(long, value_enum, default_value_t = Output::Human, global = true)]
    pub output: Output,
    /// Use this time (RFC 3339) instead of the wall clock.
    #[arg(long, global = true, hide = true)]
    pub at: Option<String>,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Subcommand, Debug)]
pub enum Verb {
    /// Parse a GFL file and list its declarations.
    Parse { file: PathBuf },
    /// Check a file's diagrams for admission without storing anything.
    Verify {
        file: PathBuf,
        #[arg(long)]
        diagram: Option<String>,
    },
    /// Verify and admit a file's diagrams, then load the file.
    Admit {
        file: PathBuf,
        #[arg(long)]
        diagram: Option<String>,
    },
    /// Load a file's declarations without admission.
    Load { file: PathBuf },
    /// Start a run and print its events up to the first wait or the end.
    Run {
        slug: String,
        #[arg(long = "input", value_name = "K=V")]
        inputs: Vec<String>,
        #[arg(long = "bind", value_name = "LANE=CONTACT")]
        bindings: Vec<String>,
        #[arg(long, env = "USER", default_value = "cli")]
        actor: String,
    },
    /// Signal a waiting run.
    Signal(SignalArgs),
    /// Rebuild a run from its log and check it.
    Replay { run_id: String },
    /// List runs.
    Runs {
        #[arg(long)]
        status: Option<String>,
    },
    /// Print a run's events.
    Events {
        run_id: String,
        #[arg(long, default_value_t = 1)]
        from: u64,
    },
    /// Pending human tasks.
    Tasks {
        #[arg(long)]
        assignee: Option<String>,
    },
    /// Print a query's cohort.
    Query { slug: String },
    /// Compute and record a metric sample.
    Metric { slug: String },
    /// Show a trigger's plan, or start its runs with --fire.
    Trigger {
        slug: String,
        #[arg(long)]
        fire: bool,
    },
    /// Fire due timers and scheduled jobs.
    Tick,
    #[command(subcommand)]
    Resource(ResourceVerb),
    /// Run the clinic pilot simulation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write logs under the store root, one workspace per clinic.
        #[arg(long)]
        persist: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Appends runs forever, printing each acknowledged append.
    #[command(hide = true)]
    CrashWriter {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        slug: String,
        #[arg(long, default_value_t = 100_000)]
        max_runs: u64,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "what")]
pub struct SignalKind {
    /// Add a tag to the resource the run waits on.
    #[arg(long)]
    tag: Option<String>,
    /// Remove a tag from the resource the run waits on.
    #[arg(long)]
    untag: Option<String>,
    /// `node=choice`, or just `choice` for the node the run waits at.
    #[arg(long)]
    decision: Option<String>,
    /// Fire the run's armed timer now.
    #[arg(long)]
    timer: bool,
    /// Retry an exhausted boundary node.
    #[arg(long, value_name = "NODE")]
    retry: Option<String>,
}

#[derive(Args, Debug)]
pub struct SignalArgs {
    run_id: String,
    #[command(flatten)]
    kind: SignalKind,
    /// Resource to tag instead of the watched one.
    #[arg(long)]
    resource: Option<String>,
    #[arg(long, env = "USER", default_value = "cli")]
    actor: String,
}

#[derive(Subcommand, Debug)]
pub enum ResourceVerb {
    /// Upsert resources from a file of one JSON record per line.
    Import { file: PathBuf },
    /// Add (or with --remove, remove) a tag.
    Tag {
        id: String,
        tag: String,
        #[arg(long)]
        remove: bool,
        #[arg(long, env = "USER", default_value = "cli")]
        actor: String,
    },
    /// List resources.
    List,
}

/// Simulation config: a pathway file plus the pilot profile.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct SimulationFile {
    /// GFL file with the pathway, relative to the config file.
    pathway: PathBuf,
    #[serde(flatten)]
    pilot: PilotConfig,
}

struct Out {
    mode: Output,
}

impl Out {
    fn record(&self, kind: &str, mut rec: Json, human: impl FnOnce() -> String) {
        match self.mode {
            Output::Human => emit(&human()),
            Output::Machine => {
                rec["record"] = Json::String(kind.into());
                emit(&rec.to_string());
            }
        }
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn emit(line: &str) {
    let mut o = io::stdout().lock();
    let _ = writeln!(o, "{line}");
}

/// Error kind and message, plus structured detail for machine mode.
struct Failure {
    kind: &'static str,
    message: String,
    detail: Option<Json>,
}

impl From<SiteError> for Failure {
    fn from(e: SiteError) -> Self {
        let (_, kind) = http::classify(&e);
        let detail = match &e {
            SiteError::Rejected(r) => serde_json::to_value(&**r).ok(),
            _ => None,
        };
        Failure { kind, message: e.to_string(), detail }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { kind: "io", message: e.to_string(), detail: None }
    }
}

fn fail(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into(), detail: None }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    let out = Out { mode: cli.output };
    match execute(&cli, &out) {
        Ok(()) => 0,
        Err(f) => {
            match out.mode {
                Output::Human => eprintln!("error: {}", f.message),
                Output::Machine => {
                    let mut rec = json!({"record": "error", "kind": f.kind, "message": f.message});
                    if let Some(d) = f.detail {
                        rec["detail"] = d;
                    }
                    eprintln!("{rec}");
                }
            }
            1
        }
    }
}

fn open_site(cli: &Cli) -> Result<Site, Failure> {
    let mut site = Site::open(&cli.root)?;
    if let Some(at) = &cli.at {
        site.clock = Clock::Fixed(parse_rfc3339(at).ok_or_else(|| fail("validation", format!("bad time {at:?}")))?);
    }
    Ok(site)
}

fn print_view(out: &Out, v: &RunView) {
    let rec = ops::view_json(v);
    out.record("run", rec, || {
        let mut line = format!("{} {}", v.run_id, v.status.name());
        match &v.status {
            RunStatus::Waiting(l) | RunStatus::Paused(l) => line.push_str(&format!(" at {} ({})", l.node, l.id)),
            RunStatus::Errored(f) => line.push_str(&format!(": {}", f.message)),
            _ => {}
        }
        for (k, val) in v.sigma.0.iter().filter(|(k, _)| !k.starts_with('_') && *k != "swimlanes") {
            line.push_str(&format!("\n  {k} = {}", val.to_canonical_string()));
        }
        line
    });
}

fn execute(cli: &Cli, out: &Out) -> Result<(), Failure> {
    let ws = cli.workspace.as_str();
    match &cli.verb {
        Verb::Parse { file } => {
            let decls = gfl::parse_str(&read(file)?).map_err(|e| fail("parse", format!("{}:{e}", file.display())))?;
            for d in &decls {
                out.record("declaration", json!({"kind": d.kind().name(), "slug": d.slug, "name": d.name}), || format!("{} {} {:?}", d.kind().name(), d.slug, d.name));
            }
        }
        Verb::Verify { file, diagram } => {
            let reports = Site::verify(&read(file)?, diagram.as_deref())?;
            let mut ok = true;
            for r in &reports {
                ok &= r.admitted;
                out.record("admission", serde_json::to_value(r).expect("reports serialize"), || r.to_string().trim_end().to_string());
            }
            if !ok {
                return Err(fail("rejected", "one or more diagrams were rejected"));
            }
        }
        Verb::Admit { file, diagram } => {
            let mut site = open_site(cli)?;
            match site.admit(ws, &read(file)?, diagram.as_deref()) {
                Ok(autos) => {
                    for a in autos {
                        out.record("automation", json!({"id": a.id, "slug": a.slug, "content_hash": a.content_hash}), || a.id.clone());
                    }
                }
                Err(SiteError::Rejected(r)) => {
                    if out.mode == Output::Human {
                        eprintln!("{}", r.to_string().trim_end());
                    }
                    return Err(SiteError::Rejected(r).into());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Verb::Load { file } => {
            let mut site = open_site(cli)?;
            for d in site.load_source(ws, &read(file)?)? {
                out.record("loaded", json!({"kind": d.kind().name(), "slug": d.slug}), || format!("loaded {} {}", d.kind().name(), d.slug));
            }
        }
        Verb::Run { slug, inputs, bindings, actor } => {
            let mut site = open_site(cli)?;
            let inputs: BTreeMap<String, Json> = inputs.iter().map(|s| ops::parse_assignment(s)).collect::<Result<_, _>>()?;
            let bindings: BTreeMap<String, Json> =
                bindings.iter().map(|s| ops::parse_assignment(s).map(|(k, v)| (k, Json::String(v.as_str().map_or_else(|| v.to_string(), String::from))))).collect::<Result<_, _>>()?;
            let v = ops::start(&mut site, ws, slug, &inputs, &bindings, actor)?;
            let w = site.workspace(ws)?;
            for r in w.events(&v.run_id, 1).map_err(SiteError::from)? {
                out.record("event", ops::event_json(&r), || format!("{:>4} {:<18} {}", r.seq, r.kind.name(), r.node_id.as_deref().unwrap_or("")));
            }
            print_view(out, &v);
        }
        Verb::Signal(a) => {
            let k = &a.kind;
            let spec = if let Some(t) = &k.tag {
                SignalSpec::Tag { tag: t.clone(), resource: a.resource.clone(), remove: false }
            } else if let Some(t) = &k.untag {
                SignalSpec::Tag { tag: t.clone(), resource: a.resource.clone(), remove: true }
            } else if let Some(d) = &k.decision {
                match d.split_once('=') {
                    Some((n, c)) => SignalSpec::Decision { node: Some(n.to_string()), choice: c.to_string() },
                    None => SignalSpec::Decision { node: None, choice: d.clone() },
                }
            } else if let Some(n) = &k.retry {
                SignalSpec::Retry { node: n.clone() }
            } else {
                SignalSpec::Timer
            };
            let mut site = open_site(cli)?;
            let v = ops::signal(&mut site, ws, &a.run_id, &spec, &a.actor)?;
            print_view(out, &v);
        }
        Verb::Replay { run_id } => {
            let mut site = open_site(cli)?;
            let w = site.workspace(ws)?;
            if w.run(run_id).is_none() {
                return Err(SiteError::from(graphflow_core::workspace::WorkspaceError::UnknownRun(run_id.clone())).into());
            }
            let r = w.replay(run_id).map_err(SiteError::from)?;
            let v = &r.view;
            print_view(out, v);
            let rec = json!({"run_id": v.run_id, "events": v.last_seq, "adapter_calls": v.adapter_calls, "incomplete": r.incomplete, "diverged": false});
            out.record("replay", rec, || format!("replay ok: {} events, {} adapter calls{}", v.last_seq, v.adapter_calls, if r.incomplete { ", log ends mid-step" } else { "" }));
        }
        Verb::Runs { status } => {
            let mut site = open_site(cli)?;
            for r in site.workspace(ws)?.runs(status.as_deref()) {
                out.record("run", serde_json::to_value(r).expect("summaries serialize"), || {
                    format!("{} {} {} {}", r.run_id, r.slug, r.status, r.listener.as_ref().map_or("", |l| l.node.as_str()))
                });
            }
        }
        Verb::Events { run_id, from } => {
            let mut site = open_site(cli)?;
            for r in site.workspace(ws)?.events(run_id, *from).map_err(SiteError::from)? {
                out.record("event", ops::event_json(&r), || format!("{:>4} {} {:<18} {} {}", r.seq, r.at, r.kind.name(), r.node_id.as_deref().unwrap_or("-"), r.payload));
            }
        }
        Verb::Tasks { assignee } => {
            let mut site = open_site(cli)?;
            for t in site.workspace(ws)?.tasks(assignee.as_deref()) {
                out.record("task", serde_json::to_value(&t).expect("tasks serialize"), || format!("{} {} {:?} @{} [{}]", t.run_id, t.node_id, t.label, t.lane, t.choices.join("|")));
            }
        }
        Verb::Query { slug } => {
            let mut site = open_site(cli)?;
            let (members, stats) = site.workspace(ws)?.cohort(slug).map_err(SiteError::from)?;
            for m in &members {
                out.record("member", json!({"query": slug, "id": m}), || m.clone());
            }
            out.record("cohort", json!({"query": slug, "count": members.len(), "stats": stats}), || format!("{} members ({} scanned)", members.len(), stats.scanned));
        }
        Verb::Metric { slug } => {
            let mut site = open_site(cli)?;
            let s = site.workspace(ws)?.compute_metric(slug).map_err(SiteError::from)?;
            site.save(ws)?;
            let value = s.value.map_or_else(|| "null".to_string(), |v| v.to_string());
            out.record("sample", json!({"metric": slug, "sample": s}), || format!("{slug} {} = {value} (n={})", s.at, s.count));
        }
        Verb::Trigger { slug, fire } => {
            let mut site = open_site(cli)?;
            let w = site.workspace(ws)?;
            if *fire {
                let r = w.fire_trigger(slug).map_err(SiteError::from)?;
                site.save(ws)?;
                for id in &r.started {
                    out.record("started", json!({"trigger": slug, "run_id": id}), || id.clone());
                }
                let rec = json!({"trigger": slug, "started": r.started.len(), "blocked": r.blocked, "skipped": r.skipped, "failed": r.failed});
                out.record("fire", rec, || format!("{} started, {} blocked, {} skipped, {} failed", r.started.len(), r.blocked.len(), r.skipped.len(), r.failed.len()));
            } else {
                let t = w.triggers.get(slug).ok_or_else(|| SiteError::from(graphflow_core::workspace::WorkspaceError::UnknownTrigger(slug.clone())))?;
                let (members, _) = w.cohort(&t.source_query).map_err(SiteError::from)?;
                let blocked = members.iter().filter(|m| t.blocked(m, w.now())).count();
                let rec = json!({"trigger": slug, "calls": t.calls, "cohort": members.len(), "blocked": blocked, "active": t.active});
                out.record("trigger", rec, || format!("{slug} calls {}: {} in cohort, {} blocked by repeat", t.calls, members.len(), blocked));
            }
        }
        Verb::Tick => {
            let mut site = open_site(cli)?;
            let r = site.workspace(ws)?.tick().map_err(SiteError::from)?;
            site.save(ws)?;
            let started: usize = r.triggers.values().map(|f| f.started.len()).sum();
            let rec = json!({"timers": r.timers, "triggers": r.triggers.keys().collect::<Vec<_>>(), "started": started, "samples": r.samples});
            out.record("tick", rec, || format!("{} timers, {} runs started, {} samples", r.timers.len(), started, r.samples.len()));
        }
        Verb::Resource(rv) => resource(cli, out, rv)?,
        Verb::Simulate { config, persist } => simulate(cli, out, config, *persist)?,
        Verb::Serve { addr } => {
            let mut site = open_site(cli)?;
            site.lock_root()?;
            let shared = Arc::new(Mutex::new(site));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(http::serve(shared, addr))?;
        }
        Verb::CrashWriter { file, slug, max_runs } => crash_writer(cli, file, slug, *max_runs)?,
    }
    Ok(())
}

fn resource(cli: &Cli, out: &Out, rv: &ResourceVerb) -> Result<(), Failure> {
    let ws = cli.workspace.as_str();
    let mut site = open_site(cli)?;
    match rv {
        ResourceVerb::Import { file } => {
            let text = read(file)?;
            let w = site.workspace(ws)?;
            let mut n = 0;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: Resource = serde_json::from_str(line).map_err(|e| fail("validation", format!("{}:{}: {e}", file.display(), i + 1)))?;
                w.upsert_resource(r);
                n += 1;
            }
            site.save(ws)?;
            out.record("imported", json!({"count": n}), || format!("{n} resources"));
        }
        ResourceVerb::Tag { id, tag, remove, actor } => {
            let w = site.workspace(ws)?;
            w.actor = Some(actor.clone());
            let r = if *remove { w.remove_tag(id, tag) } else { w.add_tag(id, tag) };
            w.actor = None;
            site.save(ws)?;
            let r = r.map_err(SiteError::from)?;
            let resumed: Vec<&str> = r.resumed.iter().map(|v| v.run_id.as_str()).collect();
            let rec = json!({"resource": id, "tag": tag, "changed": r.change.is_some(), "resumed": resumed});
            out.record("tag", rec, || format!("{id} {}{tag}; resumed [{}]", if *remove { "-" } else { "+" }, resumed.join(", ")));
        }
        ResourceVerb::List => {
            for r in site.workspace(ws)?.resources.iter() {
                let tags: Vec<&str> = r.tags.iter().map(String::as_str).collect();
                out.record("resource", serde_json::to_value(r).expect("resources serialize"), || format!("{} {} [{}]", r.id, r.resource_type, tags.join(" ")));
            }
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, out: &Out, config: &Path, persist: bool) -> Result<(), Failure> {
    let cfg: SimulationFile = toml::from_str(&read(config)?).map_err(|e| fail("validation", format!("{}: {e}", config.display())))?;
    let pathway = config.parent().unwrap_or(Path::new(".")).join(&cfg.pathway);
    let decls = gfl::parse_str(&read(&pathway)?).map_err(|e| fail("parse", format!("{}:{e}", pathway.display())))?;
    let sim = if persist {
        let root = cli.root.clone();
        let mut err = None;
        let sim = pilot::simulate_with(&cfg.pilot, &decls, |_| match FileStore::open(&root) {
            Ok(mut s) => {
                s.durability = Durability::Batch;
                Box::new(s)
            }
            Err(e) => {
                err = Some(e);
                Box::new(graphflow_core::store::MemoryStore::new())
            }
        });
        if let Some(e) = err {
            return Err(fail("io", e.to_string()));
        }
        let mut sim = sim.map_err(|e| fail("validation", e.to_string()))?;
        for c in &mut sim.clinics {
            c.workspace.store.flush().map_err(|e| fail("io", e.to_string()))?;
        }
        // Recount from what is on disk.
        let stores: Vec<FileStore> = sim.clinics.iter().map(|_| FileStore::open(&cli.root)).collect::<Result<_, _>>().map_err(|e| fail("io", e.to_string()))?;
        let logs: Vec<(&str, &dyn EventStore)> = sim.clinics.iter().zip(&stores).map(|(c, s)| (c.profile.name.as_str(), s as &dyn EventStore)).collect();
        sim.report = pilot::report_from_logs(&logs).map_err(|e| fail("io", e.to_string()))?;
        sim
    } else {
        pilot::simulate(&cfg.pilot, &decls).map_err(|e| fail("validation", e.to_string()))?
    };
    let report = &sim.report;
    out.record("pilot", serde_json::to_value(report).expect("reports serialize"), || report.to_string().trim_end().to_string());
    Ok(())
}

/// Starts runs of `slug` back to back (resuming any left unfinished) and
/// prints `ack <run> <seq> <line>` after each append returns. Used to check
/// that a kill never loses an acknowledged event.
fn crash_writer(cli: &Cli, file: &Path, slug: &str, max_runs: u64) -> Result<(), Failure> {
    struct Acking {
        inner: FileStore,
        out: io::Stdout,
    }
    impl EventStore for Acking {
        fn create_workspace(&mut self, ws: &str) -> Result<(), graphflow_core::store::StoreError> {
            self.inner.create_workspace(ws)
        }
        fn has_workspace(&self, ws: &str) -> bool {
            self.inner.has_workspace(ws)
        }
        fn append(&mut self, ws: &str, run_id: &str, ev: graphflow_core::store::NewEvent) -> Result<u64, graphflow_core::store::StoreError> {
            let seq = self.inner.append(ws, run_id, ev)?;
            // The record as stored, read back for the ack.
            let rec = self.inner.read(ws, run_id, seq)?;
            let line = rec.first().map(|r| r.to_line()).unwrap_or_default();
            let mut o = self.out.lock();
            let _ = writeln!(o, "ack {run_id} {seq} {line}");
            let _ = o.flush();
            Ok(seq)
        }
        fn read(&self, ws: &str, run_id: &str, from: u64) -> Result<Vec<graphflow_core::store::EventRecord>, graphflow_core::store::StoreError> {
            self.inner.read(ws, run_id, from)
        }
        fn run_ids(&self, ws: &str) -> Result<Vec<String>, graphflow_core::store::StoreError> {
            self.inner.run_ids(ws)
        }
    }
    let ws = cli.workspace.as_str();
    let inner = FileStore::open(&cli.root).map_err(|e| fail("io", e.to_string()))?;
    let store = Acking { inner, out: io::stdout() };
    let mut w = graphflow_core::workspace::Workspace::new(ws, Box::new(store), graphflow_core::runtime::Adapters::simulated(graphflow_core::runtime::FaultSchedule::Never))
        .map_err(SiteError::from)?;
    w.load_source(&read(file)?).map_err(SiteError::from)?;
    w.rebuild_index().map_err(SiteError::from)?;
    let unfinished: Vec<String> = w.runs(Some("running")).map(|r| r.run_id.clone()).collect();
    for id in unfinished {
        w.resume(&id).map_err(SiteError::from)?;
    }
    let d = w.diagram(slug).map_err(SiteError::from)?.clone();
    for n in 1..=max_runs {
        let mut req = graphflow_core::runtime::StartRequest::default();
        for (i, (name, _)) in d.inputs.iter().enumerate() {
            req.inputs.insert(name.clone(), graphflow_core::Value::Number(((n * 7 + i as u64) % 41) as f64 - 20.0));
        }
        w.start(slug, req).map_err(SiteError::from)?;
    }
    Ok(())
}

//! A store root holding many workspaces, each persisted as:
//!
//! ```text
//! <root>/<ws>/runs/<runId>.log        event logs
//! <root>/<ws>/resources.db            one resource record per line
//! <root>/<ws>/automations/<slug>-<hash>  admitted automation + source
//! <root>/<ws>/decls/<kind>-<slug>.gfl loaded declarations, canonical text
//! <root>/<ws>/state.json              trigger ledgers, metric samples, job times
//! <root>/<ws>/journal.log             tag changes and trigger outcomes
//! ```
//!
//! Everything except the logs is rewritten atomically by `save`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use graphflow_core::cohort::{MetricSample, Resource};
use graphflow_core::gfl::{self, Declaration};
use graphflow_core::runtime::{Adapters, FaultSchedule};
use graphflow_core::verifier::{self, AdmissionReport, Automation, DEFAULT_BUDGET};
use graphflow_core::workspace::{Workspace, WorkspaceError};
use graphflow_core::Value;
use serde::{Deserialize, Serialize};

use crate::file_store::{valid_name, Durability, FileStore};

#[derive(Debug, thiserror::Error)]
pub enum SiteError {
    #[error("invalid workspace name {0:?}")]
    BadName(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("no diagram {0} in the file")]
    NoSuchDiagram(String),
    #[error("{} rejected", .0.slug)]
    Rejected(Box<AdmissionReport>),
    #[error("root {0} is locked by another process")]
    RootLocked(String),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

impl From<std::io::Error> for SiteError {
    fn from(e: std::io::Error) -> Self {
        SiteError::Io(e.to_string())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SavedState {
    #[serde(default)]
    triggers: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    metrics: BTreeMap<String, Vec<MetricSample>>,
    #[serde(default)]
    last_job: BTreeMap<String, DateTime<Utc>>,
    #[serde(default)]
    persisted: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SavedAutomation {
    automation: Automation,
    source: String,
}

/// Where workspace clocks take the time from. Clocks never move backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    Wall,
    /// At least this time; used to make logs reproducible.
    Fixed(DateTime<Utc>),
}

pub struct Site {
    root: PathBuf,
    open: BTreeMap<String, Workspace>,
    /// Journal entries already written, per workspace.
    journaled: BTreeMap<String, usize>,
    pub durability: Durability,
    pub clock: Clock,
    _lock: Option<File>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SiteError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Site {
    pub fn open(root: impl Into<PathBuf>) -> Result<Site, SiteError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Site { root, open: BTreeMap::new(), journaled: BTreeMap::new(), durability: Durability::EveryAppend, clock: Clock::Wall, _lock: None })
    }

    /// Takes the root for this process alone, as serve mode does.
    pub fn lock_root(&mut self) -> Result<(), SiteError> {
        let f = OpenOptions::new().create(true).truncate(false).write(true).open(self.root.join(".lock"))?;
        match f.try_lock() {
            Ok(()) => {
                self._lock = Some(f);
                Ok(())
            }
            Err(fs::TryLockError::WouldBlock) => Err(SiteError::RootLocked(self.root.display().to_string())),
            Err(fs::TryLockError::Error(e)) => Err(e.into()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, ws: &str) -> PathBuf {
        self.root.join(ws)
    }

    /// Workspaces on disk plus any opened in this process.
    pub fn workspace_names(&self) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().join("runs").is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| valid_name(n))
            .collect();
        names.extend(self.open.keys().cloned());
        names.sort();
        names.dedup();
        names
    }

    pub fn exists(&self, ws: &str) -> bool {
        valid_name(ws) && (self.open.contains_key(ws) || self.dir(ws).join("runs").is_dir())
    }

    /// Opens (creating if needed) and returns a workspace, with its clock
    /// brought up to now.
    pub fn workspace(&mut self, ws: &str) -> Result<&mut Workspace, SiteError> {
        if !valid_name(ws) {
            return Err(SiteError::BadName(ws.to_string()));
        }
        if !self.open.contains_key(ws) {
            let w = self.load_workspace(ws)?;
            self.journaled.insert(ws.to_string(), w.journal.len());
            self.open.insert(ws.to_string(), w);
        }
        let w = self.open.get_mut(ws).expect("opened above");
        match self.clock {
            Clock::Wall => w.clock.set(Utc::now()),
            Clock::Fixed(t) => w.clock.set(t),
        }
        Ok(w)
    }

    fn load_workspace(&self, ws: &str) -> Result<Workspace, SiteError> {
        let dir = self.dir(ws);
        let mut store = FileStore::open(&self.root).map_err(|e| SiteError::Io(e.to_string()))?;
        store.durability = self.durability;
        let mut w = Workspace::new(ws, Box::new(store), Adapters::simulated(FaultSchedule::Never))?;
        let mut decls = Vec::new();
        let decl_dir = dir.join("decls");
        if decl_dir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&decl_dir)?.flatten().map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "gfl")).collect();
            files.sort();
            for f in files {
                let text = fs::read_to_string(&f)?;
                decls.extend(gfl::parse_str(&text).map_err(|e| SiteError::Parse(format!("{}: {e}", f.display())))?);
            }
        }
        w.load(&decls)?;
        let auto_dir = dir.join("automations");
        if auto_dir.is_dir() {
            for e in fs::read_dir(&auto_dir)?.flatten().filter(|e| e.path().extension().is_none()) {
                let text = fs::read_to_string(e.path())?;
                let saved: SavedAutomation = serde_json::from_str(&text).map_err(|er| SiteError::Parse(format!("{}: {er}", e.path().display())))?;
                w.library.insert(saved.automation);
            }
        }
        let db = dir.join("resources.db");
        if db.is_file() {
            for (i, line) in fs::read_to_string(&db)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: Resource = serde_json::from_str(line).map_err(|e| SiteError::Parse(format!("resources.db line {}: {e}", i + 1)))?;
                w.upsert_resource(r);
            }
        }
        let state = dir.join("state.json");
        if state.is_file() {
            let s: SavedState = serde_json::from_str(&fs::read_to_string(&state)?).map_err(|e| SiteError::Parse(format!("state.json: {e}")))?;
            for (slug, fired) in s.triggers {
                if let Some(t) = w.triggers.get_mut(&slug) {
                    t.fired = fired;
                }
            }
            for (slug, samples) in s.metrics {
                if let Some(m) = w.metrics.get_mut(&slug) {
                    m.samples = samples;
                }
            }
            w.last_job = s.last_job;
            w.persisted = s.persisted;
        }
        // Declarations are loaded now, so runs replay instead of being stubs.
        w.rebuild_index()?;
        Ok(w)
    }

    /// Parses `text`, stores its declarations and loads them.
    pub fn load_source(&mut self, ws: &str, text: &str) -> Result<Vec<Declaration>, SiteError> {
        let decls = gfl::parse_str(text).map_err(|e| SiteError::Parse(e.to_string()))?;
        self.workspace(ws)?.load(&decls)?;
        let dir = self.dir(ws).join("decls");
        fs::create_dir_all(&dir)?;
        // A query and its metric often share a slug, so the kind is part of the name.
        for d in &decls {
            write_atomic(&dir.join(format!("{}-{}.gfl", d.kind().name(), d.slug)), gfl::serialize_all(std::slice::from_ref(d)).as_bytes())?;
        }
        self.workspace(ws)?.rebuild_index()?;
        Ok(decls)
    }

    /// Verifies the diagrams in `text` (or just `only`), admitting each and
    /// loading the file when all pass.
    pub fn admit(&mut self, ws: &str, text: &str, only: Option<&str>) -> Result<Vec<Automation>, SiteError> {
        let decls = gfl::parse_str(text).map_err(|e| SiteError::Parse(e.to_string()))?;
        let targets: Vec<&Declaration> = decls.iter().filter(|d| d.as_diagram().is_some() && only.is_none_or(|s| s == d.slug)).collect();
        if let Some(s) = only.filter(|_| targets.is_empty()) {
            return Err(SiteError::NoSuchDiagram(s.to_string()));
        }
        let mut admitted = Vec::new();
        for d in targets {
            let built = graphflow_core::diagram::build(d).map_err(|es| {
                SiteError::Workspace(WorkspaceError::Structure { slug: d.slug.clone(), detail: es.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ") })
            })?;
            let w = self.workspace(ws)?;
            let at = w.clock.rfc3339();
            let a = w.library.admit(&built, DEFAULT_BUDGET, &at).map_err(|r| SiteError::Rejected(Box::new(r)))?;
            let dir = self.dir(ws).join("automations");
            fs::create_dir_all(&dir)?;
            let saved = SavedAutomation { automation: a.clone(), source: gfl::serialize_all(std::slice::from_ref(d)) };
            let name = format!("{}-{}", a.slug, &a.content_hash[..a.content_hash.len().min(12)]);
            write_atomic(&dir.join(name), serde_json::to_string_pretty(&saved).expect("serializes").as_bytes())?;
            admitted.push(a);
        }
        self.load_source(ws, text)?;
        Ok(admitted)
    }

    /// Writes resources, scheduler state and new journal entries.
    pub fn save(&mut self, ws: &str) -> Result<(), SiteError> {
        let Some(w) = self.open.get(ws) else { return Ok(()) };
        let dir = self.dir(ws);
        let mut db = String::new();
        for r in w.resources.iter() {
            db.push_str(&serde_json::to_string(r).expect("resources serialize"));
            db.push('\n');
        }
        write_atomic(&dir.join("resources.db"), db.as_bytes())?;
        let state = SavedState {
            triggers: w.triggers.iter().map(|(k, t)| (k.clone(), t.fired.clone())).collect(),
            metrics: w.metrics.iter().map(|(k, m)| (k.clone(), m.samples.clone())).collect(),
            last_job: w.last_job.clone(),
            persisted: w.persisted.clone(),
        };
        write_atomic(&dir.join("state.json"), serde_json::to_string_pretty(&state).expect("state serializes").as_bytes())?;
        let done = self.journaled.get(ws).copied().unwrap_or(0);
        if w.journal.len() > done {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join("journal.log"))?;
            for j in &w.journal[done..] {
                writeln!(f, "{}", serde_json::to_string(j).expect("journal serializes"))?;
            }
            f.sync_data()?;
            self.journaled.insert(ws.to_string(), w.journal.len());
        }
        Ok(())
    }

    /// Verification only; nothing is stored.
    pub fn verify(text: &str, only: Option<&str>) -> Result<Vec<AdmissionReport>, SiteError> {
        let decls = gfl::parse_str(text).map_err(|e| SiteError::Parse(e.to_string()))?;
        let mut out = Vec::new();
        for d in decls.iter().filter(|d| d.as_diagram().is_some() && only.is_none_or(|s| s == d.slug)) {
            let built = graphflow_core::diagram::build(d).map_err(|es| {
                SiteError::Workspace(WorkspaceError::Structure { slug: d.slug.clone(), detail: es.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ") })
            })?;
            out.push(verifier::verify(&built, DEFAULT_BUDGET));
        }
        if let Some(s) = only.filter(|_| out.is_empty()) {
            return Err(SiteError::NoSuchDiagram(s.to_string()));
        }
        Ok(out)
    }
}

//! Kills a writer process at random points and checks that every event it
//! acknowledged is on disk afterwards.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use graphflow::FileStore;
use graphflow_core::runtime::{Adapters, FaultSchedule};
use graphflow_core::store::EventStore;
use graphflow_core::workspace::Workspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SLUG: &str = "calculate-sum-of-squares-bounded";
const KILLS_PER_WORKSPACE: usize = 25;

pub fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

#[derive(Debug, Default)]
pub struct Report {
    pub kills: usize,
    pub acked: usize,
    pub lost: Vec<String>,
    pub gaps: Vec<String>,
    pub unfinished: Vec<String>,
    pub workspaces: usize,
    /// Summed over kills: runs left without a terminal event.
    pub interrupted: usize,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.lost.is_empty() && self.gaps.is_empty() && self.unfinished.is_empty() && self.kills > 0
    }
}

/// `(run, seq) -> line` acknowledged by one writer.
type Acks = BTreeMap<(String, u64), String>;

fn parse_ack(line: &str) -> Option<((String, u64), String)> {
    let rest = line.strip_prefix("ack ")?;
    let (run, rest) = rest.split_once(' ')?;
    let (seq, record) = rest.split_once(' ')?;
    Some(((run.to_string(), seq.parse().ok()?), record.to_string()))
}

fn writer(bin: &Path, root: &Path, ws: &str, max_runs: u64) -> Command {
    let mut c = Command::new(bin);
    c.arg("--root").arg(root).args(["--workspace", ws, "crash-writer", "--slug", SLUG, "--max-runs"]);
    c.arg(max_runs.to_string()).arg("--file").arg(corpus("sum_of_squares.gfl"));
    c.stdout(Stdio::piped()).stderr(Stdio::null());
    c
}

/// Runs one writer and kills it after `after` acks, or after `delay` when
/// `after` is `None`. Returns every ack it managed to print.
fn one_life(bin: &Path, root: &Path, ws: &str, after: Option<usize>, delay: Duration) -> Acks {
    let mut child = writer(bin, root, ws, 100_000).spawn().expect("writer starts");
    let mut out = BufReader::new(child.stdout.take().expect("piped"));
    let mut acks = Acks::new();
    let mut line = String::new();
    match after {
        Some(k) => {
            while acks.len() < k {
                line.clear();
                if out.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some((key, rec)) = parse_ack(line.trim_end()) {
                    acks.insert(key, rec);
                }
            }
        }
        None => std::thread::sleep(delay),
    }
    let _ = child.kill();
    // Whatever reached the pipe before the kill was acknowledged too. A line
    // cut by the kill has no newline and is not an ack.
    let mut rest = Vec::new();
    let _ = std::io::Read::read_to_end(&mut out, &mut rest);
    let _ = child.wait();
    let text = String::from_utf8_lossy(&rest);
    let complete = text.rfind('\n').map_or("", |i| &text[..i]);
    for l in complete.lines() {
        if let Some((key, rec)) = parse_ack(l) {
            acks.insert(key, rec);
        }
    }
    acks
}

fn check_workspace(store: &FileStore, ws: &str, acks: &Acks, report: &mut Report) {
    for ((run, seq), want) in acks {
        let got = store.read(ws, run, *seq).ok().and_then(|r| r.into_iter().next());
        match got {
            Some(r) if r.seq == *seq && &r.to_line() == want => {}
            other => report.lost.push(format!("{ws}/{run}#{seq}: {other:?}")),
        }
    }
    for run in store.run_ids(ws).unwrap_or_default() {
        let records = store.read(ws, &run, 1).unwrap_or_default();
        if records.iter().enumerate().any(|(i, r)| r.seq != i as u64 + 1) {
            report.gaps.push(format!("{ws}/{run}"));
        }
        report.interrupted += usize::from(!records.iter().any(|r| r.kind.is_terminal()));
    }
}

/// Recovers the workspace once more, letting the writer finish what it
/// resumed, and checks that each run ends up terminal and replays.
fn settle(bin: &Path, root: &Path, ws: &str, report: &mut Report) {
    let out = writer(bin, root, ws, 0).stdout(Stdio::null()).stderr(Stdio::piped()).output().expect("writer runs");
    if !out.status.success() {
        report.unfinished.push(format!("{ws}: recovery exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim()));
        return;
    }
    let store = FileStore::open(root).expect("root opens");
    let mut w = Workspace::new(ws, Box::new(store), Adapters::simulated(FaultSchedule::Never)).expect("workspace");
    w.load_source(&std::fs::read_to_string(corpus("sum_of_squares.gfl")).unwrap()).unwrap();
    w.rebuild_index().unwrap();
    let runs: Vec<_> = w.runs(None).cloned().collect();
    for r in runs {
        let replayed = w.replay(&r.run_id);
        let done = matches!(r.status.as_str(), "completed" | "errored");
        if !done || replayed.as_ref().map_or(true, |x| x.incomplete) {
            report.unfinished.push(format!("{ws}/{}: {} {:?}", r.run_id, r.status, replayed.err()));
        }
    }
}

/// Rechecks the whole ack history of a workspace, then recovers it.
fn finish(bin: &Path, root: &Path, ws: &str, acks: &Acks, report: &mut Report) {
    let store = FileStore::open(root).expect("root opens");
    let before = report.interrupted;
    check_workspace(&store, ws, acks, report);
    report.interrupted = before;
    settle(bin, root, ws, report);
}

pub fn campaign(bin: &Path, root: &Path, kills: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    let mut acks = Acks::new();
    let mut ws = String::new();
    for i in 0..kills {
        if i % KILLS_PER_WORKSPACE == 0 {
            if !ws.is_empty() {
                finish(bin, root, &ws, &acks, &mut report);
            }
            ws = format!("w{}", i / KILLS_PER_WORKSPACE);
            report.workspaces += 1;
            acks.clear();
        }
        let (after, delay) = if rng.random_bool(0.7) {
            (Some(rng.random_range(0..60)), Duration::ZERO)
        } else {
            (None, Duration::from_micros(rng.random_range(0..20_000)))
        };
        let got = one_life(bin, root, &ws, after, delay);
        report.kills += 1;
        report.acked += got.len();
        // Check right away, before a later writer could paper over a loss.
        let store = FileStore::open(root).expect("root opens");
        let mut fresh = Acks::new();
        for (k, v) in got {
            if acks.insert(k.clone(), v.clone()).is_none() {
                fresh.insert(k, v);
            }
        }
        check_workspace(&store, &ws, &fresh, &mut report);
    }
    if !ws.is_empty() {
        finish(bin, root, &ws, &acks, &mut report);
    }
    report
}

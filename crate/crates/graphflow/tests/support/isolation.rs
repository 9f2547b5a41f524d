//! Random operations spread over several workspaces of one site, checked
//! through the HTTP API against a model in which workspaces share nothing.
//! Run ids repeat across workspaces by design, so a lookup routed to the
//! wrong workspace finds a real but foreign run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use graphflow::http::router;
use graphflow::{Clock, Site};
use graphflow_core::cohort::Resource;
use graphflow_core::Value;
use http_body_util::BodyExt;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};
use tower::ServiceExt;

pub const SUM: &str = include_str!("../../../../corpus/sum_of_squares.gfl");
pub const SALES: &str = include_str!("../../../../corpus/sales_report_submission.gfl");
pub const PENDING: &str = include_str!("../../../../corpus/sales_reports_pending.gfl");
pub const COUNT: &str = include_str!("../../../../corpus/sales_reports_count.gfl");

const WORKSPACES: [&str; 3] = ["a", "b", "c"];
const SUM_SLUG: &str = "calculate-sum-of-squares-bounded";
const SALES_SLUG: &str = "sales-report-submission-process";

#[derive(Debug, Clone, PartialEq)]
enum Run {
    Sum { a: i64, b: i64 },
    /// The node a sales run waits at, `None` once completed.
    Sales(Option<&'static str>),
}

impl Run {
    fn status(&self) -> &'static str {
        match self {
            Run::Sales(Some(_)) => "waiting",
            _ => "completed",
        }
    }
}

#[derive(Debug, Default)]
struct Model {
    runs: BTreeMap<String, Run>,
    /// Resource id to its tags.
    reports: BTreeMap<String, BTreeSet<String>>,
}

impl Model {
    fn pending(&self) -> BTreeSet<String> {
        self.reports.iter().filter(|(_, t)| t.contains("scheduled") && !t.contains("completed")).map(|(id, _)| id.clone()).collect()
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub ops: usize,
    pub probes: usize,
    pub leaks: Vec<String>,
}

struct Harness {
    rt: tokio::runtime::Runtime,
    router: Router,
    site: Arc<Mutex<Site>>,
    models: BTreeMap<&'static str, Model>,
    report: Report,
}

fn report_resource(id: &str, tags: &BTreeSet<String>) -> Resource {
    let mut r = Resource::new(id, "report").with_tags(tags.iter().map(String::as_str));
    r.ext_type = Some("SalesReport".into());
    r.fields.insert("date1".into(), Value::str("2025-02-01"));
    r
}

fn prefix(ws: &str) -> String {
    format!("/workspaces/{ws}")
}

impl Harness {
    fn new(root: &Path) -> Harness {
        let mut site = Site::open(root).unwrap();
        site.clock = Clock::Fixed("2025-03-03T09:00:00Z".parse().unwrap());
        for ws in WORKSPACES {
            for src in [SUM, SALES, PENDING, COUNT] {
                site.load_source(ws, src).unwrap();
            }
            site.save(ws).unwrap();
        }
        let site = Arc::new(Mutex::new(site));
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let models = WORKSPACES.iter().map(|w| (*w, Model::default())).collect();
        Harness { rt, router: router(site.clone()), site, models, report: Report::default() }
    }

    fn restart(&mut self, root: &Path) {
        let mut site = Site::open(root).unwrap();
        site.clock = Clock::Fixed("2025-03-03T09:00:00Z".parse().unwrap());
        self.site = Arc::new(Mutex::new(site));
        self.router = router(self.site.clone());
    }

    fn call(&self, method: Method, uri: &str, body: Option<Json>) -> (StatusCode, Json) {
        let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
        let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
        self.rt.block_on(async {
            let resp = self.router.clone().oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (status, serde_json::from_slice(&bytes).unwrap_or(Json::Null))
        })
    }

    fn leak(&mut self, what: String) {
        self.report.leaks.push(what);
    }

    fn start_sum(&mut self, ws: &'static str, a: i64) {
        let b = WORKSPACES.iter().position(|w| *w == ws).unwrap() as i64;
        let (s, v) = self.call(Method::POST, &format!("{}/diagrams/{SUM_SLUG}/runs", prefix(ws)), Some(json!({"inputs": {"a": a, "b": b}, "actor": ws})));
        let want = (a * a + b * b) as f64;
        if s != StatusCode::CREATED || v["return"]["sum"].as_f64() != Some(want) {
            return self.leak(format!("{ws}: sum({a}, {b}) gave {s} {v}"));
        }
        let id = v["run_id"].as_str().unwrap_or_default().to_string();
        self.models.get_mut(ws).unwrap().runs.insert(id, Run::Sum { a, b });
    }

    fn start_sales(&mut self, ws: &'static str) {
        let (s, v) = self.call(Method::POST, &format!("{}/diagrams/{SALES_SLUG}/runs", prefix(ws)), Some(json!({"actor": ws})));
        if s != StatusCode::CREATED || v["listener"]["node"] != "3" {
            return self.leak(format!("{ws}: sales start gave {s} {v}"));
        }
        let id = v["run_id"].as_str().unwrap_or_default().to_string();
        self.models.get_mut(ws).unwrap().runs.insert(id, Run::Sales(Some("3")));
    }

    /// A decision sent to workspace `ws` for `id`, which may live elsewhere.
    fn decide(&mut self, ws: &'static str, id: &str, rng: &mut ChaCha8Rng) {
        let known = self.models[ws].runs.get(id).cloned();
        let choice = match known {
            Some(Run::Sales(Some("3"))) => "proceed",
            _ => *["yes", "no"].choose(rng).unwrap(),
        };
        let (s, v) = self.call(Method::POST, &format!("{}/runs/{id}/signal", prefix(ws)), Some(json!({"kind": "decision", "choice": choice, "actor": "fuzz"})));
        let (want, next) = match known {
            None => (StatusCode::NOT_FOUND, None),
            Some(Run::Sales(Some("3"))) => (StatusCode::OK, Some(Run::Sales(Some("4")))),
            Some(Run::Sales(Some(_))) if choice == "yes" => (StatusCode::OK, Some(Run::Sales(None))),
            Some(Run::Sales(Some(_))) => (StatusCode::OK, Some(Run::Sales(Some("3")))),
            Some(_) => (StatusCode::CONFLICT, None),
        };
        if s != want {
            return self.leak(format!("{ws}/{id}: {choice} gave {s} {v}, expected {want}"));
        }
        if let Some(next) = next {
            let node = match &next {
                Run::Sales(Some(n)) => json!(n),
                _ => Json::Null,
            };
            if v["status"] != next.status() || v["listener"]["node"] != node {
                self.leak(format!("{ws}/{id}: after {choice} the run is {v}"));
            }
            self.models.get_mut(ws).unwrap().runs.insert(id.to_string(), next);
        }
    }

    fn upsert(&mut self, ws: &'static str, id: String, tags: BTreeSet<String>) {
        let mut site = self.site.lock().unwrap();
        site.workspace(ws).unwrap().upsert_resource(report_resource(&id, &tags));
        site.save(ws).unwrap();
        drop(site);
        self.models.get_mut(ws).unwrap().reports.insert(id, tags);
    }

    fn tag(&mut self, ws: &'static str, id: &str, tag: &str, remove: bool) {
        let mut site = self.site.lock().unwrap();
        let w = site.workspace(ws).unwrap();
        let got = if remove { w.remove_tag(id, tag) } else { w.add_tag(id, tag) };
        site.save(ws).unwrap();
        drop(site);
        match (self.models.get_mut(ws).unwrap().reports.get_mut(id), got) {
            (Some(tags), Ok(_)) => {
                if remove {
                    tags.remove(tag);
                } else {
                    tags.insert(tag.to_string());
                }
            }
            (None, Err(_)) => {}
            (known, got) => {
                let what = format!("{ws}: tag {id} {tag} gave {got:?} with model {known:?}");
                self.leak(what);
            }
        }
    }

    /// Compares everything the API shows for `ws` with the model.
    fn probe(&mut self, ws: &'static str, foreign: &[String]) {
        self.report.probes += 1;
        let model = &self.models[ws];
        let want: BTreeMap<String, &'static str> = model.runs.iter().map(|(id, r)| (id.clone(), r.status())).collect();
        let pending = model.pending();
        let waiting: BTreeSet<String> = model.runs.iter().filter(|(_, r)| matches!(r, Run::Sales(Some(_)))).map(|(id, _)| id.clone()).collect();

        let (_, v) = self.call(Method::GET, &format!("{}/runs", prefix(ws)), None);
        let got: BTreeMap<String, &'static str> = v["runs"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|r| (r["run_id"].as_str().unwrap_or_default().to_string(), if r["status"] == "waiting" { "waiting" } else { "completed" }))
            .collect();
        if got != want {
            self.leak(format!("{ws}: runs {got:?}, model {want:?}"));
        }

        let (_, c) = self.call(Method::GET, &format!("{}/queries/sales-reports-pending/cohort", prefix(ws)), None);
        let members: BTreeSet<String> = c["members"].as_array().into_iter().flatten().filter_map(|m| m.as_str().map(String::from)).collect();
        if members != pending {
            self.leak(format!("{ws}: cohort {members:?}, model {pending:?}"));
        }

        let (_, t) = self.call(Method::GET, &format!("{}/tasks", prefix(ws)), None);
        let tasks: BTreeSet<String> = t["tasks"].as_array().into_iter().flatten().filter_map(|x| x["run_id"].as_str().map(String::from)).collect();
        if tasks != waiting {
            self.leak(format!("{ws}: tasks {tasks:?}, model {waiting:?}"));
        }

        // Ids taken from other workspaces either miss or resolve to this
        // workspace's own run of that id.
        for id in foreign {
            let expect = self.models[ws].runs.get(id).cloned();
            let (s, d) = self.call(Method::GET, &format!("{}/runs/{id}", prefix(ws)), None);
            let (es, e) = self.call(Method::GET, &format!("{}/runs/{id}/events", prefix(ws)), None);
            let ok = match &expect {
                None => s == StatusCode::NOT_FOUND && es == StatusCode::NOT_FOUND,
                Some(run) => {
                    let events = e["events"].as_array().cloned().unwrap_or_default();
                    let own = events.iter().all(|x| x["run_id"] == json!(id)) && events.len() as u64 == d["run"]["last_seq"].as_u64().unwrap_or(0);
                    let shape = match run {
                        Run::Sum { a, b } => d["run"]["slug"] == SUM_SLUG && d["sigma"]["a"].as_f64() == Some(*a as f64) && d["sigma"]["b"].as_f64() == Some(*b as f64),
                        Run::Sales(_) => d["run"]["slug"] == SALES_SLUG,
                    };
                    s == StatusCode::OK && es == StatusCode::OK && own && shape
                }
            };
            if !ok {
                self.leak(format!("{ws}/{id}: {s} {d} / {es}, model {expect:?}"));
            }
        }
    }

    /// Nothing created in the named workspaces shows up in the default one.
    fn probe_default(&mut self) {
        let (_, v) = self.call(Method::GET, "/runs", None);
        if v["runs"].as_array().is_some_and(|r| !r.is_empty()) {
            self.leak(format!("default workspace lists {v}"));
        }
        let (_, c) = self.call(Method::GET, "/queries/sales-reports-pending/cohort", None);
        if c["count"].as_u64().unwrap_or(0) != 0 {
            self.leak(format!("default workspace cohort {c}"));
        }
    }

    fn all_ids(&self) -> Vec<String> {
        let ids: BTreeSet<String> = self.models.values().flat_map(|m| m.runs.keys().cloned()).collect();
        ids.into_iter().collect()
    }

    fn all_reports(&self) -> Vec<String> {
        self.models.values().flat_map(|m| m.reports.keys().cloned()).collect()
    }
}

pub fn fuzz(root: &Path, ops: usize, seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = Harness::new(root);
    let mut next_report = 0;
    for i in 0..ops {
        let ws = *WORKSPACES.choose(&mut rng).unwrap();
        match rng.random_range(0..10) {
            0 | 1 => h.start_sum(ws, rng.random_range(-20..=20)),
            2 => h.start_sales(ws),
            3 | 4 => {
                // A fresh id sometimes, so a missing run is tried too.
                let mut ids = h.all_ids();
                ids.push(format!("run-{:06}", 900_000 + i));
                let id = ids.choose(&mut rng).unwrap().clone();
                h.decide(ws, &id, &mut rng);
            }
            5 => {
                let tags: BTreeSet<String> = ["scheduled", "completed"].iter().filter(|_| rng.random_bool(0.5)).map(|t| t.to_string()).collect();
                h.upsert(ws, format!("rep-{next_report}"), tags);
                next_report += 1;
            }
            6 | 7 => {
                let ids = h.all_reports();
                if let Some(id) = ids.choose(&mut rng) {
                    let tag = *["scheduled", "completed"].choose(&mut rng).unwrap();
                    h.tag(ws, &id.clone(), tag, rng.random_bool(0.3));
                }
            }
            _ => {
                let ids = h.all_ids();
                let foreign: Vec<String> = ids.choose_multiple(&mut rng, 4).cloned().collect();
                h.probe(ws, &foreign);
            }
        }
        h.report.ops += 1;
    }
    // Reopen from disk and compare once more.
    h.restart(root);
    let ids = h.all_ids();
    for ws in WORKSPACES {
        h.probe(ws, &ids);
    }
    h.probe_default();
    h.report
}

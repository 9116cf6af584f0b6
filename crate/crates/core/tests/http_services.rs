//! External backends against real local HTTP servers.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use editloop_core::action::{ActionPayload, Category, EditAction};
use editloop_core::evaluator::{BuiltinMetric, Evaluator, ImageEvaluator, ScorerConfig, ScorerEntry, ScorerKind};
use editloop_core::executor::{apply_procedural, ActionExecutor, RoutingTable, ToolRouter};
use editloop_core::http::{EndpointConfig, ExternalError, JsonClient};
use editloop_core::imaging::{ImageState, PixelImage};
use editloop_core::perceiver::{ExternalPerceiver, FallbackPerceiver, HeuristicPerceiver, Perceiver, PerceiverContext, Scene};
use serde_json::{json, Value};

type Handler = dyn Fn(usize, Value) -> (u16, String) + Send + Sync;

/// Minimal one-request-per-connection JSON server. The handler receives the
/// zero-based request number and the decoded body.
struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (h, b, a, p) = (hits.clone(), bodies.clone(), active.clone(), peak.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, h, b, a, p) = (handler.clone(), h.clone(), b.clone(), a.clone(), p.clone());
            std::thread::spawn(move || {
                let Some(body) = read_request(&mut stream) else { return };
                let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                p.fetch_max(now, Ordering::SeqCst);
                let n = h.fetch_add(1, Ordering::SeqCst);
                b.lock().unwrap().push(body.clone());
                let (status, text) = handler(n, body);
                a.fetch_sub(1, Ordering::SeqCst);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Server { url, hits, bodies, peak }
}

fn endpoint(url: &str, timeout: f64, retries: u32) -> EndpointConfig {
    EndpointConfig {
        timeout_secs: timeout,
        retries,
        ..EndpointConfig::new(url)
    }
}

fn external_entry(id: &str, weight: f64, endpoint: &str) -> ScorerEntry {
    ScorerEntry {
        id: id.into(),
        weight,
        kind: ScorerKind::External {
            endpoint: endpoint.into(),
            range: None,
            reference_text: Some("a pleasant photo".into()),
            decoding: None,
            fallback: None,
        },
    }
}

fn mid_grey() -> PixelImage {
    PixelImage::constant(20, 20, [0.5; 3])
}

#[test]
fn external_score_is_rescaled_from_reported_range() {
    let s = serve(Arc::new(|_, _| (200, json!({"score": 7.5, "range": [0.0, 10.0]}).to_string())));
    let cfg = ScorerConfig {
        entries: vec![
            external_entry("remote", 1.0, "svc"),
            ScorerEntry::builtin("exposure", 1.0, BuiltinMetric::Exposure),
        ],
    };
    let endpoints = BTreeMap::from([("svc".to_string(), endpoint(&s.url, 5.0, 0))]);
    let eval = Evaluator::from_config(&cfg, &endpoints).unwrap();
    let r = eval.evaluate(&mid_grey()).unwrap();
    let remote = r.per_scorer.iter().find(|p| p.id == "remote").unwrap();
    assert!((remote.raw - 0.75).abs() < 1e-12);
    assert!(r.omitted.is_empty());
    let body = &s.bodies.lock().unwrap()[0];
    assert_eq!(body["reference_text"], "a pleasant photo");
    assert!(PixelImage::from_base64(body["image"].as_str().unwrap()).is_ok());
}

#[test]
fn slow_scorer_is_omitted_and_weights_renormalize() {
    let s = serve(Arc::new(|_, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, json!({"score": 1.0, "range": [0.0, 1.0]}).to_string())
    }));
    let cfg = ScorerConfig {
        entries: vec![
            external_entry("remote", 2.0, "svc"),
            ScorerEntry::builtin("exposure", 1.0, BuiltinMetric::Exposure),
        ],
    };
    let endpoints = BTreeMap::from([("svc".to_string(), endpoint(&s.url, 0.3, 0))]);
    let r = Evaluator::from_config(&cfg, &endpoints).unwrap().evaluate(&mid_grey()).unwrap();
    assert_eq!(r.omitted.len(), 1);
    assert_eq!(r.omitted[0].id, "remote");
    assert!((r.normalizer - 1.0).abs() < 1e-12);
    assert!((r.aggregate - r.per_scorer[0].raw).abs() < 1e-12);
}

#[test]
fn server_errors_are_retried_but_malformed_replies_are_not() {
    let flaky = serve(Arc::new(|n, _| {
        if n == 0 {
            (503, "{}".into())
        } else {
            (200, json!({"ok": true}).to_string())
        }
    }));
    let client = JsonClient::new(endpoint(&flaky.url, 5.0, 2));
    let v: Value = client.post_json(&json!({})).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(flaky.hits.load(Ordering::SeqCst), 2);

    let garbage = serve(Arc::new(|_, _| (200, "not json".into())));
    let client = JsonClient::new(endpoint(&garbage.url, 5.0, 3));
    let r: Result<Value, _> = client.post_json(&json!({}));
    assert!(matches!(r, Err(ExternalError::Malformed(_))), "{r:?}");
    assert_eq!(garbage.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeouts_are_reported_as_such() {
    let s = serve(Arc::new(|_, _| {
        std::thread::sleep(Duration::from_millis(1500));
        (200, "{}".into())
    }));
    let client = JsonClient::new(endpoint(&s.url, 0.2, 0));
    let r: Result<Value, _> = client.post_json(&json!({}));
    assert!(matches!(r, Err(ExternalError::Timeout(_))), "{r:?}");
}

#[test]
fn in_flight_requests_are_bounded_per_endpoint() {
    let s = serve(Arc::new(|_, _| {
        std::thread::sleep(Duration::from_millis(60));
        (200, "{}".into())
    }));
    let client = Arc::new(JsonClient::new(EndpointConfig {
        max_in_flight: 1,
        ..endpoint(&s.url, 5.0, 0)
    }));
    std::thread::scope(|sc| {
        for _ in 0..4 {
            let c = client.clone();
            sc.spawn(move || {
                let _: Value = c.post_json(&json!({})).unwrap();
            });
        }
    });
    assert_eq!(s.hits.load(Ordering::SeqCst), 4);
    assert_eq!(s.peak.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_editor_output_is_used_and_dead_editor_falls_back() {
    let s = serve(Arc::new(|_, body| {
        let img = PixelImage::from_base64(body["image"].as_str().unwrap()).unwrap();
        let out = img.map_pixels(|_, _, p| p.map(|c| 1.0 - c));
        (200, json!({"image": out.to_base64_png().unwrap()}).to_string())
    }));
    let img = PixelImage::from_fn(8, 6, |x, y| [x as f64 / 8.0, y as f64 / 6.0, 0.25]);
    let action = EditAction::generative("sky", Category::SemanticEdit, "make the sky dramatic");
    let routing = RoutingTable::default().with_editor("ed");

    let live = ToolRouter::from_endpoints(routing.clone(), &BTreeMap::from([("ed".to_string(), endpoint(&s.url, 5.0, 0))]));
    let out = live.apply(&action, &img).unwrap();
    let expected = PixelImage::decode(&img.encode_png().unwrap())
        .unwrap()
        .map_pixels(|_, _, p| p.map(|c| 1.0 - c));
    assert_eq!(out.to_rgb8(), expected.to_rgb8());
    assert_eq!(s.bodies.lock().unwrap()[0]["instruction"], "make the sky dramatic");

    let dead = ToolRouter::from_endpoints(
        routing.clone(),
        &BTreeMap::from([("ed".to_string(), endpoint("http://127.0.0.1:9/", 0.5, 0))]),
    );
    let out = dead.apply(&action, &img).unwrap();
    assert_eq!(out, apply_procedural(&routing.proxies[&Category::SemanticEdit], &img).unwrap());
}

#[test]
fn remote_perceiver_actions_are_parsed_and_bad_replies_fall_back() {
    let s = serve(Arc::new(|_, _| {
        let reply = json!({"actions": [
            {"id": "warm", "category": "color_balance", "instruction": "warm it up",
             "params": {"operator": "white_balance", "r_gain": 1.1, "b_gain": 0.9}},
            {"id": "sky", "category": "SemanticEdit", "instruction": "bluer sky"},
            {"id": "warm", "category": "ColorBalance", "instruction": "duplicate id"}
        ]});
        (200, reply.to_string())
    }));
    let state = ImageState::initial(PixelImage::constant(24, 24, [0.3; 3]));
    let ctx = PerceiverContext::new(Scene::Portrait, 5).with_prompt(Some("warmer mood".into()));
    let p = ExternalPerceiver::new(endpoint(&s.url, 5.0, 0));
    let actions = p.propose(&state, &ctx).unwrap();
    assert_eq!(actions.len(), 2);
    assert!(matches!(actions[0].payload, ActionPayload::Procedural(_)));
    assert!(matches!(actions[1].payload, ActionPayload::Generative { .. }));
    let req = &s.bodies.lock().unwrap()[0];
    assert_eq!(req["user_prompt"], "warmer mood");
    assert_eq!(req["k"], 5);

    let bad = serve(Arc::new(|_, _| {
        (200, json!({"actions": [{"id": "x", "category": "nonsense", "instruction": ""}]}).to_string())
    }));
    let p = FallbackPerceiver::new(ExternalPerceiver::new(endpoint(&bad.url, 5.0, 0)));
    let got = p.propose(&state, &ctx).unwrap();
    assert_eq!(got, HeuristicPerceiver::default().propose(&state, &ctx).unwrap());
}

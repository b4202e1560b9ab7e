use std::path::Path;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use cvsqa_core::assess::{assess, fit_two_sigma, youden_max, JFormula};
use cvsqa_core::benchmark::BenchmarkCorpus;
use cvsqa_core::pipeline::{save_corpus, train_corpus};
use cvsqa_core::preprocess::detect_r_peaks;
use cvsqa_core::signal::{load_trace, SignalTrace};
use cvsqa_core::synth::BenchmarkSpec;
use cvsqa_core::train::{checkpoint_bytes, load_checkpoint, TrainConfig};
use cvsqa_server::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    traces: Vec<SignalTrace>,
    checkpoint: Vec<u8>,
}

/// Three short labeled traces, a trace trimmed to exactly 25 cycles, and a
/// briefly trained cycle model.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = BenchmarkSpec {
            n_traces: 3,
            duration: 60.0,
            seed: 5,
            ..BenchmarkSpec::default()
        };
        let mut traces = BenchmarkCorpus::simulate(&spec).unwrap().traces;
        let mut cfg = TrainConfig::cycle(2, 2);
        cfg.epochs = 2;
        cfg.batch_size = 32;
        let ckpt = train_corpus(&traces, &cfg, |_, _| {}).unwrap();
        traces.push(trim_to_cycles(&traces[0], 25));
        Fixture {
            traces,
            checkpoint: checkpoint_bytes(&ckpt).unwrap(),
        }
    })
}

fn trim_to_cycles(trace: &SignalTrace, n: usize) -> SignalTrace {
    let peaks = detect_r_peaks(&trace.ecg, trace.fs).unwrap();
    let end = (peaks[n] + peaks[n + 1]) / 2;
    let t = SignalTrace::new(
        "short",
        trace.fs,
        trace.t0,
        trace.cvs[..end].to_vec(),
        trace.ecg[..end].to_vec(),
        trace.labels.as_ref().map(|l| l[..end].to_vec()),
    )
    .unwrap();
    assert_eq!(detect_r_peaks(&t.ecg, t.fs).unwrap().len(), n + 1);
    t
}

struct Env {
    dir: tempfile::TempDir,
    state: AppState,
}

fn env_with(traces: &[SignalTrace], with_checkpoint: bool) -> Env {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    save_corpus(traces, &data).unwrap();
    let ckpt_path = dir.path().join("model.ckpt");
    std::fs::write(&ckpt_path, &fixture().checkpoint).unwrap();
    let state = open(&data, with_checkpoint.then_some(ckpt_path.as_path()));
    Env { dir, state }
}

fn env(with_checkpoint: bool) -> Env {
    env_with(&fixture().traces, with_checkpoint)
}

fn open(data: &Path, checkpoint: Option<&Path>) -> AppState {
    AppState::open(ServiceConfig {
        data_dir: data.to_path_buf(),
        checkpoint: checkpoint.map(Path::to_path_buf),
        eval_stride: 1,
    })
    .unwrap()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn u8s(v: &Value) -> Vec<u8> {
    v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as u8).collect()
}

#[tokio::test]
async fn series_windows_and_downsampling() {
    let e = env(false);
    let (s, list) = call(&e.state, "GET", "/traces", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 4);

    let trace = &fixture().traces[1];
    let id = &trace.trace_id;
    let (s, full) = call(&e.state, "GET", &format!("/traces/{id}/series"), None).await;
    assert_eq!(s, StatusCode::OK);
    for key in ["t", "cvs_min", "cvs_max", "ecg_min", "ecg_max", "labels"] {
        assert_eq!(full[key].as_array().unwrap().len(), trace.len(), "{key}");
    }
    assert_eq!(f64s(&full["cvs_min"]), trace.cvs);

    let (from, to) = (101usize, 1_337usize);
    let (s, ds) = call(&e.state, "GET", &format!("/traces/{id}/series?from={from}&to={to}&downsample=10"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (lo, hi) = (f64s(&ds["cvs_min"]), f64s(&ds["cvs_max"]));
    let labels = u8s(&ds["labels"]);
    assert_eq!(lo.len(), (to - from).div_ceil(10));
    for (b, start) in (from..to).step_by(10).enumerate() {
        let end = (start + 10).min(to);
        let bucket = &trace.cvs[start..end];
        let exact_lo = bucket.iter().copied().fold(f64::INFINITY, f64::min);
        let exact_hi = bucket.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo[b], exact_lo);
        assert_eq!(hi[b], exact_hi);
        let l = &trace.labels.as_ref().unwrap()[start..end];
        assert_eq!(labels[b], *l.iter().min().unwrap());
    }

    let n = trace.len();
    for uri in [
        format!("/traces/{id}/series?from=10&to=5"),
        format!("/traces/{id}/series?to={}", n + 1),
        format!("/traces/{id}/series?downsample=0"),
    ] {
        assert_eq!(call(&e.state, "GET", &uri, None).await.0, StatusCode::BAD_REQUEST, "{uri}");
    }
    assert_eq!(call(&e.state, "GET", "/traces/nope/series", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn endpoints_without_checkpoint() {
    let e = env(false);
    let id = &fixture().traces[0].trace_id;
    for (method, uri, body) in [
        ("GET", format!("/traces/{id}/residuals"), None),
        ("GET", format!("/traces/{id}/predictions?tau=1"), None),
        ("PUT", "/cutoff".to_string(), Some(json!({"tau": 1.0}))),
        ("POST", "/export/pseudolabels".to_string(), None),
    ] {
        assert_eq!(call(&e.state, method, &uri, body).await.0, StatusCode::CONFLICT, "{uri}");
    }
    let (s, _) = call(&e.state, "GET", &format!("/dissimilarity?a=machine&b=original&trace={id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(call(&e.state, "GET", "/traces/nope/residuals", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn predictions_threshold_cached_residuals() {
    let e = env(true);
    let id = &fixture().traces[0].trace_id;
    let (s, r) = call(&e.state, "GET", &format!("/traces/{id}/residuals"), None).await;
    assert_eq!(s, StatusCode::OK);
    let residuals = f64s(&r["residuals"]);
    assert!(!residuals.is_empty());

    let mut sorted = residuals.clone();
    sorted.sort_by(f64::total_cmp);
    let taus = [0.0, sorted[sorted.len() / 4], sorted[sorted.len() / 2], sorted[sorted.len() * 9 / 10], 1e9];
    let mut previous: Option<Vec<u8>> = None;
    for tau in taus {
        let uri = format!("/traces/{id}/predictions?tau={tau}");
        let (s, p) = call(&e.state, "GET", &uri, None).await;
        assert_eq!(s, StatusCode::OK);
        let preds = u8s(&p["predictions"]);
        let want: Vec<u8> = residuals.iter().map(|&a| assess(a, tau)).collect();
        assert_eq!(preds, want);
        if let Some(prev) = previous {
            // Raising τ only turns motion into normal.
            assert!(prev.iter().zip(&preds).all(|(a, b)| a <= b));
        }
        previous = Some(preds);
        assert_eq!(call(&e.state, "GET", &uri, None).await.1, p);
    }

    let (_, p) = call(&e.state, "GET", &format!("/traces/{id}/predictions?tau=inf"), None).await;
    assert_eq!(p["tau"], json!("inf"));
    assert!(u8s(&p["predictions"]).iter().all(|&v| v == 1));
    assert!(p["sample_track"].as_array().unwrap().iter().all(|v| v.is_null() || v == 1));

    let (_, p) = call(&e.state, "GET", &format!("/traces/{id}/predictions?tau=0"), None).await;
    for (a, v) in residuals.iter().zip(u8s(&p["predictions"])) {
        assert_eq!(v, u8::from(*a <= 0.0));
    }

    for bad in ["-1", "NaN", "abc"] {
        let uri = format!("/traces/{id}/predictions?tau={bad}");
        assert_eq!(call(&e.state, "GET", &uri, None).await.0, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn cutoff_policies_and_live_metrics() {
    let e = env(true);
    let ckpt = load_checkpoint(e.dir.path().join("model.ckpt")).unwrap();
    let id = &fixture().traces[0].trace_id;
    let (_, before) = call(&e.state, "GET", &format!("/traces/{id}/residuals"), None).await;

    let (s, c) = call(&e.state, "PUT", "/cutoff", Some(json!({"policy": "two_sigma"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(c["tau"].as_f64().unwrap(), fit_two_sigma(&ckpt.train_residuals).unwrap());
    assert_eq!(c["metrics"]["tau"], c["tau"]);

    let (s, c) = call(&e.state, "PUT", "/cutoff", Some(json!({"policy": "youden_max"}))).await;
    assert_eq!(s, StatusCode::OK);
    let mut a = Vec::new();
    let mut y = Vec::new();
    for t in &fixture().traces {
        let (_, r) = call(&e.state, "GET", &format!("/traces/{}/residuals", t.trace_id), None).await;
        a.extend(f64s(&r["residuals"]));
        y.extend(u8s(&r["anchor_labels"]));
    }
    let want = youden_max(&a, &y, JFormula::Conventional).unwrap();
    assert_eq!(c["tau"].as_f64().unwrap(), want.tau);
    let m = &c["metrics"]["conventional"];
    let j = m["sensitivity"].as_f64().unwrap() + m["specificity"].as_f64().unwrap() - 1.0;
    assert!((j - want.j).abs() < 1e-12);

    let (s, c) = call(&e.state, "PUT", "/cutoff", Some(json!({"tau": 0.0}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(c["policy"], json!("manual"));
    let counts = &c["metrics"]["counts"];
    let flagged = a.iter().filter(|&&v| v > 0.0).count() as u64;
    assert_eq!(counts["fn"].as_u64().unwrap() + counts["tn"].as_u64().unwrap(), flagged);

    // Session τ becomes the default for predictions.
    let (_, p) = call(&e.state, "GET", &format!("/traces/{id}/predictions"), None).await;
    assert_eq!(p["tau"], json!(0.0));

    for body in [json!({"tau": -0.5}), json!({"tau": "NaN"}), json!({}), json!({"tau": 1, "policy": "two_sigma"})] {
        assert_eq!(call(&e.state, "PUT", "/cutoff", Some(body.clone())).await.0, StatusCode::BAD_REQUEST, "{body}");
    }
    let (_, after) = call(&e.state, "GET", &format!("/traces/{id}/residuals"), None).await;
    assert_eq!(before, after);
    assert_eq!(call(&e.state, "GET", "/cutoff", None).await.1["tau"], json!(0.0));
}

#[tokio::test]
async fn youden_needs_labels() {
    let unlabeled: Vec<SignalTrace> = fixture().traces.iter().map(SignalTrace::without_labels).collect();
    let e = env_with(&unlabeled, true);
    let (s, _) = call(&e.state, "PUT", "/cutoff", Some(json!({"policy": "youden_max"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, c) = call(&e.state, "PUT", "/cutoff", Some(json!({"tau": 1.0}))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(c["metrics"].is_null());
}

fn record(source: &str, author: &str, spans: &[(usize, usize, u8)]) -> Value {
    json!({
        "source": source,
        "author": author,
        "spans": spans.iter().map(|&(s, e, l)| json!({"start_cycle": s, "end_cycle": e, "label": l})).collect::<Vec<_>>(),
    })
}

#[tokio::test]
async fn annotations_round_trip_validate_and_persist() {
    let e = env(false);
    let uri = "/traces/short/annotations";
    let (s, stored) = call(&e.state, "POST", uri, Some(record("guided", "ann", &[(2, 5, 0), (10, 12, 0)]))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(stored["timestamp_ms"].as_u64().unwrap() > 0);
    let (_, got) = call(&e.state, "GET", uri, None).await;
    assert_eq!(got, json!([stored]));

    for bad in [
        record("guided", "ann", &[(2, 6, 0), (5, 8, 0)]),
        record("guided", "ann", &[(20, 26, 0)]),
        record("guided", "ann", &[(3, 3, 0)]),
        json!({"source": "someone", "author": "x", "spans": []}),
    ] {
        assert_eq!(call(&e.state, "POST", uri, Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (s, _) = call(&e.state, "POST", "/traces/nope/annotations", Some(record("guided", "a", &[]))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // A newer record from the same author replaces the older one for display.
    let (_, newer) = call(&e.state, "POST", uri, Some(record("guided", "ann", &[(0, 1, 0)]))).await;
    let (_, other) = call(&e.state, "POST", uri, Some(record("original", "ref", &[(4, 6, 0)]))).await;
    let (_, got) = call(&e.state, "GET", uri, None).await;
    assert_eq!(got, json!([newer, other]));
    let (_, only) = call(&e.state, "GET", &format!("{uri}?source=original"), None).await;
    assert_eq!(only, json!([other]));

    let data = e.dir.path().join("data");
    drop(e.state);
    let reopened = open(&data, None);
    assert_eq!(call(&reopened, "GET", uri, None).await.1, got);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_are_serialized() {
    let e = env(false);
    let mut tasks = Vec::new();
    for k in 0..8 {
        let state = e.state.clone();
        tasks.push(tokio::spawn(async move {
            let body = record("guided", &format!("author{k}"), &[(k, k + 1, 0)]);
            call(&state, "POST", "/traces/short/annotations", Some(body)).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    let journal = std::fs::read_to_string(e.dir.path().join("data").join(cvsqa_server::JOURNAL_FILE)).unwrap();
    let mut authors: Vec<String> = journal
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["author"].as_str().unwrap().to_string())
        .collect();
    authors.sort();
    assert_eq!(authors, (0..8).map(|k| format!("author{k}")).collect::<Vec<_>>());
}

#[tokio::test]
async fn dissimilarity_is_hamming_fraction() {
    let e = env(true);
    let (_, cycles) = call(&e.state, "GET", "/traces/short/cycles", None).await;
    assert_eq!(cycles["boundaries"].as_array().unwrap().len(), 26);
    let d = |a: &'static str, b: &'static str| {
        let state = e.state.clone();
        async move {
            let (s, v) = call(&state, "GET", &format!("/dissimilarity?a={a}&b={b}&trace=short"), None).await;
            (s, v["value"].as_f64().unwrap_or(f64::NAN))
        }
    };
    assert_eq!(d("guided", "original").await.0, StatusCode::NOT_FOUND);

    let base = [(3, 6, 0), (14, 15, 0)];
    call(&e.state, "POST", "/traces/short/annotations", Some(record("original", "ref", &base))).await;
    call(&e.state, "POST", "/traces/short/annotations", Some(record("guided", "ann", &base))).await;
    assert_eq!(d("guided", "original").await, (StatusCode::OK, 0.0));

    let two_more = [(3, 6, 0), (14, 15, 0), (20, 22, 0)];
    call(&e.state, "POST", "/traces/short/annotations", Some(record("guided", "ann", &two_more))).await;
    assert_eq!(d("guided", "original").await.1, 0.08);
    assert_eq!(d("original", "guided").await.1, 0.08);

    let complement = [(0, 3, 0), (3, 6, 1), (6, 14, 0), (14, 15, 1), (15, 25, 0)];
    call(&e.state, "POST", "/traces/short/annotations", Some(record("guided", "ann", &complement))).await;
    assert_eq!(d("guided", "original").await.1, 1.0);

    // Accepting every machine decision reproduces the machine track.
    let (_, p) = call(&e.state, "GET", "/traces/short/predictions", None).await;
    let bounds: Vec<usize> = cycles["boundaries"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    let track = p["sample_track"].as_array().unwrap();
    let spans: Vec<(usize, usize, u8)> = (0..25)
        .filter(|&c| track[bounds[c]..bounds[c + 1]].iter().any(|v| v == 0))
        .map(|c| (c, c + 1, 0))
        .collect();
    call(&e.state, "POST", "/traces/short/annotations", Some(record("guided", "ann", &spans))).await;
    assert_eq!(d("machine", "guided").await, (StatusCode::OK, 0.0));
    assert!(d("machine", "bogus").await.0 == StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn export_writes_loadable_pseudolabels() {
    let e = env(true);
    let (s, summary) = call(&e.state, "POST", "/export/pseudolabels", None).await;
    assert_eq!(s, StatusCode::OK);
    let dir = e.dir.path().join("data").join(cvsqa_server::EXPORT_DIR);
    let tau = summary["tau"].as_f64().unwrap();
    for t in &fixture().traces {
        let back = load_trace(dir.join(format!("{}.csv", t.trace_id))).unwrap();
        assert_eq!(back.cvs, t.cvs);
        let (_, p) = call(&e.state, "GET", &format!("/traces/{}/predictions", t.trace_id), None).await;
        let want: Vec<u8> = p["sample_track"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().map_or(1, |x| x as u8))
            .collect();
        assert_eq!(back.labels.unwrap(), want);
    }
    let sidecar: Value = serde_json::from_slice(&std::fs::read(dir.join(cvsqa_server::REVIEW_FILE)).unwrap()).unwrap();
    let anchors = sidecar["anchors"].as_array().unwrap();
    assert_eq!(anchors.len() as u64, summary["n_review"].as_u64().unwrap());
    for a in anchors {
        assert!((a["residual"].as_f64().unwrap() - tau).abs() / tau < 0.1);
    }

    call(&e.state, "PUT", "/cutoff", Some(json!({"tau": "inf"}))).await;
    let (_, summary) = call(&e.state, "POST", "/export/pseudolabels", None).await;
    assert_eq!(summary["n_review"], json!(0));
    for t in &fixture().traces {
        let back = load_trace(dir.join(format!("{}.csv", t.trace_id))).unwrap();
        assert!(back.labels.unwrap().iter().all(|&v| v == 1));
    }
}

#[tokio::test]
async fn client_thresholding_matches_server_on_three_traces() {
    let e = env(true);
    for (k, t) in fixture().traces[..3].iter().enumerate() {
        let (_, r) = call(&e.state, "GET", &format!("/traces/{}/residuals", t.trace_id), None).await;
        let residuals = f64s(&r["residuals"]);
        let (lo, hi) = residuals.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
        for j in 0..5 {
            // Spread over the residual range with an irrational step.
            let frac = ((k * 5 + j) as f64 * 0.618_033_988_7).fract();
            let tau = lo + frac * (hi - lo);
            let (_, p) = call(&e.state, "GET", &format!("/traces/{}/predictions?tau={tau}", t.trace_id), None).await;
            let local: Vec<u8> = residuals.iter().map(|&a| u8::from(a <= tau)).collect();
            assert_eq!(u8s(&p["predictions"]), local);
        }
    }
}

mod common;

use std::fs;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use cdw::access_log::{self, AccessLogEntry, AccessLogFilter, Operation};
use cdw::server::{router, ServerConfig};
use cdw_core::pipeline::{ingest_generated, run_etl};
use cdw_core::synthgen::SynthConfig;
use common::{synth, Seeded};

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn call(app: &Router, method: Method, uri: &str, actor: Option<&str>, body: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(a) = actor {
        req = req.header("x-actor", a);
    }
    let body = body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty);
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

fn app_for(seeded: &Seeded) -> Router {
    let mut config = ServerConfig::new(seeded.warehouse());
    config.clock = Arc::new(|| Utc.with_ymd_and_hms(2015, 1, 2, 0, 0, 0).unwrap());
    router(config).unwrap()
}

fn log_of(seeded: &Seeded) -> Vec<AccessLogEntry> {
    access_log::read(&access_log::log_path(&seeded.warehouse()), &AccessLogFilter::default()).unwrap()
}

#[tokio::test]
async fn errors_carry_code_and_status() {
    let seeded = Seeded::new(&synth(3, 40, 0.0));
    let app = app_for(&seeded);

    let bad_measure = call(&app, Method::POST, "/api/query", None, Some(r#"{"cube_id":"treatment","measures":["bogus"]}"#)).await;
    assert_eq!(bad_measure.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad_measure.json()["code"], json!("InvalidSpec"));
    assert!(bad_measure.json()["message"].as_str().unwrap().contains("bogus"));

    let not_json = call(&app, Method::POST, "/api/query", None, Some("{")).await;
    assert_eq!(not_json.status, StatusCode::BAD_REQUEST);
    assert_eq!(not_json.json()["code"], json!("InvalidSpec"));

    let cube = call(&app, Method::POST, "/api/query", None, Some(r#"{"cube_id":"imaging","measures":["event_count"]}"#)).await;
    assert_eq!(cube.status, StatusCode::NOT_FOUND);
    assert_eq!(cube.json()["code"], json!("UnknownCube"));

    let member = call(
        &app,
        Method::POST,
        "/api/drill",
        None,
        Some(r#"{"spec":{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"]},"axis":"rows","member_path":["1999"]}"#),
    )
    .await;
    assert_eq!(member.status, StatusCode::NOT_FOUND);
    assert_eq!(member.json()["code"], json!("UnknownMember"));

    let finest = call(
        &app,
        Method::POST,
        "/api/drill",
        None,
        Some(r#"{"spec":{"cube_id":"treatment","rows":["date@year"],"measures":["event_count"]},"axis":"rows","direction":"up"}"#),
    )
    .await;
    assert_eq!(finest.status, StatusCode::BAD_REQUEST);
    assert_eq!(finest.json()["code"], json!("AtCoarsestLevel"));

    let report = call(&app, Method::GET, "/api/reports/survival", None, None).await;
    assert_eq!(report.status, StatusCode::NOT_FOUND);
    let drug = call(&app, Method::GET, "/api/reports/drug-impact?drug_code=Z-ZZZ&cancer_type=hodgkin", None, None).await;
    assert_eq!(drug.status, StatusCode::NOT_FOUND);
    assert_eq!(drug.json()["code"], json!("UnknownDrug"));
    let period = call(&app, Method::GET, "/api/reports/treatment-cost?start=2014&end=2010", None, None).await;
    assert_eq!(period.status, StatusCode::BAD_REQUEST);
    assert_eq!(period.json()["code"], json!("InvalidPeriod"));

    // Failed analytical requests are logged with their error code; the
    // unknown report id never reached a report.
    let outcomes: Vec<String> = log_of(&seeded).into_iter().map(|e| e.outcome).collect();
    assert_eq!(outcomes.len(), 7);
    assert!(outcomes.contains(&"error:UnknownCube".to_string()));
    assert!(outcomes.iter().all(|o| o.starts_with("error:")));
}

#[tokio::test]
async fn access_log_endpoint_filters() {
    let seeded = Seeded::new(&synth(3, 40, 0.0));
    let app = app_for(&seeded);
    let q = r#"{"cube_id":"lab","measures":["event_count"]}"#;
    assert_eq!(call(&app, Method::POST, "/api/query", Some("dr_a"), Some(q)).await.status, StatusCode::OK);
    assert_eq!(call(&app, Method::GET, "/api/catalog", Some("dr_b"), None).await.status, StatusCode::OK);
    assert_eq!(call(&app, Method::GET, "/api/catalog", None, None).await.status, StatusCode::OK);

    let all = call(&app, Method::GET, "/api/access-log", None, None).await.json();
    assert_eq!(all.as_array().unwrap().len(), 3);
    let a = call(&app, Method::GET, "/api/access-log?actor=dr_a", None, None).await.json();
    assert_eq!(a.as_array().unwrap().len(), 1);
    assert_eq!(a[0]["operation"], json!("query"));
    assert_eq!(a[0]["request_digest"], json!(access_log::digest(q.as_bytes())));
    let anon = call(&app, Method::GET, "/api/access-log?actor=anonymous", None, None).await.json();
    assert_eq!(anon.as_array().unwrap().len(), 1);
    let future = call(&app, Method::GET, "/api/access-log?since=2999-01-01T00:00:00Z", None, None).await.json();
    assert!(future.as_array().unwrap().is_empty());
    let bad = call(&app, Method::GET, "/api/access-log?since=yesterday", None, None).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);

    // Reading the log is not itself an analytical request.
    assert_eq!(log_of(&seeded).len(), 3);
    assert!(log_of(&seeded).iter().any(|e| e.operation == Operation::Catalog && e.actor == "dr_b"));
}

#[tokio::test]
async fn serves_new_loads_without_restart() {
    let seeded = Seeded::new(&synth(3, 40, 0.0));
    let app = app_for(&seeded);
    let q = r#"{"cube_id":"treatment","measures":["event_count"]}"#;
    let before = call(&app, Method::POST, "/api/query", None, Some(q)).await.json();

    // A later batch of the same sources with events past the watermarks.
    let extra = Seeded::new(&SynthConfig {
        first_year: 2016,
        last_year: 2017,
        ..synth(4, 60, 0.0)
    });
    let staging = seeded.staging();
    ingest_generated(&staging, &extra.dir.path().join("gen"), extra.summary.as_of).unwrap();
    let report = run_etl(&staging, &seeded.warehouse(), &extra.config, extra.summary.as_of).unwrap();
    assert!(report.load.unwrap().tables["fact_treatment_event"].inserted > 0);

    let after = call(&app, Method::POST, "/api/query", None, Some(q)).await.json();
    assert_ne!(before["grand_total"], after["grand_total"]);
}

#[tokio::test]
async fn cors_and_static_files() {
    let seeded = Seeded::new(&synth(3, 40, 0.0));
    let site = tempfile::tempdir().unwrap();
    fs::write(site.path().join("index.html"), "<h1>pivot</h1>").unwrap();
    let mut config = ServerConfig::new(seeded.warehouse());
    config.static_dir = Some(site.path().to_path_buf());
    config.cors_origins = vec!["http://localhost:5173".into()];
    let app = router(config).unwrap();

    let page = call(&app, Method::GET, "/index.html", None, None).await;
    assert_eq!(page.status, StatusCode::OK);
    assert_eq!(page.body, b"<h1>pivot</h1>");

    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/query")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).unwrap(),
        "http://localhost:5173"
    );
    let catalog = call(&app, Method::GET, "/api/catalog", None, None).await;
    assert_eq!(catalog.headers[header::CONTENT_TYPE], "application/json");
    assert_eq!(catalog.json().as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn corrupt_warehouse_refuses_to_start() {
    let seeded = Seeded::new(&synth(3, 40, 0.0));
    let app = app_for(&seeded);
    let snap = seeded.snapshot();
    let table = snap.manifest().tables.iter().find(|t| t.name == "fact_treatment_event").unwrap();
    let file = seeded.warehouse().join(&table.columns[0].file);
    let mut bytes = fs::read(&file).unwrap();
    bytes[0] ^= 0x01;
    fs::write(&file, bytes).unwrap();

    assert!(router(ServerConfig::new(seeded.warehouse())).is_err());
    // The running server keeps its already-verified snapshot.
    let q = r#"{"cube_id":"treatment","measures":["event_count"]}"#;
    assert_eq!(call(&app, Method::POST, "/api/query", None, Some(q)).await.status, StatusCode::OK);
}

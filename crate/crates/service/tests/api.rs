use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use drawsim_core::corpus::{build_corpus, stratified_sample, BuildOptions, OverlapPolicy, SamplingOptions, SamplingPlan};
use drawsim_core::digest::sha256_hex;
use drawsim_core::metrics::summarize;
use drawsim_core::providers::Providers;
use drawsim_core::standards::{bundled_standards, decompose, Domain};
use drawsim_core::{EvaluationSummaryF64, SCHEMA_VERSION};
use drawsim_service::api::{router, ApiConfig, AppState, ArtifactFilter};
use drawsim_service::evaluations::EvaluationStore;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    dir: tempfile::TempDir,
    plan: SamplingPlan,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let p = Providers::offline();
    let all = bundled_standards();
    let topics: Vec<_> = ["3-LS1-1", "MS-PS1-4"]
        .iter()
        .map(|c| decompose(all.iter().find(|pe| pe.code == *c).unwrap(), p.generation.as_ref(), 0).unwrap())
        .collect();
    let opts = BuildOptions {
        exemplars_per_cell: 1,
        concurrency: 2,
        seed: 5,
        ..BuildOptions::default()
    };
    let summary = build_corpus(dir.path(), &topics, &p, &opts).unwrap();
    let plan = stratified_sample(
        &summary.manifest,
        &SamplingOptions {
            overlap: OverlapPolicy::Disjoint,
            ..SamplingOptions::new(2, 4, 1)
        },
    )
    .unwrap();
    plan.save(dir.path()).unwrap();
    Fixture { dir, plan }
}

fn app_with(cfg: ApiConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::load(&cfg, Providers::offline().embedding).unwrap());
    (router(Arc::clone(&state)), state)
}

fn app(f: &Fixture) -> (Router, Arc<AppState>) {
    app_with(ApiConfig::new(f.dir.path()))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, v: &Value) -> (StatusCode, Value) {
    let req = Request::post("/evaluations")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(v.to_string()))
        .unwrap();
    let (status, _, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

fn json_of(body: &[u8]) -> Value {
    let v: Value = serde_json::from_slice(body).unwrap();
    assert_eq!(v["schema_version"], SCHEMA_VERSION);
    v
}

fn record(rater: &str, artifact: &str, q7: u64) -> Value {
    json!({
        "rater_id": rater, "artifact_id": artifact,
        "q1": "Yes", "q2": "Partially", "q3": "Yes", "q4": "No", "q5": "Yes", "q6": "Partially",
        "q7": q7, "q8": 4, "comments": "clear drawing"
    })
}

#[tokio::test]
async fn artifact_filter_matches_direct_manifest_filter() {
    let f = fixture();
    let (app, state) = app(&f);
    let (status, _, body) = get(&app, "/artifacts?level=2&domain=Life").await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    let ids: Vec<String> = serde_json::from_value(v["data"]["ids"].clone()).unwrap();
    let direct: Vec<String> = state
        .manifest()
        .artifacts
        .iter()
        .filter(|e| e.level.value() == 2 && e.domain == Domain::Life)
        .map(|e| e.id.clone())
        .collect();
    assert_eq!(ids, direct);
    assert_eq!(ids.len(), 1);

    let (status, _, _) = get(&app, "/artifacts?grade_band=G35").await;
    assert_eq!(status, StatusCode::OK);
    let (status, _, _) = get(&app, "/artifacts?level=9").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let everything = ArtifactFilter::default().apply(&state.manifest().artifacts).unwrap();
    assert_eq!(everything.len(), 8);
}

#[tokio::test]
async fn artifact_image_and_dot_with_etags() {
    let f = fixture();
    let (app, state) = app(&f);
    let id = state.manifest().artifacts[0].id.clone();

    let (status, headers, body) = get(&app, &format!("/artifacts/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["kind"], "artifact");
    assert_eq!(v["data"]["id"], id.as_str());
    let text = String::from_utf8(body).unwrap();
    assert!(!text.to_lowercase().contains("credential"));
    let etag = headers[header::ETAG].to_str().unwrap().to_string();
    let req = Request::get(format!("/artifacts/{id}"))
        .header(header::IF_NONE_MATCH, &etag)
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NOT_MODIFIED);

    let (status, headers, png) = get(&app, &format!("/artifacts/{id}/image")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "image/png");
    assert_eq!(headers[header::ETAG].to_str().unwrap(), format!("\"{}\"", sha256_hex(&png)));

    let (status, headers, dot) = get(&app, &format!("/artifacts/{id}/cmap.dot")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/vnd.graphviz"));
    assert!(String::from_utf8(dot).unwrap().starts_with("digraph"));

    assert_eq!(get(&app, "/artifacts/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/artifacts/nope/image").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn plans_are_served() {
    let f = fixture();
    let (app, _) = app(&f);
    let (status, _, body) = get(&app, &format!("/plans/{}", f.plan.id)).await;
    assert_eq!(status, StatusCode::OK);
    let served: SamplingPlan = serde_json::from_value(json_of(&body)["data"].clone()).unwrap();
    assert_eq!(served, f.plan);
    let (_, _, body) = get(&app, "/plans").await;
    assert_eq!(json_of(&body)["data"][0]["active"], true);
    assert_eq!(get(&app, "/plans/plan-missing").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn likert_six_rejected_with_field_locus() {
    let f = fixture();
    let (app, _) = app(&f);
    let artifact = &f.plan.assignment["R1"][0];
    let (status, v) = post_json(&app, &record("R1", artifact, 6)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["data"]["code"], "validation");
    assert_eq!(v["data"]["fields"][0]["field"], "q7");

    let mut bad = record("R1", artifact, 3);
    bad["q2"] = json!("Maybe");
    bad.as_object_mut().unwrap().remove("q8");
    let (status, v) = post_json(&app, &bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let fields: Vec<&str> = v["data"]["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, ["q2", "q8"]);
}

#[tokio::test]
async fn submission_counts_replacement_and_plan_checks() {
    let f = fixture();
    let (app, state) = app(&f);
    let mine = f.plan.assignment["R1"][0].clone();
    let theirs = f.plan.assignment["R2"][0].clone();

    let n = |v: &Value| v["data"]["summary"]["n"].as_u64().unwrap();
    let (_, _, body) = get(&app, "/reports/aggregate").await;
    assert_eq!(n(&json_of(&body)), 0);

    let (status, v) = post_json(&app, &record("R1", &mine, 3)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["data"]["audit_length"], 1);
    let (_, _, body) = get(&app, "/reports/aggregate").await;
    assert_eq!(n(&json_of(&body)), 1);

    // resubmission: one effective record, two in the audit trail
    let (status, v) = post_json(&app, &record("R1", &mine, 5)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["data"]["audit_length"], 2);
    assert!(v["data"]["stored"]["replaces"].is_string());
    let (_, _, body) = get(&app, "/reports/aggregate").await;
    let agg = json_of(&body);
    assert_eq!(n(&agg), 1);
    assert_eq!(agg["data"]["summary"]["likert"]["q7"]["counts"], json!([0, 0, 0, 0, 1]));
    let (_, _, body) = get(&app, &format!("/evaluations/R1/{mine}")).await;
    assert_eq!(json_of(&body)["data"].as_array().unwrap().len(), 2);

    let (status, v) = post_json(&app, &record("R1", &theirs, 3)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["data"]["code"], "plan_violation");
    let (status, _) = post_json(&app, &record("R7", &mine, 3)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = post_json(&app, &record("R1", "0000000000000000", 3)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // the endpoint equals offline aggregation over the store it wrote
    let offline: EvaluationSummaryF64 =
        summarize(&EvaluationStore::open(state.evaluations().path()).unwrap().effective()).unwrap();
    let served: EvaluationSummaryF64 = serde_json::from_value(agg["data"]["summary"].clone()).unwrap();
    assert_eq!(served, offline);
}

#[tokio::test]
async fn read_only_and_token_guard_submissions() {
    let f = fixture();
    let artifact = f.plan.assignment["R1"][0].clone();
    let (ro, _) = app_with(ApiConfig {
        read_only: true,
        ..ApiConfig::new(f.dir.path())
    });
    let (status, v) = post_json(&ro, &record("R1", &artifact, 3)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(v["data"]["code"], "read_only");

    std::env::set_var("DRAWSIM_API_TEST_TOKEN", "s3cret");
    let (guarded, _) = app_with(ApiConfig {
        auth_token_env: Some("DRAWSIM_API_TEST_TOKEN".into()),
        evaluations: Some(f.dir.path().join("guarded.jsonl")),
        ..ApiConfig::new(f.dir.path())
    });
    let (status, _) = post_json(&guarded, &record("R1", &artifact, 3)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let req = Request::post("/evaluations")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::from(record("R1", &artifact, 3).to_string()))
        .unwrap();
    assert_eq!(send(&guarded, req).await.0, StatusCode::CREATED);
}

fn corpus_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join("corpus"), root.join("blobs")];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.display().to_string(), sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

#[tokio::test]
async fn consistency_report_over_plan_and_corpus_untouched() {
    let f = fixture();
    let before = corpus_hashes(f.dir.path());
    let (app, _) = app(&f);
    let (status, _, body) = get(&app, &format!("/reports/consistency?plan={}", f.plan.id)).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&body);
    assert_eq!(v["data"]["report"]["overall"]["n"], 8);
    let means = &v["data"]["report"]["overall"]["means"];
    let mean3 = (means["text_draw"].as_f64().unwrap() + means["cmap_draw"].as_f64().unwrap()
        + means["text_cmap"].as_f64().unwrap())
        / 3.0;
    assert!((means["overall"].as_f64().unwrap() - mean3).abs() < 1e-12);
    assert!(v["data"]["table"].as_str().unwrap().contains("Overall"));

    post_json(&app, &record("R1", &f.plan.assignment["R1"][1], 4)).await;
    assert_eq!(corpus_hashes(f.dir.path()), before);
}

#[test]
fn missing_corpus_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(AppState::load(&ApiConfig::new(dir.path()), Providers::offline().embedding).is_err());
}

mod common;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use proptest::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{dir_hashes, fixture};
use swellgan::pipeline::{Bundles, GenerateResponse, PredictResponse, MAX_SAFE_SEED};
use swellgan::service::{router, AppState, ErrorBody, Health};

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    rt().block_on(async {
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (
            status,
            to_bytes(resp.into_body(), usize::MAX)
                .await
                .unwrap()
                .to_vec(),
        )
    })
}

fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    call(app, Method::POST, uri, Some(body.to_string()))
}

fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Method::GET, uri, None)
}

fn ready_app() -> Router {
    router(AppState::ready(Bundles::load(&fixture().bundles).unwrap()))
}

fn gen_body(seed: Option<u64>) -> Value {
    let mut v = json!({
        "alloy_name": "Zr4",
        "d_c": {"phi_fast": 3.0, "phi_thermal": 1.0, "phi_flux": 12.0, "T_irr": 800.0, "T_exp": 300.0},
        "n": 2
    });
    if let Some(s) = seed {
        v["seed"] = json!(s);
    }
    v
}

/// Compares `actual` to `tests/golden/<name>`; set `BLESS=1` to rewrite.
fn golden(name: &str, actual: &[u8]) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    let pretty = serde_json::to_string_pretty(&serde_json::from_slice::<Value>(actual).unwrap())
        .unwrap()
        + "\n";
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, &pretty).unwrap();
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {name}"));
    assert_eq!(pretty, expected, "golden {name}");
}

fn error_body(bytes: &[u8]) -> ErrorBody {
    serde_json::from_slice(bytes).unwrap()
}

#[test]
fn loading_state_reports_and_rejects() {
    let state = AppState::loading();
    let app = router(state.clone());
    let (st, body) = get(&app, "/api/health");
    assert_eq!(st, StatusCode::OK);
    let h: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.status, "loading");
    assert!(h.bundles.is_empty());

    assert_eq!(
        post(&app, "/api/generate", gen_body(Some(1))).0,
        StatusCode::SERVICE_UNAVAILABLE
    );
    let (st, _) = post(
        &app,
        "/api/predict",
        json!({"image": "", "alloy_name": "Zr4"}),
    );
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    // validation still runs first
    let mut bad = gen_body(Some(1));
    bad["d_c"]["phi_flux"] = json!(-1.0);
    assert_eq!(post(&app, "/api/generate", bad).0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/materials").0, StatusCode::OK);

    state.fail("boom".into());
    let h: Health = serde_json::from_slice(&get(&app, "/api/health").1).unwrap();
    assert_eq!(h.status, "failed");
    assert_eq!(h.error.as_deref(), Some("boom"));
}

#[test]
fn health_reports_version_and_hashes() {
    let bundles = Bundles::load(&fixture().bundles).unwrap();
    let expected = bundles.fingerprint();
    let version = bundles.dataset_version.clone();
    let app = router(AppState::ready(bundles));
    let h: Health = serde_json::from_slice(&get(&app, "/api/health").1).unwrap();
    assert_eq!(h.status, "ready");
    assert_eq!(h.bundles, expected);
    assert_eq!(h.bundles.len(), 4);
    assert!(version.is_some());
    assert_eq!(h.dataset_version, version);
}

#[test]
fn materials_golden() {
    let (st, body) = get(&ready_app(), "/api/materials");
    assert_eq!(st, StatusCode::OK);
    let v: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(v.len(), 14);
    golden("materials.json", &body);
}

#[test]
fn generate_validation_errors_golden() {
    let app = ready_app();
    let mut bad = gen_body(Some(1));
    bad["d_c"]["phi_flux"] = json!(-1.0);
    let (st, body) = post(&app, "/api/generate", bad);
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let e = error_body(&body);
    assert_eq!(e.fields.len(), 1);
    assert_eq!(e.fields[0].field, "phi_flux");
    golden("generate_negative_flux.json", &body);

    let bad = json!({"alloy_name": "Mithril", "d_c": {"phi_flux": 1.0}, "n": 99});
    let (st, body) = post(&app, "/api/generate", bad);
    assert_eq!(st, StatusCode::BAD_REQUEST);
    golden("generate_many_errors.json", &body);

    let (st, _) = call(
        &app,
        Method::POST,
        "/api/generate",
        Some("{not json".into()),
    );
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = post(
        &app,
        "/api/generate",
        json!({"alloy_name": "Zr4", "colour": "red"}),
    );
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[test]
fn generate_same_seed_same_bytes() {
    let app = ready_app();
    let (s1, b1) = post(&app, "/api/generate", gen_body(Some(77)));
    let (s2, b2) = post(&app, "/api/generate", gen_body(Some(77)));
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
    let r: GenerateResponse = serde_json::from_slice(&b1).unwrap();
    assert_eq!(r.samples.len(), 2);
    assert_eq!(r.samples[1].seed_used, 78);
    let img = B64.decode(&r.samples[0].image).unwrap();
    assert!(img.starts_with(b"P5\n32 32\n"));

    let (_, b3) = post(&app, "/api/generate", gen_body(Some(78)));
    let r3: GenerateResponse = serde_json::from_slice(&b3).unwrap();
    assert_eq!(r3.samples[0].image, r.samples[1].image);

    let (st, b) = post(&app, "/api/generate", gen_body(None));
    assert_eq!(st, StatusCode::OK);
    let r: GenerateResponse = serde_json::from_slice(&b).unwrap();
    assert!(r.samples[0].seed_used < MAX_SAFE_SEED);
}

#[test]
fn predict_round_trip_and_errors() {
    let app = ready_app();
    let (_, b) = post(&app, "/api/generate", gen_body(Some(5)));
    let g: GenerateResponse = serde_json::from_slice(&b).unwrap();
    let (st, b) = post(
        &app,
        "/api/predict",
        json!({"image": g.samples[0].image, "alloy_name": "Zr4"}),
    );
    assert_eq!(st, StatusCode::OK);
    let p: PredictResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(p.h_v_estimate, g.samples[0].h_v_estimate);
    assert_eq!(p.d_r_prediction, g.samples[0].d_r_prediction);
    assert_eq!(p.c_he_probability, g.samples[0].c_he_probability);

    let mut narrow = b"P5\n31 32\n255\n".to_vec();
    narrow.extend(std::iter::repeat_n(0u8, 31 * 32));
    let (st, b) = post(
        &app,
        "/api/predict",
        json!({"image": B64.encode(&narrow), "alloy_name": "Zr4"}),
    );
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(error_body(&b).fields[0].field, "image");
    golden("predict_narrow_image.json", &b);

    let (st, b) = post(
        &app,
        "/api/predict",
        json!({"image": "***", "alloy_name": "Zr4"}),
    );
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(error_body(&b).fields[0].field, "image");

    let (st, b) = post(
        &app,
        "/api/predict",
        json!({"image": g.samples[0].image, "alloy_name": "Mithril"}),
    );
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let e = error_body(&b);
    assert_eq!(e.fields[0].field, "alloy_name");
    for name in ["Zr4", "Inconel718", "Cr25"] {
        assert!(
            e.fields[0].message.contains(name),
            "{}",
            e.fields[0].message
        );
    }
    golden("predict_unknown_alloy.json", &b);
}

#[test]
fn cors_is_permissive() {
    let app = ready_app();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/generate")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = rt().block_on(app.oneshot(req)).unwrap();
    assert!(resp.status().is_success());
    assert_eq!(resp.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

fn arb_body() -> impl Strategy<Value = Value> {
    let num = prop_oneof![
        Just(json!(-1.0)),
        Just(json!(0.0)),
        Just(json!(1e308)),
        (-1e4f64..1e4).prop_map(|x| json!(x)),
        Just(json!("x")),
        Just(Value::Null),
    ];
    let name = prop_oneof![
        Just("Zr4"),
        Just("Cr25"),
        Just(""),
        Just("zr4"),
        Just("Zr4 ")
    ];
    (
        name,
        proptest::collection::vec(num.clone(), 5),
        0u64..20,
        prop_oneof![Just(None), (0u64..u64::MAX).prop_map(Some)],
        any::<bool>(),
    )
        .prop_map(|(name, d, n, seed, drop_key)| {
            let mut dc = serde_json::Map::new();
            for (k, v) in ["phi_fast", "phi_thermal", "phi_flux", "T_irr", "T_exp"]
                .iter()
                .zip(d)
            {
                dc.insert(k.to_string(), v);
            }
            if drop_key {
                dc.remove("T_exp");
            }
            let mut body = json!({"alloy_name": name, "d_c": dc, "n": n});
            if let Some(s) = seed {
                body["seed"] = json!(s);
            }
            body
        })
}

#[test]
fn fuzzed_requests_never_fail_server_side_or_touch_bundles() {
    let dir = &fixture().bundles;
    let before = dir_hashes(dir);
    let app = ready_app();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(64));
    runner
        .run(&arb_body(), |body| {
            let (st, bytes) = post(&app, "/api/generate", body.clone());
            prop_assert!(
                st == StatusCode::OK || st == StatusCode::BAD_REQUEST,
                "{st} for {body}"
            );
            if st == StatusCode::BAD_REQUEST {
                prop_assert!(serde_json::from_slice::<ErrorBody>(&bytes).is_ok());
            }
            Ok(())
        })
        .unwrap();
    assert_eq!(before, dir_hashes(dir));
}

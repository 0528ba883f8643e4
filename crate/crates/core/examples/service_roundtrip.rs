//! Drives the HTTP router in-process: health while loading, the material
//! list, and a validation error. `swellgan serve` exposes the same router.

use axum::body::{to_bytes, Body};
use axum::http::Request;
use tower::ServiceExt;

use swellgan::service::{router, AppState};

async fn call(app: &axum::Router, method: &str, uri: &str, body: &str) -> (u16, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status().as_u16();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

#[tokio::main]
async fn main() {
    let app = router(AppState::loading());
    println!("{:?}", call(&app, "GET", "/api/health", "").await);
    let (status, body) = call(&app, "GET", "/api/materials", "").await;
    println!("materials: {status}, {} bytes", body.len());
    let bad = r#"{"alloy_name": "Zr4", "d_c": {"phi_fast": 1, "phi_thermal": 1, "phi_flux": -3, "T_irr": 700, "T_exp": 300}}"#;
    println!("{:?}", call(&app, "POST", "/api/generate", bad).await);
}

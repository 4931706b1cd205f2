use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use terrain_diffusion::checkpoint::sha256_hex;
use terrain_diffusion::config::ArtifactPaths;
use terrain_diffusion::control::{init_adapter, ConditionKind, ControlConfig};
use terrain_diffusion::diffusion::{DenoiserConfig, LdmConfig, LdmModel, ScheduleConfig};
use terrain_diffusion::latent::{Modality, VaeConfig, VaeModel};
use terrain_diffusion::raster::io::{heightmap_from_png16, texture_from_png, texture_to_png};
use terrain_diffusion::raster::Texture;
use terrain_diffusion::training::TrainConfig;
use terrain_service::*;

const PX: usize = 16;
const ORIGIN: &str = "http://localhost:5173";

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Untrained but complete checkpoint set under `root`.
fn write_toy_checkpoints(root: &std::path::Path, with_adapter: bool) -> ArtifactPaths {
    let paths = ArtifactPaths::new(root);
    let vae = |m, seed| {
        let cfg = VaeConfig {
            latent_channels: 2,
            downsample: 4,
            base_channels: 4,
            ..VaeConfig::new(m)
        };
        VaeModel::new(cfg, &mut rng(seed)).unwrap()
    };
    vae(Modality::Heightmap { h_max: 2000.0 }, 1).save(&paths.heightmap_vae()).unwrap();
    vae(Modality::Texture, 2).save(&paths.texture_vae()).unwrap();
    let ldm = LdmModel::new(
        LdmConfig {
            denoiser: DenoiserConfig {
                base_channels: 8,
                time_dim: 16,
                ..DenoiserConfig::joint(2)
            },
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
        },
        &mut rng(3),
    )
    .unwrap();
    ldm.save(&paths.ldm()).unwrap();
    if with_adapter {
        let mut adapter = init_adapter(&ldm.denoiser, ControlConfig::new(ConditionKind::Sketch, 4), &mut rng(4)).unwrap();
        // nonzero projections so conditioning changes the output
        for name in ["ctrl.proj1.weight", "ctrl.proj_mid.weight", "ctrl.cond.2.weight"] {
            let t = adapter.params.value(name).unwrap().map(|_| 0.05);
            adapter.params.set(name, t).unwrap();
        }
        adapter.save(&paths.adapter()).unwrap();
    }
    paths
}

fn app(paths: &ArtifactPaths, queue: usize, workers: Option<usize>) -> axum::Router {
    let models = LoadedModels::load(paths, PX, 25.0);
    let state = AppState::new(models, PX, queue);
    if let Some(w) = workers {
        state.spawn_workers(w);
    }
    router(state, &[ORIGIN.to_string()])
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, serde_json::Value, axum::http::HeaderMap) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, json, headers)
}

fn post(body: Option<serde_json::Value>) -> Request<Body> {
    let b = Request::post("/api/generate").header("content-type", "application/json");
    match body {
        Some(v) => b.body(Body::from(v.to_string())).unwrap(),
        None => b.body(Body::empty()).unwrap(),
    }
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn sketch_b64(px: usize) -> String {
    let t = Texture::from_fn(px, px, |x, y| {
        if x == y {
            [255, 0, 0]
        } else if x + y == px - 1 {
            [0, 255, 0]
        } else {
            [0, 0, 0]
        }
    });
    B64.encode(texture_to_png(&t).unwrap())
}

async fn wait_done(app: &axum::Router, id: &str) -> JobStatus {
    for _ in 0..2000 {
        let (code, body, _) = call(app, get(&format!("/api/generate/{id}"))).await;
        assert_eq!(code, StatusCode::OK);
        let st: JobStatus = serde_json::from_value(body).unwrap();
        // a result is visible only together with state = done
        assert_eq!(st.result.is_some(), st.state == JobState::Done, "{st:?}");
        assert_eq!(st.error.is_some(), st.state == JobState::Failed, "{st:?}");
        if matches!(st.state, JobState::Done | JobState::Failed) {
            return st;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn health_reports_loaded_model_and_file_hash() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 16, None);
    let (code, body, _) = call(&app, get("/api/health")).await;
    assert_eq!(code, StatusCode::OK);
    let h: Health = serde_json::from_value(body).unwrap();
    assert!(h.model_loaded && h.adapter_loaded);
    assert_eq!(h.checkpoint_hash.unwrap(), sha256_hex(&std::fs::read(paths.ldm()).unwrap()));
    assert_eq!(h.adapter_hash.unwrap(), sha256_hex(&std::fs::read(paths.adapter()).unwrap()));
    assert_eq!(h.resolution_px, PX);
}

#[tokio::test]
async fn missing_checkpoint_disables_generation() {
    let dir = tempfile::tempdir().unwrap();
    let paths = ArtifactPaths::new(dir.path());
    let app = app(&paths, 16, Some(1));
    let (code, body, _) = call(&app, get("/api/health")).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["model_loaded"], false);
    assert!(body["checkpoint_hash"].is_null());
    let (code, body, _) = call(&app, post(None)).await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert!(body["error"].as_str().unwrap().contains("not loaded"));
}

#[tokio::test]
async fn submission_validation() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 16, None);

    let (code, body, _) = call(&app, post(Some(serde_json::json!({"sketch_png_base64": sketch_b64(PX), "seed": 1})))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let id = body["job_id"].as_str().unwrap().to_string();
    let (code, body, _) = call(&app, get(&format!("/api/generate/{id}"))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["state"], "queued");
    assert_eq!(body["steps"], 20);
    assert_eq!(body["conditioned"], true);

    let (code, _, _) = call(&app, post(None)).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let (code, _, _) = call(&app, post(Some(serde_json::json!({})))).await;
    assert_eq!(code, StatusCode::ACCEPTED);

    let bad = [
        serde_json::json!({"sketch_png_base64": sketch_b64(PX / 2)}),
        serde_json::json!({"sketch_png_base64": "not base64!!"}),
        serde_json::json!({"sketch_png_base64": B64.encode(b"not a png")}),
        serde_json::json!({"steps": 0}),
        serde_json::json!({"steps": 1001}),
        serde_json::json!({"seed": "seven"}),
        serde_json::json!({"unexpected": 1}),
    ];
    for b in bad {
        let (code, body, _) = call(&app, post(Some(b.clone()))).await;
        assert_eq!(code, StatusCode::BAD_REQUEST, "{b}");
        assert!(body["error"].is_string());
    }
    let mut impure = Texture::filled(PX, PX, [0; 3]);
    impure.set_pixel(3, 3, [128, 0, 0]);
    let (code, _, _) = call(
        &app,
        post(Some(serde_json::json!({"sketch_png_base64": B64.encode(texture_to_png(&impure).unwrap())}))),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 16, None);
    let (code, _, _) = call(&app, get(&format!("/api/generate/{}", uuid::Uuid::new_v4()))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    let (code, _, _) = call(&app, get("/api/generate/not-a-uuid")).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_queue_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 2, None);
    for _ in 0..2 {
        assert_eq!(call(&app, post(None)).await.0, StatusCode::ACCEPTED);
    }
    let (code, body, _) = call(&app, post(None)).await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "queue full");
}

#[tokio::test]
async fn sketch_without_adapter_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), false);
    let app = app(&paths, 16, None);
    let (code, _, _) = call(&app, post(Some(serde_json::json!({"sketch_png_base64": sketch_b64(PX)})))).await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&app, post(None)).await.0, StatusCode::ACCEPTED);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn completed_jobs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 16, Some(1));
    let req = serde_json::json!({"sketch_png_base64": sketch_b64(PX), "seed": 7, "steps": 5});
    let mut results = Vec::new();
    for body in [req.clone(), req.clone(), serde_json::json!({"seed": 7, "steps": 5}), serde_json::json!({"sketch_png_base64": sketch_b64(PX), "seed": 8, "steps": 5})] {
        let (code, accepted, _) = call(&app, post(Some(body))).await;
        assert_eq!(code, StatusCode::ACCEPTED);
        let st = wait_done(&app, accepted["job_id"].as_str().unwrap()).await;
        assert_eq!(st.state, JobState::Done, "{st:?}");
        results.push(st.result.unwrap());
    }
    assert_eq!(results[0], results[1]);
    assert_ne!(results[0], results[2]);
    assert_ne!(results[0], results[3]);
    for r in &results {
        let hm = heightmap_from_png16(&B64.decode(&r.heightmap_png16_base64).unwrap(), 25.0).unwrap();
        let tx = texture_from_png(&B64.decode(&r.texture_png_base64).unwrap()).unwrap();
        assert_eq!((hm.width(), hm.height()), (PX, PX));
        assert_eq!((tx.width(), tx.height()), (PX, PX));
        assert_eq!((r.width, r.height), (PX, PX));
    }
}

#[tokio::test]
async fn cors_allows_configured_origin() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_toy_checkpoints(dir.path(), true);
    let app = app(&paths, 16, None);
    let req = Request::get("/api/health").header("origin", ORIGIN).body(Body::empty()).unwrap();
    let (_, _, headers) = call(&app, req).await;
    assert_eq!(headers["access-control-allow-origin"], ORIGIN);
    let req = Request::get("/api/health").header("origin", "http://evil.example").body(Body::empty()).unwrap();
    let (_, _, headers) = call(&app, req).await;
    assert!(!headers.contains_key("access-control-allow-origin"));
    let pre = Request::options("/api/generate")
        .header("origin", ORIGIN)
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let (code, _, headers) = call(&app, pre).await;
    assert!(code.is_success());
    assert!(headers.contains_key("access-control-allow-methods"));
}

//! The HTTP contract against toy checkpoints, driven in-process.

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use terrain_diffusion::checkpoint::sha256_hex;
use terrain_diffusion::config::ArtifactPaths;
use terrain_diffusion::control::{init_adapter, ConditionKind, ControlConfig};
use terrain_diffusion::diffusion::{DenoiserConfig, LdmConfig, LdmModel, ScheduleConfig};
use terrain_diffusion::latent::{Modality, VaeConfig, VaeModel};
use terrain_diffusion::raster::io::{heightmap_from_png16, texture_from_png, texture_to_png};
use terrain_diffusion::raster::Texture;
use terrain_diffusion::training::TrainConfig;
use terrain_service::{router, AppState, LoadedModels};

use super::{err, rng, Outcome};

const PX: usize = 16;

fn toy_checkpoints(root: &std::path::Path) -> Result<ArtifactPaths, String> {
    let paths = ArtifactPaths::new(root);
    let vae = |m, seed| {
        let cfg = VaeConfig {
            latent_channels: 2,
            downsample: 4,
            base_channels: 4,
            ..VaeConfig::new(m)
        };
        VaeModel::new(cfg, &mut rng(seed)).map_err(err)
    };
    vae(Modality::Heightmap { h_max: 2000.0 }, 1)?.save(&paths.heightmap_vae()).map_err(err)?;
    vae(Modality::Texture, 2)?.save(&paths.texture_vae()).map_err(err)?;
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
    .map_err(err)?;
    ldm.save(&paths.ldm()).map_err(err)?;
    init_adapter(&ldm.denoiser, ControlConfig::new(ConditionKind::Sketch, 4), &mut rng(4))
        .map_err(err)?
        .save(&paths.adapter())
        .map_err(err)?;
    Ok(paths)
}

async fn call(app: &axum::Router, req: Request<Body>) -> Result<(StatusCode, Value), String> {
    let resp = app.clone().oneshot(req).await.map_err(err)?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(err)?.to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).map_err(err)? };
    Ok((status, v))
}

fn post(body: Option<Value>) -> Request<Body> {
    let b = Request::post("/api/generate").header("content-type", "application/json");
    b.body(body.map_or_else(Body::empty, |v| Body::from(v.to_string()))).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn sketch_b64(px: usize) -> String {
    let t = Texture::from_fn(px, px, |x, y| if x == y { [255, 0, 0] } else { [0, 0, 0] });
    B64.encode(texture_to_png(&t).unwrap())
}

struct Checks(Vec<(String, bool)>);

impl Checks {
    fn check(&mut self, name: &str, ok: bool) {
        self.0.push((name.to_string(), ok));
    }
}

async fn scenario(checks: &mut Checks) -> Result<(), String> {
    let dir = tempfile_dir()?;
    let paths = toy_checkpoints(&dir)?;
    let origins = ["http://localhost:5173".to_string()];

    // health and missing checkpoint
    let models = LoadedModels::load(&paths, PX, 25.0);
    let idle = router(AppState::new(models.clone(), PX, 2), &origins);
    let (code, h) = call(&idle, get("/api/health")).await?;
    let file_hash = sha256_hex(&std::fs::read(paths.ldm()).map_err(err)?);
    checks.check("health 200 with model_loaded", code == StatusCode::OK && h["model_loaded"] == true);
    checks.check("health hash matches checkpoint file", h["checkpoint_hash"] == file_hash.as_str());
    let empty = std::env::temp_dir().join(format!("terrafusion-none-{}", std::process::id()));
    let missing = router(AppState::new(LoadedModels::load(&ArtifactPaths::new(&empty), PX, 25.0), PX, 2), &origins);
    let (_, h) = call(&missing, get("/api/health")).await?;
    let (code, _) = call(&missing, post(None)).await?;
    checks.check("missing checkpoint: model_loaded false, generate 503", h["model_loaded"] == false && code == StatusCode::SERVICE_UNAVAILABLE);

    // submission codes without workers
    let (code, body) = call(&idle, post(Some(json!({"sketch_png_base64": sketch_b64(PX), "seed": 1})))).await?;
    checks.check("valid sketch 202", code == StatusCode::ACCEPTED);
    let id = body["job_id"].as_str().unwrap_or_default().to_string();
    let (code, st) = call(&idle, get(&format!("/api/generate/{id}"))).await?;
    checks.check("fresh id queued", code == StatusCode::OK && st["state"] == "queued");
    let (code, _) = call(&idle, post(Some(json!({"sketch_png_base64": sketch_b64(PX / 2)})))).await?;
    checks.check("wrong-size sketch 400", code == StatusCode::BAD_REQUEST);
    let (code, _) = call(&idle, post(Some(json!({"sketch_png_base64": B64.encode(b"nope")})))).await?;
    checks.check("undecodable sketch 400", code == StatusCode::BAD_REQUEST);
    let (code, _) = call(&idle, post(None)).await?;
    checks.check("no body 202", code == StatusCode::ACCEPTED);
    let (code, _) = call(&idle, post(None)).await?;
    checks.check("queue full 503", code == StatusCode::SERVICE_UNAVAILABLE);
    let (code, _) = call(&idle, get("/api/generate/00000000-0000-4000-8000-000000000000")).await?;
    checks.check("unknown id 404", code == StatusCode::NOT_FOUND);

    // completed jobs
    let state = AppState::new(models, PX, 16);
    state.spawn_workers(1);
    let app = router(state, &origins);
    let req = json!({"sketch_png_base64": sketch_b64(PX), "seed": 7, "steps": 4});
    let mut results = Vec::new();
    let mut torn = false;
    for body in [req.clone(), req, json!({"seed": 7, "steps": 4})] {
        let (_, acc) = call(&app, post(Some(body))).await?;
        let id = acc["job_id"].as_str().ok_or("no job id")?.to_string();
        let mut done = None;
        for _ in 0..4000 {
            let (_, st) = call(&app, get(&format!("/api/generate/{id}"))).await?;
            torn |= st["result"].is_null() == (st["state"] == "done");
            if st["state"] == "done" || st["state"] == "failed" {
                done = Some(st);
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        results.push(done.ok_or("job did not finish")?);
    }
    let dims_ok = results.iter().all(|st| {
        let r = &st["result"];
        let hm = r["heightmap_png16_base64"].as_str().and_then(|s| B64.decode(s).ok()).and_then(|b| heightmap_from_png16(&b, 25.0).ok());
        let tx = r["texture_png_base64"].as_str().and_then(|s| B64.decode(s).ok()).and_then(|b| texture_from_png(&b).ok());
        matches!((hm, tx), (Some(h), Some(t)) if (h.width(), h.height(), t.width(), t.height()) == (PX, PX, PX, PX))
    });
    checks.check("completed jobs return both images at matching size", dims_ok);
    checks.check("same (sketch, seed, steps) byte-identical", results[0]["result"] == results[1]["result"]);
    checks.check("result appears only with state done", !torn);
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

fn tempfile_dir() -> Result<std::path::PathBuf, String> {
    let d = std::env::temp_dir().join(format!("terrafusion-contract-{}", std::process::id()));
    std::fs::create_dir_all(&d).map_err(err)?;
    Ok(d)
}

pub fn run() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().map_err(err)?;
    let mut checks = Checks(Vec::new());
    rt.block_on(scenario(&mut checks))?;
    let failed: Vec<&str> = checks.0.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    Ok((
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} endpoint checks hold against a toy checkpoint", checks.0.len())
        } else {
            format!("failing: {}", failed.join("; "))
        },
    ))
}

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use stitchwork_core::colorsplit::{DEFAULT_MAX_COLORS, DEFAULT_TOLERANCE};
use stitchwork_core::dataio::{is_valid_stitch_id, list_swatches};
use stitchwork_core::embgan::Direction;
use stitchwork_core::preview::PreviewMethod;
use stitchwork_core::styletransfer::{StyleWeights, TransferSettings};
use stitchwork_core::Image;

use crate::config::MAX_ITERATIONS;
use crate::error::{ApiError, ApiResult};
use crate::jobs::{JobParams, JobRecord, JobStatus};
use crate::store::{Project, RegionView};
use crate::AppState;

type AppStateRef = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    let api = Router::new()
        .route("/api/projects", post(create_project))
        .route("/api/projects/{id}", get(get_project))
        .route("/api/projects/{id}/image", post(upload_image).get(get_image))
        .route("/api/projects/{id}/palette", post(compute_palette))
        .route("/api/projects/{id}/assignments", post(assign))
        .route("/api/projects/{id}/preview", post(preview))
        .route("/api/stitches", get(list_stitches))
        .route("/api/stitches/{id}/swatch", get(get_swatch))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/result", get(get_result))
        .layer(DefaultBodyLimit::max(limit));
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    app.with_state(state)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn project(state: &AppState, id: &str) -> ApiResult<Arc<std::sync::Mutex<Project>>> {
    state.store.get(id).ok_or_else(|| ApiError::not_found(format!("project {id}")))
}

fn lock(p: &std::sync::Mutex<Project>) -> std::sync::MutexGuard<'_, Project> {
    p.lock().expect("project poisoned")
}

fn job_view(r: &JobRecord) -> Value {
    let mut v = json!({
        "id": r.id,
        "project_id": r.project_id,
        "method": r.params.method,
        "status": r.status,
        "progress": r.progress,
        "params": r.params,
        "width": r.width,
        "height": r.height,
    });
    if let Some(e) = &r.error {
        v["error"] = json!(e);
    }
    if let Some(c) = &r.component {
        v["component"] = json!(c);
    }
    if r.status == JobStatus::Done {
        v["result_url"] = json!(format!("/api/jobs/{}/result", r.id));
    }
    v
}

async fn create_project(State(state): AppStateRef) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = state.store.create()?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_project(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let p = lock(&p);
    let jobs: Vec<Value> = p.jobs.iter().filter_map(|j| state.jobs.get(j)).map(|r| job_view(&r)).collect();
    let palette = p.palette.as_ref().map(|ps| {
        json!({
            "max_colors": ps.max_colors,
            "tolerance": ps.tolerance,
            "regions": p.region_views(),
        })
    });
    let assignments: BTreeMap<String, &String> = p.assignments.iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(Json(json!({
        "id": p.id,
        "width": p.image.as_ref().map(Image::width),
        "height": p.image.as_ref().map(Image::height),
        "image_url": p.image.as_ref().map(|_| format!("/api/projects/{}/image", p.id)),
        "palette": palette,
        "assignments": assignments,
        "missing_regions": if p.palette.is_some() { json!(p.missing_regions()) } else { Value::Null },
        "jobs": jobs,
    })))
}

async fn upload_image(State(state): AppStateRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let (w, h) = Image::png_dimensions(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if w.saturating_mul(h) > state.config.max_pixels {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image is {w}x{h}; at most {} pixels are accepted", state.config.max_pixels),
        ));
    }
    let image = Image::decode_png(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    lock(&p).set_image(image)?;
    Ok(Json(json!({ "width": w, "height": h, "palette_pending": true })))
}

async fn get_image(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    let p = project(&state, &id)?;
    let p = lock(&p);
    let img = p.image.as_ref().ok_or_else(|| ApiError::not_found("image"))?;
    Ok(png(img.encode_png()?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PaletteRequest {
    max_colors: Option<usize>,
    tolerance: Option<f32>,
}

async fn compute_palette(State(state): AppStateRef, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let req: PaletteRequest = if body.iter().all(u8::is_ascii_whitespace) {
        PaletteRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid palette request: {e}")))?
    };
    let max_colors = req.max_colors.unwrap_or(DEFAULT_MAX_COLORS);
    let tolerance = req.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let mut p = lock(&p);
    if p.image.is_none() {
        return Err(ApiError::conflict("upload an image before computing the palette"));
    }
    p.set_palette(max_colors, tolerance)?;
    let regions: Vec<RegionView> = p.region_views();
    Ok(Json(json!({
        "max_colors": max_colors,
        "tolerance": tolerance,
        "regions": regions,
    })))
}

async fn list_stitches(State(state): AppStateRef) -> ApiResult<Json<Value>> {
    let entries = list_swatches(&state.config.stitch_dir)?;
    Ok(Json(json!(entries
        .iter()
        .map(|e| json!({ "id": e.id, "swatch_url": format!("/api/stitches/{}/swatch", e.id) }))
        .collect::<Vec<_>>())))
}

async fn get_swatch(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    let entry = list_swatches(&state.config.stitch_dir)?
        .into_iter()
        .find(|e| e.id == id)
        .ok_or_else(|| ApiError::not_found(format!("stitch {id}")))?;
    let bytes = std::fs::read(&entry.path).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(png(bytes))
}

async fn assign(
    State(state): AppStateRef,
    Path(id): Path<String>,
    Json(body): Json<BTreeMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let p = project(&state, &id)?;
    let known: Vec<String> = list_swatches(&state.config.stitch_dir)?.into_iter().map(|e| e.id).collect();
    let mut p = lock(&p);
    if p.palette.is_none() {
        return Err(ApiError::conflict("compute the palette before assigning stitches"));
    }
    let mut updates = BTreeMap::new();
    let mut unknown_regions = Vec::new();
    for (k, stitch) in body {
        match k.parse::<usize>() {
            Ok(r) if r < p.regions.len() => {
                updates.insert(r, stitch);
            }
            _ => unknown_regions.push(k),
        }
    }
    let mut unknown_stitches: Vec<&String> = updates
        .values()
        .filter(|s| !is_valid_stitch_id(s) || !known.contains(s))
        .collect();
    unknown_stitches.sort();
    unknown_stitches.dedup();
    if !unknown_stitches.is_empty() {
        let list = unknown_stitches.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        return Err(ApiError::unprocessable(format!("unknown stitch id(s): {list}")).with("unknown_stitches", json!(unknown_stitches)));
    }
    if !unknown_regions.is_empty() {
        return Err(ApiError::unprocessable(format!("the palette has {} regions", p.regions.len()))
            .with("unknown_regions", json!(unknown_regions)));
    }
    p.merge_assignments(updates)?;
    let assignments: BTreeMap<String, &String> = p.assignments.iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(Json(json!({
        "assignments": assignments,
        "missing_regions": p.missing_regions(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewRequest {
    method: PreviewMethod,
    iterations: Option<usize>,
    checkpoint: Option<String>,
    seed: Option<u64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    direction: Option<Direction>,
}

fn resolve_checkpoint(state: &AppState, requested: Option<&str>) -> ApiResult<PathBuf> {
    let configured = state
        .config
        .checkpoint
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no EmbGAN checkpoint is configured on the server"))?;
    let path = match requested {
        None => configured.clone(),
        Some(name) => {
            let plain = !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != "..";
            if !plain {
                return Err(ApiError::bad_request("checkpoint must be a file name next to the configured checkpoint"));
            }
            configured.parent().map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name))
        }
    };
    if !path.is_file() {
        return Err(ApiError::conflict(format!("checkpoint {} is not available", path.display())));
    }
    Ok(path)
}

async fn preview(
    State(state): AppStateRef,
    Path(id): Path<String>,
    Json(req): Json<PreviewRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let p = project(&state, &id)?;
    let iterations = req.iterations.unwrap_or(state.config.preview_iterations);
    if iterations > MAX_ITERATIONS {
        return Err(ApiError::bad_request(format!("iterations may be at most {MAX_ITERATIONS}")));
    }
    let defaults = StyleWeights::default();
    let weights = StyleWeights {
        alpha: req.alpha.unwrap_or(defaults.alpha),
        beta: req.beta.unwrap_or(defaults.beta),
        ..defaults
    };
    weights.validate()?;
    let checkpoint = match req.method {
        PreviewMethod::Embgan => Some(resolve_checkpoint(&state, req.checkpoint.as_deref())?),
        PreviewMethod::SplitStyle => None,
    };
    let mut p = lock(&p);
    let input = p.image.clone().ok_or_else(|| ApiError::conflict("upload an image first"))?;
    let (palette, stitches) = match req.method {
        PreviewMethod::SplitStyle => {
            let ps = p.palette.as_ref().ok_or_else(|| ApiError::conflict("compute the palette first"))?;
            let missing = p.missing_regions();
            if !missing.is_empty() {
                return Err(ApiError::conflict("every region needs a stitch before previewing").with("missing_regions", json!(missing)));
            }
            (Some(ps.palette.clone()), p.assignments.clone())
        }
        PreviewMethod::Embgan => (None, BTreeMap::new()),
    };
    let params = JobParams {
        method: req.method,
        iterations,
        learning_rate: TransferSettings::default().learning_rate,
        alpha: weights.alpha,
        beta: weights.beta,
        seed: req.seed.unwrap_or(0),
        working_size: state.config.working_size,
        palette,
        stitches,
        checkpoint,
        direction: req.direction.unwrap_or(Direction::XtoY),
    };
    let job_id = state.jobs.submit(&id, &input, params)?;
    p.add_job(job_id.clone())?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn get_job(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let r = state.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job {id}")))?;
    Ok(Json(job_view(&r)))
}

async fn get_result(State(state): AppStateRef, Path(id): Path<String>) -> ApiResult<Response> {
    let r = state.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job {id}")))?;
    match r.status {
        JobStatus::Done => {
            let path = state.jobs.result_path(&id);
            let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
            Ok(png(bytes))
        }
        JobStatus::Failed => {
            let mut e = ApiError::internal(r.error.unwrap_or_else(|| "job failed".into()));
            if let Some(c) = r.component {
                e = e.with("component", c);
            }
            Err(e)
        }
        JobStatus::Queued | JobStatus::Running => Err(ApiError::conflict(format!("job {id} is {:?}", r.status).to_lowercase())),
    }
}

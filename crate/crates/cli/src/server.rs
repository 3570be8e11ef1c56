//! HTTP control surface. Runs execute one at a time on a worker thread and
//! write their archives under the data directory; frames become readable as
//! soon as they are on disk.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fmrisim_core::experiment::build_design;
use fmrisim_core::phantom::{generate_phantom, PhantomVolume, Plane};
use fmrisim_core::session::analysis::{frame_grid, slice_map, stat_map, voxel_report, Space};
use fmrisim_core::session::archive::SeriesReader;
use fmrisim_core::session::config::{parse_config, RunConfig};
use fmrisim_core::session::pipeline::{prepare, resolve, write_outputs, ARCHIVE_NAME};
use fmrisim_core::stats::{Part, StatKind, DEFAULT_THRESHOLD};
use fmrisim_core::Error;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Queued,
    Running,
    Complete,
    Failed,
}

struct Run {
    config: RunConfig,
    seed: u64,
    status: Status,
    n_frames: usize,
    progress: Arc<AtomicUsize>,
    summary: Option<String>,
    error: Option<String>,
    dir: PathBuf,
}

struct Shared {
    runs: Mutex<BTreeMap<u64, Run>>,
    queue: Mutex<VecDeque<u64>>,
    jobs: Mutex<mpsc::Sender<u64>>,
    phantoms: Mutex<HashMap<usize, Arc<PhantomVolume>>>,
    data_dir: PathBuf,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Creates the state and starts the worker thread.
    pub fn new(data_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(&data_dir)?;
        let (tx, rx) = mpsc::channel();
        let state = AppState(Arc::new(Shared {
            runs: Mutex::new(BTreeMap::new()),
            queue: Mutex::new(VecDeque::new()),
            jobs: Mutex::new(tx),
            phantoms: Mutex::new(HashMap::new()),
            data_dir,
        }));
        let worker = state.clone();
        std::thread::Builder::new()
            .name("fmrisim-worker".into())
            .spawn(move || {
                for id in rx {
                    worker.execute(id);
                }
            })?;
        Ok(state)
    }

    fn execute(&self, id: u64) {
        let (config, progress, dir) = {
            let mut runs = self.0.runs.lock().unwrap();
            let Some(run) = runs.get_mut(&id) else { return };
            run.status = Status::Running;
            (run.config.clone(), Arc::clone(&run.progress), run.dir.clone())
        };
        let result = prepare(&config).and_then(|prepared| {
            self.update(id, |r| r.summary = Some(prepared.metadata.summary.clone()));
            write_outputs(&prepared, &dir, |t| progress.store(t, Ordering::Release))
        });
        self.0.queue.lock().unwrap().retain(|&q| q != id);
        self.update(id, |r| match result {
            Ok(_) => r.status = Status::Complete,
            Err(e) => {
                log::error!("run {id} failed: {e}");
                r.status = Status::Failed;
                r.error = Some(e.to_string());
            }
        });
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut Run)) {
        if let Some(r) = self.0.runs.lock().unwrap().get_mut(&id) {
            f(r);
        }
    }

    fn submit(&self, config: RunConfig) -> Result<Value, ApiError> {
        let config = resolve(&config);
        let seed = config.seed.unwrap_or_default();
        let n_frames = build_design(&config.task_design()).map_err(ApiError::from)?.len();
        let mut runs = self.0.runs.lock().unwrap();
        let id = runs.keys().next_back().map_or(1, |k| k + 1);
        runs.insert(
            id,
            Run {
                config,
                seed,
                status: Status::Queued,
                n_frames,
                progress: Arc::new(AtomicUsize::new(0)),
                summary: None,
                error: None,
                dir: self.0.data_dir.join(format!("run-{id}")),
            },
        );
        let position = {
            let mut q = self.0.queue.lock().unwrap();
            q.push_back(id);
            q.len() - 1
        };
        drop(runs);
        self.0
            .jobs
            .lock()
            .unwrap()
            .send(id)
            .map_err(|_| ApiError::internal("worker thread has stopped".into()))?;
        Ok(json!({ "id": id, "seed": seed, "status": Status::Queued, "queue_position": position, "n_frames": n_frames }))
    }

    fn describe(&self, id: u64) -> Result<Value, ApiError> {
        let runs = self.0.runs.lock().unwrap();
        let run = runs.get(&id).ok_or_else(|| ApiError::not_found(id))?;
        let queue_position = (run.status == Status::Queued)
            .then(|| self.0.queue.lock().unwrap().iter().position(|&q| q == id))
            .flatten();
        Ok(json!({
            "id": id,
            "seed": run.seed,
            "status": run.status,
            "frames_completed": run.progress.load(Ordering::Acquire),
            "n_frames": run.n_frames,
            "queue_position": queue_position,
            "summary": run.summary,
            "error": run.error,
            "config": run.config,
        }))
    }

    /// Archive path and seed once `needed` frames are on disk.
    fn readable(&self, id: u64, needed: usize) -> Result<(PathBuf, u64), ApiError> {
        let runs = self.0.runs.lock().unwrap();
        let run = runs.get(&id).ok_or_else(|| ApiError::not_found(id))?;
        let done = run.progress.load(Ordering::Acquire);
        if run.status == Status::Failed {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("run {id} failed: {}", run.error.as_deref().unwrap_or("unknown error")),
            )
            .seed(run.seed));
        }
        if needed > done {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("run {id} has {done} of {} frames ready", run.n_frames),
            )
            .seed(run.seed));
        }
        Ok((run.dir.join(ARCHIVE_NAME), run.seed))
    }

    fn n_frames(&self, id: u64) -> Result<(usize, u64), ApiError> {
        let runs = self.0.runs.lock().unwrap();
        let run = runs.get(&id).ok_or_else(|| ApiError::not_found(id))?;
        Ok((run.n_frames, run.seed))
    }

    fn phantom(&self, size: usize) -> Result<Arc<PhantomVolume>, Error> {
        if let Some(p) = self.0.phantoms.lock().unwrap().get(&size) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(generate_phantom(size, &Default::default())?);
        self.0.phantoms.lock().unwrap().insert(size, Arc::clone(&p));
        Ok(p)
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
    seed: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: String) -> Self {
        ApiError {
            status,
            message,
            field: None,
            seed: None,
        }
    }
    fn not_found(id: u64) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no run with id {id}"))
    }
    fn internal(message: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
    fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = if e.is_validation() {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        let field = match &e {
            Error::InvalidParameter { field, .. } => Some(*field),
            _ => None,
        };
        ApiError {
            status,
            message: e.to_string(),
            field,
            seed: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "field": self.field, "seed": self.seed });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn rows(grid: &Array2<f64>) -> Vec<Vec<f64>> {
    grid.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(v: Option<&str>, default: T) -> ApiResult<T> {
    v.map_or(Ok(default), |s| s.parse().map_err(ApiError::from))
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let config = parse_config(text)?;
    Ok((StatusCode::ACCEPTED, Json(state.submit(config)?)))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    Ok(Json(state.describe(id)?))
}

#[derive(Debug, Deserialize)]
pub struct FrameQuery {
    part: Option<String>,
    space: Option<String>,
    coil: Option<usize>,
    format: Option<String>,
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, t)): Path<(u64, usize)>,
    Query(q): Query<FrameQuery>,
) -> ApiResult<Response> {
    let part = parse(q.part.as_deref(), Part::Magnitude)?;
    let space = parse(q.space.as_deref(), Space::Image)?;
    let raw = match q.format.as_deref() {
        None | Some("json") => false,
        Some("raw") => true,
        Some(other) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown format {other:?} (json, raw)")))
        }
    };
    let (n_frames, seed) = state.n_frames(id)?;
    if t == 0 || t > n_frames {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("frame {t} outside 1..={n_frames}")).seed(seed));
    }
    let (path, seed) = state.readable(id, t)?;
    let coil = q.coil;
    let grid = blocking(move || {
        let mut reader = SeriesReader::open(&path).map_err(|e| ApiError::from(e).seed(seed))?;
        let rec = reader.read_frame(t - 1).map_err(|e| ApiError::from(e).seed(seed))?;
        frame_grid(reader.metadata(), &rec, part, space, coil).map_err(|e| ApiError::from(e).seed(seed))
    })
    .await?;
    let (r, c) = grid.dim();
    if raw {
        let mut bytes = Vec::with_capacity(r * c * 8);
        for v in grid.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        return Ok((
            [
                (header::CONTENT_TYPE, "application/octet-stream".to_string()),
                (header::HeaderName::from_static("x-rows"), r.to_string()),
                (header::HeaderName::from_static("x-cols"), c.to_string()),
                (header::HeaderName::from_static("x-seed"), seed.to_string()),
            ],
            bytes,
        )
            .into_response());
    }
    Ok(Json(json!({
        "id": id, "seed": seed, "t": t, "part": part, "space": space, "coil": coil,
        "rows": r, "cols": c, "data": rows(&grid),
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
pub struct StatsQuery {
    kind: Option<String>,
    threshold: Option<f64>,
    skip: Option<usize>,
}

async fn get_stats(State(state): State<AppState>, Path(id): Path<u64>, Query(q): Query<StatsQuery>) -> ApiResult<Json<Value>> {
    let kind = parse(q.kind.as_deref(), StatKind::Tstat)?;
    let (n_frames, _) = state.n_frames(id)?;
    let (path, seed) = state.readable(id, n_frames)?;
    let threshold = q.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let skip = q.skip.unwrap_or(0);
    let map = blocking(move || {
        let mut reader = SeriesReader::open(&path).map_err(|e| ApiError::from(e).seed(seed))?;
        stat_map(&mut reader, kind, threshold, skip).map_err(|e| ApiError::from(e).seed(seed))
    })
    .await?;
    let (r, c) = map.values.dim();
    let n_above = map.above_threshold().iter().filter(|&&b| b).count();
    Ok(Json(json!({
        "id": id, "seed": seed, "kind": map.kind, "df": map.df, "threshold": map.threshold,
        "skip_initial": map.skip_initial, "n_above": n_above, "rows": r, "cols": c, "values": rows(&map.values),
    })))
}

#[derive(Debug, Deserialize)]
pub struct VoxelQuery {
    part: Option<String>,
    coil: Option<usize>,
    bins: Option<usize>,
}

async fn get_voxel(
    State(state): State<AppState>,
    Path((id, x, y)): Path<(u64, usize, usize)>,
    Query(q): Query<VoxelQuery>,
) -> ApiResult<Json<Value>> {
    let part = parse(q.part.as_deref(), Part::Magnitude)?;
    let (n_frames, _) = state.n_frames(id)?;
    let (path, seed) = state.readable(id, n_frames)?;
    let bins = q.bins.unwrap_or(30);
    let coil = q.coil;
    let report = blocking(move || {
        let mut reader = SeriesReader::open(&path).map_err(|e| ApiError::from(e).seed(seed))?;
        voxel_report(&mut reader, x, y, part, coil, bins).map_err(|e| ApiError::from(e).seed(seed))
    })
    .await?;
    let theory = report.histogram.as_ref().map(|h| h.theory.name());
    let mut body = serde_json::to_value(&report).map_err(|e| ApiError::internal(e.to_string()))?;
    body["id"] = json!(id);
    body["seed"] = json!(seed);
    body["theory_name"] = json!(theory);
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    plane: Option<String>,
    index: Option<usize>,
    map: Option<String>,
    size: Option<usize>,
}

async fn get_phantom_slice(State(state): State<AppState>, Query(q): Query<SliceQuery>) -> ApiResult<Json<Value>> {
    let plane = parse(q.plane.as_deref(), Plane::Axial)?;
    let size = q.size.unwrap_or(96);
    let index = q.index.unwrap_or(size / 2);
    let name = q.map.unwrap_or_else(|| "m0".into());
    let grid = blocking(move || {
        let phantom = state.phantom(size)?;
        let slice = phantom.extract_slice(plane, index)?;
        Ok(slice_map(&slice, &name).map(|g| (g, name))?)
    })
    .await?;
    let (g, name) = grid;
    let (r, c) = g.dim();
    Ok(Json(json!({
        "seed": Value::Null, "size": size, "plane": plane, "index": index, "map": name,
        "rows": r, "cols": c, "data": rows(&g),
    })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/:id", get(get_run))
        .route("/runs/:id/frames/:t", get(get_frame))
        .route("/runs/:id/stats", get(get_stats))
        .route("/runs/:id/voxel/:x/:y", get(get_voxel))
        .route("/phantom/slice", get(get_phantom_slice))
        .with_state(state)
}

/// Serves on `0.0.0.0:port` until the process ends.
pub async fn serve(port: u16, data_dir: PathBuf) -> std::io::Result<()> {
    let state = AppState::new(data_dir)?;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

//! Route handlers.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequestParts, Multipart, Path, State};
use axum::http::header::{AUTHORIZATION, CONTENT_DISPOSITION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;
use ttsforge::align::{parse_batch_filename, parse_sentence_filename};
use ttsforge::script::ScriptEntry;
use ttsforge::store::{AnnotationInput, Dataset, DatasetId, IngestPayload, JobId, JobKind, Sample, SampleId};

use crate::auth::Principal;
use crate::error::ApiError;
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn body<T>(json: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    json.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("malformed request body").with_detail(e.body_text()))
}

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(ApiError::unauthorized)?;
        state
            .allowlist
            .authenticate(token.trim())
            .cloned()
            .ok_or_else(ApiError::unauthorized)
    }
}

fn require_admin(p: &Principal) -> ApiResult<()> {
    if p.is_admin() {
        Ok(())
    } else {
        Err(ApiError::forbidden("admin role required"))
    }
}

/// Admins see every dataset; annotators only those assigned to them.
fn require_access(state: &AppState, p: &Principal, dataset_id: DatasetId) -> ApiResult<()> {
    state.store.dataset(dataset_id)?;
    if p.is_admin() || state.store.is_assigned(dataset_id, &p.email) {
        Ok(())
    } else {
        Err(ApiError::forbidden(format!(
            "{} is not assigned to dataset {dataset_id}",
            p.email
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleView {
    #[serde(flatten)]
    pub sample: Sample,
    pub audio_url: String,
}

impl From<Sample> for SampleView {
    fn from(sample: Sample) -> Self {
        Self {
            audio_url: format!("/api/samples/{}/audio", sample.id),
            sample,
        }
    }
}

pub async fn health() -> &'static str {
    "ok"
}

pub async fn me(p: Principal) -> Json<Principal> {
    Json(p)
}

pub async fn list_datasets(State(s): State<AppState>, p: Principal) -> Json<Vec<Dataset>> {
    let all = s.store.datasets();
    Json(
        all.into_iter()
            .filter(|d| p.is_admin() || s.store.is_assigned(d.id, &p.email))
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct CreateDataset {
    pub name: String,
    #[serde(default)]
    pub language: String,
}

pub async fn create_dataset(
    State(s): State<AppState>,
    p: Principal,
    req: Result<Json<CreateDataset>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    require_admin(&p)?;
    let req = body(req)?;
    let d = blocking(move || Ok(s.store.create_dataset(&req.name, &req.language)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": d.id }))))
}

pub async fn get_dataset(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<Dataset>> {
    require_access(&s, &p, id)?;
    Ok(Json(s.store.dataset(id)?))
}

/// Accepts the script as a JSON array or as JSON lines. Summary lines are
/// skipped.
pub async fn put_script(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
    text: String,
) -> ApiResult<Json<serde_json::Value>> {
    require_admin(&p)?;
    let entries: Vec<ScriptEntry> = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with("{\"summary\""))
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ApiError::bad_request(format!("script line {}: {e}", i + 1)))
            })
            .collect::<ApiResult<_>>()?,
    };
    let n = blocking(move || Ok(s.store.put_script(id, &entries)?)).await?;
    Ok(Json(json!({ "entries": n })))
}

pub async fn get_script(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<Vec<ScriptEntry>>> {
    require_access(&s, &p, id)?;
    let script = blocking(move || Ok(s.store.script(id)?)).await?;
    Ok(Json(script.entries().to_vec()))
}

static SPOOL_SEQ: AtomicU64 = AtomicU64::new(0);

fn spool_slot(root: &std::path::Path) -> ApiResult<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let dir = root.join(format!(
        "{nanos}-{}-{}",
        std::process::id(),
        SPOOL_SEQ.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("spool: {e}")))?;
    Ok(dir)
}

/// Streams one multipart field into `path`, charging its bytes against
/// `budget`.
async fn spool_field(
    field: &mut axum::extract::multipart::Field<'_>,
    path: &std::path::Path,
    budget: &mut u64,
) -> ApiResult<()> {
    use tokio::io::AsyncWriteExt;
    let mut file = tokio::fs::File::create(path)
        .await
        .map_err(|e| ApiError::internal(format!("spool: {e}")))?;
    while let Some(chunk) = field
        .chunk()
        .await
        .map_err(|e| ApiError::bad_request("broken upload").with_detail(e.to_string()))?
    {
        let n = chunk.len() as u64;
        if n > *budget {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                "upload exceeds the size limit",
            ));
        }
        *budget -= n;
        file.write_all(&chunk)
            .await
            .map_err(|e| ApiError::internal(format!("spool: {e}")))?;
    }
    file.flush()
        .await
        .map_err(|e| ApiError::internal(format!("spool: {e}")))
}

/// Multipart fields: `file` (required; its file name is the declared name
/// unless a `filename` field is given) and `truth` (optional sidecar for
/// the mock recognizer).
pub async fn upload_batch(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
    mut multipart: Multipart,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    require_admin(&p)?;
    s.store.dataset(id)?;
    let dir = spool_slot(&s.config.spool_dir)?;
    let result = async {
        let mut budget = s.config.max_upload_bytes;
        let mut audio = None;
        let mut declared = None;
        let mut truth = None;
        while let Some(mut field) = multipart
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request("malformed multipart body").with_detail(e.to_string()))?
        {
            match field.name().unwrap_or_default() {
                "file" => {
                    let name = field.file_name().map(str::to_string);
                    let path = dir.join("upload.wav");
                    spool_field(&mut field, &path, &mut budget).await?;
                    audio = Some((path, name));
                }
                "filename" => {
                    declared = Some(
                        field
                            .text()
                            .await
                            .map_err(|e| ApiError::bad_request(e.to_string()))?
                            .trim()
                            .to_string(),
                    )
                }
                "truth" => {
                    let path = dir.join("truth.tsv");
                    spool_field(&mut field, &path, &mut budget).await?;
                    truth = Some(path);
                }
                other => return Err(ApiError::bad_request(format!("unexpected field {other:?}"))),
            }
        }
        let (path, part_name) = audio.ok_or_else(|| ApiError::bad_request("missing `file` field"))?;
        let file_name = declared
            .or(part_name)
            .ok_or_else(|| ApiError::bad_request("no file name declared"))?;
        let kind = if parse_batch_filename(&file_name).is_ok() {
            JobKind::IngestBatch
        } else if parse_sentence_filename(&file_name).is_ok() {
            JobKind::Rematch
        } else {
            let e = parse_batch_filename(&file_name).unwrap_err();
            return Err(ApiError::bad_request(format!("bad file name {file_name:?}")).with_detail(e.to_string()));
        };
        let payload = IngestPayload {
            dataset_id: id,
            path,
            file_name,
            truth,
        };
        let payload = serde_json::to_value(payload).expect("payload serializes");
        let store = s.store.clone();
        let job = blocking(move || Ok(store.enqueue_job(kind, payload)?)).await?;
        Ok(job.id)
    }
    .await;
    match result {
        Ok(job_id) => Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id })))),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&dir);
            Err(e)
        }
    }
}

pub async fn list_jobs(State(s): State<AppState>, p: Principal) -> ApiResult<Json<Vec<ttsforge::store::Job>>> {
    require_admin(&p)?;
    Ok(Json(s.store.jobs()))
}

pub async fn get_job(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<JobId>,
) -> ApiResult<Json<ttsforge::store::Job>> {
    require_admin(&p)?;
    Ok(Json(s.store.job(id)?))
}

#[derive(Debug, Deserialize)]
pub struct Assign {
    pub annotator: String,
}

pub async fn list_assignments(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<Vec<String>>> {
    require_admin(&p)?;
    s.store.dataset(id)?;
    Ok(Json(s.store.assignments(id)))
}

pub async fn assign(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
    req: Result<Json<Assign>, JsonRejection>,
) -> ApiResult<Json<Vec<String>>> {
    require_admin(&p)?;
    let req = body(req)?;
    blocking(move || {
        s.store.assign(id, &req.annotator)?;
        Ok(Json(s.store.assignments(id)))
    })
    .await
}

pub async fn unassign(
    State(s): State<AppState>,
    p: Principal,
    Path((id, annotator)): Path<(DatasetId, String)>,
) -> ApiResult<Json<Vec<String>>> {
    require_admin(&p)?;
    blocking(move || {
        s.store.unassign(id, &annotator)?;
        Ok(Json(s.store.assignments(id)))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
pub struct NextSample {
    pub annotator_id: Option<String>,
}

pub async fn next_sample(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
    raw: Bytes,
) -> ApiResult<Response> {
    let req: NextSample = if raw.iter().all(u8::is_ascii_whitespace) {
        NextSample::default()
    } else {
        serde_json::from_slice(&raw)
            .map_err(|e| ApiError::bad_request("malformed request body").with_detail(e.to_string()))?
    };
    if req.annotator_id.as_ref().is_some_and(|a| *a != p.email) {
        return Err(ApiError::forbidden("annotator_id must be the caller"));
    }
    s.store.dataset(id)?;
    if !s.store.is_assigned(id, &p.email) {
        return Err(ApiError::forbidden(format!(
            "{} is not assigned to dataset {id}",
            p.email
        )));
    }
    let lease = s.config.lease_s;
    let got = blocking(move || Ok(s.store.acquire_next_sample(id, &p.email, lease)?)).await?;
    Ok(match got {
        Some(sample) => Json(SampleView::from(sample)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

fn sample_for(s: &AppState, p: &Principal, id: SampleId) -> ApiResult<Sample> {
    let sample = s.store.sample(id)?;
    require_access(s, p, sample.dataset_id)?;
    Ok(sample)
}

pub async fn get_sample(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<SampleId>,
) -> ApiResult<Json<SampleView>> {
    Ok(Json(sample_for(&s, &p, id)?.into()))
}

pub async fn sample_audio(State(s): State<AppState>, p: Principal, Path(id): Path<SampleId>) -> ApiResult<Response> {
    sample_for(&s, &p, id)?;
    let path = s.store.audio_path(id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::internal(format!("audio for sample {id}: {e}")))?;
    Ok(([(CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

pub async fn annotate(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<SampleId>,
    req: Result<Json<AnnotationInput>, JsonRejection>,
) -> ApiResult<Json<SampleView>> {
    let input = body(req)?;
    blocking(move || Ok(Json(s.store.submit_annotation(id, &p.email, input)?.into()))).await
}

pub async fn release(State(s): State<AppState>, p: Principal, Path(id): Path<SampleId>) -> ApiResult<Json<SampleView>> {
    blocking(move || Ok(Json(s.store.release_lock(id, &p.email)?.into()))).await
}

pub async fn list_samples(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<Vec<SampleView>>> {
    require_admin(&p)?;
    Ok(Json(s.store.samples(id)?.into_iter().map(SampleView::from).collect()))
}

pub async fn stats(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<ttsforge::qa::DatasetStats>> {
    require_access(&s, &p, id)?;
    Ok(Json(s.store.stats(id)?))
}

pub async fn reports(
    State(s): State<AppState>,
    p: Principal,
    Path(id): Path<DatasetId>,
) -> ApiResult<Json<Vec<ttsforge::align::AssignmentReport>>> {
    require_admin(&p)?;
    Ok(Json(s.store.reports(id)?))
}

/// The export as a tar archive holding `manifest.jsonl`, `index.txt` and
/// `audio/`.
pub async fn export(State(s): State<AppState>, p: Principal, Path(id): Path<DatasetId>) -> ApiResult<Response> {
    require_admin(&p)?;
    let bytes = blocking(move || {
        let tmp = tempfile::tempdir().map_err(|e| ApiError::internal(e.to_string()))?;
        s.store.export_dataset(id, tmp.path())?;
        let mut archive = tar::Builder::new(Vec::new());
        archive
            .append_dir_all(".", tmp.path())
            .and_then(|_| archive.finish())
            .map_err(|e| ApiError::internal(format!("archive: {e}")))?;
        archive
            .into_inner()
            .map_err(|e| ApiError::internal(format!("archive: {e}")))
    })
    .await?;
    let disposition = format!("attachment; filename=\"dataset-{id}.tar\"");
    Ok((
        [
            (CONTENT_TYPE, "application/x-tar".to_string()),
            (CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

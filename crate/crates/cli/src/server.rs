//! HTTP front end of the annotation service.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use situmatch::annotate::{AnnotationError, AnnotationService, Resolution, Submission};
use situmatch::stats::krippendorff_alpha;

pub struct AppState {
    service: Mutex<AnnotationService>,
    export_path: PathBuf,
}

impl AppState {
    pub fn new(service: AnnotationService, export_path: PathBuf) -> Arc<Self> {
        Arc::new(AppState {
            service: Mutex::new(service),
            export_path,
        })
    }

    fn service(&self) -> MutexGuard<'_, AnnotationService> {
        // Records are appended whole, so a poisoned lock still guards
        // consistent state.
        self.service.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/next", get(next))
        .route("/api/annotation", post(annotate))
        .route("/api/resolution", post(resolve))
        .route("/api/progress", get(progress))
        .route("/api/export", post(export))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(AnnotationError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AnnotationError::UnknownAnnotator(_) | AnnotationError::UnknownPair(_) => StatusCode::NOT_FOUND,
            AnnotationError::NotReviewer(_) => StatusCode::FORBIDDEN,
            AnnotationError::OutOfOrder { .. } | AnnotationError::Duplicate { .. } => StatusCode::CONFLICT,
            AnnotationError::InvalidValue(_) | AnnotationError::UnknownDocument { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AnnotationError::TooFewAnnotators { .. } | AnnotationError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            Json(ErrorBody {
                error: self.0.to_string(),
            }),
        )
            .into_response()
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        ApiError(e)
    }
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

async fn next(State(s): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(Json(s.service().next(&q.annotator)?).into_response())
}

async fn annotate(State(s): State<Arc<AppState>>, Json(sub): Json<Submission>) -> Result<Response, ApiError> {
    let rec = s.service().submit(&sub)?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn resolve(State(s): State<Arc<AppState>>, Json(r): Json<Resolution>) -> Result<Response, ApiError> {
    let rec = s.service().resolve(&r)?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn progress(State(s): State<Arc<AppState>>) -> Response {
    Json(s.service().progress()).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub similarity_records: usize,
    pub agency_records: usize,
    pub resolutions: usize,
    /// Ordinal Krippendorff alpha of the similarity ratings, when defined.
    pub similarity_alpha: Option<f64>,
}

async fn export(State(s): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let export = s.service().export_to(&s.export_path)?;
    let alpha = krippendorff_alpha(&export.similarity_matrix()).ok();
    Ok(Json(ExportSummary {
        path: s.export_path.clone(),
        similarity_records: export.similarity.len(),
        agency_records: export.agency.len(),
        resolutions: export.resolutions.len(),
        similarity_alpha: alpha,
    })
    .into_response())
}

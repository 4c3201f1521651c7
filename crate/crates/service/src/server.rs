//! HTTP query service over an immutable index snapshot.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use diagsearch::corpus::{decode_image_bytes, preprocess};
use diagsearch::edgemap::{edge_map, edge_map_corpus, EdgeMapConfig};
use diagsearch::index::{read_embeddings, ExternalNormalization};
use diagsearch::{
    load_manifest, Corpus, EvalReport, ImageRecord, IngestOptions, Ranker, RetrievalResult, SiameseModel,
    SimilarityIndex,
};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

/// Largest accepted upload.
pub const MAX_IMAGE_BYTES: usize = 10 * 1024 * 1024;
const MULTIPART_SLACK: usize = 64 * 1024;
const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitView {
    pub id: String,
    pub score: f64,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query: String,
    pub hits: Vec<HitView>,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub id: String,
    pub scores: Vec<RowScore>,
}

pub fn image_url(id: &str) -> String {
    format!("/images/{}", utf8_percent_encode(id, NON_ALPHANUMERIC))
}

fn view(result: &RetrievalResult, k: usize, timing_ms: f64) -> QueryResponse {
    QueryResponse {
        query: result.query_id.clone(),
        hits: result
            .hits
            .iter()
            .take(k)
            .map(|h| HitView {
                id: h.id.clone(),
                score: h.score,
                image_url: image_url(&h.id),
            })
            .collect(),
        timing_ms,
    }
}

/// Everything needed to rank an uploaded image the way the corpus was
/// prepared.
#[derive(Debug, Clone)]
pub struct ExternalQuery {
    pub index: SimilarityIndex,
    pub model: SiameseModel,
    pub ingest: IngestOptions,
    pub edgemap: Option<EdgeMapConfig>,
    pub normalization: ExternalNormalization,
}

impl ExternalQuery {
    /// Decodes, preprocesses and ranks an encoded image.
    pub fn rank_bytes(&self, bytes: &[u8], k: usize) -> diagsearch::Result<RetrievalResult> {
        let raw = decode_image_bytes("external", bytes)?;
        let pixels = preprocess("external", raw, &self.ingest)?;
        let mut record = ImageRecord::new("external", pixels);
        if let Some(cfg) = &self.edgemap {
            record = edge_map(&record, cfg)?;
        }
        self.index.query_external(&self.model, &record, k, self.normalization)
    }
}

/// Paths and options for [`Snapshot::load`].
#[derive(Debug, Clone)]
pub struct SnapshotConfig {
    pub index: PathBuf,
    pub model: PathBuf,
    pub manifest: PathBuf,
    /// Defaults to `embeddings.csv` beside the index; the corpus is
    /// re-embedded when neither exists.
    pub embeddings: Option<PathBuf>,
    /// Defaults to `report.json` beside the index.
    pub report: Option<PathBuf>,
    pub edgemap: Option<EdgeMapConfig>,
    pub binarize: diagsearch::corpus::Binarize,
}

fn beside(index: &Path, name: &str) -> PathBuf {
    index.parent().unwrap_or(Path::new(".")).join(name)
}

/// Attaches embeddings to `index`, reading `path` when it exists and
/// embedding `corpus` with `model` otherwise.
pub fn attach_embeddings(
    index: SimilarityIndex,
    path: &Path,
    model: &SiameseModel,
    corpus: Option<&Corpus>,
    edgemap: Option<&EdgeMapConfig>,
) -> anyhow::Result<SimilarityIndex> {
    let embeddings = if path.exists() {
        read_embeddings(path)?
    } else {
        let corpus = corpus.ok_or_else(|| anyhow::anyhow!("no embeddings at {} and no corpus to embed", path.display()))?;
        log::info!("embedding {} corpus images", corpus.len());
        match edgemap {
            Some(cfg) => model.embed_corpus(&edge_map_corpus(corpus, cfg)?)?,
            None => model.embed_corpus(corpus)?,
        }
    };
    let by_id: HashMap<&str, &diagsearch::EmbeddingVector> = embeddings.iter().map(|e| (e.id.as_str(), e)).collect();
    let ordered = index
        .ids()
        .iter()
        .map(|id| by_id.get(id.as_str()).map(|e| (*e).clone()).ok_or_else(|| anyhow::anyhow!("no embedding for {id:?}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(index.with_embeddings(ordered)?)
}

/// Loaded artifacts. Never mutated after startup apart from the
/// write-once ranking cache.
pub struct Snapshot {
    external: ExternalQuery,
    corpus: Corpus,
    report: Option<EvalReport>,
    rankings: Vec<OnceLock<(RetrievalResult, f64)>>,
}

impl Snapshot {
    pub fn new(external: ExternalQuery, corpus: Corpus, report: Option<EvalReport>) -> anyhow::Result<Self> {
        for id in external.index.ids() {
            anyhow::ensure!(corpus.get(id).is_some(), "indexed id {id:?} missing from corpus");
        }
        let n = external.index.len();
        Ok(Self {
            external,
            corpus,
            report,
            rankings: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn load(cfg: &SnapshotConfig) -> anyhow::Result<Self> {
        let index = SimilarityIndex::load(&cfg.index)?;
        let model = SiameseModel::load(&cfg.model)?;
        let ingest = IngestOptions {
            resolution: model.resolution(),
            resize: true,
            binarize: cfg.binarize,
        };
        let corpus = load_manifest(&cfg.manifest, &ingest)?;
        let emb_path = cfg.embeddings.clone().unwrap_or_else(|| beside(&cfg.index, "embeddings.csv"));
        let index = attach_embeddings(index, &emb_path, &model, Some(&corpus), cfg.edgemap.as_ref())?;
        let report_path = cfg.report.clone().unwrap_or_else(|| beside(&cfg.index, "report.json"));
        let report = if report_path.exists() {
            Some(EvalReport::load(&report_path)?)
        } else {
            None
        };
        let external = ExternalQuery {
            index,
            model,
            ingest,
            edgemap: cfg.edgemap,
            normalization: ExternalNormalization::Extended,
        };
        Self::new(external, corpus, report)
    }

    pub fn index(&self) -> &SimilarityIndex {
        &self.external.index
    }

    pub fn external(&self) -> &ExternalQuery {
        &self.external
    }

    /// Full ranking for an indexed id, computed once. The recorded timing
    /// is that of the first computation, so repeated responses match.
    fn ranking(&self, pos: usize) -> &(RetrievalResult, f64) {
        self.rankings[pos].get_or_init(|| {
            let index = self.index();
            let start = Instant::now();
            let result = index
                .query(&index.ids()[pos], index.len() - 1)
                .expect("indexed id ranks");
            (result, start.elapsed().as_secs_f64() * 1e3)
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<Snapshot>;

fn parse_k(params: &HashMap<String, String>, max: usize) -> ApiResult<usize> {
    let k = match params.get("k") {
        None => DEFAULT_K.min(max),
        Some(raw) => raw
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("k must be a positive integer, got {raw:?}")))?,
    };
    if k < 1 || k > max {
        return Err(ApiError::bad_request(format!("k must be in 1..={max}, got {k}")));
    }
    Ok(k)
}

fn position(snapshot: &Snapshot, id: &str) -> ApiResult<usize> {
    snapshot
        .index()
        .matrix()
        .position(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown id {id:?}")))
}

async fn health(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "corpus_size": s.index().len(),
        "metric": s.index().metric().to_string(),
    }))
}

async fn query_id(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<QueryResponse>> {
    let pos = position(&s, &id)?;
    let k = parse_k(&params, s.index().len() - 1)?;
    let (result, timing) = s.ranking(pos);
    Ok(Json(view(result, k, *timing)))
}

async fn query_upload(
    State(s): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
    mut multipart: Multipart,
) -> ApiResult<Json<QueryResponse>> {
    let k = parse_k(&params, s.index().len())?;
    let mut image = None;
    loop {
        let field = multipart
            .next_field()
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let Some(field) = field else { break };
        if field.name() == Some("image") {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
            image = Some(bytes);
        }
    }
    let bytes = image.ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
    if bytes.len() > MAX_IMAGE_BYTES {
        return Err(ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "image exceeds 10 MiB"));
    }
    let worker = Arc::clone(&s);
    let outcome = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        worker
            .external()
            .rank_bytes(&bytes, k)
            .map(|r| (r, start.elapsed().as_secs_f64() * 1e3))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let (result, timing) = outcome.map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(view(&result, k, timing)))
}

async fn image(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let record = s
        .corpus
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown id {id:?}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], record.pixels.to_png_bytes()).into_response())
}

async fn matrix_row(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MatrixRow>> {
    let pos = position(&s, &id)?;
    let m = s.index().matrix();
    let scores = m
        .ids()
        .iter()
        .zip(m.row(pos))
        .map(|(id, &score)| RowScore { id: id.clone(), score })
        .collect();
    Ok(Json(MatrixRow { id, scores }))
}

async fn report(State(s): State<Shared>) -> ApiResult<Json<EvalReport>> {
    s.report
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no evaluation report loaded"))
}

pub fn app(snapshot: Arc<Snapshot>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query/{id}", get(query_id))
        .route("/query", axum::routing::post(query_upload))
        .route("/images/{id}", get(image))
        .route("/matrix/row/{id}", get(matrix_row))
        .route("/report", get(report))
        .layer(DefaultBodyLimit::max(MAX_IMAGE_BYTES + MULTIPART_SLACK))
        .with_state(snapshot)
}

pub async fn serve(snapshot: Snapshot, addr: std::net::SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} images on http://{}", snapshot.index().len(), listener.local_addr()?);
    axum::serve(listener, app(Arc::new(snapshot)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

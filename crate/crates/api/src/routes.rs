use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{FromRequest, Multipart, Path, State};
use axum::http::header::CONTENT_TYPE;
use axum::http::{HeaderMap, Method, Request, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use biotrak_core::tx::SENSOR_DIGEST_KEY;
use biotrak_core::{
    encode_payload, evaluate_compliance, parse_sensor_dump, seal_series_for_chain, ActorRecord, ChainState,
    CodePayload, ComplianceReport, Digest, Fingerprint, LotCode, ParamValue, Parameters, ProcessTransaction,
    ProcessType, Role, TxId,
};
use biotrak_netsync::Mode;
use serde::{Deserialize, Serialize};

use crate::auth::{self, AuthError, AuthHeaders, ACTOR_HEADER, SIGNATURE_HEADER, TIMESTAMP_HEADER};
use crate::error::ApiError;
use crate::ledger::{now_secs, Ledger};
use crate::views::{history_view, policy, ActorView, BlockView, CodeView, HeadView, SubmitResponse, TemperatureView};

/// Multipart field holding the logger dump.
pub const DUMP_FIELD: &str = "dump";

#[derive(Debug, Clone, Default)]
pub struct ApiConfig {
    /// Where replicas send writers, returned with 503 responses.
    pub forward_to: Vec<String>,
}

struct AppState<L> {
    ledger: Arc<L>,
    config: ApiConfig,
}

type Shared<L> = State<Arc<AppState<L>>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminateResponse {
    pub tx_id: TxId,
    pub status: String,
    pub sensor_digest: Digest,
    pub report: ComplianceReport,
}

pub fn router<L: Ledger>(ledger: Arc<L>, config: ApiConfig) -> Router {
    let state = Arc::new(AppState { ledger, config });
    Router::new()
        .route("/v1/tx", post(submit_tx::<L>))
        .route("/v1/transport/{tx_id}/terminate", post(terminate::<L>))
        .route("/v1/lots/{code}/history", get(history::<L>))
        .route("/v1/lots/{code}/transports/{tx_id}/temperature", get(temperature::<L>))
        .route("/v1/blocks/{id}", get(block::<L>))
        .route("/v1/chain/head", get(head::<L>))
        .route("/v1/codes/lot/{code}", get(lot_code::<L>))
        .route("/v1/actors/{fp}", get(actor::<L>))
        .fallback(|| async { ApiError::not_found("not-found", "no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method-not-allowed", "method not allowed on this route")
        })
        .with_state(state)
}

fn auth_headers(headers: &HeaderMap) -> Result<AuthHeaders, AuthError> {
    let get = |name: &'static str| {
        headers
            .get(name)
            .ok_or(AuthError::Missing(name))?
            .to_str()
            .map(str::to_owned)
            .map_err(|_| AuthError::Malformed(name))
    };
    Ok(AuthHeaders { actor: get(ACTOR_HEADER)?, timestamp: get(TIMESTAMP_HEADER)?, signature: get(SIGNATURE_HEADER)? })
}

fn authenticate<L: Ledger>(
    st: &AppState<L>,
    method: &Method,
    uri: &Uri,
    headers: &HeaderMap,
    body: &[u8],
) -> Result<ActorRecord, ApiError> {
    let h = auth_headers(headers)?;
    st.ledger.read(|c| {
        auth::verify(&h, method.as_str(), uri.path(), body, now_secs(), &c.info().actors).cloned().map_err(Into::into)
    })
}

fn require_writer<L: Ledger>(st: &AppState<L>) -> Result<(), ApiError> {
    match st.ledger.mode() {
        Mode::Authoritative => Ok(()),
        Mode::NonAuthoritative => Err(ApiError::read_only(st.config.forward_to.clone())),
    }
}

fn forbidden(role: Role, what: &str) -> ApiError {
    ApiError::new(StatusCode::FORBIDDEN, "role-forbidden", format!("{what} requires the {} role", role.as_str()))
}

/// The role an actor must hold to submit `tx`.
pub fn required_role(tx: &ProcessTransaction) -> Role {
    if tx.supersedes.is_some() {
        Role::Producer
    } else {
        tx.process_type.required_role()
    }
}

async fn submit_tx<L: Ledger>(
    State(st): Shared<L>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<SubmitResponse>, ApiError> {
    require_writer(&st)?;
    let actor = authenticate(&st, &method, &uri, &headers, &body)?;
    let tx: ProcessTransaction =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed-request", e.to_string()))?;
    if tx.actor_id != actor.actor_id {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "actor-mismatch",
            format!("transaction names actor {} but the request is signed by {}", tx.actor_id, actor.actor_id),
        ));
    }
    let role = required_role(&tx);
    if tx.role != role || !actor.roles.contains(&role) {
        let what = if tx.supersedes.is_some() { "superseding" } else { tx.process_type.as_str() };
        return Err(forbidden(role, what));
    }
    let receipt = st.ledger.submit(tx)?;
    Ok(Json(SubmitResponse { tx_id: receipt.tx_id, status: receipt.status.as_str().to_owned() }))
}

fn parse_tx_id(s: &str) -> Result<TxId, ApiError> {
    s.parse().map_err(|_| ApiError::bad_request("invalid-id", format!("{s:?} is not a transaction id")))
}

fn parse_lot(s: &str) -> Result<LotCode, ApiError> {
    LotCode::new(s).map_err(|e| ApiError::bad_request("invalid-id", e.to_string()))
}

async fn read_dump(content_type: Option<&str>, body: Bytes) -> Result<Vec<u8>, ApiError> {
    let malformed = |m: String| ApiError::bad_request("malformed-request", m);
    let req = Request::builder()
        .header(CONTENT_TYPE, content_type.unwrap_or_default())
        .body(Body::from(body))
        .map_err(|e| malformed(e.to_string()))?;
    let mut mp = Multipart::from_request(req, &()).await.map_err(|e| malformed(e.body_text()))?;
    while let Some(field) = mp.next_field().await.map_err(|e| malformed(e.body_text()))? {
        if field.name() == Some(DUMP_FIELD) {
            return field.bytes().await.map(|b| b.to_vec()).map_err(|e| malformed(e.body_text()));
        }
    }
    Err(malformed(format!("multipart field {DUMP_FIELD:?} is missing")))
}

async fn terminate<L: Ledger>(
    State(st): Shared<L>,
    Path(id): Path<String>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<TerminateResponse>, ApiError> {
    require_writer(&st)?;
    let start_id = parse_tx_id(&id)?;
    let actor = authenticate(&st, &method, &uri, &headers, &body)?;
    if !actor.roles.contains(&Role::Transporter) {
        return Err(forbidden(Role::Transporter, "terminating a transport"));
    }
    let (start, policy) = st.ledger.read(|c| {
        let start = c
            .tx_by_id(&start_id)
            .map(|(_, t)| t.clone())
            .filter(|t| t.process_type == ProcessType::TransportStart)
            .ok_or_else(|| ApiError::not_found("unknown-transport", format!("no transport start {start_id}")))?;
        if let Some(end) = c.trace().transport(&start_id).and_then(|r| r.closed_by) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "transport-already-closed",
                format!("transport {start_id} was terminated by {end}"),
            ));
        }
        Ok((start, policy(c)))
    })?;

    let content_type = headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok());
    let dump = read_dump(content_type, body).await?;
    let series = parse_sensor_dump(&dump)?;
    let (digest, _) = seal_series_for_chain(&series)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "series-too-large", e.to_string()))?;
    let report = evaluate_compliance(&series, &policy);

    let mut parameters = Parameters::new();
    parameters.insert(SENSOR_DIGEST_KEY.into(), ParamValue::Bytes(digest.0.to_vec()));
    parameters.insert("compliance.compliant".into(), ParamValue::Int(i64::from(report.compliant)));
    parameters.insert("compliance.violations".into(), ParamValue::Int(report.violations.len() as i64));
    parameters.insert(
        "compliance.excursion_seconds".into(),
        ParamValue::Int(i64::try_from(report.total_excursion_seconds).unwrap_or(i64::MAX)),
    );
    let mut seed = b"biotrak-terminate".to_vec();
    seed.extend_from_slice(&start_id.0);
    seed.extend_from_slice(&actor.actor_id.0);
    seed.extend_from_slice(&digest.0);
    let tx = ProcessTransaction {
        tx_id: TxId::derive(&seed),
        process_type: ProcessType::TransportEnd,
        actor_id: actor.actor_id,
        role: Role::Transporter,
        input_lots: start.input_lots.clone(),
        output_lot: None,
        delivery_note: None,
        transport_ref: Some(start_id),
        supersedes: None,
        sensor_series: Some(series),
        parameters,
        created_at: now_secs(),
    };
    let receipt = st.ledger.submit(tx)?;
    Ok(Json(TerminateResponse {
        tx_id: receipt.tx_id,
        status: receipt.status.as_str().to_owned(),
        sensor_digest: digest,
        report,
    }))
}

async fn history<L: Ledger>(State(st): Shared<L>, Path(code): Path<String>) -> Result<Response, ApiError> {
    let lot = parse_lot(&code)?;
    st.ledger.read(|c| {
        let tree = c.trace_history(&lot)?;
        Ok(Json(history_view(c, &tree)).into_response())
    })
}

async fn temperature<L: Ledger>(
    State(st): Shared<L>,
    Path((code, id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let lot = parse_lot(&code)?;
    let id = parse_tx_id(&id)?;
    st.ledger.read(|c| {
        let unknown = || ApiError::not_found("unknown-transport", format!("no transport {id} on lot {lot}"));
        let (_, tx) = c.tx_by_id(&id).ok_or_else(unknown)?;
        if !tx.lots().any(|l| *l == lot) {
            return Err(unknown());
        }
        let (start, end) = match tx.process_type {
            ProcessType::TransportStart => match c.trace().transport(&id).and_then(|r| r.closed_by) {
                Some(end) => (id, c.tx_by_id(&end).map(|(_, t)| t).ok_or_else(unknown)?),
                None => return Ok(StatusCode::NO_CONTENT.into_response()),
            },
            ProcessType::TransportEnd => (tx.transport_ref.ok_or_else(unknown)?, tx),
            _ => return Err(unknown()),
        };
        let Some(series) = &end.sensor_series else {
            return Ok(StatusCode::NO_CONTENT.into_response());
        };
        let policy = policy(c);
        Ok(Json(TemperatureView {
            lot: lot.clone(),
            transport_start: start,
            transport_end: end.tx_id,
            sensor_id: series.sensor_id().to_owned(),
            samples: series.samples().to_vec(),
            report: evaluate_compliance(series, &policy),
            policy,
        })
        .into_response())
    })
}

fn find_block<'a>(c: &'a ChainState, id: &str) -> Result<&'a biotrak_core::Block, ApiError> {
    let missing = || ApiError::not_found("unknown-block", format!("no block {id}"));
    if !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()) {
        let h: u64 = id.parse().map_err(|_| missing())?;
        return c.block_at(h).ok_or_else(missing);
    }
    let hash: Digest = id
        .parse()
        .map_err(|_| ApiError::bad_request("invalid-id", format!("{id:?} is neither a height nor a hash")))?;
    c.block_by_hash(&hash).ok_or_else(missing)
}

async fn block<L: Ledger>(State(st): Shared<L>, Path(id): Path<String>) -> Result<Json<BlockView>, ApiError> {
    st.ledger.read(|c| {
        let b = find_block(c, &id)?;
        let bytes = b
            .canonical_bytes()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
        Ok(Json(BlockView {
            height: b.height(),
            block_hash: b.block_hash,
            canonical_bytes: STANDARD.encode(bytes),
            block: b.clone(),
        }))
    })
}

async fn head<L: Ledger>(State(st): Shared<L>) -> Json<HeadView> {
    let mode = st.ledger.mode();
    st.ledger.read(|c| {
        let h = c.head();
        Json(HeadView {
            chain_id: c.chain_id(),
            chain_name: c.info().chain_name.clone(),
            height: h.height(),
            block_hash: h.block_hash,
            timestamp: h.header.timestamp,
            mode: mode.as_str().to_owned(),
            authorities: c.info().authorities.len(),
        })
    })
}

async fn lot_code<L: Ledger>(State(st): Shared<L>, Path(code): Path<String>) -> Result<Json<CodeView>, ApiError> {
    let lot = parse_lot(&code)?;
    st.ledger.read(|c| {
        let idx = &c.trace().index;
        if !idx.by_output.contains_key(&lot) && !idx.by_reference.contains_key(&lot) {
            return Err(ApiError::not_found("unknown-lot", format!("lot {lot} is unknown")));
        }
        let payload = encode_payload(&CodePayload::Lot { lot: lot.clone(), chain_hint: c.chain_id().hint() });
        Ok(Json(CodeView { lot, payload }))
    })
}

async fn actor<L: Ledger>(State(st): Shared<L>, Path(fp): Path<String>) -> Result<Json<ActorView>, ApiError> {
    let id: Fingerprint =
        fp.parse().map_err(|_| ApiError::bad_request("invalid-id", format!("{fp:?} is not a fingerprint")))?;
    st.ledger.read(|c| {
        let a = c
            .info()
            .actors
            .get(&id)
            .ok_or_else(|| ApiError::not_found("unknown-actor", format!("actor {id} is not registered")))?;
        Ok(Json(ActorView {
            actor_id: a.actor_id,
            display_name: a.display_name.clone(),
            roles: a.roles.iter().copied().collect(),
        }))
    })
}

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use nalgebra::DVector;
use serde_json::json;
use sha2::{Digest, Sha256};

use recourse_core::data::{read_csv, synth, Dataset, LoadReport};
use recourse_core::models::{refit_head, train, ModelFile};
use recourse_core::pipeline::Method;
use recourse_core::rashomon::Provenance;
use recourse_core::recourse::{
    generate_continuous, generate_mixed, generate_sparse, BinaryTarget, CandidateIndex, ContinuousConfig,
    Counterfactual, MixedConfig, RecourseConstraints, RobustTarget, SearchDistance, Source,
};
use recourse_core::{Model, RashomonEllipsoid};

use crate::api::*;
use crate::error::{parse, ApiError};
use crate::session::{AppState, DatasetArtifact, EllipsoidArtifact, ModelArtifact, Snapshot};

type Reply<T> = Result<Json<T>, ApiError>;

fn internal(message: String) -> ApiError {
    ApiError::new(
        StatusCode::INTERNAL_SERVER_ERROR,
        "internal",
        message,
        serde_json::Value::Null,
    )
}

/// Run CPU-bound work off the async runtime.
async fn offload<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| internal(e.to_string()))?
}

/// As [`offload`], bounded by the configured timeout.
async fn bounded<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let limit = state.config.timeout;
    match tokio::time::timeout(limit, tokio::task::spawn_blocking(f)).await {
        Err(_) => Err(ApiError::timeout(limit.as_secs_f64())),
        Ok(joined) => joined.map_err(|e| internal(e.to_string()))?,
    }
}

fn model_kind(m: &Model) -> &'static str {
    match m {
        Model::Linear(_) => "linear",
        Model::Mlp(_) => "mlp",
    }
}

fn check_epsilon(v: f64, path: &str) -> Result<f64, ApiError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(ApiError::field(
            path,
            format!("ε must be finite and non-negative, got {v}"),
        ))
    }
}

/// The referenced point in model units.
fn resolve_point(p: &PointRef, ds: &Dataset, path: &str) -> Result<DVector<f64>, ApiError> {
    let mut x = match (&p.x, p.row) {
        (Some(x), None) => {
            if x.len() != ds.d() {
                return Err(ApiError::field(
                    &format!("{path}.x"),
                    format!("expected {} features, got {}", ds.d(), x.len()),
                ));
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(ApiError::field(&format!("{path}.x"), "coordinates must be finite"));
            }
            DVector::from_column_slice(x)
        }
        (None, Some(r)) => {
            if r >= ds.n() {
                return Err(ApiError::field(
                    &format!("{path}.row"),
                    format!("row {r} out of range for {} rows", ds.n()),
                ));
            }
            return Ok(ds.row(r));
        }
        _ => return Err(ApiError::field(path, "give exactly one of `x` and `row`")),
    };
    if p.units == Units::Raw {
        if let Some(s) = &ds.scaler {
            s.transform_row(&mut x);
        }
    }
    Ok(x)
}

fn in_units(x: &DVector<f64>, units: Units, ds: &Dataset) -> Vec<f64> {
    let mut v = x.clone();
    if units == Units::Raw {
        if let Some(s) = &ds.scaler {
            s.inverse_row(&mut v);
        }
    }
    v.iter().copied().collect()
}

fn join(path: &str, tail: &str) -> String {
    if path.is_empty() {
        tail.to_string()
    } else {
        format!("{path}.{tail}")
    }
}

fn build_constraints(
    draft: Option<&ConstraintDraft>,
    ds: &Dataset,
    path: &str,
) -> Result<RecourseConstraints, ApiError> {
    let Some(draft) = draft else {
        return Ok(RecourseConstraints::free(&ds.specs));
    };
    let mut cons = if draft.use_schema {
        RecourseConstraints::from_specs(&ds.specs)
    } else {
        RecourseConstraints::free(&ds.specs)
    };
    for (name, fc) in &draft.features {
        let Some(j) = ds.specs.iter().position(|s| &s.name == name) else {
            return Err(ApiError::field(
                &join(path, &format!("features.{name}")),
                format!("unknown feature `{name}`"),
            ));
        };
        let conv = |v: f64| match (&ds.scaler, draft.units) {
            (Some(s), Units::Raw) => s.to_standard(j, v),
            _ => v,
        };
        let slot = &mut cons.features[j];
        slot.immutable = fc.immutable;
        slot.lower = fc.lower.map(conv).or(slot.lower);
        slot.upper = fc.upper.map(conv).or(slot.upper);
        slot.direction = fc.direction;
    }
    if !(draft.sparsity_weight >= 0.0 && draft.sparsity_weight.is_finite()) {
        return Err(ApiError::field(
            &join(path, "sparsity_weight"),
            "sparsity weight must be finite and non-negative",
        ));
    }
    cons.sparsity_weight = draft.sparsity_weight;
    cons.validate()
        .map_err(|e| ApiError::field(if path.is_empty() { "features" } else { path }, e.to_string()))?;
    Ok(cons)
}

struct Job {
    model: Arc<ModelArtifact>,
    dataset: Arc<DatasetArtifact>,
    x0: DVector<f64>,
    cons: RecourseConstraints,
    method: Method,
    distance: SearchDistance,
    t: f64,
    continuous: ContinuousConfig,
    mixed: MixedConfig,
}

impl Job {
    /// A robust `x0` is returned unchanged by every method.
    fn run(&self, ell: &RashomonEllipsoid) -> recourse_core::Result<Counterfactual> {
        let target = BinaryTarget::new(&self.model.model, ell, self.t)?;
        let x0 = &self.x0;
        let specs = &self.cons.specs;
        if target.certified(x0)? {
            let source = match self.method {
                Method::DataSupported => Source::DataSupported,
                Method::Continuous => Source::Continuous,
                Method::Sparse => Source::Sparse,
                Method::Mixed => Source::Mixed,
            };
            return Counterfactual::assess(&target, x0, x0.clone(), specs, 0, source);
        }
        match self.method {
            Method::DataSupported => CandidateIndex::build(&target, &self.dataset.ds.x)?.counterfactual(
                &target,
                x0,
                &self.cons,
                self.distance,
            ),
            Method::Continuous => generate_continuous(&target, x0, &self.continuous, &self.cons),
            Method::Sparse => generate_sparse(&target, x0, &self.continuous, &self.cons),
            Method::Mixed => generate_mixed(&target, x0, &self.continuous, &self.mixed, &self.cons),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn job(
    snap: &Snapshot,
    point: &PointRef,
    constraints: Option<&ConstraintDraft>,
    method: Method,
    distance: SearchDistance,
    t: Option<f64>,
    continuous: ContinuousConfig,
    mixed: MixedConfig,
) -> Result<Job, ApiError> {
    let ds = &snap.dataset.ds;
    continuous
        .validate()
        .map_err(|e| ApiError::field("continuous", e.to_string()))?;
    let x0 = resolve_point(point, ds, "x0")?;
    let draft = constraints.or(snap.draft.as_ref());
    let cons = build_constraints(draft, ds, "constraints")?;
    cons.bind(&x0)
        .map_err(|e| ApiError::field("constraints", e.to_string()))?;
    let t = t.unwrap_or_else(|| snap.model.model.threshold());
    if !t.is_finite() {
        return Err(ApiError::field("t", "threshold must be finite"));
    }
    Ok(Job {
        model: snap.model.clone(),
        dataset: snap.dataset.clone(),
        x0,
        cons,
        method,
        distance,
        t,
        continuous,
        mixed,
    })
}

fn ellipsoid_id(ell: &RashomonEllipsoid) -> String {
    hex::encode(Sha256::digest(ell.to_json().as_bytes()))
}

pub async fn create_session(State(state): State<AppState>) -> (StatusCode, Json<SessionCreated>) {
    let session_id = state.create();
    log::info!("session {session_id} created");
    (StatusCode::CREATED, Json(SessionCreated { session_id }))
}

pub async fn post_dataset(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<DatasetResponse> {
    state.get(&id)?;
    let req: DatasetRequest = parse(&body)?;
    let art = offload(move || {
        let (ds, report) = match req.source {
            DataSourceBody::Csv { text, schema } => {
                schema
                    .validate()
                    .map_err(|e| ApiError::field("source.schema", e.to_string()))?;
                read_csv(text.as_bytes(), &schema)?
            }
            DataSourceBody::SyntheticCredit { rows, seed } => read_csv(
                synth::german_credit_csv(rows, seed).as_bytes(),
                &synth::german_credit_schema(),
            )?,
            DataSourceBody::Rows { rows, labels } => {
                if rows.is_empty() {
                    return Err(ApiError::field("source.rows", "no rows given"));
                }
                let n = rows.len();
                (
                    Dataset::from_rows(&rows, labels)?,
                    LoadReport {
                        rows_read: n,
                        rows_dropped: 0,
                    },
                )
            }
        };
        let ds = if req.balance { ds.balance(req.balance_seed) } else { ds };
        if ds.n() == 0 {
            return Err(ApiError::field("source", "dataset has no usable rows"));
        }
        let all: Vec<usize> = (0..ds.n()).collect();
        let ds = ds.preprocess(&all)?;
        Ok(DatasetArtifact {
            id: ds.content_hash(),
            ds,
            report,
        })
    })
    .await?;
    let resp = DatasetResponse {
        dataset_id: art.id.clone(),
        rows: art.ds.n(),
        features: art.ds.d(),
        class_counts: art.ds.class_counts(),
        load: art.report,
    };
    state.with(&id, |s| {
        s.dataset = Some(Arc::new(art));
        s.model = None;
        s.ellipsoid = None;
        s.draft = None;
        Ok(())
    })?;
    Ok(Json(resp))
}

pub async fn post_train(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply<TrainResponse> {
    let dataset = state.with(&id, |s| s.dataset())?;
    let req: TrainRequest = parse(&body)?;
    let (art, resp) = offload(move || {
        let ds = &dataset.ds;
        let (model, iterations, grad_norm) = match req.model {
            Some(file) => {
                if file.model.input_dim() != ds.d() {
                    return Err(ApiError::field(
                        "model",
                        format!(
                            "model expects {} features, dataset has {}",
                            file.model.input_dim(),
                            ds.d()
                        ),
                    ));
                }
                (file.model, None, None)
            }
            None => {
                req.config
                    .validate()
                    .map_err(|e| ApiError::field("config", e.to_string()))?;
                let t = train(ds, &req.config)?;
                (t.model, Some(t.iterations), Some(t.grad_norm))
            }
        };
        let model = if req.refit_head { refit_head(&model, ds, &req.config)? } else { model };
        let objective = model.objective(ds)?;
        let resp = TrainResponse {
            model_id: model.id(),
            kind: model_kind(&model).to_string(),
            objective,
            iterations,
            grad_norm,
        };
        let art = ModelArtifact {
            id: resp.model_id.clone(),
            model,
            objective,
            dataset_id: dataset.id.clone(),
        };
        Ok((art, resp))
    })
    .await?;
    state.with(&id, |s| {
        if s.dataset.as_ref().map(|d| &d.id) != Some(&art.dataset_id) {
            return Err(ApiError::missing("dataset the model was trained on"));
        }
        s.model = Some(Arc::new(art));
        s.ellipsoid = None;
        Ok(())
    })?;
    Ok(Json(resp))
}

pub async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> Reply<ModelFile> {
    let snap = state.with(&id, |s| s.snapshot())?;
    let mut file = ModelFile::new(snap.model.model.clone());
    file.scaler = snap.dataset.ds.scaler.clone();
    file.dataset_hash = Some(snap.dataset.id.clone());
    file.final_objective = Some(snap.model.objective);
    Ok(Json(file))
}

pub async fn post_ellipsoid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<EllipsoidResponse> {
    let snap = state.with(&id, |s| s.snapshot())?;
    let req: EllipsoidRequest = parse(&body)?;
    let base = snap.model.objective;
    let epsilon = match (req.epsilon, req.epsilon_relative) {
        (Some(e), None) => check_epsilon(e, "epsilon")?,
        (None, Some(r)) => check_epsilon(r, "epsilon_relative")? * base,
        _ => {
            return Err(ApiError::field(
                "epsilon",
                "give exactly one of `epsilon` and `epsilon_relative`",
            ))
        }
    };
    let (model, dataset) = (snap.model.clone(), snap.dataset.clone());
    let art = offload(move || {
        let mut ell = RashomonEllipsoid::build(&model.model, &dataset.ds, epsilon)?;
        ell.set_provenance(Provenance {
            model_id: Some(model.id.clone()),
            dataset_hash: Some(dataset.id.clone()),
        });
        Ok(EllipsoidArtifact {
            id: ellipsoid_id(&ell),
            ell,
        })
    })
    .await?;
    let resp = EllipsoidResponse {
        ellipsoid_id: art.id.clone(),
        epsilon,
        alpha: art.ell.alpha(),
        dim: art.ell.dim(),
        base_objective: base,
    };
    let model_id = snap.model.id.clone();
    state.with(&id, |s| {
        if s.model.as_ref().map(|m| &m.id) != Some(&model_id) {
            return Err(ApiError::missing("model the ellipsoid was built for"));
        }
        s.ellipsoid = Some(Arc::new(art));
        Ok(())
    })?;
    Ok(Json(resp))
}

pub async fn get_ellipsoid(State(state): State<AppState>, Path(id): Path<String>) -> Reply<RashomonEllipsoid> {
    let snap = state.with(&id, |s| s.snapshot())?;
    Ok(Json(snap.ellipsoid()?.ell.clone()))
}

pub async fn post_constraints(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<ConstraintDraft> {
    let draft: ConstraintDraft = parse(&body)?;
    state.with(&id, |s| {
        build_constraints(Some(&draft), &s.dataset()?.ds, "")?;
        s.draft = Some(draft.clone());
        Ok(())
    })?;
    Ok(Json(draft))
}

pub async fn post_recourse(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<RecourseResponse> {
    let snap = state.with(&id, |s| s.snapshot())?;
    let req: RecourseRequest = parse(&body)?;
    let art = snap.ellipsoid()?;
    let j = job(
        &snap,
        &req.x0,
        req.constraints.as_ref(),
        req.method,
        req.distance,
        req.t,
        req.continuous,
        req.mixed,
    )?;
    let eps_override = req.epsilon.map(|e| check_epsilon(e, "epsilon")).transpose()?;
    let units = req.x0.units;
    let (ce, epsilon, ellipsoid_id) = bounded(&state, move || {
        let (ce, eps, ell_id) = match eps_override {
            Some(e) => {
                let ell = art.ell.with_epsilon(e)?;
                let id = ellipsoid_id(&ell);
                (j.run(&ell)?, e, id)
            }
            None => (j.run(&art.ell)?, art.ell.epsilon(), art.id.clone()),
        };
        Ok((ce, eps, ell_id))
    })
    .await?;
    let ds = &snap.dataset.ds;
    Ok(Json(RecourseResponse {
        status: if ce.certified {
            Status::Certified
        } else {
            Status::NotCertified
        },
        flag: (!ce.certified).then(|| "not_certified".to_string()),
        epsilon,
        ellipsoid_id,
        units,
        x_c: in_units(&ce.x_c, units, ds),
        counterfactual: ce,
    }))
}

pub async fn post_certify(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Reply<CertifyResponse> {
    let snap = state.with(&id, |s| s.snapshot())?;
    let req: CertifyRequest = parse(&body)?;
    let art = snap.ellipsoid()?;
    let x = resolve_point(&req.x, &snap.dataset.ds, "x")?;
    let threshold = req.t.unwrap_or_else(|| snap.model.model.threshold());
    let eps_override = req.epsilon.map(|e| check_epsilon(e, "epsilon")).transpose()?;
    let model = snap.model.clone();
    bounded(&state, move || {
        let (ell, ellipsoid_id) = match eps_override {
            Some(e) => {
                let ell = art.ell.with_epsilon(e)?;
                let id = ellipsoid_id(&ell);
                (ell, id)
            }
            None => (art.ell.clone(), art.id.clone()),
        };
        let wc = ell.worst_case(&model.model.lift(&x)?)?;
        Ok(Json(CertifyResponse {
            robust: wc.robust_logit >= threshold,
            robust_logit: wc.robust_logit,
            nominal_logit: wc.nominal_logit,
            threshold,
            epsilon: ell.epsilon(),
            ellipsoid_id,
            x_model: x.iter().copied().collect(),
        }))
    })
    .await
}

pub async fn post_sweep(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Reply<SweepResponse> {
    let snap = state.with(&id, |s| s.snapshot())?;
    let req: SweepRequest = parse(&body)?;
    let art = snap.ellipsoid()?;
    if req.epsilons.is_empty() {
        return Err(ApiError::field("epsilons", "ε list is empty"));
    }
    for (i, &e) in req.epsilons.iter().enumerate() {
        check_epsilon(e, &format!("epsilons[{i}]"))?;
    }
    if req.epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ApiError::field("epsilons", "ε list must be strictly ascending"));
    }
    let j = job(
        &snap,
        &req.x0,
        req.constraints.as_ref(),
        req.method,
        req.distance,
        req.t,
        req.continuous,
        req.mixed,
    )?;
    let scale = if req.relative { snap.model.objective } else { 1.0 };
    let units = req.x0.units;
    let linear = matches!(snap.model.model, Model::Linear(_));
    let dataset = snap.dataset.clone();
    let epsilons = req.epsilons.clone();
    let results = bounded(&state, move || {
        let mut out = Vec::with_capacity(epsilons.len());
        for &e in &epsilons {
            let eps = e * scale;
            let res = art.ell.with_epsilon(eps).and_then(|ell| j.run(&ell));
            out.push(match res {
                Ok(ce) => SweepPoint {
                    epsilon: eps,
                    status: if ce.certified {
                        Status::Certified
                    } else {
                        Status::NotCertified
                    },
                    l2: Some(ce.l2),
                    robust_logit: Some(ce.robust_logit),
                    x_c: Some(in_units(&ce.x_c, units, &dataset.ds)),
                    error: None,
                },
                Err(err) => SweepPoint {
                    epsilon: eps,
                    status: Status::Error,
                    l2: None,
                    robust_logit: None,
                    x_c: None,
                    error: Some(ApiError::from(err).body),
                },
            });
        }
        Ok(out)
    })
    .await?;
    if results.iter().all(|r| r.status != Status::Certified) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no_recourse",
            "no ε in the sweep produced a certified counterfactual",
            json!({ "results": results }),
        ));
    }
    let mut anomalies = Vec::new();
    if linear && req.method == Method::Continuous {
        let done: Vec<&SweepPoint> = results.iter().filter(|r| r.status == Status::Certified).collect();
        for w in done.windows(2) {
            let (a, b) = (w[0].l2.unwrap_or(0.0), w[1].l2.unwrap_or(0.0));
            if b < a - 1e-9 * (1.0 + a) {
                let msg = format!(
                    "ℓ2 fell from {a} at ε = {} to {b} at ε = {}",
                    w[0].epsilon, w[1].epsilon
                );
                log::warn!("sweep anomaly in session {id}: {msg}");
                anomalies.push(msg);
            }
        }
    }
    Ok(Json(SweepResponse {
        units,
        results,
        anomalies,
    }))
}

pub async fn get_schema(State(state): State<AppState>, Path(id): Path<String>) -> Reply<SchemaResponse> {
    let (dataset, model, ellipsoid, draft) = state.with(&id, |s| {
        Ok((s.dataset()?, s.model.clone(), s.ellipsoid.clone(), s.draft.clone()))
    })?;
    Ok(Json(SchemaResponse {
        dataset_id: dataset.id.clone(),
        features: dataset.ds.specs.clone(),
        scaler: dataset.ds.scaler.clone(),
        model: model.map(|m| ModelSummary {
            model_id: m.id.clone(),
            kind: model_kind(&m.model).to_string(),
            threshold: m.model.threshold(),
        }),
        ellipsoid: ellipsoid.map(|e| EllipsoidSummary {
            ellipsoid_id: e.id.clone(),
            epsilon: e.ell.epsilon(),
        }),
        draft,
        constraint_fields: ["immutable", "lower", "upper", "direction"].map(String::from).to_vec(),
        directions: ["non_decreasing", "non_increasing"].map(String::from).to_vec(),
        methods: [Method::DataSupported, Method::Continuous, Method::Sparse, Method::Mixed]
            .map(|m| m.name().to_string())
            .to_vec(),
    }))
}

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use recourse_core::data::{Dataset, LoadReport};
use recourse_core::{Model, RashomonEllipsoid};

use crate::api::ConstraintDraft;
use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Limit on each generation, certification or sweep request.
    pub timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug)]
pub struct DatasetArtifact {
    pub id: String,
    /// Standardized on all rows.
    pub ds: Dataset,
    pub report: LoadReport,
}

#[derive(Debug)]
pub struct ModelArtifact {
    pub id: String,
    pub model: Model,
    pub objective: f64,
    pub dataset_id: String,
}

#[derive(Debug)]
pub struct EllipsoidArtifact {
    pub id: String,
    pub ell: RashomonEllipsoid,
}

#[derive(Debug, Default)]
pub struct Session {
    pub dataset: Option<Arc<DatasetArtifact>>,
    pub model: Option<Arc<ModelArtifact>>,
    pub ellipsoid: Option<Arc<EllipsoidArtifact>>,
    pub draft: Option<ConstraintDraft>,
}

/// Shared artifacts of a session, checked for consistency.
pub struct Snapshot {
    pub dataset: Arc<DatasetArtifact>,
    pub model: Arc<ModelArtifact>,
    pub ellipsoid: Option<Arc<EllipsoidArtifact>>,
    pub draft: Option<ConstraintDraft>,
}

impl Session {
    pub fn dataset(&self) -> Result<Arc<DatasetArtifact>, ApiError> {
        self.dataset.clone().ok_or_else(|| ApiError::missing("dataset"))
    }

    pub fn snapshot(&self) -> Result<Snapshot, ApiError> {
        let dataset = self.dataset()?;
        let model = self.model.clone().ok_or_else(|| ApiError::missing("model"))?;
        if model.dataset_id != dataset.id {
            return Err(ApiError::missing("model for the current dataset"));
        }
        if let Some(e) = &self.ellipsoid {
            let p = e.ell.provenance();
            if p.model_id.as_deref() != Some(&model.id) || p.dataset_hash.as_deref() != Some(&dataset.id) {
                return Err(ApiError::missing("ellipsoid for the current model"));
            }
        }
        Ok(Snapshot {
            dataset,
            model,
            ellipsoid: self.ellipsoid.clone(),
            draft: self.draft.clone(),
        })
    }
}

impl Snapshot {
    pub fn ellipsoid(&self) -> Result<Arc<EllipsoidArtifact>, ApiError> {
        self.ellipsoid.clone().ok_or_else(|| ApiError::missing("ellipsoid"))
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    pub fn create(&self) -> String {
        let id = hex::encode(rand::random::<u128>().to_be_bytes());
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id.clone(), Arc::default());
        id
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Run `f` against the session under its lock.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let s = self.get(id)?;
        let mut guard = s.lock().expect("session poisoned");
        f(&mut guard)
    }
}

//! Uniform access to the external models: object detectors, VQA models,
//! captioners and the planning LLM.
//!
//! Every backend speaks the same request/response shape ([`ModelRequest`],
//! [`ModelResponse`]). A [`Gateway`] groups backends by [`Role`] and fuses
//! the outputs of several backends for the same role when ensembling is on.

mod ensemble;
mod fixture;
mod http;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::coerce;
use crate::value::{BBox, ImageRef};

pub use ensemble::{fuse_detections, majority_vote, Cluster, EnsembleConfig};
pub use fixture::{
    normalize_query, FixtureBackend, FixtureError, FixtureKey, FixtureStore, RecordingBackend,
};
pub use http::{network_calls, HttpBackend, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Detector,
    Vqa,
    Caption,
    Llm,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Detector, Role::Vqa, Role::Caption, Role::Llm];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Detector => "detector",
            Role::Vqa => "vqa",
            Role::Caption => "caption",
            Role::Llm => "llm",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown backend role '{s}'"))
    }
}

/// One call to a model backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: Role,
    /// Image handle id; empty for text-only calls.
    #[serde(default)]
    pub image: String,
    /// Path or URL of the root image, forwarded to HTTP backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<[u32; 4]>,
    /// Object name, question, or prompt.
    pub query: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, String>,
}

impl ModelRequest {
    pub fn text(role: Role, query: impl Into<String>) -> Self {
        Self {
            role,
            image: String::new(),
            image_url: None,
            region: None,
            query: query.into(),
            flags: BTreeMap::new(),
        }
    }

    pub fn on_image(role: Role, image: &ImageRef, query: impl Into<String>) -> Self {
        Self {
            role,
            image: image.id.clone(),
            image_url: Some(image.origin.clone().unwrap_or_else(|| image.id.clone())),
            region: image.region,
            query: query.into(),
            flags: BTreeMap::new(),
        }
    }
}

/// Detection as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<RawDetection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ModelResponse {
    pub fn detections(detections: Vec<RawDetection>) -> Self {
        Self {
            detections: Some(detections),
            ..Self::default()
        }
    }

    pub fn answer(answer: impl Into<String>) -> Self {
        Self {
            answers: Some(vec![answer.into()]),
            ..Self::default()
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Self::default()
        }
    }
}

/// A box found by one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: String,
    pub source_backend: String,
}

impl Detection {
    pub fn score(&self) -> f64 {
        self.bbox.score
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("backend {backend} unavailable: {reason}")]
    Unavailable { backend: String, reason: String },
    #[error("no recorded response in {backend} for key {key}")]
    FixtureMiss { backend: String, key: String },
    #[error("backend {backend} returned an unusable response: {reason}")]
    InvalidResponse { backend: String, reason: String },
    #[error("no {0} backend configured")]
    NotConfigured(Role),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

impl GatewayError {
    pub fn is_fixture_miss(&self) -> bool {
        matches!(self, GatewayError::FixtureMiss { .. })
    }

    fn invalid(backend: &str, reason: impl Into<String>) -> Self {
        GatewayError::InvalidResponse {
            backend: backend.to_string(),
            reason: reason.into(),
        }
    }
}

/// Anything that can answer a [`ModelRequest`]. Implementations must tolerate
/// concurrent calls.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendImpl {
    Fixture,
    Http,
}

/// Configuration of one backend slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub role: Role,
    #[serde(rename = "impl")]
    pub implementation: BackendImpl,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Fixture file; defaults to `<fixtures dir>/<name>.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    /// Lower numbers win vote ties.
    #[serde(default)]
    pub priority: u32,
}

impl BackendSpec {
    pub fn fixture(role: Role, name: impl Into<String>, priority: u32) -> Self {
        Self {
            role,
            implementation: BackendImpl::Fixture,
            name: name.into(),
            endpoint: None,
            fixture: None,
            priority,
        }
    }
}

/// What the gateway does when a replay store has no entry for a request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissPolicy {
    /// Report a [`GatewayError::FixtureMiss`].
    #[default]
    Fatal,
    /// Treat the backend as unavailable so callers can degrade.
    Unavailable,
}

/// One backend's contribution to an ensembled call, kept for traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub backend: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    /// Sorted by score, descending.
    pub boxes: Vec<BBox>,
    pub votes: Vec<Vote>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutcome {
    pub answer: String,
    pub votes: Vec<Vote>,
}

struct Member {
    spec: BackendSpec,
    backend: Arc<dyn Backend>,
}

/// Role-indexed collection of backends. Cheap to share across threads.
pub struct Gateway {
    members: BTreeMap<Role, Vec<Member>>,
    ensemble: EnsembleConfig,
    use_ensemble: bool,
    miss_policy: MissPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: BTreeMap<_, Vec<_>> = self
            .members
            .iter()
            .map(|(role, ms)| (role, ms.iter().map(|m| m.spec.name.as_str()).collect()))
            .collect();
        f.debug_struct("Gateway")
            .field("members", &names)
            .field("ensemble", &self.ensemble)
            .field("use_ensemble", &self.use_ensemble)
            .field("miss_policy", &self.miss_policy)
            .finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self {
            members: BTreeMap::new(),
            ensemble: EnsembleConfig::default(),
            use_ensemble: true,
            miss_policy: MissPolicy::Fatal,
        }
    }

    pub fn with_backend(mut self, spec: BackendSpec, backend: Arc<dyn Backend>) -> Self {
        self.add_backend(spec, backend);
        self
    }

    pub fn add_backend(&mut self, spec: BackendSpec, backend: Arc<dyn Backend>) {
        let slot = self.members.entry(spec.role).or_default();
        slot.push(Member { spec, backend });
        slot.sort_by(|a, b| {
            a.spec
                .priority
                .cmp(&b.spec.priority)
                .then_with(|| a.spec.name.cmp(&b.spec.name))
        });
    }

    pub fn with_ensemble(mut self, config: EnsembleConfig, enabled: bool) -> Self {
        self.ensemble = config;
        self.use_ensemble = enabled;
        self
    }

    pub fn with_miss_policy(mut self, policy: MissPolicy) -> Self {
        self.miss_policy = policy;
        self
    }

    pub fn backend_names(&self, role: Role) -> Vec<&str> {
        self.members
            .get(&role)
            .map(|ms| ms.iter().map(|m| m.spec.name.as_str()).collect())
            .unwrap_or_default()
    }

    /// Backends consulted for `role`: all of them when ensembling, otherwise
    /// the highest-priority one.
    fn active(&self, role: Role) -> Result<&[Member], GatewayError> {
        let members = self
            .members
            .get(&role)
            .filter(|ms| !ms.is_empty())
            .ok_or(GatewayError::NotConfigured(role))?;
        Ok(if self.use_ensemble {
            members
        } else {
            &members[..1]
        })
    }

    fn call(&self, member: &Member, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        match member.backend.call(request) {
            Err(GatewayError::FixtureMiss { backend, key })
                if self.miss_policy == MissPolicy::Unavailable =>
            {
                Err(GatewayError::Unavailable {
                    backend,
                    reason: format!("no recorded response for {key}"),
                })
            }
            other => other,
        }
    }

    /// Calls every active member, skipping unavailable ones. Fails when all
    /// are unavailable; any other error aborts.
    fn call_all(
        &self,
        role: Role,
        request: &ModelRequest,
    ) -> Result<Vec<(&Member, ModelResponse)>, GatewayError> {
        let members = self.active(role)?;
        let mut ok = Vec::with_capacity(members.len());
        let mut last_unavailable = None;
        for member in members {
            match self.call(member, request) {
                Ok(resp) => ok.push((member, resp)),
                Err(err @ GatewayError::Unavailable { .. }) => last_unavailable = Some(err),
                Err(err) => return Err(err),
            }
        }
        match (ok.is_empty(), last_unavailable) {
            (true, Some(err)) => Err(err),
            _ => Ok(ok),
        }
    }

    /// Single-backend detection: boxes labelled `object`, clamped to the
    /// image, sorted by score descending.
    fn detections_from(
        member: &Member,
        image: &ImageRef,
        object: &str,
        resp: ModelResponse,
    ) -> Result<Vec<Detection>, GatewayError> {
        let name = member.spec.name.as_str();
        let raw = resp
            .detections
            .ok_or_else(|| GatewayError::invalid(name, "response has no detections"))?;
        let wanted = normalize_query(object);
        let mut out = Vec::with_capacity(raw.len());
        for det in raw {
            if let Some(label) = &det.label {
                if normalize_query(label) != wanted {
                    continue;
                }
            }
            let bbox = match BBox::clamped(det.bbox, det.score, image.width, image.height) {
                Ok(b) => b,
                Err(crate::value::BoxError::Degenerate { .. }) => continue,
                Err(err) => return Err(GatewayError::invalid(name, err.to_string())),
            };
            out.push(Detection {
                bbox,
                label: object.to_string(),
                source_backend: name.to_string(),
            });
        }
        out.sort_by(|a, b| b.score().total_cmp(&a.score()));
        Ok(out)
    }

    pub fn detect(&self, image: &ImageRef, object: &str) -> Result<DetectOutcome, GatewayError> {
        let request = ModelRequest::on_image(Role::Detector, image, object);
        let responses = self.call_all(Role::Detector, &request)?;
        let mut per_backend = Vec::with_capacity(responses.len());
        let mut votes = Vec::with_capacity(responses.len());
        for (member, resp) in responses {
            let dets = Self::detections_from(member, image, object, resp)?;
            votes.push(Vote {
                backend: member.spec.name.clone(),
                output: crate::value::Value::BoxArray(dets.iter().map(|d| d.bbox).collect())
                    .to_string(),
            });
            per_backend.push(dets);
        }
        let boxes = if per_backend.len() == 1 {
            per_backend.remove(0).into_iter().map(|d| d.bbox).collect()
        } else {
            let n = per_backend.len() as f64;
            let all: Vec<Detection> = per_backend.into_iter().flatten().collect();
            fuse_detections(&all, &self.ensemble)
                .into_iter()
                .map(|c| BBox {
                    score: (c.score_sum / n).min(1.0),
                    ..c.representative.bbox
                })
                .collect()
        };
        Ok(DetectOutcome { boxes, votes })
    }

    pub fn answer(&self, image: &ImageRef, question: &str) -> Result<AnswerOutcome, GatewayError> {
        let request = ModelRequest::on_image(Role::Vqa, image, question);
        let responses = self.call_all(Role::Vqa, &request)?;
        let mut ballots = Vec::with_capacity(responses.len());
        for (member, resp) in responses {
            let answer = resp
                .answers
                .and_then(|a| a.into_iter().next())
                .or(resp.text)
                .ok_or_else(|| {
                    GatewayError::invalid(&member.spec.name, "response has no answer")
                })?;
            ballots.push((member.spec.priority, member.spec.name.clone(), answer));
        }
        let votes = ballots
            .iter()
            .map(|(_, backend, answer)| Vote {
                backend: backend.clone(),
                output: answer.clone(),
            })
            .collect();
        let answer = if ballots.len() == 1 {
            ballots.remove(0).2
        } else {
            let pairs: Vec<(u32, String)> = ballots.into_iter().map(|(p, _, a)| (p, a)).collect();
            majority_vote(&pairs).unwrap_or_default()
        };
        Ok(AnswerOutcome { answer, votes })
    }

    fn first_text(&self, role: Role, request: &ModelRequest) -> Result<String, GatewayError> {
        let members = self.active(role)?;
        let mut last_unavailable = None;
        for member in members {
            match self.call(member, request) {
                Ok(resp) => {
                    return resp
                        .text
                        .or_else(|| resp.answers.and_then(|a| a.into_iter().next()))
                        .ok_or_else(|| {
                            GatewayError::invalid(&member.spec.name, "response has no text")
                        })
                }
                Err(err @ GatewayError::Unavailable { .. }) => last_unavailable = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(last_unavailable.unwrap_or(GatewayError::NotConfigured(role)))
    }

    /// Caption from the highest-priority captioner that responds.
    pub fn caption(&self, image: &ImageRef) -> Result<String, GatewayError> {
        self.first_text(
            Role::Caption,
            &ModelRequest::on_image(Role::Caption, image, ""),
        )
    }

    /// Completion from the highest-priority LLM that responds.
    pub fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        self.first_text(Role::Llm, &ModelRequest::text(Role::Llm, prompt))
    }

    /// Completion from the LLM backend called `name`, or from the default
    /// one when `name` is `None`.
    pub fn complete_with(&self, prompt: &str, name: Option<&str>) -> Result<String, GatewayError> {
        let Some(name) = name else {
            return self.complete(prompt);
        };
        let member = self
            .members
            .get(&Role::Llm)
            .and_then(|ms| ms.iter().find(|m| m.spec.name == name))
            .ok_or(GatewayError::NotConfigured(Role::Llm))?;
        let resp = self.call(member, &ModelRequest::text(Role::Llm, prompt))?;
        resp.text
            .or_else(|| resp.answers.and_then(|a| a.into_iter().next()))
            .ok_or_else(|| GatewayError::invalid(name, "response has no text"))
    }
}

/// Normalized form used for answer comparison and voting: trimmed, lowercase,
/// trailing periods dropped, and `yes`/`no` in canonical spelling.
pub fn normalize_answer(answer: &str) -> String {
    let lowered = answer
        .trim()
        .trim_end_matches('.')
        .trim_end()
        .to_lowercase();
    match coerce(&lowered) {
        crate::expr::CoercedValue::Boolean(b) => if b { "yes" } else { "no" }.to_string(),
        _ => lowered,
    }
}

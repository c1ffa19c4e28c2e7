//! Client for an external model behind a chat-completion endpoint.
//!
//! Request: `POST {base_url}/chat/completions` with body
//! `{"model", "temperature", "max_tokens", "messages": [{"role": "user", "content": prompt}]}`
//! and, when a token is configured, `Authorization: Bearer <token>`.
//! Response: the proposal text is read from `choices[0].message.content`.
//!
//! Boxes in the reply are taken to be in the coordinates of the initial
//! observation and are mapped back to the full frame. Any failure (network,
//! status, body shape, parse, validation) yields an empty proposal list with
//! whatever text was received kept in `raw_text`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{PolicyError, PolicyOutput, ProposalContext, SensingPolicy};
use crate::response::{parse_and_validate, render_prompt, PromptTemplate};
use crate::rng::StreamRng;
use crate::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Extra attempts after a failed request.
    pub retries: u32,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: String,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// Object name substituted into the prompt; defaults to the scene's most
    /// frequent category.
    pub object_name: Option<String>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "sensing-model".into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout_secs: 60.0,
            retries: 1,
            auth_env: "ACTIVEZOOM_API_KEY".into(),
            max_in_flight: 4,
            object_name: None,
        }
    }
}

pub struct ExternalPolicy {
    cfg: EndpointConfig,
    agent: ureq::Agent,
    token: Option<String>,
    templates: [PromptTemplate; 2],
}

#[derive(Debug, thiserror::Error)]
enum CallError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("unexpected response body: {0}")]
    Shape(String),
}

impl ExternalPolicy {
    /// Reads the auth token from the configured environment variable.
    pub fn new(cfg: EndpointConfig) -> Result<Self, PolicyError> {
        if !(cfg.timeout_secs > 0.0) || cfg.max_in_flight == 0 {
            return Err(PolicyError::Config(
                "timeout_secs and max_in_flight must be positive".into(),
            ));
        }
        let token = std::env::var(&cfg.auth_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self {
            cfg,
            agent,
            token,
            templates: [
                PromptTemplate::builtin(TaskKind::Detection),
                PromptTemplate::builtin(TaskKind::Segmentation),
            ],
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn object_name(&self, ctx: &ProposalContext<'_>) -> String {
        if let Some(name) = &self.cfg.object_name {
            return name.clone();
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for o in ctx.scene.objects() {
            *counts.entry(o.category.as_str()).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| c.to_string())
            .unwrap_or_else(|| "object".into())
    }

    pub fn prompt(&self, ctx: &ProposalContext<'_>) -> String {
        let template = match ctx.task {
            TaskKind::Detection => &self.templates[0],
            TaskKind::Segmentation => &self.templates[1],
        };
        render_prompt(template, &self.object_name(ctx)).expect("object name is non-empty")
    }

    fn call_once(&self, prompt: &str) -> Result<String, CallError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| CallError::Http(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CallError::Http(e.to_string()))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CallError::Shape(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| CallError::Shape("no choices[0].message.content".into()))
    }

    fn call(&self, prompt: &str) -> Result<String, CallError> {
        let mut attempt = 0;
        loop {
            match self.call_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e @ CallError::Shape(_)) => return Err(e),
                Err(e) if attempt >= self.cfg.retries => return Err(e),
                Err(e) => log::warn!("{e}; retrying"),
            }
            attempt += 1;
        }
    }
}

impl SensingPolicy for ExternalPolicy {
    fn name(&self) -> String {
        format!("external:{}", self.cfg.model)
    }

    fn propose(&self, ctx: &ProposalContext<'_>, _rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        let text = match self.call(&self.prompt(ctx)) {
            Ok(text) => text,
            Err(e) => {
                log::error!("external policy failed on scene {}: {e}", ctx.scene.scene_id());
                return Ok(PolicyOutput {
                    raw_text: Some(String::new()),
                    ..Default::default()
                });
            }
        };
        let transform = ctx.observation.transform;
        let proposals = match parse_and_validate(&text, transform.target_frame(), ctx.task) {
            Ok(local) => local.iter().map(|b| transform.remap_to_full(b)).collect(),
            Err(e) => {
                log::warn!("unusable response on scene {}: {e}", ctx.scene.scene_id());
                Vec::new()
            }
        };
        Ok(PolicyOutput {
            proposals,
            log_prob: 0.0,
            raw_text: Some(text),
        })
    }

    fn propose_batch(
        &self,
        ctxs: &[ProposalContext<'_>],
        rngs: &mut [StreamRng],
    ) -> Vec<Result<PolicyOutput, PolicyError>> {
        let mut out = Vec::with_capacity(ctxs.len());
        for (chunk, rchunk) in ctxs
            .chunks(self.cfg.max_in_flight)
            .zip(rngs.chunks_mut(self.cfg.max_in_flight))
        {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .zip(rchunk.iter_mut())
                    .map(|(c, r)| s.spawn(move || self.propose(c, r)))
                    .collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("request thread panicked")));
            });
        }
        out
    }
}

//! Commonsense prior backed by a chat-completion endpoint.
//!
//! Configured from `CRSG_LLM_ENDPOINT`, `CRSG_LLM_API_KEY` and
//! `CRSG_LLM_MODEL`. Off unless the endpoint variable is set.

use std::collections::BTreeSet;

use crsg_core::oracle::{CarrierPrior, CarrierSummary, TargetDescriptor};
use crsg_core::scene::ObjectId;
use crsg_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const ENV_ENDPOINT: &str = "CRSG_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CRSG_LLM_API_KEY";
pub const ENV_MODEL: &str = "CRSG_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub system_prompt: String,
    /// Placeholders: `{captions}`.
    pub carrier_template: String,
    /// Placeholders: `{target}`, `{carriers}`.
    pub rank_template: String,
    /// Placeholders: `{a}`, `{b}`.
    pub compare_template: String,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout_secs: 30,
            system_prompt: "You answer questions about household objects tersely and exactly in the requested format.".into(),
            carrier_template: "Is an object described as \"{captions}\" a piece of furniture whose top surface holds small everyday items? Answer yes or no.".into(),
            rank_template: "A robot is looking for: {target}.\nCandidate furniture (id: description, path distance):\n{carriers}\nReply with a JSON array of all ids, most likely location first.".into(),
            compare_template: "Do these two images show the same object?\nA: {a}\nB: {b}\nReply with a single number between 0 and 1.".into(),
        }
    }

    /// Reads the environment; `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.trim().is_empty())?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        let mut cfg = Self::new(endpoint, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(cfg)
    }
}

/// Sends one system + user message pair, returns the reply text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, BenchError>;
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 2],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    content: String,
}

pub fn request_body(model: &str, system: &str, user: &str) -> String {
    let req = ChatRequest {
        model,
        messages: [
            Message {
                role: "system",
                content: system,
            },
            Message {
                role: "user",
                content: user,
            },
        ],
        temperature: 0.0,
    };
    serde_json::to_string(&req).expect("plain data serializes")
}

pub fn parse_reply(body: &str) -> Result<String, BenchError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| BenchError::Llm(format!("malformed reply: {e}")))?;
    resp.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BenchError::Llm("reply has no choices".into()))
}

#[cfg(feature = "llm-http")]
pub struct HttpTransport {
    config: LlmConfig,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "llm-http")]
impl HttpTransport {
    pub fn new(config: LlmConfig) -> Result<Self, BenchError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BenchError::Llm(e.to_string()))?;
        Ok(Self { config, client })
    }
}

#[cfg(feature = "llm-http")]
impl ChatTransport for HttpTransport {
    fn complete(&self, system: &str, user: &str) -> Result<String, BenchError> {
        let mut req = self
            .client
            .post(&self.config.endpoint)
            .header("content-type", "application/json")
            .body(request_body(&self.config.model, system, user));
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BenchError::Llm(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| BenchError::Llm(e.to_string()))?;
        if !status.is_success() {
            return Err(BenchError::Llm(format!("endpoint returned {status}")));
        }
        parse_reply(&body)
    }
}

/// Prior that asks a language model through a transport.
pub struct LlmPrior<T> {
    pub config: LlmConfig,
    transport: T,
}

impl<T: ChatTransport> LlmPrior<T> {
    pub fn new(config: LlmConfig, transport: T) -> Self {
        Self { config, transport }
    }

    fn ask(&self, user: String) -> Result<String, CoreError> {
        self.transport
            .complete(&self.config.system_prompt, &user)
            .map_err(|e| CoreError::Oracle(e.to_string()))
    }
}

#[cfg(feature = "llm-http")]
impl LlmPrior<HttpTransport> {
    /// Adapter from the environment, if an endpoint is configured.
    pub fn from_env() -> Result<Option<Self>, BenchError> {
        match LlmConfig::from_env() {
            Some(cfg) => Ok(Some(Self::new(cfg.clone(), HttpTransport::new(cfg)?))),
            None => Ok(None),
        }
    }
}

pub fn parse_yes_no(reply: &str) -> Result<bool, CoreError> {
    let word = reply.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_ascii_lowercase();
    if word.starts_with("yes") {
        Ok(true)
    } else if word.starts_with("no") {
        Ok(false)
    } else {
        Err(CoreError::Oracle(format!("expected yes or no, got {reply:?}")))
    }
}

/// Parses a JSON id array; missing ids are appended in input order,
/// unknown or repeated ids are an error.
pub fn parse_ranking(reply: &str, carriers: &[CarrierSummary]) -> Result<Vec<ObjectId>, CoreError> {
    let (Some(open), Some(close)) = (reply.find('['), reply.rfind(']')) else {
        return Err(CoreError::Oracle(format!("no JSON array in {reply:?}")));
    };
    let ids: Vec<String> =
        serde_json::from_str(&reply[open..=close]).map_err(|e| CoreError::Oracle(format!("bad ranking: {e}")))?;
    let known: BTreeSet<&str> = carriers.iter().map(|c| c.id.as_str()).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(carriers.len());
    for id in ids {
        if !known.contains(id.as_str()) || !seen.insert(id.clone()) {
            return Err(CoreError::Oracle(format!("ranking names unknown or repeated id {id}")));
        }
        out.push(ObjectId::new(id));
    }
    out.extend(carriers.iter().filter(|c| !seen.contains(c.id.as_str())).map(|c| c.id.clone()));
    Ok(out)
}

pub fn parse_score(reply: &str) -> Result<f64, CoreError> {
    let token = reply
        .split(|c: char| !(c.is_ascii_digit() || c == '.'))
        .find(|t| !t.is_empty() && t.parse::<f64>().is_ok())
        .ok_or_else(|| CoreError::Oracle(format!("no score in {reply:?}")))?;
    Ok(token.parse::<f64>().expect("checked").clamp(0.0, 1.0))
}

fn describe(target: &TargetDescriptor) -> String {
    match &target.image {
        Some(img) => format!("{} (image {img})", target.text),
        None => target.text.clone(),
    }
}

impl<T: ChatTransport> CarrierPrior for LlmPrior<T> {
    fn is_carrier(&self, captions: &[String]) -> crsg_core::Result<bool> {
        let prompt = self.config.carrier_template.replace("{captions}", &captions.join("; "));
        parse_yes_no(&self.ask(prompt)?)
    }

    fn rank_carriers(&self, carriers: &[CarrierSummary], target: &TargetDescriptor) -> crsg_core::Result<Vec<ObjectId>> {
        let listing: Vec<String> = carriers
            .iter()
            .map(|c| format!("{}: {} ({:.1} m)", c.id, c.captions.first().map(String::as_str).unwrap_or(""), c.distance))
            .collect();
        let prompt = self
            .config
            .rank_template
            .replace("{target}", &describe(target))
            .replace("{carriers}", &listing.join("\n"));
        parse_ranking(&self.ask(prompt)?, carriers)
    }

    fn compare_images(&self, candidate: &str, target: &str) -> crsg_core::Result<f64> {
        let prompt = self.config.compare_template.replace("{a}", candidate).replace("{b}", target);
        parse_score(&self.ask(prompt)?)
    }
}

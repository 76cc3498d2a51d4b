use super::{GatewayError, PromptBundle, RawLlmReply};
use crate::world::{WorldScenario, NO_FIXTURE_TAG};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Canned answer for photos with nothing navigable in them.
pub const DEFAULT_RETAKE_REPLY: &str = "RETAKE\nSAFETY: The photo does not show your walking path.\nNEXT: Keep following the navigation prompts.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Recorded,
    Remote,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Whether `latency` in replies is simulated time. Simulated backends are
    /// answered immediately and the session releases the reply once its sim
    /// clock has advanced by the reported latency; others run on a worker
    /// thread against the wall clock.
    fn simulated(&self) -> bool {
        true
    }

    fn complete(&self, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError>;

    /// Number of `complete` calls served so far.
    fn calls(&self) -> usize;
}

/// Sends `bundle` and enforces `deadline` (seconds) on the reported latency.
pub fn query(backend: &dyn LlmBackend, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError> {
    if !(deadline > 0.0) {
        return Err(GatewayError::Backend {
            backend: backend.id().to_string(),
            message: format!("deadline must be positive, got {deadline}"),
        });
    }
    let reply = backend.complete(bundle, deadline)?;
    if reply.latency > deadline {
        return Err(GatewayError::Timeout {
            backend: backend.id().to_string(),
            deadline,
        });
    }
    Ok(reply)
}

/// Offline backend answering from a scene-tag → reply table.
#[derive(Debug)]
pub struct MockBackend {
    replies: BTreeMap<String, String>,
    delay: f64,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(replies: BTreeMap<String, String>) -> Self {
        Self {
            replies,
            delay: 0.0,
            calls: AtomicUsize::new(0),
        }
    }

    /// Artificial latency in sim seconds.
    pub fn with_delay(mut self, delay: f64) -> Self {
        self.delay = delay.max(0.0);
        self
    }

    /// Reads a JSON object mapping scene tags to reply text.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let replies: BTreeMap<String, String> = serde_json::from_str(&body).map_err(std::io::Error::other)?;
        Ok(Self::new(replies))
    }

    /// Makes photos of non-navigable fixtures (and of no fixture) always ask
    /// for a retake.
    pub fn for_scenario(mut self, scenario: &WorldScenario) -> Self {
        let blind_tags = scenario
            .fixtures
            .iter()
            .filter(|f| !f.navigable_content)
            .map(|f| f.scene_tag.clone())
            .chain(std::iter::once(NO_FIXTURE_TAG.to_string()));
        for tag in blind_tags {
            let entry = self
                .replies
                .entry(tag)
                .or_insert_with(|| DEFAULT_RETAKE_REPLY.to_string());
            if !entry.lines().any(|l| l.trim_start().starts_with("RETAKE")) {
                *entry = format!("RETAKE\n{entry}");
            }
        }
        self
    }

    pub fn reply_for(&self, scene_tag: &str) -> Option<&str> {
        self.replies.get(scene_tag).map(String::as_str)
    }
}

impl LlmBackend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let tag = &bundle.image_attachment.scene_tag;
        let text = self.replies.get(tag).ok_or_else(|| GatewayError::Backend {
            backend: self.id().to_string(),
            message: format!("no canned reply for scene tag {tag}"),
        })?;
        if self.delay > deadline {
            return Err(GatewayError::Timeout {
                backend: self.id().to_string(),
                deadline,
            });
        }
        Ok(RawLlmReply {
            text: text.clone(),
            backend_id: self.id().to_string(),
            latency: self.delay,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// One persisted exchange, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub scene_tag: String,
    pub system_text: String,
    pub user_text: String,
    pub reply: String,
    pub backend_id: String,
    pub latency: f64,
}

/// Replays a stored transcript. Exchanges match on scene tag and prompt
/// text, falling back to the next unused entry with the same scene tag.
#[derive(Debug)]
pub struct RecordedBackend {
    entries: Vec<TranscriptEntry>,
    used: Mutex<Vec<bool>>,
    calls: AtomicUsize,
}

impl RecordedBackend {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        Self {
            entries,
            used,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let entries = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(entries))
    }
}

impl LlmBackend for RecordedBackend {
    fn id(&self) -> &str {
        "recorded"
    }

    fn complete(&self, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let tag = &bundle.image_attachment.scene_tag;
        let mut used = self.used.lock().expect("transcript lock poisoned");
        let unused = |i: &usize| !used[*i] && self.entries[*i].scene_tag == *tag;
        let pick = (0..self.entries.len())
            .filter(unused)
            .find(|&i| self.entries[i].user_text == bundle.user_text)
            .or_else(|| (0..self.entries.len()).find(unused))
            .ok_or_else(|| GatewayError::Backend {
                backend: self.id().to_string(),
                message: format!("transcript has no unused exchange for scene tag {tag}"),
            })?;
        used[pick] = true;
        let entry = &self.entries[pick];
        if entry.latency > deadline {
            return Err(GatewayError::Timeout {
                backend: self.id().to_string(),
                deadline,
            });
        }
        Ok(RawLlmReply {
            text: entry.reply.clone(),
            backend_id: self.id().to_string(),
            latency: entry.latency,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Wraps a backend and appends every successful exchange to a transcript
/// file that [`RecordedBackend`] can replay.
pub struct RecordingBackend {
    inner: Box<dyn LlmBackend>,
    sink: Mutex<std::fs::File>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn LlmBackend>, transcript: &Path) -> std::io::Result<Self> {
        if let Some(dir) = transcript.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let sink = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(transcript)?;
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl LlmBackend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn simulated(&self) -> bool {
        self.inner.simulated()
    }

    fn complete(&self, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError> {
        let reply = self.inner.complete(bundle, deadline)?;
        let entry = TranscriptEntry {
            scene_tag: bundle.image_attachment.scene_tag.clone(),
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            reply: reply.text.clone(),
            backend_id: reply.backend_id.clone(),
            latency: reply.latency,
        };
        let line = serde_json::to_string(&entry).expect("transcript entry serializes");
        let mut sink = self.sink.lock().expect("transcript lock poisoned");
        if let Err(err) = writeln!(sink, "{line}") {
            log::warn!("could not append to transcript: {err}");
        }
        Ok(reply)
    }

    fn calls(&self) -> usize {
        self.inner.calls()
    }
}

#[cfg(feature = "remote")]
pub use remote::{RemoteBackend, RemoteConfig};

#[cfg(feature = "remote")]
mod remote {
    use super::*;
    use base64::Engine;
    use std::time::{Duration, Instant};

    pub const ENV_BASE_URL: &str = "WAYFIND_LLM_BASE_URL";
    pub const ENV_MODEL: &str = "WAYFIND_LLM_MODEL";
    pub const ENV_API_KEY: &str = "WAYFIND_LLM_API_KEY";

    /// Endpoint settings for an OpenAI-style chat-completions service.
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct RemoteConfig {
        pub base_url: String,
        pub model: String,
        #[serde(default)]
        pub api_key: Option<String>,
    }

    impl RemoteConfig {
        /// Environment variables override values from the optional file.
        pub fn resolve(file: Option<RemoteConfig>) -> Option<RemoteConfig> {
            let env = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
            let base_url = env(ENV_BASE_URL).or_else(|| file.as_ref().map(|f| f.base_url.clone()))?;
            let model = env(ENV_MODEL).or_else(|| file.as_ref().map(|f| f.model.clone()))?;
            let api_key = env(ENV_API_KEY).or_else(|| file.and_then(|f| f.api_key));
            Some(RemoteConfig {
                base_url,
                model,
                api_key,
            })
        }
    }

    pub struct RemoteBackend {
        config: RemoteConfig,
        client: reqwest::blocking::Client,
        calls: AtomicUsize,
    }

    impl RemoteBackend {
        pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
            let client = reqwest::blocking::Client::builder()
                .build()
                .map_err(|e| GatewayError::Backend {
                    backend: "remote".into(),
                    message: e.to_string(),
                })?;
            Ok(Self {
                config,
                client,
                calls: AtomicUsize::new(0),
            })
        }

        fn request_body(&self, bundle: &PromptBundle) -> serde_json::Value {
            let mut content = vec![serde_json::json!({ "type": "text", "text": bundle.user_text })];
            if let Some(bytes) = bundle
                .image_attachment
                .asset_path
                .as_ref()
                .and_then(|p| std::fs::read(p).ok())
            {
                let mime = match bundle
                    .image_attachment
                    .asset_path
                    .as_ref()
                    .and_then(|p| p.extension())
                    .and_then(|e| e.to_str())
                {
                    Some("png") => "image/png",
                    Some("webp") => "image/webp",
                    _ => "image/jpeg",
                };
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                content.push(serde_json::json!({
                    "type": "image_url",
                    "image_url": { "url": format!("data:{mime};base64,{data}") }
                }));
            }
            serde_json::json!({
                "model": self.config.model,
                "messages": [
                    { "role": "system", "content": bundle.system_text },
                    { "role": "user", "content": content }
                ]
            })
        }

        fn fail(&self, message: impl ToString) -> GatewayError {
            GatewayError::Backend {
                backend: "remote".into(),
                message: message.to_string(),
            }
        }
    }

    impl LlmBackend for RemoteBackend {
        fn id(&self) -> &str {
            "remote"
        }

        fn simulated(&self) -> bool {
            false
        }

        fn complete(&self, bundle: &PromptBundle, deadline: f64) -> Result<RawLlmReply, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
            let started = Instant::now();
            let mut request = self
                .client
                .post(url)
                .timeout(Duration::from_secs_f64(deadline))
                .json(&self.request_body(bundle));
            if let Some(key) = &self.config.api_key {
                request = request.bearer_auth(key);
            }
            let response = request.send().map_err(|e| {
                if e.is_timeout() {
                    GatewayError::Timeout {
                        backend: "remote".into(),
                        deadline,
                    }
                } else {
                    self.fail(e)
                }
            })?;
            if !response.status().is_success() {
                return Err(self.fail(format!("HTTP {}", response.status())));
            }
            let body: serde_json::Value = response.json().map_err(|e| self.fail(e))?;
            let text = body["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| self.fail("response has no choices[0].message.content"))?;
            Ok(RawLlmReply {
                text: text.to_string(),
                backend_id: self.id().to_string(),
                latency: started.elapsed().as_secs_f64(),
            })
        }

        fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }
}

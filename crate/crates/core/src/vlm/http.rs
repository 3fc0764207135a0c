//! HTTP clients for real interpretation backends.
//!
//! Wire protocol (JSON, UTF-8):
//!   POST /v1/caption        {"image": <base64 PNG>, "prompt": <string?>} -> {"caption": <string>}
//!   POST /v1/zeroshot-text  {"text": <string>, "labels": [<string>]}    -> {"scores": [<number>]}
//!   POST /v1/similarity     {"image": <base64 PNG>, "texts": [<string>]} -> {"scores": [<number>]}
//!   GET  /v1/identity        -> {"name": <string>, "digest": <string>, "max_concurrency": <int?>}
//!
//! Any non-200 status is a transport failure; requests retry 3 times with
//! exponential backoff before surfacing an item-level error.

use super::{BackendIdentity, CaptionBackend, ImageTextSimilarityBackend, TextZeroShotBackend};
use crate::error::{Error, Result};
use crate::imgproc;
use base64::Engine;
use ndarray::Array3;
use serde::Deserialize;
use std::time::Duration;

const RETRIES: u32 = 3;
const BACKOFF_BASE_MS: u64 = 100;

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    identity: BackendIdentity,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct IdentityResponse {
    name: String,
    digest: String,
    #[serde(default)]
    max_concurrency: Option<usize>,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Deserialize)]
struct ScoresResponse {
    scores: Vec<f64>,
}

impl HttpBackend {
    /// Connect and fetch the endpoint-reported identity. An unreachable or
    /// non-conforming endpoint is a backend-unavailable error (exit code 4).
    pub fn connect(base_url: &str) -> Result<Self> {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build();
        let url = format!("{}/v1/identity", base_url.trim_end_matches('/'));
        let response = agent.get(&url).call().map_err(|e| {
            Error::BackendUnavailable(format!("identity probe failed for {base_url}: {e}"))
        })?;
        let identity: IdentityResponse = response.into_json().map_err(|e| {
            Error::BackendUnavailable(format!("identity response from {base_url} invalid: {e}"))
        })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            identity: BackendIdentity {
                name: identity.name,
                model_digest: identity.digest,
                max_concurrency: identity.max_concurrency,
            },
            agent,
        })
    }

    fn post_json(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value> {
        let url = format!("{}{path}", self.base_url);
        let mut last_err = String::new();
        for attempt in 0..RETRIES {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            match self.agent.post(&url).send_json(body.clone()) {
                Ok(response) => {
                    return response
                        .into_json()
                        .map_err(|e| Error::stage(format!("bad JSON from {url}: {e}")));
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(Error::stage(format!(
            "backend request {url} failed after {RETRIES} attempts: {last_err}"
        )))
    }

    fn image_to_base64(image: &Array3<f32>) -> Result<String> {
        let png = imgproc::encode_png(&image.view())?;
        Ok(base64::engine::general_purpose::STANDARD.encode(png))
    }
}

impl CaptionBackend for HttpBackend {
    fn identity(&self) -> BackendIdentity {
        self.identity.clone()
    }

    fn supports_prompting(&self) -> bool {
        true
    }

    fn caption(&self, image: &Array3<f32>, prompt: Option<&str>) -> Result<String> {
        let mut body = serde_json::json!({ "image": Self::image_to_base64(image)? });
        if let Some(p) = prompt {
            body["prompt"] = serde_json::Value::String(p.to_string());
        }
        let value = self.post_json("/v1/caption", body)?;
        let parsed: CaptionResponse = serde_json::from_value(value)
            .map_err(|e| Error::stage(format!("caption response invalid: {e}")))?;
        Ok(parsed.caption)
    }
}

impl TextZeroShotBackend for HttpBackend {
    fn identity(&self) -> BackendIdentity {
        self.identity.clone()
    }

    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        let body = serde_json::json!({ "text": text, "labels": labels });
        let value = self.post_json("/v1/zeroshot-text", body)?;
        let parsed: ScoresResponse = serde_json::from_value(value)
            .map_err(|e| Error::stage(format!("zeroshot-text response invalid: {e}")))?;
        Ok(parsed.scores)
    }
}

impl ImageTextSimilarityBackend for HttpBackend {
    fn identity(&self) -> BackendIdentity {
        self.identity.clone()
    }

    fn scores(&self, image: &Array3<f32>, texts: &[String]) -> Result<Vec<f64>> {
        let body = serde_json::json!({
            "image": Self::image_to_base64(image)?,
            "texts": texts,
        });
        let value = self.post_json("/v1/similarity", body)?;
        let parsed: ScoresResponse = serde_json::from_value(value)
            .map_err(|e| Error::stage(format!("similarity response invalid: {e}")))?;
        Ok(parsed.scores)
    }
}

//! Async client for the simulation service.

use collapse_core::config::RunConfig;
use collapse_core::jobs::AnalysisKind;
use collapse_core::wire::{AnalyzeRequest, ErrorBody, JobResponse, PresetsResponse, RunRequest};
use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{}", .0.message)]
    Api(ErrorBody),
    #[error("unexpected reply ({status}): {body}")]
    Unexpected { status: u16, body: String },
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Unexpected {
                status: status.as_u16(),
                body: e.to_string(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api(body)),
            Err(_) => Err(ClientError::Unexpected {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode::<serde_json::Value>(resp).await.map(|_| ())
    }

    pub async fn presets(&self) -> Result<PresetsResponse, ClientError> {
        let resp = self.http.get(format!("{}/v1/presets", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn run(&self, config: &RunConfig, seed: Option<u64>) -> Result<JobResponse, ClientError> {
        let req = RunRequest {
            config: config.clone(),
            seed,
        };
        let resp = self
            .http
            .post(format!("{}/v1/run", self.base))
            .json(&req)
            .send()
            .await?;
        Self::decode(resp).await
    }

    pub async fn analyze(
        &self,
        kind: AnalysisKind,
        config: &RunConfig,
        seed: Option<u64>,
    ) -> Result<JobResponse, ClientError> {
        let req = AnalyzeRequest {
            kind,
            config: config.clone(),
            seed,
        };
        let resp = self
            .http
            .post(format!("{}/v1/analyze", self.base))
            .json(&req)
            .send()
            .await?;
        Self::decode(resp).await
    }
}

//! Blocking clients for the two HTTP APIs.

use mage_core::host::{ExamStatus, ExamSummary, ExamView};
use mage_core::server::InstallRecord;
use reqwest::blocking::{Client, RequestBuilder};
use reqwest::header::CONTENT_TYPE;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::ErrorBody;
use crate::host::AnswerRequest;
use crate::server::{CreateSession, DispatchReply, InstallRequest, SessionView, TestsView};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status} {}: {}", .body.error, .body.detail)]
    Api { status: u16, body: ErrorBody },
    #[error("{status}: {text}")]
    Unexpected { status: u16, text: String },
    #[error("decoding reply: {0}")]
    Decode(#[from] serde_json::Error),
}

impl ClientError {
    /// The API error code, when the server sent one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

struct Base {
    url: String,
    http: Client,
}

impl Base {
    fn new(url: &str) -> Result<Self, ClientError> {
        Ok(Base {
            url: url.trim_end_matches('/').to_owned(),
            // Install requests block until the agent comes home.
            http: Client::builder().timeout(None).build()?,
        })
    }

    fn get(&self, path: &str) -> RequestBuilder {
        self.http.get(format!("{}{path}", self.url))
    }

    fn post(&self, path: &str) -> RequestBuilder {
        self.http.post(format!("{}{path}", self.url))
    }

    fn post_json<B: Serialize>(&self, path: &str, body: &B) -> Result<RequestBuilder, ClientError> {
        Ok(self
            .post(path)
            .header(CONTENT_TYPE, "application/json")
            .body(serde_json::to_vec(body)?))
    }

    fn bytes(req: RequestBuilder) -> Result<Vec<u8>, ClientError> {
        let resp = req.send()?;
        let status = resp.status();
        let body = resp.bytes()?.to_vec();
        if status.is_success() {
            return Ok(body);
        }
        match serde_json::from_slice::<ErrorBody>(&body) {
            Ok(b) => Err(ClientError::Api {
                status: status.as_u16(),
                body: b,
            }),
            Err(_) => Err(ClientError::Unexpected {
                status: status.as_u16(),
                text: String::from_utf8_lossy(&body).into_owned(),
            }),
        }
    }

    fn json<T: DeserializeOwned>(req: RequestBuilder) -> Result<T, ClientError> {
        Ok(serde_json::from_slice(&Self::bytes(req)?)?)
    }
}

/// Client of the server's admin and publication API.
pub struct AdminClient(Base);

impl AdminClient {
    /// `base` like `http://127.0.0.1:8400`.
    pub fn new(base: &str) -> Result<Self, ClientError> {
        Ok(AdminClient(Base::new(base)?))
    }

    pub fn tests(&self) -> Result<TestsView, ClientError> {
        Base::json(self.0.get("/tests"))
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionView, ClientError> {
        Base::json(self.0.post_json("/sessions", req)?)
    }

    pub fn session(&self, id: &str) -> Result<SessionView, ClientError> {
        Base::json(self.0.get(&format!("/sessions/{id}")))
    }

    pub fn dispatch(&self, id: &str) -> Result<DispatchReply, ClientError> {
        Base::json(self.0.post(&format!("/sessions/{id}/dispatch")))
    }

    /// The report bytes, exactly as served.
    pub fn results(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        Base::bytes(self.0.get(&format!("/sessions/{id}/results")))
    }

    pub fn publish(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        Base::bytes(self.0.post(&format!("/sessions/{id}/publish")))
    }

    pub fn install(&self, req: &InstallRequest) -> Result<InstallRecord, ClientError> {
        Base::json(self.0.post_json("/install", req)?)
    }
}

/// Client of a host's local exam API.
pub struct ExamClient(Base);

impl ExamClient {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        Ok(ExamClient(Base::new(base)?))
    }

    pub fn summary(&self) -> Result<ExamSummary, ClientError> {
        Base::json(self.0.get("/exam"))
    }

    pub fn question(&self) -> Result<ExamView, ClientError> {
        Base::json(self.0.get("/exam/question"))
    }

    pub fn answer(&self, req: &AnswerRequest) -> Result<ExamView, ClientError> {
        Base::json(self.0.post_json("/exam/answer", req)?)
    }

    pub fn status(&self) -> Result<ExamStatus, ClientError> {
        Base::json(self.0.get("/exam/status"))
    }

    /// Raw body of any GET, for leak scans.
    pub fn raw(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        Base::bytes(self.0.get(path))
    }
}
